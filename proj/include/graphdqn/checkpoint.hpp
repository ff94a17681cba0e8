#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "graphdqn/agent.hpp"
#include "graphdqn/medgraph.hpp"
#include "graphdqn/numkit.hpp"

namespace graphdqn {

inline constexpr const char* kCheckpointFormat = "graphdqn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Everything needed to serve or evaluate a trained policy.
struct Checkpoint {
  TrainConfig config;
  HeteroGraph graph;
  QNetwork net;
  std::size_t epochs_trained = 0;

  const Vocabulary& vocab() const noexcept { return graph.vocab; }
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"vocab", c.graph.vocab.to_json()},
          {"config", c.config.to_json()},
          {"epochs_trained", c.epochs_trained},
          {"graph", {{"weighted", c.graph.weighted},
                     {"hash", c.graph.hash()},
                     {"adjacency", matrix_to_json(c.graph.adjacency)}}},
          {"network", network_to_json(c.net)}};
}

inline std::string checkpoint_dump(const Checkpoint& c) { return checkpoint_to_json(c).dump() + "\n"; }

/// Validates format, version, graph hash and every tensor shape.
inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ParseError("not a graphdqn checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ParseError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    Checkpoint c;
    c.config = TrainConfig::from_json(j.at("config"));
    auto vocab = Vocabulary::from_json(j.at("vocab"));
    const auto& g = j.at("graph");
    c.graph = HeteroGraph::from_adjacency(vocab, matrix_from_json(g.at("adjacency")), g.at("weighted").get<bool>());
    if (c.graph.hash() != g.at("hash").get<std::string>()) throw ValidationError("checkpoint graph hash mismatch");
    c.net = network_from_json(j.at("network"));
    c.epochs_trained = j.at("epochs_trained").get<std::size_t>();
    const DialogueEnv env(vocab, c.config.env());
    const NetShape expected{env.state_dim(), c.config.hidden, c.config.embed, vocab.action_count()};
    if (!(c.net.shape == expected) || c.net.mode != c.config.mode)
      throw ShapeError("checkpoint network shape does not match its vocabulary/config");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file(path, checkpoint_dump(c)); }

inline Checkpoint load_checkpoint(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace graphdqn
