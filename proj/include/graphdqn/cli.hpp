#pragma once

// `graphdqn` command line: build-graph | train | eval | serve | simulate.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "graphdqn/agent.hpp"
#include "graphdqn/checkpoint.hpp"
#include "graphdqn/corpus.hpp"
#include "graphdqn/eval.hpp"
#include "graphdqn/medgraph.hpp"
#include "graphdqn/service.hpp"

namespace graphdqn::cli {

struct CommonOptions {
  std::string config_path;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string mode;
  bool unweighted = false;
};

/// Config file contents: TrainConfig keys plus optional `dataset` / `out`
/// defaults for the corresponding flags.
inline TrainConfig resolve_config(CommonOptions& o) {
  TrainConfig cfg;
  if (!o.config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(o.config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("config '" + o.config_path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ParseError("config must be a JSON object");
    if (j.contains("dataset")) {
      if (o.dataset.empty()) o.dataset = j["dataset"].get<std::string>();
      j.erase("dataset");
    }
    if (j.contains("out")) {
      if (o.out.empty()) o.out = j["out"].get<std::string>();
      j.erase("out");
    }
    cfg.merge_json(j);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (!o.mode.empty()) cfg.mode = parse_net_mode(o.mode);
  if (o.unweighted) cfg.weighted = false;
  cfg.validate();
  return cfg;
}

inline void add_common(CLI::App* cmd, CommonOptions& o, bool with_training_flags) {
  cmd->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--dataset", o.dataset, "Goal file (canonical JSON schema)");
  cmd->add_option("--out", o.out, "Output path");
  if (with_training_flags) {
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--mode", o.mode, "graph | baseline")->check(CLI::IsMember({"graph", "baseline"}));
    cmd->add_flag("--unweighted", o.unweighted, "Binarize graph edge weights");
  }
}

class UsageError : public Error {
 public:
  using Error::Error;
};

inline std::string edges_path_for(const std::string& out) {
  std::filesystem::path p(out);
  if (p.extension() == ".json") p.replace_extension();
  return p.string() + ".edges.tsv";
}

inline std::vector<UserGoal> merged_goals(const Corpus& base, const std::vector<std::string>& extra) {
  std::vector<UserGoal> all = base.goals;
  for (const auto& path : extra) {
    auto more = load_corpus(path).goals;
    all.insert(all.end(), more.begin(), more.end());
  }
  return all;
}

inline int run_build_graph(CommonOptions& o, const std::vector<std::string>& vocab_extra, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  if (o.dataset.empty()) throw UsageError("build-graph requires --dataset");
  if (o.out.empty()) throw UsageError("build-graph requires --out");
  const Corpus corpus = load_corpus(o.dataset, cfg.num_greeting);
  const Vocabulary vocab = Vocabulary::from_goals(merged_goals(corpus, vocab_extra), cfg.num_greeting);
  const HeteroGraph graph = build_graph(corpus.goals, vocab, cfg.weighted);
  write_file(o.out, graph_to_json(graph).dump(2) + "\n");
  write_file(edges_path_for(o.out), graph_edge_tsv(graph));
  out << "graph: " << vocab.num_diseases() << " diseases, " << vocab.num_symptoms() << " symptoms, "
      << vocab.action_count() << " nodes, hash " << graph.hash() << "\n"
      << "wrote " << o.out << " and " << edges_path_for(o.out) << "\n";
  return 0;
}

inline int run_train(CommonOptions& o, const std::vector<std::string>& vocab_extra, const std::string& log_path,
                     const std::string& resume_from, std::ostream& out) {
  TrainConfig cfg = resolve_config(o);
  if (o.dataset.empty()) throw UsageError("train requires --dataset");
  if (o.out.empty()) o.out = "checkpoint.json";
  const Corpus corpus = load_corpus(o.dataset, cfg.num_greeting);

  std::optional<QNetwork> initial;
  std::size_t epoch_offset = 0;
  HeteroGraph graph;
  if (!resume_from.empty()) {
    Checkpoint prev = load_checkpoint(resume_from);
    // Resumed runs keep the stored architecture and graph; the rng stream is
    // shifted by the epochs already trained.
    const std::size_t epochs = cfg.epochs;
    const std::uint64_t seed = cfg.seed;
    cfg = prev.config;
    cfg.epochs = epochs;
    cfg.seed = seed + prev.epochs_trained;
    graph = prev.graph;
    initial = prev.net;
    epoch_offset = prev.epochs_trained;
  } else {
    const Vocabulary vocab = Vocabulary::from_goals(merged_goals(corpus, vocab_extra), cfg.num_greeting);
    graph = build_graph(corpus.goals, vocab, cfg.weighted);
  }

  TrainResult result = train(cfg, corpus.goals, graph, std::move(initial));
  for (auto& e : result.log) e.epoch += epoch_offset;

  Checkpoint ckpt{cfg, graph, result.net, epoch_offset + cfg.epochs};
  if (!resume_from.empty()) ckpt.config.seed = cfg.seed - epoch_offset;
  save_checkpoint(o.out, ckpt);
  std::string log_file = log_path;
  if (log_file.empty()) {
    std::filesystem::path p(o.out);
    if (p.extension() == ".json") p.replace_extension();
    log_file = p.string() + ".log.csv";
  }
  write_file(log_file, training_log_csv(result.log));
  out << "trained " << cfg.epochs << " epochs (" << to_string(cfg.mode) << (cfg.weighted ? ", weighted" : ", unweighted")
      << ", seed " << cfg.seed << ")\n";
  if (!result.log.empty())
    out << "last epoch: success_rate " << result.log.back().success_rate << ", avg_turns "
        << result.log.back().avg_turns << "\n";
  out << "wrote " << o.out << " and " << log_file << "\n";
  return 0;
}

inline int run_eval(CommonOptions& o, const std::string& checkpoint_path, std::ostream& out) {
  if (!o.config_path.empty()) resolve_config(o);
  if (o.dataset.empty()) throw UsageError("eval requires --dataset");
  if (o.out.empty()) o.out = ".";
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const auto goals = load_corpus(o.dataset, ckpt.vocab().num_greeting()).goals;
  const DialogueEnv env(ckpt.vocab(), ckpt.config.env());
  const Propagation prop(ckpt.graph.normalized);
  const EvalReport report = evaluate(ckpt.net, prop, env, goals);

  std::filesystem::create_directories(o.out);
  const std::filesystem::path dir(o.out);
  nlohmann::json j = report_to_json(report, ckpt.vocab());
  j["checkpoint"] = checkpoint_path;
  j["dataset"] = o.dataset;
  write_file((dir / "report.json").string(), j.dump(2) + "\n");
  write_file((dir / "confusion.csv").string(), confusion_csv(report.confusion, ckpt.vocab()));
  write_file((dir / "embeddings.csv").string(), embeddings_csv(ckpt.net, prop, ckpt.vocab()));
  out << "accuracy " << report.accuracy << ", avg_turns " << report.avg_turns << " over " << goals.size()
      << " goals\n"
      << "wrote report.json, confusion.csv, embeddings.csv to " << dir.string() << "\n";
  return 0;
}

inline int run_simulate(CommonOptions& o, const std::string& checkpoint_path, const std::string& goal_id,
                        std::ostream& out) {
  if (!o.config_path.empty()) resolve_config(o);
  if (o.dataset.empty()) throw UsageError("simulate requires --dataset");
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const auto goals = load_corpus(o.dataset, ckpt.vocab().num_greeting()).goals;
  const DialogueEnv env(ckpt.vocab(), ckpt.config.env());
  const Propagation prop(ckpt.graph.normalized);
  const QFunction q(ckpt.net, prop);

  std::ostringstream lines;
  std::size_t runs = 0;
  for (const auto& goal : goals) {
    if (!goal_id.empty() && goal.id != goal_id) continue;
    ++runs;
    DialogueState state = env.start_episode(goal);
    while (!state.terminal()) {
      const std::size_t a = argmax(q(env.encode_state(state)));
      auto [next, o2] = env.step(state, goal, a);
      auto rec = transcript_record(env, state, a, o2);
      rec["goal_id"] = goal.id;
      lines << rec.dump() << '\n';
      state = std::move(next);
    }
  }
  if (runs == 0) throw ValidationError("no goal with id '" + goal_id + "'");
  if (o.out.empty()) out << lines.str();
  else write_file(o.out, lines.str());
  return 0;
}

inline httplib::Server* g_server = nullptr;

inline int run_serve(const std::string& checkpoint_path, const std::string& host, int port,
                     const std::string& transcripts, const std::string& static_dir, std::ostream& out) {
  ServiceOptions opts;
  opts.transcript_path = transcripts;
  SessionService service(load_checkpoint(checkpoint_path), opts);
  httplib::Server server;
  mount(server, service);
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
    throw Error("cannot serve static directory '" + static_dir + "'");
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  out << "serving model " << service.model_hash() << " on http://" << host << ":" << port << std::endl;
  if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  g_server = nullptr;
  return 0;
}

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Graph-DQN diagnosis dialogue manager", "graphdqn"};
  app.require_subcommand(1);

  CommonOptions build_o, train_o, eval_o, sim_o;
  std::vector<std::string> build_vocab, train_vocab;
  std::string log_path, resume_from, eval_ckpt, sim_ckpt, sim_goal, serve_ckpt, host = "127.0.0.1", transcripts,
      static_dir;
  int port = 8080;

  auto* build = app.add_subcommand("build-graph", "Build the weighted symptom/disease graph");
  add_common(build, build_o, false);
  build->add_flag("--unweighted", build_o.unweighted, "Binarize graph edge weights");
  build->add_option("--vocab-dataset", build_vocab, "Extra goal files whose names join the vocabulary");

  auto* train_cmd = app.add_subcommand("train", "Train a policy against the user simulator");
  add_common(train_cmd, train_o, true);
  train_cmd->add_option("--vocab-dataset", train_vocab, "Extra goal files whose names join the vocabulary");
  train_cmd->add_option("--log", log_path, "Training log CSV (default <out>.log.csv)");
  train_cmd->add_option("--checkpoint", resume_from, "Checkpoint to resume from (with --resume)");
  bool resume = false;
  train_cmd->add_flag("--resume", resume, "Continue training the --checkpoint model");

  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation on a test split");
  add_common(eval_cmd, eval_o, false);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->required();

  auto* serve = app.add_subcommand("serve", "HTTP session service for live dialogues");
  serve->add_option("--checkpoint", serve_ckpt, "Trained checkpoint")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--transcripts", transcripts, "Append completed session transcripts (JSON lines)");
  serve->add_option("--static", static_dir, "Directory of UI files to serve at /");
  std::string serve_config;
  serve->add_option("--config", serve_config, "JSON config file (unused by serve)");

  auto* sim = app.add_subcommand("simulate", "Replay greedy episodes against the simulator as JSON lines");
  add_common(sim, sim_o, false);
  sim->add_option("--checkpoint", sim_ckpt, "Trained checkpoint")->required();
  sim->add_option("--goal", sim_goal, "Only this goal id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    // print the help of the subcommand that failed, if any
    const CLI::App* failing = &app;
    for (const auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return 2;
  }

  try {
    if (*build) return run_build_graph(build_o, build_vocab, out);
    if (*train_cmd) {
      if (resume && resume_from.empty()) throw UsageError("--resume requires --checkpoint");
      return run_train(train_o, train_vocab, log_path, resume ? resume_from : "", out);
    }
    if (*eval_cmd) return run_eval(eval_o, eval_ckpt, out);
    if (*sim) return run_simulate(sim_o, sim_ckpt, sim_goal, out);
    if (*serve) return run_serve(serve_ckpt, host, port, transcripts, static_dir, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    for (const auto* sub : app.get_subcommands()) err << sub->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace graphdqn::cli
