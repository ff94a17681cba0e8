#pragma once

// Graph-DQN policy and trainer: epsilon-greedy selection, replay buffer,
// target network and the epoch loop.

#include <cmath>
#include <cstddef>
#include <deque>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphdqn/corpus.hpp"
#include "graphdqn/dialogue_env.hpp"
#include "graphdqn/medgraph.hpp"
#include "graphdqn/numkit.hpp"
#include "graphdqn/rng.hpp"

namespace graphdqn {

struct Transition {
  Vector state;
  std::size_t action = 0;
  double reward = 0.0;
  Vector next_state;
  bool terminal = false;
};

/// Bounded FIFO of transitions; the oldest entry is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000) : capacity_(capacity) {
    if (capacity_ == 0) throw ValidationError("replay capacity must be positive");
  }

  void push(Transition t) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
  }

  /// `batch` distinct transitions drawn uniformly.
  std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const {
    if (batch == 0) throw ValidationError("batch size must be positive");
    if (items_.size() < batch)
      throw ValidationError("replay buffer holds " + std::to_string(items_.size()) +
                            " transitions, cannot sample " + std::to_string(batch));
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<const Transition*> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + rng.index(idx.size() - i);
      std::swap(idx[i], idx[j]);
      out.push_back(&items_[idx[i]]);
    }
    return out;
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct TrainConfig {
  double gamma = 0.9;
  double epsilon = 0.1;
  double alpha = 5.0;
  double lr = 0.01;
  std::size_t batch = 32;
  std::size_t epochs = 800;
  std::size_t episodes_per_epoch = 100;
  std::size_t buffer_capacity = 10000;
  std::size_t max_turns = 22;
  double reward_success = 44.0;
  double reward_fail = -22.0;
  bool repeat_penalty = false;
  bool weighted = true;
  NetMode mode = NetMode::graph;
  std::uint64_t seed = 0;
  std::size_t hidden = 128;
  std::size_t embed = 64;
  std::size_t num_greeting = Vocabulary::kDefaultGreetings;

  EnvConfig env() const {
    EnvConfig e;
    e.max_turns = max_turns;
    e.reward_success = reward_success;
    e.reward_fail = reward_fail;
    e.repeat_penalty = repeat_penalty;
    return e;
  }

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0,1)");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0,1]");
    if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
    if (!(lr >= 0.0)) throw ValidationError("lr must be non-negative");
    if (batch == 0 || buffer_capacity == 0 || max_turns == 0 || hidden == 0 || embed == 0)
      throw ValidationError("batch, buffer_capacity, max_turns, hidden and embed must be positive");
    if (buffer_capacity < batch) throw ValidationError("buffer_capacity must be at least batch");
  }

  nlohmann::json to_json() const {
    return {{"gamma", gamma},
            {"epsilon", epsilon},
            {"alpha", alpha},
            {"lr", lr},
            {"batch", batch},
            {"epochs", epochs},
            {"episodes_per_epoch", episodes_per_epoch},
            {"buffer_capacity", buffer_capacity},
            {"max_turns", max_turns},
            {"reward_success", reward_success},
            {"reward_fail", reward_fail},
            {"repeat_penalty", repeat_penalty},
            {"weighted", weighted},
            {"mode", to_string(mode)},
            {"seed", seed},
            {"hidden", hidden},
            {"embed", embed},
            {"num_greeting", num_greeting}};
  }

  /// Overlay the keys present in `j` onto this config; unknown keys are rejected.
  void merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (key == "gamma") gamma = v.get<double>();
      else if (key == "epsilon") epsilon = v.get<double>();
      else if (key == "alpha") alpha = v.get<double>();
      else if (key == "lr") lr = v.get<double>();
      else if (key == "batch") batch = v.get<std::size_t>();
      else if (key == "epochs") epochs = v.get<std::size_t>();
      else if (key == "episodes_per_epoch") episodes_per_epoch = v.get<std::size_t>();
      else if (key == "buffer_capacity") buffer_capacity = v.get<std::size_t>();
      else if (key == "max_turns") max_turns = v.get<std::size_t>();
      else if (key == "reward_success") reward_success = v.get<double>();
      else if (key == "reward_fail") reward_fail = v.get<double>();
      else if (key == "repeat_penalty") repeat_penalty = v.get<bool>();
      else if (key == "weighted") weighted = v.get<bool>();
      else if (key == "mode") mode = parse_net_mode(v.get<std::string>());
      else if (key == "seed") seed = v.get<std::uint64_t>();
      else if (key == "hidden") hidden = v.get<std::size_t>();
      else if (key == "embed") embed = v.get<std::size_t>();
      else if (key == "num_greeting") num_greeting = v.get<std::size_t>();
      else throw ParseError("unknown config key '" + key + "'");
    }
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.merge_json(j);
    return c;
  }
};

/// Argmax with ties broken towards the lowest index.
inline std::size_t argmax(std::span<const double> q) {
  if (q.empty()) throw ValidationError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i)
    if (q[i] > q[best]) best = i;
  return best;
}

inline std::size_t select_action(const QFunction& q, std::span<const double> state, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0,1]");
  const std::size_t n = q.network().shape.actions;
  if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.index(n);
  return argmax(q(state));
}

inline std::size_t select_action(const QNetwork& net, const Propagation& prop,
                                 std::span<const double> state, double epsilon, Rng& rng) {
  return select_action(QFunction(net, prop), state, epsilon, rng);
}

/// y = r at terminal transitions, r + γ·max_a' Q_target(s', a') otherwise.
inline std::vector<double> bellman_targets(std::span<const Transition* const> batch,
                                           const QFunction& target, double gamma) {
  if (batch.empty()) throw ValidationError("empty batch");
  std::vector<double> y;
  y.reserve(batch.size());
  for (const Transition* t : batch) {
    if (t->terminal) {
      y.push_back(t->reward);
      continue;
    }
    const Vector q = target(t->next_state);
    y.push_back(t->reward + gamma * q[argmax(q)]);
  }
  return y;
}

inline void sync_target(QNetwork& target, const QNetwork& online) { target = online; }

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double success_rate = 0.0;
  double avg_turns = 0.0;
  double epsilon = 0.0;
};

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,loss,success_rate,avg_turns,epsilon\n" << std::fixed << std::setprecision(6);
  for (const auto& e : log)
    out << e.epoch << ',' << e.loss << ',' << e.success_rate << ',' << e.avg_turns << ',' << e.epsilon
        << '\n';
  return out.str();
}

/// Owns the online and target networks, the replay buffer and the RNG for one
/// training run.
class Trainer {
 public:
  Trainer(TrainConfig config, const std::vector<UserGoal>& goals, const HeteroGraph& graph,
          std::optional<QNetwork> initial = std::nullopt)
      : config_(config),
        goals_(&goals),
        env_(graph.vocab, config.env()),
        prop_(graph.normalized),
        buffer_(config.buffer_capacity),
        rng_(config.seed) {
    config_.validate();
    if (goals.empty()) throw ValidationError("empty training corpus");
    for (const auto& g : goals) graph.vocab.check_goal(g);
    const NetShape shape{env_.state_dim(), config_.hidden, config_.embed, graph.vocab.action_count()};
    if (initial) {
      if (!(initial->shape == shape) || initial->mode != config_.mode)
        throw ShapeError("initial network does not match config/vocabulary");
      online_ = std::move(*initial);
    } else {
      online_ = QNetwork::initialized(shape, config_.mode, rng_);
    }
    target_ = online_;
  }

  const QNetwork& online() const noexcept { return online_; }
  QNetwork& online_mut() noexcept { return online_; }
  const QNetwork& target() const noexcept { return target_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  const Propagation& propagation() const noexcept { return prop_; }
  const DialogueEnv& env() const noexcept { return env_; }
  const std::vector<EpochLog>& log() const noexcept { return log_; }
  const TrainConfig& config() const noexcept { return config_; }

  void sync() { sync_target(target_, online_); }

  struct EpisodeStats {
    DialogueResult result;
    std::size_t turns;
  };

  /// One ε-greedy episode on a uniformly drawn goal; transitions go to the buffer.
  EpisodeStats simulate_episode(const QFunction& q) {
    const UserGoal& goal = (*goals_)[rng_.index(goals_->size())];
    DialogueState state = env_.start_episode(goal);
    Vector s = env_.encode_state(state);
    StepOutcome out;
    while (!state.terminal()) {
      const std::size_t a = select_action(q, s, config_.epsilon, rng_);
      auto [next, o] = env_.step(state, goal, a);
      Vector s_next = env_.encode_state(next);
      buffer_.push({s, a, o.reward, s_next, o.terminal});
      state = std::move(next);
      s = std::move(s_next);
      out = o;
    }
    return {out.result, state.turn};
  }

  /// One gradient step on a sampled batch; targets come from the target network.
  double gradient_step(const QFunction& target_q) {
    const auto batch = buffer_.sample(config_.batch, rng_);
    const auto y = bellman_targets(batch, target_q, config_.gamma);
    std::vector<TrainingSample> samples;
    samples.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      samples.push_back({batch[i]->state, batch[i]->action, y[i]});
    return backward_and_step(online_, samples, config_.mode == NetMode::graph ? &prop_ : nullptr,
                             config_.lr, config_.alpha);
  }

  EpochLog run_epoch() {
    EpochLog entry;
    entry.epoch = log_.size() + 1;
    entry.epsilon = config_.epsilon;
    std::size_t successes = 0, turns = 0;
    {
      const QFunction q(online_, prop_);
      for (std::size_t e = 0; e < config_.episodes_per_epoch; ++e) {
        const auto stats = simulate_episode(q);
        successes += stats.result == DialogueResult::success;
        turns += stats.turns;
      }
    }
    if (config_.episodes_per_epoch > 0) {
      entry.success_rate = static_cast<double>(successes) / config_.episodes_per_epoch;
      entry.avg_turns = static_cast<double>(turns) / config_.episodes_per_epoch;
    }
    if (buffer_.size() >= config_.batch) {
      const QFunction target_q(target_, prop_);
      const std::size_t steps = buffer_.size() / config_.batch;
      double total = 0.0;
      for (std::size_t i = 0; i < steps; ++i) total += gradient_step(target_q);
      entry.loss = total / static_cast<double>(steps);
    }
    sync();
    log_.push_back(entry);
    return entry;
  }

  void run(std::size_t epochs) {
    for (std::size_t i = 0; i < epochs; ++i) run_epoch();
  }

 private:
  TrainConfig config_;
  const std::vector<UserGoal>* goals_;
  DialogueEnv env_;
  Propagation prop_;
  ReplayBuffer buffer_;
  Rng rng_;
  QNetwork online_;
  QNetwork target_;
  std::vector<EpochLog> log_;
};

struct TrainResult {
  QNetwork net;
  std::vector<EpochLog> log;
};

inline TrainResult train(const TrainConfig& config, const std::vector<UserGoal>& goals,
                         const HeteroGraph& graph, std::optional<QNetwork> initial = std::nullopt) {
  Trainer trainer(config, goals, graph, std::move(initial));
  trainer.run(config.epochs);
  return {trainer.online(), trainer.log()};
}

}  // namespace graphdqn
