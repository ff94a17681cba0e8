#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls into the code paths it is used to check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "graphdqn/checkpoint.hpp"
#include "graphdqn/corpus.hpp"
#include "graphdqn/dialogue_env.hpp"
#include "graphdqn/medgraph.hpp"
#include "graphdqn/numkit.hpp"
#include "graphdqn/rng.hpp"

namespace graphdqn::testkit {

/// Toy corpus: g1=(d1,{s1,s2}), g2=(d1,{s1,s2}), g3=(d2,{s2,s3}), g4=(d2,{s3}),
/// every symptom in the self-report.
inline std::vector<UserGoal> toy_goals() {
  return {
      {"g1", "d1", {{"s1", true}, {"s2", true}}, {}},
      {"g2", "d1", {{"s1", true}, {"s2", true}}, {}},
      {"g3", "d2", {{"s2", true}, {"s3", true}}, {}},
      {"g4", "d2", {{"s3", true}}, {}},
  };
}

inline const char* kToyJson = R"({"goals":[
  {"id":"g1","disease":"d1","explicit_symptoms":{"s1":true,"s2":true},"implicit_symptoms":{}},
  {"id":"g2","disease":"d1","explicit_symptoms":{"s1":true,"s2":true},"implicit_symptoms":{}},
  {"id":"g3","disease":"d2","explicit_symptoms":{"s2":true,"s3":true},"implicit_symptoms":{}},
  {"id":"g4","disease":"d2","explicit_symptoms":{"s3":true},"implicit_symptoms":{}}]})";

inline Vocabulary toy_vocab() { return Vocabulary::from_goals(toy_goals()); }

/// Random corpus: up to `max_goals` goals over small disease/symptom pools,
/// mixed true/false in both maps.
inline std::vector<UserGoal> random_goals(std::uint64_t seed, std::size_t max_goals = 50) {
  Rng rng(seed);
  const std::size_t diseases = 1 + rng.index(5);
  const std::size_t symptoms = 2 + rng.index(9);
  const std::size_t count = 1 + rng.index(max_goals);
  std::vector<UserGoal> goals;
  for (std::size_t g = 0; g < count; ++g) {
    UserGoal goal;
    goal.id = "r" + std::to_string(g);
    goal.disease = "dis" + std::to_string(rng.index(diseases));
    for (std::size_t s = 0; s < symptoms; ++s) {
      const double u = rng.uniform();
      const std::string name = "sym" + std::to_string(s);
      if (u < 0.25) goal.explicit_symptoms[name] = rng.bernoulli(0.7);
      else if (u < 0.5) goal.implicit_symptoms[name] = rng.bernoulli(0.7);
    }
    if (goal.explicit_symptoms.empty() && goal.implicit_symptoms.empty())
      goal.implicit_symptoms["sym0"] = true;
    goals.push_back(std::move(goal));
  }
  return goals;
}

/// Direct re-derivation of the weighted adjacency by scanning the goals for
/// every quantity, keyed by node name.
inline Matrix brute_force_adjacency(const std::vector<UserGoal>& goals, const Vocabulary& vocab, bool weighted) {
  const std::size_t n = vocab.action_count();
  Matrix a(n, n);
  auto has = [](const UserGoal& g, const std::string& s) {
    auto e = g.explicit_symptoms.find(s);
    if (e != g.explicit_symptoms.end() && e->second) return true;
    auto i = g.implicit_symptoms.find(s);
    return i != g.implicit_symptoms.end() && i->second;
  };
  const double total = static_cast<double>(goals.size());
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      if (x == y) {
        a(x, y) = 1.0;
        continue;
      }
      double w = 0.0;
      if (vocab.is_symptom(x) && vocab.is_symptom(y)) {
        const auto si = vocab.action_name(x), sj = vocab.action_name(y);
        double ci = 0, cj = 0, cij = 0;
        for (const auto& g : goals) {
          const bool hi = has(g, si), hj = has(g, sj);
          ci += hi;
          cj += hj;
          cij += hi && hj;
        }
        if (cij > 0) {
          const double v = std::log((cij / total) / ((ci / total) * (cj / total)));
          if (v > 0) w = v;
        }
      } else if ((vocab.is_symptom(x) && vocab.is_disease(y)) || (vocab.is_disease(x) && vocab.is_symptom(y))) {
        const auto sym = vocab.action_name(vocab.is_symptom(x) ? x : y);
        const auto dis = vocab.action_name(vocab.is_disease(x) ? x : y);
        double n_sd = 0, n_d = 0;
        std::set<std::string> with_symptom;
        for (const auto& g : goals) {
          if (has(g, sym)) with_symptom.insert(g.disease);
          if (g.disease != dis) continue;
          if (has(g, sym)) n_sd += 1;
          for (const auto& s : vocab.symptoms()) n_d += has(g, s);
        }
        const double sf = n_d > 0 ? n_sd / n_d : 0.0;
        const double idf = with_symptom.empty()
                               ? 0.0
                               : std::log(static_cast<double>(vocab.num_diseases()) / with_symptom.size());
        w = sf * idf;
      }
      a(x, y) = (!weighted && w != 0.0) ? 1.0 : w;
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Plain loops for the network forward pass, written against the documented
// layout rather than the library kernels.

inline std::vector<double> oracle_encoder(const QNetwork& net, const std::vector<double>& s) {
  const auto& p = net.params;
  std::vector<double> z(net.shape.hidden), out(net.shape.embed);
  for (std::size_t i = 0; i < net.shape.hidden; ++i) {
    double acc = p.b1[i];
    for (std::size_t k = 0; k < s.size(); ++k) acc += s[k] * p.w1(k, i);
    z[i] = acc > 0 ? acc : 0;
  }
  for (std::size_t j = 0; j < net.shape.embed; ++j) {
    double acc = p.b2[j];
    for (std::size_t i = 0; i < net.shape.hidden; ++i) acc += z[i] * p.w2(i, j);
    out[j] = acc;
  }
  return out;
}

inline Matrix oracle_gcn(const QNetwork& net, const Matrix& a_norm) {
  const std::size_t n = net.shape.actions, k = net.shape.embed;
  Matrix h(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0;
      for (std::size_t m = 0; m < n; ++m) acc += a_norm(i, m) * net.params.gcn_w(m, j);
      h(i, j) = acc > 0 ? acc : 0;
    }
  return h;
}

inline std::vector<double> oracle_q(const QNetwork& net, const Matrix& a_norm, const std::vector<double>& s) {
  const auto sh = oracle_encoder(net, s);
  std::vector<double> q(net.shape.actions);
  if (net.mode == NetMode::graph) {
    const Matrix h = oracle_gcn(net, a_norm);
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t j = 0; j < sh.size(); ++j) q[i] += h(i, j) * sh[j];
  } else {
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = net.params.head_b[i];
      for (std::size_t j = 0; j < sh.size(); ++j) q[i] += net.params.head(i, j) * sh[j];
    }
  }
  return q;
}

/// Huber loss straight from its piecewise definition.
inline double oracle_huber(double pred, double target, double alpha) {
  const double d = std::abs(target - pred);
  return d <= alpha ? 0.5 * d * d : alpha * (d - 0.5 * alpha);
}

struct OracleSample {
  std::vector<double> state;
  std::size_t action;
  double target;
};

inline double oracle_batch_loss(const QNetwork& net, const Matrix& a_norm, const std::vector<OracleSample>& batch,
                                double alpha) {
  double total = 0;
  for (const auto& s : batch) total += oracle_huber(oracle_q(net, a_norm, s.state)[s.action], s.target, alpha);
  return total / batch.size();
}

/// Signs of every rectifier pre-activation, to detect kink crossings.
inline std::vector<int> oracle_activation_pattern(const QNetwork& net, const Matrix& a_norm,
                                                  const std::vector<OracleSample>& batch, double kink_tol,
                                                  bool& near_kink) {
  std::vector<int> pattern;
  auto note = [&](double pre) {
    if (std::abs(pre) < kink_tol) near_kink = true;
    pattern.push_back(pre > 0);
  };
  const auto& p = net.params;
  for (const auto& s : batch)
    for (std::size_t i = 0; i < net.shape.hidden; ++i) {
      double acc = p.b1[i];
      for (std::size_t k = 0; k < s.state.size(); ++k) acc += s.state[k] * p.w1(k, i);
      note(acc);
    }
  if (net.mode == NetMode::graph)
    for (std::size_t i = 0; i < net.shape.actions; ++i)
      for (std::size_t j = 0; j < net.shape.embed; ++j) {
        double acc = 0;
        for (std::size_t m = 0; m < net.shape.actions; ++m) acc += a_norm(i, m) * p.gcn_w(m, j);
        note(acc);
      }
  return pattern;
}

struct GradCheckResult {
  std::size_t compared = 0;
  std::size_t masked = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;
};

/// Central differences (step eps) on every parameter against `analytic`.
/// A coordinate is masked when the perturbation flips a rectifier or when a
/// pre-activation sits within 1e-6 of the kink.
inline GradCheckResult finite_difference_check(QNetwork net, const Matrix& a_norm,
                                               const std::vector<OracleSample>& batch, double alpha,
                                               const GradientSet& analytic, double eps = 1e-5,
                                               double rel_tol = 1e-4, double abs_floor = 1e-8) {
  GradCheckResult r;
  std::vector<std::span<const double>> grads;
  analytic.visit([&](const char*, std::span<const double> g) { grads.push_back(g); });
  std::vector<std::span<double>> params;
  net.params.visit([&](const char*, std::span<double> w) { params.push_back(w); });
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double orig = params[t][i];
      bool near = false;
      params[t][i] = orig + eps;
      const double up = oracle_batch_loss(net, a_norm, batch, alpha);
      const auto pat_up = oracle_activation_pattern(net, a_norm, batch, 1e-6, near);
      params[t][i] = orig - eps;
      const double down = oracle_batch_loss(net, a_norm, batch, alpha);
      const auto pat_down = oracle_activation_pattern(net, a_norm, batch, 1e-6, near);
      params[t][i] = orig;
      if (near || pat_up != pat_down) {
        ++r.masked;
        continue;
      }
      const double numeric = (up - down) / (2 * eps);
      const double a = grads[t][i];
      const double err = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      ++r.compared;
      if (err > rel_tol * scale + abs_floor) ++r.failures;
      if (scale > abs_floor) r.worst_rel = std::max(r.worst_rel, err / scale);
    }
  }
  return r;
}

/// Random small graph-mode instance: network, normalized adjacency and a
/// batch whose targets sit on both sides of the Huber transition.
struct GradInstance {
  QNetwork net;
  Matrix a_norm;
  std::vector<OracleSample> batch;
};

inline GradInstance random_grad_instance(std::uint64_t seed, NetMode mode = NetMode::graph) {
  Rng rng(seed);
  const std::size_t n = 3 + rng.index(5);      // ≤ 7
  const std::size_t k = 1 + rng.index(4);      // ≤ 4
  const std::size_t h = 2 + rng.index(7);      // ≤ 8
  const std::size_t d = 3 + rng.index(8);
  GradInstance inst;
  inst.net = QNetwork::initialized({d, h, k, n}, mode, rng);
  // larger weights so Q-values reach both Huber branches
  inst.net.params.visit([&](const char*, std::span<double> w) {
    for (double& x : w) x *= 3.0;
  });
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.bernoulli(0.5)) a(i, j) = a(j, i) = rng.uniform(0.0, 2.0);
  }
  inst.a_norm = normalize_adjacency(a);
  const std::size_t b = 1 + rng.index(5);
  for (std::size_t i = 0; i < b; ++i) {
    OracleSample s;
    s.state.resize(d);
    for (double& x : s.state) x = rng.bernoulli(0.5) ? rng.uniform(0.0, 1.0) : 0.0;
    s.action = rng.index(n);
    s.target = rng.uniform(-15.0, 15.0);
    inst.batch.push_back(std::move(s));
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Scripted checkpoints: a baseline-mode network wired so that s_h equals the
// encoded state, letting the head read state features directly.

struct Script {
  /// action → bias on its Q-value
  std::map<std::size_t, double> bias;
  /// (action, state feature) → weight
  std::map<std::pair<std::size_t, std::size_t>, double> weight;
};

inline Checkpoint scripted_checkpoint(const std::vector<UserGoal>& goals, const Script& script,
                                      std::size_t max_turns = 22) {
  TrainConfig cfg;
  cfg.mode = NetMode::baseline;
  cfg.epochs = 0;
  cfg.max_turns = max_turns;
  const Vocabulary vocab = Vocabulary::from_goals(goals, cfg.num_greeting);
  const DialogueEnv env(vocab, cfg.env());
  const std::size_t d = env.state_dim();
  cfg.hidden = d;
  cfg.embed = d;
  QNetwork net({d, d, d, vocab.action_count()}, NetMode::baseline);
  for (std::size_t i = 0; i < d; ++i) {
    net.params.w1(i, i) = 1.0;
    net.params.w2(i, i) = 1.0;
  }
  for (const auto& [a, b] : script.bias) net.params.head_b[a] = b;
  for (const auto& [key, w] : script.weight) net.params.head(key.first, key.second) = w;
  return Checkpoint{cfg, build_graph(goals, vocab), net, 0};
}

/// Feature offsets inside the encoded state.
struct Layout {
  std::size_t actions, symptoms, max_turns;
  std::size_t prev_action(std::size_t a) const { return a; }
  std::size_t user_act(UserAct u) const { return actions + static_cast<std::size_t>(u); }
  std::size_t symptom(std::size_t s, SymptomStatus st) const {
    const std::size_t ch = st == SymptomStatus::yes ? 0 : st == SymptomStatus::no ? 1 : 2;
    return actions + kUserActCount + 3 * s + ch;
  }
  std::size_t turn(std::size_t t) const { return actions + kUserActCount + 3 * symptoms + t; }
};

inline Layout layout_of(const Vocabulary& v, std::size_t max_turns = 22) {
  return {v.action_count(), v.num_symptoms(), max_turns};
}

/// Toy-vocabulary policy: ask s1, s2, s3 on turns 0–2, then diagnose d1 if s1
/// was confirmed, else d2.
inline Checkpoint ask_three_then_diagnose() {
  const auto goals = toy_goals();
  const auto v = Vocabulary::from_goals(goals);
  const auto L = layout_of(v);
  Script sc;
  const auto s1 = v.symptom_action(0), s2 = v.symptom_action(1), s3 = v.symptom_action(2);
  const auto d1 = v.disease_action(0), d2 = v.disease_action(1);
  sc.weight[{s1, L.turn(0)}] = 10;
  sc.weight[{s2, L.turn(1)}] = 10;
  sc.weight[{s3, L.turn(2)}] = 10;
  sc.weight[{d1, L.turn(3)}] = 10;
  sc.weight[{d2, L.turn(3)}] = 10;
  sc.weight[{d1, L.symptom(0, SymptomStatus::yes)}] = 1;
  sc.weight[{d2, L.symptom(2, SymptomStatus::yes)}] = 0.5;
  return scripted_checkpoint(goals, sc);
}

/// Toy-vocabulary policy that asks s1 forever.
inline Checkpoint always_ask_s1() {
  const auto goals = toy_goals();
  const auto v = Vocabulary::from_goals(goals);
  Script sc;
  sc.bias[v.symptom_action(0)] = 1.0;
  return scripted_checkpoint(goals, sc);
}

/// Fresh temporary directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this));
    path_ = std::filesystem::temp_directory_path() / ("graphdqn_" + tag + "_" + hex64(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace graphdqn::testkit
