#pragma once

// Greedy evaluation, confusion matrices and 2-D PCA of node embeddings.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphdqn/agent.hpp"
#include "graphdqn/dialogue_env.hpp"
#include "graphdqn/numkit.hpp"

namespace graphdqn {

struct EpisodeRecord {
  std::string goal_id;
  std::size_t true_disease = 0;
  std::optional<std::size_t> predicted;  // none on timeout
  DialogueResult result = DialogueResult::ongoing;
  std::size_t turns = 0;
};

struct ConfusionMatrix {
  std::size_t num_diseases = 0;
  Matrix counts;      // M × (M+1); last column = no diagnosis (timeout)
  Matrix normalized;  // row-normalized, empty rows stay zero
};

struct EvalReport {
  double accuracy = 0.0;
  double avg_turns = 0.0;
  ConfusionMatrix confusion;
  std::vector<EpisodeRecord> episodes;
};

/// Decides the next action from the dialogue state. The goal is passed so test
/// oracles can cheat; learned policies ignore it.
using Policy = std::function<std::size_t(const DialogueState&, const UserGoal&)>;

inline ConfusionMatrix confusion_matrix(std::span<const EpisodeRecord> records, std::size_t num_diseases) {
  if (records.empty()) throw ValidationError("confusion matrix of zero records");
  ConfusionMatrix cm{num_diseases, Matrix(num_diseases, num_diseases + 1), {}};
  for (const auto& r : records) {
    if (r.true_disease >= num_diseases) throw ValidationError("record disease out of range");
    const std::size_t col = r.predicted ? *r.predicted : num_diseases;
    if (col > num_diseases) throw ValidationError("record prediction out of range");
    cm.counts(r.true_disease, col) += 1.0;
  }
  cm.normalized = cm.counts;
  for (std::size_t i = 0; i < num_diseases; ++i) {
    double sum = 0.0;
    for (double v : cm.counts.row(i)) sum += v;
    if (sum > 0.0)
      for (double& v : cm.normalized.row(i)) v /= sum;
  }
  return cm;
}

/// Runs one episode per goal with `policy` and tallies accuracy and turns.
inline EvalReport evaluate_policy(const DialogueEnv& env, const std::vector<UserGoal>& goals,
                                  const Policy& policy) {
  if (goals.empty()) throw ValidationError("empty test set");
  const auto& vocab = env.vocab();
  EvalReport report;
  std::size_t successes = 0, turns = 0;
  for (const auto& goal : goals) {
    vocab.check_goal(goal);
    DialogueState state = env.start_episode(goal);
    EpisodeRecord rec{goal.id, *vocab.disease_index(goal.disease), std::nullopt, DialogueResult::ongoing, 0};
    while (!state.terminal()) {
      const std::size_t a = policy(state, goal);
      auto [next, out] = env.step(state, goal, a);
      if (vocab.is_disease(a)) rec.predicted = vocab.disease_of(a);
      state = std::move(next);
      rec.result = out.result;
    }
    rec.turns = state.turn;
    successes += rec.result == DialogueResult::success;
    turns += rec.turns;
    report.episodes.push_back(std::move(rec));
  }
  report.accuracy = static_cast<double>(successes) / goals.size();
  report.avg_turns = static_cast<double>(turns) / goals.size();
  report.confusion = confusion_matrix(report.episodes, vocab.num_diseases());
  return report;
}

inline Policy greedy_policy(const DialogueEnv& env, const QFunction& q) {
  return [&env, &q](const DialogueState& s, const UserGoal&) { return argmax(q(env.encode_state(s))); };
}

/// Greedy (ε = 0) evaluation of a trained network.
inline EvalReport evaluate(const QNetwork& net, const Propagation& prop, const DialogueEnv& env,
                           const std::vector<UserGoal>& test_goals) {
  if (net.shape.actions != env.vocab().action_count() || net.shape.state_dim != env.state_dim())
    throw ValidationError("network does not match the evaluation vocabulary");
  const QFunction q(net, prop);
  return evaluate_policy(env, test_goals, greedy_policy(env, q));
}

inline nlohmann::json report_to_json(const EvalReport& r, const Vocabulary& vocab) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : r.episodes)
    eps.push_back({{"goal_id", e.goal_id},
                   {"disease", vocab.diseases()[e.true_disease]},
                   {"predicted", e.predicted ? nlohmann::json(vocab.diseases()[*e.predicted]) : nlohmann::json()},
                   {"result", to_string(e.result)},
                   {"turns", e.turns}});
  auto rows = [](const Matrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) out.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
    return out;
  };
  std::vector<std::string> cols = vocab.diseases();
  cols.push_back("<timeout>");
  return {{"accuracy", r.accuracy},
          {"avg_turns", r.avg_turns},
          {"num_episodes", r.episodes.size()},
          {"confusion", {{"rows", vocab.diseases()}, {"cols", cols},
                         {"counts", rows(r.confusion.counts)}, {"normalized", rows(r.confusion.normalized)}}},
          {"episodes", eps}};
}

inline std::string confusion_csv(const ConfusionMatrix& cm, const Vocabulary& vocab) {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& d : vocab.diseases()) out << ',' << d;
  out << ",<timeout>\n";
  for (std::size_t i = 0; i < cm.num_diseases; ++i) {
    out << vocab.diseases()[i];
    for (double v : cm.counts.row(i)) out << ',' << static_cast<long long>(v);
    out << '\n';
  }
  return out.str();
}

struct PcaResult {
  Matrix coords;  // rows × 2
  std::array<Vector, 2> components;
  std::array<double, 2> variances{0.0, 0.0};
};

/// Top-2 principal components by power iteration with deflation.
inline PcaResult pca_2d(const Matrix& points, double tol = 1e-10, std::size_t max_iter = 10000) {
  const std::size_t rows = points.rows(), dim = points.cols();
  PcaResult res;
  res.coords = Matrix(rows, 2);
  if (rows == 0 || dim == 0) return res;

  Matrix centered = points;
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < rows; ++i) mean += points(i, j);
    mean /= rows;
    for (std::size_t i = 0; i < rows; ++i) centered(i, j) -= mean;
  }
  Matrix cov(dim, dim);
  for (std::size_t i = 0; i < rows; ++i) {
    auto r = centered.row(i);
    for (std::size_t a = 0; a < dim; ++a) {
      if (r[a] == 0.0) continue;
      for (std::size_t b = 0; b < dim; ++b) cov(a, b) += r[a] * r[b];
    }
  }
  double trace = 0.0;
  for (double& v : cov.flat()) v /= rows;
  for (std::size_t a = 0; a < dim; ++a) trace += cov(a, a);

  auto normalize = [](Vector& v) {
    double n = std::sqrt(dot(v, v));
    if (n > 0.0)
      for (double& x : v) x /= n;
    return n;
  };
  auto orthogonalize = [&](Vector& v, std::size_t upto) {
    for (std::size_t c = 0; c < upto; ++c) {
      const double p = dot(v, res.components[c]);
      for (std::size_t j = 0; j < dim; ++j) v[j] -= p * res.components[c][j];
    }
  };

  for (std::size_t c = 0; c < 2 && c < dim; ++c) {
    Vector v(dim);
    for (std::size_t j = 0; j < dim; ++j) v[j] = 1.0 + 0.37 * static_cast<double>((j * 7 + c * 3) % 11);
    orthogonalize(v, c);
    if (normalize(v) == 0.0) {
      v.assign(dim, 0.0);
      v[c] = 1.0;
      orthogonalize(v, c);
      normalize(v);
    }
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
      Vector w = matvec(cov, v);
      orthogonalize(w, c);
      const double norm = normalize(w);
      if (norm <= 1e-14 * std::max(trace, 1e-300)) {
        lambda = 0.0;
        break;
      }
      double change = 0.0;
      for (std::size_t j = 0; j < dim; ++j) change = std::max(change, std::abs(w[j] - v[j]));
      v = std::move(w);
      lambda = norm;
      if (change < tol) break;
    }
    orthogonalize(v, c);
    normalize(v);
    // fix the sign: largest-magnitude coordinate positive
    std::size_t big = 0;
    for (std::size_t j = 1; j < dim; ++j)
      if (std::abs(v[j]) > std::abs(v[big])) big = j;
    if (v[big] < 0.0)
      for (double& x : v) x = -x;
    res.components[c] = v;
    res.variances[c] = lambda;
  }
  if (dim < 2) res.components[1].assign(dim, 0.0);

  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      res.coords(i, c) = res.variances[c] > 0.0 ? dot(centered.row(i), res.components[c]) : 0.0;
  return res;
}

/// `node,kind,x,y` for every action node.
inline std::string embeddings_csv(const QNetwork& net, const Propagation& prop, const Vocabulary& vocab) {
  const Matrix emb = node_embeddings(net, prop);
  const PcaResult pca = pca_2d(emb);
  std::ostringstream out;
  out << "node,kind,x,y\n" << std::setprecision(10);
  for (std::size_t i = 0; i < emb.rows(); ++i)
    out << vocab.action_name(i) << ',' << vocab.action_kind(i) << ',' << pca.coords(i, 0) << ','
        << pca.coords(i, 1) << '\n';
  return out.str();
}

}  // namespace graphdqn
