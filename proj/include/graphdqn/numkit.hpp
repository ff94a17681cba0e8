#pragma once

// Q-network numerics: two-layer state encoder, one-layer graph convolution,
// inner-product Q head (or a plain linear head for the baseline), Huber loss,
// hand-written gradients and SGD.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphdqn/matrix.hpp"
#include "graphdqn/medgraph.hpp"
#include "graphdqn/rng.hpp"

namespace graphdqn {

enum class NetMode { graph, baseline };

inline const char* to_string(NetMode m) { return m == NetMode::graph ? "graph" : "baseline"; }

inline NetMode parse_net_mode(const std::string& s) {
  if (s == "graph") return NetMode::graph;
  if (s == "baseline") return NetMode::baseline;
  throw ValidationError("unknown mode '" + s + "' (expected graph|baseline)");
}

struct NetShape {
  std::size_t state_dim = 0;
  std::size_t hidden = 128;
  std::size_t embed = 64;
  std::size_t actions = 0;

  bool operator==(const NetShape&) const = default;
};

/// Normalized adjacency handed to the network. Counts reads so callers can
/// verify that the baseline path never touches the graph.
class Propagation {
 public:
  Propagation() = default;
  explicit Propagation(Matrix m) : matrix_(std::move(m)) {}
  Propagation(const Propagation& o) : matrix_(o.matrix_) {}
  Propagation& operator=(const Propagation& o) {
    matrix_ = o.matrix_;
    reads_ = 0;
    return *this;
  }

  const Matrix& matrix() const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    return matrix_;
  }
  std::size_t reads() const { return reads_.load(std::memory_order_relaxed); }
  std::size_t size() const noexcept { return matrix_.rows(); }

 private:
  Matrix matrix_;
  mutable std::atomic<std::size_t> reads_{0};
};

/// Every trainable tensor. Tensors a mode does not use stay empty.
/// Weights are stored input-major so forward passes walk contiguous rows:
/// `w1` is state_dim×hidden, `w2` hidden×embed, `gcn_w` actions×embed and the
/// baseline `head` actions×embed (row i is action i's output vector).
struct Parameters {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Matrix gcn_w;
  Matrix head;
  Vector head_b;

  template <typename F>
  void visit(F&& f) {
    f("w1", w1.flat());
    f("b1", std::span<double>(b1));
    f("w2", w2.flat());
    f("b2", std::span<double>(b2));
    f("gcn_w", gcn_w.flat());
    f("head", head.flat());
    f("head_b", std::span<double>(head_b));
  }
  template <typename F>
  void visit(F&& f) const {
    f("w1", w1.flat());
    f("b1", std::span<const double>(b1));
    f("w2", w2.flat());
    f("b2", std::span<const double>(b2));
    f("gcn_w", gcn_w.flat());
    f("head", head.flat());
    f("head_b", std::span<const double>(head_b));
  }

  static Parameters zeros(const NetShape& s, NetMode mode) {
    Parameters p;
    p.w1 = Matrix(s.state_dim, s.hidden);
    p.b1.assign(s.hidden, 0.0);
    p.w2 = Matrix(s.hidden, s.embed);
    p.b2.assign(s.embed, 0.0);
    if (mode == NetMode::graph) {
      p.gcn_w = Matrix(s.actions, s.embed);
    } else {
      p.head = Matrix(s.actions, s.embed);
      p.head_b.assign(s.actions, 0.0);
    }
    return p;
  }

  bool operator==(const Parameters&) const = default;
};

using GradientSet = Parameters;

struct QNetwork {
  NetMode mode = NetMode::graph;
  NetShape shape;
  Parameters params;

  QNetwork() = default;
  QNetwork(const NetShape& s, NetMode m) : mode(m), shape(s), params(Parameters::zeros(s, m)) {}

  /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
  static QNetwork initialized(const NetShape& s, NetMode m, Rng& rng) {
    QNetwork net(s, m);
    auto fill = [&](std::span<double> xs, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& x : xs) x = rng.uniform(-bound, bound);
    };
    auto& p = net.params;
    fill(p.w1.flat(), s.state_dim);
    fill(p.b1, s.state_dim);
    fill(p.w2.flat(), s.hidden);
    fill(p.b2, s.hidden);
    if (m == NetMode::graph) {
      fill(p.gcn_w.flat(), s.actions);
    } else {
      fill(p.head.flat(), s.embed);
      fill(p.head_b, s.embed);
    }
    return net;
  }

  bool operator==(const QNetwork&) const = default;
};

struct EncoderTrace {
  Vector pre;     // W1ᵀs + b1
  Vector hidden;  // rectified
  Vector out;     // s_h
};

inline EncoderTrace mlp_forward_trace(const QNetwork& net, std::span<const double> state) {
  const auto& p = net.params;
  require_shape(state.size() == net.shape.state_dim, "state length");
  EncoderTrace t;
  t.pre = vecmat(state, p.w1);
  for (std::size_t i = 0; i < t.pre.size(); ++i) t.pre[i] += p.b1[i];
  t.hidden.resize(t.pre.size());
  for (std::size_t i = 0; i < t.pre.size(); ++i) t.hidden[i] = relu(t.pre[i]);
  t.out = vecmat(t.hidden, p.w2);
  for (std::size_t i = 0; i < t.out.size(); ++i) t.out[i] += p.b2[i];
  return t;
}

/// s_h = W2ᵀ relu(W1ᵀ s + b1) + b2.
inline Vector mlp_forward(const QNetwork& net, std::span<const double> state) {
  return mlp_forward_trace(net, state).out;
}

/// Pre-activation Ã·W (X is the identity, so ÃXW = ÃW).
inline Matrix gcn_preactivation(const QNetwork& net, const Propagation& prop) {
  const Matrix& a = prop.matrix();
  require_shape(a.rows() == net.shape.actions && a.cols() == net.shape.actions,
                "normalized adjacency must be n×n");
  return matmul(a, net.params.gcn_w);
}

/// H = relu(Ã·W), one embedding row per action node.
inline Matrix gcn_forward(const QNetwork& net, const Propagation& prop) {
  Matrix h = gcn_preactivation(net, prop);
  for (double& v : h.flat()) v = relu(v);
  return h;
}

/// q_i = <H_i, s_h>.
inline Vector q_values(const Matrix& embeddings, std::span<const double> s_h) {
  require_shape(embeddings.cols() == s_h.size(), "embedding width vs state encoding");
  return matvec(embeddings, s_h);
}

inline Vector baseline_q_values(const QNetwork& net, std::span<const double> s_h) {
  Vector q = matvec(net.params.head, s_h);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] += net.params.head_b[i];
  return q;
}

/// Action-node embedding matrix: GCN output in graph mode, head rows in baseline mode.
inline Matrix node_embeddings(const QNetwork& net, const Propagation& prop) {
  if (net.mode == NetMode::graph) return gcn_forward(net, prop);
  return net.params.head;
}

/// Forward evaluator for a fixed network; the graph embedding is computed once.
class QFunction {
 public:
  QFunction(const QNetwork& net, const Propagation& prop) : net_(&net) {
    if (net.mode == NetMode::graph) embeddings_ = gcn_forward(net, prop);
  }

  Vector operator()(std::span<const double> state) const {
    const Vector s_h = mlp_forward(*net_, state);
    if (net_->mode == NetMode::graph) return q_values(embeddings_, s_h);
    return baseline_q_values(*net_, s_h);
  }

  const QNetwork& network() const noexcept { return *net_; }

 private:
  const QNetwork* net_;
  Matrix embeddings_;
};

struct HuberResult {
  double loss;
  double dloss_dpred;
};

/// δ = target − pred; ½δ² inside |δ| ≤ α, α(|δ| − ½α) outside.
inline HuberResult huber_loss(double pred, double target, double alpha) {
  if (!(alpha > 0.0)) throw ValidationError("huber alpha must be positive");
  const double delta = target - pred;
  const double abs_delta = std::abs(delta);
  if (abs_delta <= alpha) return {0.5 * delta * delta, -delta};
  return {alpha * (abs_delta - 0.5 * alpha), delta > 0.0 ? -alpha : alpha};
}

/// One regression example: push Q(state, action) towards target.
struct TrainingSample {
  std::span<const double> state;
  std::size_t action;
  double target;
};

/// Mean Huber loss over the batch and its gradient with respect to every
/// parameter. Only the taken action's Q-value is regressed.
inline double compute_gradients(const QNetwork& net, std::span<const TrainingSample> batch,
                                const Propagation* prop, double alpha, GradientSet& grad) {
  if (batch.empty()) throw ValidationError("empty training batch");
  const auto& p = net.params;
  const auto& shape = net.shape;
  grad = Parameters::zeros(shape, net.mode);
  const bool graph = net.mode == NetMode::graph;
  if (graph && prop == nullptr) throw ValidationError("graph mode requires a normalized adjacency");

  Matrix gcn_pre, embeddings, d_embeddings;
  if (graph) {
    gcn_pre = gcn_preactivation(net, *prop);
    embeddings = gcn_pre;
    for (double& v : embeddings.flat()) v = relu(v);
    d_embeddings = Matrix(shape.actions, shape.embed);
  }

  const double scale = 1.0 / static_cast<double>(batch.size());
  double total_loss = 0.0;
  Vector d_sh(shape.embed), d_hidden(shape.hidden);
  for (const auto& sample : batch) {
    require_shape(sample.action < shape.actions, "action index");
    const EncoderTrace t = mlp_forward_trace(net, sample.state);
    const double q = graph ? dot(embeddings.row(sample.action), t.out)
                           : dot(p.head.row(sample.action), t.out) + p.head_b[sample.action];
    const auto h = huber_loss(q, sample.target, alpha);
    total_loss += h.loss;
    const double g = h.dloss_dpred * scale;
    if (g == 0.0) continue;

    if (graph) {
      auto row = embeddings.row(sample.action);
      auto drow = d_embeddings.row(sample.action);
      for (std::size_t j = 0; j < shape.embed; ++j) {
        drow[j] += g * t.out[j];
        d_sh[j] = g * row[j];
      }
    } else {
      auto row = p.head.row(sample.action);
      auto drow = grad.head.row(sample.action);
      for (std::size_t j = 0; j < shape.embed; ++j) {
        drow[j] += g * t.out[j];
        d_sh[j] = g * row[j];
      }
      grad.head_b[sample.action] += g;
    }

    // s_h = W2ᵀ z + b2
    for (std::size_t j = 0; j < shape.embed; ++j) grad.b2[j] += d_sh[j];
    for (std::size_t i = 0; i < shape.hidden; ++i) {
      auto w2row = p.w2.row(i);
      if (t.hidden[i] != 0.0) {
        auto g2row = grad.w2.row(i);
        for (std::size_t j = 0; j < shape.embed; ++j) g2row[j] += t.hidden[i] * d_sh[j];
      }
      // rectifier subgradient is 0 at the kink
      d_hidden[i] = t.pre[i] > 0.0 ? dot(w2row, d_sh) : 0.0;
    }
    // z_pre = W1ᵀ s + b1
    for (std::size_t i = 0; i < shape.hidden; ++i) grad.b1[i] += d_hidden[i];
    for (std::size_t k = 0; k < shape.state_dim; ++k) {
      const double s = sample.state[k];
      if (s == 0.0) continue;
      auto g1row = grad.w1.row(k);
      for (std::size_t i = 0; i < shape.hidden; ++i) g1row[i] += s * d_hidden[i];
    }
  }

  if (graph) {
    // H = relu(P), P = ÃW  ⇒  dW = Ãᵀ (dH ⊙ [P > 0])
    for (std::size_t i = 0; i < d_embeddings.size(); ++i)
      if (!(gcn_pre.flat()[i] > 0.0)) d_embeddings.flat()[i] = 0.0;
    grad.gcn_w = matmul(prop->matrix().transposed(), d_embeddings);
  }
  return total_loss * scale;
}

/// Mean Huber loss without gradients.
inline double batch_loss(const QNetwork& net, std::span<const TrainingSample> batch,
                         const Propagation* prop, double alpha) {
  if (batch.empty()) throw ValidationError("empty training batch");
  if (net.mode == NetMode::graph && prop == nullptr)
    throw ValidationError("graph mode requires a normalized adjacency");
  Matrix embeddings;
  if (net.mode == NetMode::graph) embeddings = gcn_forward(net, *prop);
  double total = 0.0;
  for (const auto& s : batch) {
    const Vector s_h = mlp_forward(net, s.state);
    const double q = net.mode == NetMode::graph
                         ? dot(embeddings.row(s.action), s_h)
                         : dot(net.params.head.row(s.action), s_h) + net.params.head_b[s.action];
    total += huber_loss(q, s.target, alpha).loss;
  }
  return total / static_cast<double>(batch.size());
}

inline void sgd_step(Parameters& params, const GradientSet& grad, double lr) {
  std::vector<std::span<const double>> gs;
  grad.visit([&](const char*, std::span<const double> g) { gs.push_back(g); });
  std::size_t idx = 0;
  params.visit([&](const char*, std::span<double> w) {
    const auto g = gs[idx++];
    require_shape(g.size() == w.size(), "gradient shape");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  });
}

/// Gradient step on the mean Huber loss; returns the loss before the step.
inline double backward_and_step(QNetwork& net, std::span<const TrainingSample> batch,
                                const Propagation* prop, double lr, double alpha = 5.0) {
  GradientSet grad;
  const double loss = compute_gradients(net, batch, prop, alpha, grad);
  if (!std::isfinite(loss)) throw NonFiniteError("non-finite training loss");
  if (lr != 0.0) sgd_step(net.params, grad, lr);
  return loss;
}

inline nlohmann::json network_to_json(const QNetwork& net) {
  nlohmann::json tensors = nlohmann::json::object();
  net.params.visit([&](const char* name, std::span<const double> xs) {
    tensors[name] = std::vector<double>(xs.begin(), xs.end());
  });
  return {{"mode", to_string(net.mode)},
          {"state_dim", net.shape.state_dim},
          {"hidden", net.shape.hidden},
          {"embed", net.shape.embed},
          {"actions", net.shape.actions},
          {"tensors", tensors}};
}

inline QNetwork network_from_json(const nlohmann::json& j) {
  NetShape shape{j.at("state_dim").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                 j.at("embed").get<std::size_t>(), j.at("actions").get<std::size_t>()};
  QNetwork net(shape, parse_net_mode(j.at("mode").get<std::string>()));
  const auto& tensors = j.at("tensors");
  net.params.visit([&](const char* name, std::span<double> dst) {
    const auto src = tensors.at(name).get<std::vector<double>>();
    if (src.size() != dst.size())
      throw ShapeError(std::string("checkpoint tensor '") + name + "' has " +
                       std::to_string(src.size()) + " values, expected " + std::to_string(dst.size()));
    std::copy(src.begin(), src.end(), dst.begin());
  });
  bool finite = true;
  net.params.visit([&](const char*, std::span<const double> xs) { finite = finite && all_finite(xs); });
  if (!finite) throw ValidationError("checkpoint contains non-finite parameters");
  return net;
}

}  // namespace graphdqn
