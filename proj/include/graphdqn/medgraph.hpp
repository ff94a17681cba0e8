#pragma once

// Weighted heterogeneous symptom/disease graph. Symptom–symptom edges carry
// positive PMI, symptom–disease edges carry sf-idf, every node has a unit
// self-loop and greeting nodes have nothing else.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphdqn/corpus.hpp"
#include "graphdqn/matrix.hpp"

namespace graphdqn {

enum class EdgeKind : std::uint8_t { none, self, pmi, sfidf };

inline const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::none: return "none";
    case EdgeKind::self: return "self";
    case EdgeKind::pmi: return "pmi";
    case EdgeKind::sfidf: return "sfidf";
  }
  return "none";
}

/// Positive pointwise mutual information of two symptoms over dialogues, or
/// nullopt when they never co-occur or the PMI is not strictly positive.
inline std::optional<double> pmi(const CorpusCounts& c, std::size_t i, std::size_t j) {
  if (c.total_dialogues == 0) throw ValidationError("pmi: corpus has zero dialogues");
  if (i == j) throw ValidationError("pmi: symptoms must differ");
  if (i >= c.num_symptoms || j >= c.num_symptoms) throw ValidationError("pmi: symptom out of range");
  const double total = static_cast<double>(c.total_dialogues);
  const std::size_t joint = c.pair(i, j);
  if (joint == 0) return std::nullopt;
  const double p_ij = joint / total;
  const double p_i = c.symptom_dialogues[i] / total;
  const double p_j = c.symptom_dialogues[j] / total;
  const double value = std::log(p_ij / (p_i * p_j));
  if (!(value > 0.0)) return std::nullopt;
  return value;
}

/// Share of disease j's symptom occurrences that are symptom i; 0 for a disease
/// with no true symptoms.
inline double symptom_frequency(const CorpusCounts& c, std::size_t symptom, std::size_t disease) {
  const std::size_t total = c.disease_totals.at(disease);
  if (total == 0) return 0.0;
  return static_cast<double>(c.occurrences(symptom, disease)) / static_cast<double>(total);
}

/// log(|D| / #diseases containing the symptom); 0 when no disease contains it.
inline double inverse_disease_frequency(const CorpusCounts& c, std::size_t symptom) {
  const std::size_t incidence = c.disease_incidence.at(symptom);
  if (incidence == 0) return 0.0;
  return std::log(static_cast<double>(c.num_diseases) / static_cast<double>(incidence));
}

inline double sf_idf(const CorpusCounts& c, std::size_t symptom, std::size_t disease) {
  if (symptom >= c.num_symptoms || disease >= c.num_diseases)
    throw ValidationError("sf_idf: index out of range");
  return symptom_frequency(c, symptom, disease) * inverse_disease_frequency(c, symptom);
}

/// D^{-1/2} A D^{-1/2} with D_ii the row sums of A.
inline Matrix normalize_adjacency(const Matrix& a) {
  require_shape(a.rows() == a.cols(), "adjacency must be square");
  const std::size_t n = a.rows();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (double v : a.row(i)) {
      if (v < 0.0) throw ValidationError("adjacency has a negative entry");
      deg += v;
    }
    if (!(deg > 0.0)) throw ValidationError("adjacency row " + std::to_string(i) + " has zero degree");
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = inv_sqrt[i] * a(i, j) * inv_sqrt[j];
  return out;
}

/// FNV-1a over the raw bytes of every entry.
inline std::uint64_t matrix_hash(const Matrix& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(m.rows());
  mix(m.cols());
  for (double v : m.flat()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    mix(bits);
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

struct HeteroGraph {
  Vocabulary vocab;
  bool weighted = true;
  Matrix adjacency;
  Matrix normalized;
  std::vector<EdgeKind> edge_kind;  // n×n row-major

  std::size_t size() const noexcept { return adjacency.rows(); }
  EdgeKind kind(std::size_t i, std::size_t j) const { return edge_kind[i * size() + j]; }
  std::string hash() const { return hex64(matrix_hash(adjacency)); }

  /// Graph over a stored adjacency (e.g. from a checkpoint). Edge kinds are
  /// recovered from node types.
  static HeteroGraph from_adjacency(Vocabulary vocab, Matrix a, bool weighted) {
    const std::size_t n = vocab.action_count();
    require_shape(a.rows() == n && a.cols() == n, "adjacency does not match vocabulary");
    HeteroGraph g{std::move(vocab), weighted, std::move(a), {}, {}};
    g.normalized = normalize_adjacency(g.adjacency);
    g.edge_kind.assign(n * n, EdgeKind::none);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) g.edge_kind[i * n + j] = EdgeKind::self;
        else if (g.adjacency(i, j) != 0.0)
          g.edge_kind[i * n + j] = (g.vocab.is_symptom(i) && g.vocab.is_symptom(j)) ? EdgeKind::pmi
                                                                                   : EdgeKind::sfidf;
      }
    return g;
  }
};

/// Assembles A over the full action space. With `weighted` false every nonzero
/// off-diagonal weight becomes 1, the unweighted-graph ablation.
inline HeteroGraph build_adjacency(const CorpusCounts& c, const Vocabulary& vocab, bool weighted = true) {
  if (c.num_diseases != vocab.num_diseases() || c.num_symptoms != vocab.num_symptoms())
    throw ValidationError("counts do not match vocabulary");
  const std::size_t n = vocab.action_count();
  HeteroGraph g{vocab, weighted, Matrix(n, n), {}, std::vector<EdgeKind>(n * n, EdgeKind::none)};
  auto set = [&](std::size_t i, std::size_t j, double w, EdgeKind k) {
    if (w == 0.0) return;
    const double v = weighted ? w : 1.0;
    g.adjacency(i, j) = v;
    g.adjacency(j, i) = v;
    g.edge_kind[i * n + j] = k;
    g.edge_kind[j * n + i] = k;
  };
  for (std::size_t i = 0; i < n; ++i) {
    g.adjacency(i, i) = 1.0;
    g.edge_kind[i * n + i] = EdgeKind::self;
  }
  for (std::size_t si = 0; si < c.num_symptoms; ++si) {
    for (std::size_t sj = si + 1; sj < c.num_symptoms; ++sj)
      if (auto w = pmi(c, si, sj)) set(vocab.symptom_action(si), vocab.symptom_action(sj), *w, EdgeKind::pmi);
    for (std::size_t d = 0; d < c.num_diseases; ++d)
      set(vocab.symptom_action(si), vocab.disease_action(d), sf_idf(c, si, d), EdgeKind::sfidf);
  }
  g.normalized = normalize_adjacency(g.adjacency);
  return g;
}

inline HeteroGraph build_graph(const std::vector<UserGoal>& goals, const Vocabulary& vocab,
                               bool weighted = true) {
  return build_adjacency(tally_counts(goals, vocab), vocab, weighted);
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.flat().begin(), m.flat().end())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<std::size_t>(), cols = j.at("cols").get<std::size_t>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw ParseError("matrix data length does not match shape");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.flat().begin());
  return m;
}

inline nlohmann::json graph_to_json(const HeteroGraph& g) {
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : g.edge_kind) kinds.push_back(to_string(k));
  return {{"vocab", g.vocab.to_json()},
          {"weighted", g.weighted},
          {"hash", g.hash()},
          {"adjacency", matrix_to_json(g.adjacency)},
          {"normalized", matrix_to_json(g.normalized)},
          {"edge_kind", kinds}};
}

/// `src\tdst\tweight\tkind`, one line per nonzero entry including self-loops.
inline std::string graph_edge_tsv(const HeteroGraph& g) {
  std::ostringstream out;
  out << "src\tdst\tweight\tkind\n" << std::setprecision(17);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j)
      if (g.kind(i, j) != EdgeKind::none)
        out << g.vocab.action_name(i) << '\t' << g.vocab.action_name(j) << '\t' << g.adjacency(i, j)
            << '\t' << to_string(g.kind(i, j)) << '\n';
  return out.str();
}

}  // namespace graphdqn
