#pragma once

// Diagnosis goal files, the action vocabulary, and the co-occurrence tallies
// that feed graph edge weighting.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphdqn/error.hpp"

namespace graphdqn {

using json = nlohmann::json;

/// One diagnosis case. Explicit symptoms come from the self-report, implicit
/// ones are only revealed when the agent asks.
struct UserGoal {
  std::string id;
  std::string disease;
  std::map<std::string, bool> explicit_symptoms;
  std::map<std::string, bool> implicit_symptoms;

  /// Value the patient would report for `symptom`, if the goal mentions it.
  std::optional<bool> lookup(const std::string& symptom) const {
    if (auto it = explicit_symptoms.find(symptom); it != explicit_symptoms.end()) return it->second;
    if (auto it = implicit_symptoms.find(symptom); it != implicit_symptoms.end()) return it->second;
    return std::nullopt;
  }

  /// Symptoms with value true in either map, each once.
  std::set<std::string> true_symptoms() const {
    std::set<std::string> out;
    for (const auto& [s, v] : explicit_symptoms)
      if (v) out.insert(s);
    for (const auto& [s, v] : implicit_symptoms)
      if (v) out.insert(s);
    return out;
  }

  bool operator==(const UserGoal&) const = default;
};

inline void validate_goal(const UserGoal& g) {
  if (g.disease.empty()) throw ValidationError("goal '" + g.id + "': empty disease");
  for (const auto& [s, v] : g.explicit_symptoms) {
    if (s.empty()) throw ValidationError("goal '" + g.id + "': empty symptom name");
    if (auto it = g.implicit_symptoms.find(s); it != g.implicit_symptoms.end() && it->second != v)
      throw ValidationError("goal '" + g.id + "': symptom '" + s +
                            "' has conflicting explicit/implicit values");
  }
  for (const auto& [s, v] : g.implicit_symptoms)
    if (s.empty()) throw ValidationError("goal '" + g.id + "': empty symptom name");
}

/// Index maps for the action space, ordered [greetings..., diseases..., symptoms...].
class Vocabulary {
 public:
  static constexpr std::size_t kDefaultGreetings = 2;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> diseases, std::vector<std::string> symptoms,
             std::size_t num_greeting = kDefaultGreetings)
      : diseases_(std::move(diseases)), symptoms_(std::move(symptoms)), num_greeting_(num_greeting) {
    std::sort(diseases_.begin(), diseases_.end());
    std::sort(symptoms_.begin(), symptoms_.end());
    if (std::adjacent_find(diseases_.begin(), diseases_.end()) != diseases_.end())
      throw ValidationError("duplicate disease in vocabulary");
    if (std::adjacent_find(symptoms_.begin(), symptoms_.end()) != symptoms_.end())
      throw ValidationError("duplicate symptom in vocabulary");
    for (std::size_t i = 0; i < diseases_.size(); ++i) disease_index_[diseases_[i]] = i;
    for (std::size_t i = 0; i < symptoms_.size(); ++i) symptom_index_[symptoms_[i]] = i;
  }

  /// Lexicographic vocabulary covering exactly the diseases and symptoms in `goals`.
  static Vocabulary from_goals(const std::vector<UserGoal>& goals,
                               std::size_t num_greeting = kDefaultGreetings) {
    std::set<std::string> ds, ss;
    for (const auto& g : goals) {
      ds.insert(g.disease);
      for (const auto& [s, v] : g.explicit_symptoms) ss.insert(s);
      for (const auto& [s, v] : g.implicit_symptoms) ss.insert(s);
    }
    return Vocabulary({ds.begin(), ds.end()}, {ss.begin(), ss.end()}, num_greeting);
  }

  const std::vector<std::string>& diseases() const noexcept { return diseases_; }
  const std::vector<std::string>& symptoms() const noexcept { return symptoms_; }
  std::size_t num_greeting() const noexcept { return num_greeting_; }
  std::size_t num_diseases() const noexcept { return diseases_.size(); }
  std::size_t num_symptoms() const noexcept { return symptoms_.size(); }
  std::size_t action_count() const noexcept {
    return num_greeting_ + diseases_.size() + symptoms_.size();
  }

  std::optional<std::size_t> disease_index(const std::string& name) const {
    auto it = disease_index_.find(name);
    if (it == disease_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> symptom_index(const std::string& name) const {
    auto it = symptom_index_.find(name);
    if (it == symptom_index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t disease_action(std::size_t d) const noexcept { return num_greeting_ + d; }
  std::size_t symptom_action(std::size_t s) const noexcept {
    return num_greeting_ + diseases_.size() + s;
  }

  bool is_greeting(std::size_t a) const noexcept { return a < num_greeting_; }
  bool is_disease(std::size_t a) const noexcept {
    return a >= num_greeting_ && a < num_greeting_ + diseases_.size();
  }
  bool is_symptom(std::size_t a) const noexcept {
    return a >= num_greeting_ + diseases_.size() && a < action_count();
  }
  std::size_t disease_of(std::size_t a) const noexcept { return a - num_greeting_; }
  std::size_t symptom_of(std::size_t a) const noexcept {
    return a - num_greeting_ - diseases_.size();
  }

  static std::string greeting_name(std::size_t g) {
    if (g == 0) return "greet";
    if (g == 1) return "close";
    return "greeting_" + std::to_string(g);
  }

  /// Node/action label: greeting name, disease name or symptom name.
  std::string action_name(std::size_t a) const {
    if (is_greeting(a)) return greeting_name(a);
    if (is_disease(a)) return diseases_[disease_of(a)];
    if (is_symptom(a)) return symptoms_[symptom_of(a)];
    throw ValidationError("action index " + std::to_string(a) + " out of range");
  }

  std::string action_kind(std::size_t a) const {
    if (is_greeting(a)) return "greeting";
    if (is_disease(a)) return "disease";
    if (is_symptom(a)) return "symptom";
    throw ValidationError("action index " + std::to_string(a) + " out of range");
  }

  /// Throws if the goal names a disease or symptom outside this vocabulary.
  void check_goal(const UserGoal& g) const {
    if (!disease_index(g.disease))
      throw ValidationError("goal '" + g.id + "': unknown disease '" + g.disease + "'");
    for (const auto* m : {&g.explicit_symptoms, &g.implicit_symptoms})
      for (const auto& [s, v] : *m)
        if (!symptom_index(s))
          throw ValidationError("goal '" + g.id + "': unknown symptom '" + s + "'");
  }

  bool operator==(const Vocabulary& o) const {
    return diseases_ == o.diseases_ && symptoms_ == o.symptoms_ && num_greeting_ == o.num_greeting_;
  }

  json to_json() const {
    return {{"diseases", diseases_}, {"symptoms", symptoms_}, {"num_greeting", num_greeting_}};
  }
  static Vocabulary from_json(const json& j) {
    return Vocabulary(j.at("diseases").get<std::vector<std::string>>(),
                      j.at("symptoms").get<std::vector<std::string>>(),
                      j.at("num_greeting").get<std::size_t>());
  }

 private:
  std::vector<std::string> diseases_;
  std::vector<std::string> symptoms_;
  std::size_t num_greeting_ = kDefaultGreetings;
  std::unordered_map<std::string, std::size_t> disease_index_;
  std::unordered_map<std::string, std::size_t> symptom_index_;
};

struct Corpus {
  std::vector<UserGoal> goals;
  Vocabulary vocab;
};

namespace detail {

inline std::map<std::string, bool> parse_symptom_map(const json& j, const std::string& field,
                                                     const std::string& goal_id) {
  std::map<std::string, bool> out;
  if (!j.contains(field)) return out;
  const auto& m = j.at(field);
  if (!m.is_object()) throw ParseError("goal '" + goal_id + "': '" + field + "' must be an object");
  for (const auto& [name, value] : m.items()) {
    if (!value.is_boolean())
      throw ParseError("goal '" + goal_id + "': symptom '" + name + "' must be true or false");
    out[name] = value.get<bool>();
  }
  return out;
}

}  // namespace detail

inline std::vector<UserGoal> parse_goals(const json& doc) {
  if (!doc.is_object() || !doc.contains("goals") || !doc.at("goals").is_array())
    throw ParseError("goal file must be an object with a 'goals' array");
  std::vector<UserGoal> goals;
  std::size_t position = 0;
  for (const auto& rec : doc.at("goals")) {
    std::string id = "#" + std::to_string(position++);
    if (!rec.is_object()) throw ParseError("goal '" + id + "': record must be an object");
    if (rec.contains("id")) {
      if (!rec.at("id").is_string()) throw ParseError("goal '" + id + "': id must be a string");
      id = rec.at("id").get<std::string>();
    }
    if (!rec.contains("disease") || !rec.at("disease").is_string())
      throw ParseError("goal '" + id + "': missing string field 'disease'");
    UserGoal g{id, rec.at("disease").get<std::string>(),
               detail::parse_symptom_map(rec, "explicit_symptoms", id),
               detail::parse_symptom_map(rec, "implicit_symptoms", id)};
    validate_goal(g);
    goals.push_back(std::move(g));
  }
  if (goals.empty()) throw ValidationError("empty corpus");
  return goals;
}

inline json goals_to_json(const std::vector<UserGoal>& goals) {
  json arr = json::array();
  for (const auto& g : goals)
    arr.push_back({{"id", g.id},
                   {"disease", g.disease},
                   {"explicit_symptoms", g.explicit_symptoms},
                   {"implicit_symptoms", g.implicit_symptoms}});
  return {{"goals", arr}};
}

inline Corpus parse_corpus(const std::string& text, std::size_t num_greeting = Vocabulary::kDefaultGreetings) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("goal file is not valid JSON: ") + e.what());
  }
  auto goals = parse_goals(doc);
  auto vocab = Vocabulary::from_goals(goals, num_greeting);
  return {std::move(goals), std::move(vocab)};
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << contents;
}

inline Corpus load_corpus(const std::string& path,
                          std::size_t num_greeting = Vocabulary::kDefaultGreetings) {
  return parse_corpus(read_file(path), num_greeting);
}

inline void save_corpus(const std::string& path, const std::vector<UserGoal>& goals) {
  write_file(path, goals_to_json(goals).dump(2) + "\n");
}

/// Dialogue-level tallies. Symptom i "occurs" in a dialogue iff some map marks
/// it true; each dialogue contributes at most once per symptom.
struct CorpusCounts {
  std::size_t num_diseases = 0;
  std::size_t num_symptoms = 0;
  std::size_t total_dialogues = 0;
  std::vector<std::size_t> symptom_dialogues;   // #C(i)
  std::vector<std::size_t> cooccurrence;        // #C(i,j), N×N, diagonal = #C(i)
  std::vector<std::size_t> disease_symptom;     // n_ij, N×M (symptom-major)
  std::vector<std::size_t> disease_totals;      // Σ_k n_kj
  std::vector<std::size_t> disease_incidence;   // |{j : s_i ∈ d_j}|

  std::size_t pair(std::size_t i, std::size_t j) const { return cooccurrence[i * num_symptoms + j]; }
  std::size_t occurrences(std::size_t symptom, std::size_t disease) const {
    return disease_symptom[symptom * num_diseases + disease];
  }

  bool operator==(const CorpusCounts&) const = default;
};

inline CorpusCounts tally_counts(const std::vector<UserGoal>& goals, const Vocabulary& vocab) {
  if (goals.empty()) throw ValidationError("empty corpus");
  const std::size_t m = vocab.num_diseases(), n = vocab.num_symptoms();
  CorpusCounts c;
  c.num_diseases = m;
  c.num_symptoms = n;
  c.total_dialogues = goals.size();
  c.symptom_dialogues.assign(n, 0);
  c.cooccurrence.assign(n * n, 0);
  c.disease_symptom.assign(n * m, 0);
  c.disease_totals.assign(m, 0);
  c.disease_incidence.assign(n, 0);

  std::vector<std::size_t> present;
  for (const auto& g : goals) {
    vocab.check_goal(g);
    const std::size_t d = *vocab.disease_index(g.disease);
    present.clear();
    for (const auto& s : g.true_symptoms()) present.push_back(*vocab.symptom_index(s));
    for (std::size_t a : present) {
      ++c.symptom_dialogues[a];
      ++c.disease_symptom[a * m + d];
      ++c.disease_totals[d];
      for (std::size_t b : present) ++c.cooccurrence[a * n + b];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < m; ++d)
      if (c.disease_symptom[i * m + d] > 0) ++c.disease_incidence[i];
  return c;
}

}  // namespace graphdqn
