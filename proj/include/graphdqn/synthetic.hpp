#pragma once

// Generated goal corpora with known structure, for tests and demos.

#include <cstddef>
#include <string>
#include <vector>

#include "graphdqn/corpus.hpp"
#include "graphdqn/rng.hpp"

namespace graphdqn::synthetic {

struct Split {
  std::vector<UserGoal> train;
  std::vector<UserGoal> test;
};

inline std::string pad(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
}

struct SeparableSpec {
  std::size_t diseases = 4;
  std::size_t unique_per_disease = 2;
  std::size_t shared = 4;
  std::size_t train = 200;
  std::size_t test = 50;
  /// Probability that a shared symptom is mentioned in a goal, and that a
  /// mentioned shared symptom is true.
  double shared_mention = 0.5;
  double shared_true = 0.7;
};

/// Every disease has its own always-true symptoms plus noisy shared ones that
/// carry no information about the disease. The self-report holds only shared
/// symptoms, so the agent must ask to find the disease.
inline Split separable(const SeparableSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  auto unique_name = [&](std::size_t d, std::size_t u) {
    return "u" + pad(d) + "_" + std::to_string(u);
  };
  auto make = [&](std::size_t id, const std::string& prefix) {
    UserGoal g;
    const std::size_t d = rng.index(spec.diseases);
    g.id = prefix + std::to_string(id);
    g.disease = "disease_" + pad(d);
    for (std::size_t u = 0; u < spec.unique_per_disease; ++u) g.implicit_symptoms[unique_name(d, u)] = true;
    for (std::size_t s = 0; s < spec.shared; ++s) {
      if (!rng.bernoulli(spec.shared_mention)) continue;
      const bool value = rng.bernoulli(spec.shared_true);
      const std::string name = "shared_" + pad(s);
      if (rng.bernoulli(0.5)) g.explicit_symptoms[name] = value;
      else g.implicit_symptoms[name] = value;
    }
    return g;
  };
  Split out;
  for (std::size_t i = 0; i < spec.train; ++i) out.train.push_back(make(i, "train_"));
  for (std::size_t i = 0; i < spec.test; ++i) out.test.push_back(make(i, "test_"));
  return out;
}

struct ConfusableSpec {
  /// Symptoms common to both diseases (the overlap).
  std::size_t common = 8;
  /// Discriminators per disease; 8 common of 10 per disease = 80% overlap.
  std::size_t discriminators = 2;
  std::size_t train = 200;
  std::size_t test = 100;
  double common_true = 0.8;
  /// Probability that a given discriminator is present (true) for a goal of its
  /// disease; otherwise the goal does not mention it.
  double discriminator_true = 0.35;
};

/// Two diseases whose symptom sets overlap except for rare discriminators.
inline Split confusable(const ConfusableSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  auto make = [&](std::size_t id, const std::string& prefix) {
    UserGoal g;
    const std::size_t d = rng.index(2);
    g.id = prefix + std::to_string(id);
    g.disease = d == 0 ? "disease_a" : "disease_b";
    for (std::size_t c = 0; c < spec.common; ++c) {
      const bool value = rng.bernoulli(spec.common_true);
      const std::string name = "common_" + pad(c);
      if (c < 2) g.explicit_symptoms[name] = value;
      else g.implicit_symptoms[name] = value;
    }
    for (std::size_t k = 0; k < spec.discriminators; ++k) {
      const std::string name = std::string(d == 0 ? "only_a_" : "only_b_") + pad(k);
      if (rng.bernoulli(spec.discriminator_true)) g.implicit_symptoms[name] = true;
    }
    return g;
  };
  Split out;
  for (std::size_t i = 0; i < spec.train; ++i) out.train.push_back(make(i, "train_"));
  for (std::size_t i = 0; i < spec.test; ++i) out.test.push_back(make(i, "test_"));
  return out;
}

}  // namespace graphdqn::synthetic
