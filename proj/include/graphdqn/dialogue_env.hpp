#pragma once

// Rule-based patient simulator and dialogue-state encoding. The same state
// machine drives simulated episodes and live sessions; only the source of
// symptom answers differs.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphdqn/corpus.hpp"
#include "graphdqn/matrix.hpp"
#include "graphdqn/medgraph.hpp"

namespace graphdqn {

enum class UserAct : std::uint8_t { request = 0, confirm = 1, deny = 2, not_sure = 3 };
inline constexpr std::size_t kUserActCount = 4;

enum class SymptomStatus : std::uint8_t { unknown, yes, no, not_sure };

enum class DialogueResult : std::uint8_t {
  ongoing,
  success,
  fail_wrong_disease,
  fail_timeout,
  diagnosed,  // live session: a disease was informed, correctness unknown
};

inline const char* to_string(UserAct a) {
  switch (a) {
    case UserAct::request: return "request";
    case UserAct::confirm: return "confirm";
    case UserAct::deny: return "deny";
    case UserAct::not_sure: return "not_sure";
  }
  return "request";
}

inline const char* to_string(DialogueResult r) {
  switch (r) {
    case DialogueResult::ongoing: return "ongoing";
    case DialogueResult::success: return "success";
    case DialogueResult::fail_wrong_disease: return "fail_wrong_disease";
    case DialogueResult::fail_timeout: return "timeout";
    case DialogueResult::diagnosed: return "diagnosed";
  }
  return "ongoing";
}

inline const char* to_string(SymptomStatus s) {
  switch (s) {
    case SymptomStatus::unknown: return "unknown";
    case SymptomStatus::yes: return "true";
    case SymptomStatus::no: return "false";
    case SymptomStatus::not_sure: return "not_sure";
  }
  return "unknown";
}

inline SymptomStatus status_from_bool(bool v) { return v ? SymptomStatus::yes : SymptomStatus::no; }

inline UserAct user_act_for(SymptomStatus s) {
  switch (s) {
    case SymptomStatus::yes: return UserAct::confirm;
    case SymptomStatus::no: return UserAct::deny;
    default: return UserAct::not_sure;
  }
}

struct DialogueState {
  std::optional<std::size_t> prev_system_action;
  UserAct prev_user_action = UserAct::request;
  std::vector<SymptomStatus> symptom_status;
  std::size_t turn = 0;
  DialogueResult result = DialogueResult::ongoing;

  bool terminal() const noexcept { return result != DialogueResult::ongoing; }
  bool operator==(const DialogueState&) const = default;
};

struct StepOutcome {
  double reward = 0.0;
  bool terminal = false;
  DialogueResult result = DialogueResult::ongoing;
  UserAct user_action = UserAct::not_sure;
};

struct EnvConfig {
  std::size_t max_turns = 22;
  double reward_success = 44.0;
  double reward_fail = -22.0;
  /// Extra reward for re-asking an already answered symptom. Off by default.
  bool repeat_penalty = false;
  double repeat_penalty_value = -1.0;

  bool operator==(const EnvConfig&) const = default;
};

class DialogueEnv {
 public:
  DialogueEnv(Vocabulary vocab, EnvConfig config = {}) : vocab_(std::move(vocab)), config_(config) {
    if (config_.max_turns == 0) throw ValidationError("max_turns must be positive");
  }

  const Vocabulary& vocab() const noexcept { return vocab_; }
  const EnvConfig& config() const noexcept { return config_; }

  /// n + 4 + 3N + (T_max + 1).
  std::size_t state_dim() const noexcept {
    return vocab_.action_count() + kUserActCount + 3 * vocab_.num_symptoms() + config_.max_turns + 1;
  }

  /// Fresh episode seeded with a self-report.
  DialogueState start_from_report(const std::map<std::string, bool>& self_report) const {
    DialogueState s;
    s.symptom_status.assign(vocab_.num_symptoms(), SymptomStatus::unknown);
    for (const auto& [name, value] : self_report) {
      auto idx = vocab_.symptom_index(name);
      if (!idx) throw ValidationError("unknown symptom '" + name + "'");
      s.symptom_status[*idx] = status_from_bool(value);
    }
    return s;
  }

  DialogueState start_episode(const UserGoal& goal) const {
    vocab_.check_goal(goal);
    return start_from_report(goal.explicit_symptoms);
  }

  /// Simulator step: inquiries are answered from the goal, "not sure" when the
  /// goal does not mention the symptom.
  std::pair<DialogueState, StepOutcome> step(const DialogueState& state, const UserGoal& goal,
                                             std::size_t action) const {
    check_action(action);
    SymptomStatus answer = SymptomStatus::not_sure;
    if (vocab_.is_symptom(action)) {
      if (auto v = goal.lookup(vocab_.symptoms()[vocab_.symptom_of(action)])) answer = status_from_bool(*v);
    }
    auto disease = vocab_.disease_index(goal.disease);
    if (!disease) throw ValidationError("goal '" + goal.id + "': unknown disease '" + goal.disease + "'");
    return apply(state, action, answer, disease);
  }

  /// Core transition. `answer` is the user's reply when `action` is an
  /// inquiry; `true_disease` is absent for live sessions, where a diagnosis
  /// ends the dialogue with result `diagnosed`.
  std::pair<DialogueState, StepOutcome> apply(const DialogueState& state, std::size_t action,
                                              SymptomStatus answer,
                                              std::optional<std::size_t> true_disease) const {
    check_action(action);
    if (state.terminal()) throw ValidationError("step on a terminal dialogue state");
    if (state.symptom_status.size() != vocab_.num_symptoms())
      throw ValidationError("dialogue state does not match vocabulary");
    DialogueState next = state;
    StepOutcome out;
    next.turn = state.turn + 1;
    next.prev_system_action = action;

    if (vocab_.is_disease(action)) {
      if (true_disease) {
        const bool correct = vocab_.disease_of(action) == *true_disease;
        out.reward = correct ? config_.reward_success : config_.reward_fail;
        out.result = correct ? DialogueResult::success : DialogueResult::fail_wrong_disease;
      } else {
        out.result = DialogueResult::diagnosed;
      }
      out.user_action = UserAct::request;
    } else if (vocab_.is_symptom(action)) {
      const std::size_t s = vocab_.symptom_of(action);
      if (answer == SymptomStatus::unknown) answer = SymptomStatus::not_sure;
      if (config_.repeat_penalty && state.symptom_status[s] != SymptomStatus::unknown)
        out.reward += config_.repeat_penalty_value;
      next.symptom_status[s] = answer;
      out.user_action = user_act_for(answer);
    } else {
      out.user_action = UserAct::not_sure;
    }

    if (out.result == DialogueResult::ongoing && next.turn >= config_.max_turns) {
      out.result = DialogueResult::fail_timeout;
      out.reward += config_.reward_fail;
    }
    out.terminal = out.result != DialogueResult::ongoing;
    next.prev_user_action = out.user_action;
    next.result = out.result;
    return {std::move(next), out};
  }

  Vector encode_state(const DialogueState& state) const {
    Vector v(state_dim(), 0.0);
    encode_state_into(state, v);
    return v;
  }

  void encode_state_into(const DialogueState& state, std::span<double> v) const {
    require_shape(v.size() == state_dim(), "state vector length");
    require_shape(state.symptom_status.size() == vocab_.num_symptoms(), "symptom status length");
    std::fill(v.begin(), v.end(), 0.0);
    std::size_t off = 0;
    if (state.prev_system_action) v[off + *state.prev_system_action] = 1.0;
    off += vocab_.action_count();
    v[off + static_cast<std::size_t>(state.prev_user_action)] = 1.0;
    off += kUserActCount;
    for (std::size_t i = 0; i < state.symptom_status.size(); ++i) {
      switch (state.symptom_status[i]) {
        case SymptomStatus::yes: v[off + 3 * i] = 1.0; break;
        case SymptomStatus::no: v[off + 3 * i + 1] = 1.0; break;
        case SymptomStatus::not_sure: v[off + 3 * i + 2] = 1.0; break;
        case SymptomStatus::unknown: break;
      }
    }
    off += 3 * vocab_.num_symptoms();
    v[off + std::min(state.turn, config_.max_turns)] = 1.0;
  }

  /// Short stable fingerprint of the encoded state, for transcripts.
  std::string state_digest(const DialogueState& state) const {
    Matrix m(1, state_dim());
    encode_state_into(state, m.row(0));
    return hex64(matrix_hash(m));
  }

 private:
  void check_action(std::size_t action) const {
    if (action >= vocab_.action_count())
      throw ValidationError("action index " + std::to_string(action) + " out of range (n=" +
                            std::to_string(vocab_.action_count()) + ")");
  }

  Vocabulary vocab_;
  EnvConfig config_;
};

/// One JSON-lines transcript record per system action.
inline nlohmann::json transcript_record(const DialogueEnv& env, const DialogueState& before,
                                        std::size_t action, const StepOutcome& out) {
  return {{"turn", before.turn + 1},
          {"state_digest", env.state_digest(before)},
          {"action", action},
          {"action_kind", env.vocab().action_kind(action)},
          {"action_name", env.vocab().action_name(action)},
          {"answer", to_string(out.user_action)},
          {"reward", out.reward},
          {"result", to_string(out.result)}};
}

}  // namespace graphdqn
