#pragma once

// Live diagnosis sessions over HTTP. A human replaces the simulator: each
// answer feeds the same DialogueEnv state machine used in training, and the
// greedy policy picks the next action.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "graphdqn/agent.hpp"
#include "graphdqn/checkpoint.hpp"
#include "graphdqn/dialogue_env.hpp"
#include "graphdqn/numkit.hpp"

namespace graphdqn {

/// Fixed-template NLG. Every action has exactly one sentence and every
/// sentence maps back to its action.
class TemplateBank {
 public:
  explicit TemplateBank(const Vocabulary& vocab) {
    for (std::size_t a = 0; a < vocab.action_count(); ++a) {
      std::string text;
      if (vocab.is_greeting(a)) {
        if (a == 0) text = "Hello, I will ask you a few questions about your symptoms.";
        else if (a == 1) text = "Thank you. Is there anything else you would like to tell me?";
        else text = "Greeting " + std::to_string(a) + ".";
      } else if (vocab.is_symptom(a)) {
        text = "Do you have " + vocab.action_name(a) + "?";
      } else {
        text = "You may have " + vocab.action_name(a) + ".";
      }
      if (!reverse_.emplace(text, a).second) throw ValidationError("duplicate template text '" + text + "'");
      texts_.push_back(std::move(text));
    }
  }

  const std::string& text(std::size_t action) const { return texts_.at(action); }

  std::optional<std::size_t> parse(const std::string& text) const {
    auto it = reverse_.find(text);
    if (it == reverse_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const noexcept { return texts_.size(); }

 private:
  std::vector<std::string> texts_;
  std::unordered_map<std::string, std::size_t> reverse_;
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

inline ServiceResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"code", code}, {"message", message}}};
}

struct ServiceOptions {
  std::chrono::seconds idle_timeout{30 * 60};
  /// Append completed transcripts here as JSON lines when non-empty.
  std::string transcript_path;
  std::size_t top_q = 5;
  std::function<std::chrono::steady_clock::time_point()> clock = [] { return std::chrono::steady_clock::now(); };
};

class SessionService {
 public:
  SessionService(Checkpoint checkpoint, ServiceOptions options = {})
      : checkpoint_(std::move(checkpoint)),
        options_(std::move(options)),
        env_(checkpoint_.vocab(), checkpoint_.config.env()),
        prop_(checkpoint_.graph.normalized),
        q_(checkpoint_.net, prop_),
        templates_(checkpoint_.vocab()),
        model_hash_(hex64(fnv1a(checkpoint_dump(checkpoint_)))),
        id_rng_(std::random_device{}()) {}

  const std::string& model_hash() const noexcept { return model_hash_; }
  const TemplateBank& templates() const noexcept { return templates_; }
  const DialogueEnv& env() const noexcept { return env_; }
  const QNetwork& network() const noexcept { return checkpoint_.net; }

  ServiceResponse healthz() const { return {200, {{"status", "ok"}, {"model_hash", model_hash_}}}; }

  ServiceResponse model_info() const {
    const auto& v = checkpoint_.vocab();
    nlohmann::json actions = nlohmann::json::array();
    for (std::size_t a = 0; a < v.action_count(); ++a)
      actions.push_back({{"action", a}, {"kind", action_kind(a)}, {"name", v.action_name(a)},
                         {"template_text", templates_.text(a)}});
    return {200,
            {{"vocab", v.to_json()},
             {"mode", to_string(checkpoint_.net.mode)},
             {"weighted", checkpoint_.graph.weighted},
             {"graph_hash", checkpoint_.graph.hash()},
             {"model_hash", model_hash_},
             {"epochs_trained", checkpoint_.epochs_trained},
             {"max_turns", env_.config().max_turns},
             {"actions", actions}}};
  }

  ServiceResponse create_session(const nlohmann::json& body, bool debug = false) {
    if (!body.is_object() || !body.contains("self_report") || !body.at("self_report").is_object() ||
        body.at("self_report").empty())
      return error_response(400, "bad_request", "body must contain a non-empty 'self_report' object");
    std::map<std::string, bool> report;
    for (const auto& [name, value] : body.at("self_report").items()) {
      if (!env_.vocab().symptom_index(name))
        return error_response(422, "unknown_symptom", "unknown symptom '" + name + "'");
      if (!value.is_boolean())
        return error_response(400, "bad_request", "self_report value for '" + name + "' must be true or false");
      report[name] = value.get<bool>();
    }

    auto session = std::make_shared<Session>();
    session->state = env_.start_from_report(report);
    session->self_report = report;
    session->last_active = options_.clock();
    {
      std::lock_guard lock(store_mutex_);
      purge_expired_locked();
      do session->id = new_id_locked();
      while (sessions_.count(session->id));
      sessions_[session->id] = session;
    }
    std::lock_guard lock(session->mutex);
    return {200, advance(*session, debug)};
  }

  ServiceResponse answer(const std::string& id, const nlohmann::json& body, bool debug = false) {
    std::optional<SymptomStatus> ans;
    if (body.is_object() && body.contains("answer")) {
      const auto& a = body.at("answer");
      if (a.is_boolean()) ans = status_from_bool(a.get<bool>());
      else if (a.is_string() && a.get<std::string>() == "not_sure") ans = SymptomStatus::not_sure;
    }
    if (!ans) return error_response(400, "bad_request", "'answer' must be true, false or \"not_sure\"");

    auto session = find(id);
    if (!session) return error_response(404, "not_found", "unknown session '" + id + "'");
    std::unique_lock lock(session->mutex, std::try_to_lock);
    if (!lock.owns_lock()) return error_response(409, "busy", "an answer for this session is already in flight");
    if (session->closed) return error_response(409, "closed", "session is closed");
    session->last_active = options_.clock();

    const std::size_t asked = *session->pending;
    const DialogueState before = session->state;
    auto [next, out] = env_.apply(before, asked, *ans, std::nullopt);
    session->transcript.push_back(transcript_record(env_, before, asked, out));
    session->state = std::move(next);
    session->pending.reset();
    if (session->state.terminal()) return {200, close(*session)};
    return {200, advance(*session, debug)};
  }

  ServiceResponse get_session(const std::string& id) {
    auto session = find(id);
    if (!session) return error_response(404, "not_found", "unknown session '" + id + "'");
    std::lock_guard lock(session->mutex);
    nlohmann::json status = nlohmann::json::object();
    const auto& v = env_.vocab();
    for (std::size_t i = 0; i < v.num_symptoms(); ++i)
      if (session->state.symptom_status[i] != SymptomStatus::unknown)
        status[v.symptoms()[i]] = to_string(session->state.symptom_status[i]);
    nlohmann::json body{{"session_id", session->id},
                        {"status", session->closed ? "closed" : "active"},
                        {"turn", session->state.turn},
                        {"result", to_string(session->state.result)},
                        {"self_report", session->self_report},
                        {"known_symptoms", status},
                        {"transcript", session->transcript}};
    body["pending_action"] = session->pending ? action_json(*session->pending, false, {}) : nlohmann::json();
    return {200, body};
  }

  std::size_t session_count() {
    std::lock_guard lock(store_mutex_);
    purge_expired_locked();
    return sessions_.size();
  }

 private:
  struct Session {
    std::string id;
    DialogueState state;
    std::map<std::string, bool> self_report;
    std::optional<std::size_t> pending;
    nlohmann::json transcript = nlohmann::json::array();
    bool closed = false;
    std::chrono::steady_clock::time_point last_active;
    std::mutex mutex;
  };

  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::string action_kind(std::size_t a) const {
    const auto& v = env_.vocab();
    return v.is_greeting(a) ? "greeting" : v.is_disease(a) ? "diagnosis" : "inquiry";
  }

  nlohmann::json action_json(std::size_t a, bool debug, const Vector& q) const {
    nlohmann::json j{{"action", a},
                     {"kind", action_kind(a)},
                     {"name", env_.vocab().action_name(a)},
                     {"template_text", templates_.text(a)}};
    if (debug) j["top_q"] = top_q(q);
    return j;
  }

  nlohmann::json top_q(const Vector& q) const {
    std::vector<std::size_t> order(q.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min(options_.top_q, order.size()); ++i)
      out.push_back({{"action", env_.vocab().action_name(order[i])}, {"score", q[order[i]]}});
    return out;
  }

  /// Pick the next greedy action. A diagnosis is applied at once and closes
  /// the session; anything else waits for the human's answer.
  nlohmann::json advance(Session& s, bool debug) {
    const Vector q = q_(env_.encode_state(s.state));
    const std::size_t a = argmax(q);
    if (env_.vocab().is_disease(a)) {
      const DialogueState before = s.state;
      auto [next, out] = env_.apply(before, a, SymptomStatus::unknown, std::nullopt);
      s.transcript.push_back(transcript_record(env_, before, a, out));
      s.state = std::move(next);
      nlohmann::json body = close(s);
      if (debug) body["final_diagnosis"]["top_q"] = top_q(q);
      return body;
    }
    s.pending = a;
    return {{"session_id", s.id}, {"turn", s.state.turn}, {"terminal", false},
            {"system_action", action_json(a, debug, q)}};
  }

  nlohmann::json close(Session& s) {
    s.closed = true;
    nlohmann::json body{{"session_id", s.id},
                        {"turn", s.state.turn},
                        {"terminal", true},
                        {"result", to_string(s.state.result)}};
    const auto last = s.state.prev_system_action;
    if (s.state.result == DialogueResult::diagnosed && last) {
      body["final_diagnosis"] = action_json(*last, false, {});
    } else {
      body["final_diagnosis"] = nullptr;
    }
    if (!options_.transcript_path.empty()) {
      std::lock_guard lock(transcript_mutex_);
      std::ofstream out(options_.transcript_path, std::ios::app);
      out << nlohmann::json{{"session_id", s.id},
                            {"model_hash", model_hash_},
                            {"self_report", s.self_report},
                            {"result", to_string(s.state.result)},
                            {"transcript", s.transcript}}
                 .dump()
          << '\n';
    }
    return body;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(store_mutex_);
    purge_expired_locked();
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  void purge_expired_locked() {
    const auto now = options_.clock();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::unique_lock lock(it->second->mutex, std::try_to_lock);
      if (lock.owns_lock() && now - it->second->last_active > options_.idle_timeout)
        it = sessions_.erase(it);
      else
        ++it;
    }
  }

  std::string new_id_locked() {
    return hex64(id_rng_()) + hex64(id_rng_());
  }

  Checkpoint checkpoint_;
  ServiceOptions options_;
  DialogueEnv env_;
  Propagation prop_;
  QFunction q_;
  TemplateBank templates_;
  std::string model_hash_;
  std::mutex store_mutex_;
  std::mutex transcript_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_rng_;
};

/// Routes the service onto an httplib server.
inline void mount(httplib::Server& server, SessionService& service) {
  auto send = [&service](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_header("X-Model-Hash", service.model_hash());
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json; charset=utf-8");
  };
  auto parse = [](const httplib::Request& req) -> std::optional<nlohmann::json> {
    if (req.body.empty()) return nlohmann::json::object();
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error&) {
      return std::nullopt;
    }
  };
  auto debug = [](const httplib::Request& req) {
    return req.has_param("debug") && req.get_param_value("debug") == "1";
  };

  server.Get("/healthz", [=, &service](const httplib::Request&, httplib::Response& res) {
    send(res, service.healthz());
  });
  server.Get("/model", [=, &service](const httplib::Request&, httplib::Response& res) {
    send(res, service.model_info());
  });
  server.Post("/sessions", [=, &service](const httplib::Request& req, httplib::Response& res) {
    auto body = parse(req);
    if (!body) return send(res, error_response(400, "bad_request", "body is not valid JSON"));
    send(res, service.create_session(*body, debug(req)));
  });
  server.Post(R"(/sessions/([0-9a-f]+)/answer)", [=, &service](const httplib::Request& req, httplib::Response& res) {
    auto body = parse(req);
    if (!body) return send(res, error_response(400, "bad_request", "body is not valid JSON"));
    send(res, service.answer(req.matches[1], *body, debug(req)));
  });
  server.Get(R"(/sessions/([0-9a-f]+))", [=, &service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get_session(req.matches[1]));
  });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.set_error_handler([=](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    send(res, error_response(res.status, "not_found", "no such endpoint"));
  });
}

}  // namespace graphdqn
