#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "graphdqn/service.hpp"
#include "support.hpp"

using namespace graphdqn;
using nlohmann::json;

namespace {

const json kReport = {{"self_report", {{"s1", true}}}};

/// Serves `service` on an ephemeral localhost port for the lifetime of the object.
class LiveServer {
 public:
  explicit LiveServer(SessionService& service) {
    mount(server_, service);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LiveServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(10, 0);
    return c;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
  auto res = c.Post(path, body.dump(), "application/json");
  EXPECT_TRUE(res);
  if (!res) return {};
  EXPECT_EQ(res->status, expect) << path << " " << res->body;
  return json::parse(res->body);
}

}  // namespace

TEST(Templates, OneToOne) {
  const auto v = testkit::toy_vocab();
  const TemplateBank t(v);
  ASSERT_EQ(t.size(), v.action_count());
  for (std::size_t a = 0; a < t.size(); ++a) EXPECT_EQ(t.parse(t.text(a)), a);
  EXPECT_EQ(t.text(v.symptom_action(0)), "Do you have s1?");
  EXPECT_EQ(t.text(v.disease_action(1)), "You may have d2.");
  EXPECT_FALSE(t.parse("nonsense"));
}

TEST(Service, ScriptedSessionDiagnoses) {
  SessionService svc(testkit::ask_three_then_diagnose());
  auto r = svc.create_session(kReport);
  ASSERT_EQ(r.status, 200);
  const std::string id = r.body["session_id"];
  EXPECT_EQ(r.body["terminal"], false);
  EXPECT_EQ(r.body["system_action"]["name"], "s1");
  EXPECT_EQ(r.body["system_action"]["kind"], "inquiry");
  EXPECT_EQ(r.body["system_action"]["template_text"], "Do you have s1?");
  EXPECT_FALSE(r.body["system_action"].contains("top_q"));
  r = svc.answer(id, {{"answer", true}});
  EXPECT_EQ(r.body["system_action"]["name"], "s2");
  r = svc.answer(id, {{"answer", false}});
  EXPECT_EQ(r.body["system_action"]["name"], "s3");
  r = svc.answer(id, {{"answer", "not_sure"}}, true);
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["terminal"], true);
  EXPECT_EQ(r.body["result"], "diagnosed");
  EXPECT_EQ(r.body["final_diagnosis"]["name"], "d1");
  EXPECT_EQ(r.body["final_diagnosis"]["kind"], "diagnosis");
  EXPECT_EQ(r.body["final_diagnosis"]["top_q"].size(), 5u);

  const auto s = svc.get_session(id);
  EXPECT_EQ(s.body["status"], "closed");
  EXPECT_EQ(s.body["transcript"].size(), 4u);
  EXPECT_EQ(s.body["known_symptoms"]["s2"], "false");
  EXPECT_EQ(s.body["known_symptoms"]["s3"], "not_sure");
  EXPECT_EQ(svc.answer(id, {{"answer", true}}).status, 409);
}

TEST(Service, OtherBranchDiagnosesD2) {
  SessionService svc(testkit::ask_three_then_diagnose());
  auto r = svc.create_session({{"self_report", {{"s2", true}}}});
  const std::string id = r.body["session_id"];
  svc.answer(id, {{"answer", false}});
  svc.answer(id, {{"answer", true}});
  r = svc.answer(id, {{"answer", true}});
  EXPECT_EQ(r.body["final_diagnosis"]["name"], "d2");
}

TEST(Service, TurnLimitTimesOut) {
  SessionService svc(testkit::always_ask_s1());
  auto r = svc.create_session(kReport);
  const std::string id = r.body["session_id"];
  for (int i = 0; i < 21; ++i) {
    r = svc.answer(id, {{"answer", true}});
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["terminal"], false);
    EXPECT_EQ(r.body["turn"], i + 1);
  }
  r = svc.answer(id, {{"answer", true}});
  EXPECT_EQ(r.body["terminal"], true);
  EXPECT_EQ(r.body["result"], "timeout");
  EXPECT_EQ(r.body["turn"], 22);
  EXPECT_TRUE(r.body["final_diagnosis"].is_null());
  EXPECT_EQ(svc.answer(id, {{"answer", true}}).status, 409);
}

TEST(Service, ErrorPaths) {
  SessionService svc(testkit::ask_three_then_diagnose());
  EXPECT_EQ(svc.create_session(json::object()).status, 400);
  EXPECT_EQ(svc.create_session({{"self_report", json::object()}}).status, 400);
  EXPECT_EQ(svc.create_session({{"self_report", {{"s1", "yes"}}}}).status, 400);
  const auto unknown = svc.create_session({{"self_report", {{"headache", true}}}});
  EXPECT_EQ(unknown.status, 422);
  EXPECT_EQ(unknown.body["code"], "unknown_symptom");
  EXPECT_EQ(svc.answer("abc", {{"answer", true}}).status, 404);
  EXPECT_EQ(svc.get_session("abc").status, 404);
  const std::string id = svc.create_session(kReport).body["session_id"];
  EXPECT_EQ(svc.answer(id, {{"answer", "maybe"}}).status, 400);
  EXPECT_EQ(svc.answer(id, json::object()).status, 400);
}

TEST(Service, IdleSessionsExpire) {
  auto now = std::chrono::steady_clock::time_point{};
  ServiceOptions opt;
  opt.idle_timeout = std::chrono::seconds(60);
  opt.clock = [&now] { return now; };
  SessionService svc(testkit::ask_three_then_diagnose(), opt);
  const std::string id = svc.create_session(kReport).body["session_id"];
  now += std::chrono::seconds(59);
  EXPECT_EQ(svc.answer(id, {{"answer", true}}).status, 200);
  now += std::chrono::seconds(61);
  EXPECT_EQ(svc.session_count(), 0u);
  EXPECT_EQ(svc.answer(id, {{"answer", true}}).status, 404);
}

TEST(Service, TranscriptsAppendJsonLines) {
  testkit::TempDir dir("svc");
  ServiceOptions opt;
  opt.transcript_path = dir.file("t.jsonl");
  SessionService svc(testkit::ask_three_then_diagnose(), opt);
  for (int k = 0; k < 2; ++k) {
    const std::string id = svc.create_session(kReport).body["session_id"];
    for (int i = 0; i < 3; ++i) svc.answer(id, {{"answer", true}});
  }
  std::ifstream in(opt.transcript_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["result"], "diagnosed");
    EXPECT_EQ(j["transcript"].size(), 4u);
    EXPECT_EQ(j["model_hash"], svc.model_hash());
    ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST(Service, ConcurrentAnswersStayConsistent) {
  SessionService svc(testkit::always_ask_s1());
  const std::string id = svc.create_session(kReport).body["session_id"];
  std::atomic<int> ok{0}, other{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&] {
      for (;;) {
        const auto r = svc.answer(id, {{"answer", true}});
        if (r.status == 200) ++ok;
        else if (r.status == 409 && r.body["code"] == "closed") break;
        else if (r.status != 409) { ++other; break; }
      }
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(other.load(), 0);
  EXPECT_EQ(ok.load(), 22);
  EXPECT_EQ(svc.get_session(id).body["turn"], 22);
}

TEST(Http, EndToEndSession) {
  SessionService svc(testkit::ask_three_then_diagnose());
  LiveServer live(svc);
  auto c = live.client();

  auto health = c.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->get_header_value("X-Model-Hash"), svc.model_hash());

  auto model = c.Get("/model");
  ASSERT_TRUE(model);
  const auto m = json::parse(model->body);
  EXPECT_EQ(m["actions"].size(), 7u);
  EXPECT_EQ(m["max_turns"], 22);

  auto created = post(c, "/sessions?debug=1", kReport, 200);
  const std::string id = created["session_id"];
  EXPECT_EQ(created["system_action"]["top_q"].size(), 5u);
  post(c, "/sessions/" + id + "/answer", {{"answer", true}}, 200);
  post(c, "/sessions/" + id + "/answer", {{"answer", true}}, 200);
  const auto last = post(c, "/sessions/" + id + "/answer", {{"answer", false}}, 200);
  EXPECT_EQ(last["terminal"], true);
  EXPECT_EQ(last["final_diagnosis"]["name"], "d1");
  post(c, "/sessions/" + id + "/answer", {{"answer", true}}, 409);

  auto got = c.Get("/sessions/" + id);
  ASSERT_TRUE(got);
  EXPECT_EQ(json::parse(got->body)["status"], "closed");

  post(c, "/sessions/0123abcd/answer", {{"answer", true}}, 404);
  post(c, "/sessions", {{"self_report", {{"nope", true}}}}, 422);
  auto bad = c.Post("/sessions", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto missing = c.Get("/nowhere");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["code"], "not_found");
  auto pre = c.Options("/sessions");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "*");
}
