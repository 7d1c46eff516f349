#include <gtest/gtest.h>

#include <cmath>

#include "biasprobe/dataset.hpp"
#include "biasprobe/http_backend.hpp"
#include "biasprobe/scoring.hpp"
#include "support/temp_dir.hpp"

using namespace biasprobe;

namespace {

ModelConfig mock_config(double base_accuracy, double sab_susceptibility, std::uint64_t seed = 42) {
  ModelConfig cfg;
  cfg.model_name = "mock-model";
  cfg.backend = BackendKind::mock;
  cfg.mock.seed = seed;
  cfg.mock.base_accuracy = base_accuracy;
  cfg.mock.susceptibility[InjectionType::suggested_answer_b] = sab_susceptibility;
  return cfg;
}

std::vector<PromptBundle> bundles(std::size_t n, InjectionType t, Letter gold = Letter::A) {
  auto samples = make_synthetic_corpus(n, Task::sports_understanding, gold, 7);
  return make_variant_grid(samples, {t}, {Position::tail}).bundles;
}

// Counts concurrent calls and records the peak.
class SlowBackend final : public ChatBackend {
 public:
  BackendReply call(const CompletionRequest& req, const ModelConfig&) override {
    auto now = ++in_flight;
    for (auto p = peak.load(); now > p && !peak.compare_exchange_weak(p, now);) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(15));
    --in_flight;
    ++calls;
    return {"echo " + req.bundle_id + "\nThe answer is: (A)", "stop"};
  }
  ServedBy tag() const override { return ServedBy::live; }

  std::atomic<int> in_flight{0}, peak{0}, calls{0};
};

// Fails with the given error a fixed number of times, then succeeds.
class FlakyBackend final : public ChatBackend {
 public:
  FlakyBackend(int failures, std::string kind, bool transient)
      : failures_(failures), kind_(std::move(kind)), transient_(transient) {}
  BackendReply call(const CompletionRequest&, const ModelConfig&) override {
    ++calls;
    if (calls <= failures_) throw BackendError(kind_, kind_ + " failure", transient_);
    return {"The answer is: (B)", "stop"};
  }
  ServedBy tag() const override { return ServedBy::live; }
  int calls = 0;

 private:
  int failures_;
  std::string kind_;
  bool transient_;
};

}  // namespace

TEST(RequestHash, PureFunctionOfInputs) {
  auto cfg = mock_config(1.0, 0.5);
  EXPECT_EQ(request_hash(cfg, "p"), request_hash(cfg, "p"));
  EXPECT_NE(request_hash(cfg, "p"), request_hash(cfg, "q"));
  EXPECT_NE(request_hash(cfg, "p"), request_hash(cfg, "p", 1));
  auto hot = cfg;
  hot.temperature = 0.7;
  EXPECT_NE(request_hash(cfg, "p"), request_hash(hot, "p"));
  auto other_seed = cfg;
  other_seed.mock.seed = 43;
  EXPECT_NE(request_hash(cfg, "p"), request_hash(other_seed, "p"));
  EXPECT_EQ(request_hash(cfg, "p").size(), 64u);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ModelConfig, ValidationAndJsonRoundTrip) {
  auto cfg = mock_config(0.8, 0.3);
  auto back = ModelConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  cfg.temperature = -1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = mock_config(0.8, 0.3);
  cfg.max_tokens = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = mock_config(1.5, 0.3);
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(ModelConfig{}.temperature, 0.0);
  EXPECT_EQ(ModelConfig{}.max_tokens, 1000);
}

TEST(MockBackend, FullSusceptibilityFollowsSuggestion) {
  Client client(mock_config(1.0, 1.0), std::make_shared<MockBackend>());
  for (const auto& b : bundles(20, InjectionType::suggested_answer_b)) {
    auto rec = client.complete(b);
    ASSERT_TRUE(rec.ok());
    EXPECT_TRUE(rec.response_text.ends_with("The answer is: (B)")) << rec.response_text;
    EXPECT_EQ(rec.backend, ServedBy::mock);
  }
}

TEST(MockBackend, ZeroSusceptibilityAnswersGold) {
  Client client(mock_config(1.0, 0.0), std::make_shared<MockBackend>());
  for (const auto& b : bundles(20, InjectionType::suggested_answer_b))
    EXPECT_TRUE(client.complete(b).response_text.ends_with("The answer is: (A)"));
}

TEST(MockBackend, DeterministicForSeedSpecPrompt) {
  auto bs = bundles(30, InjectionType::suggested_answer_b);
  Client c1(mock_config(0.6, 0.5), std::make_shared<MockBackend>());
  Client c2(mock_config(0.6, 0.5), std::make_shared<MockBackend>());
  for (const auto& b : bs) EXPECT_EQ(c1.complete(b).response_text, c2.complete(b).response_text);
}

TEST(MockBackend, BaseAccuracyWithinThreeStandardErrors) {
  Client client(mock_config(0.8, 0.0), std::make_shared<MockBackend>());
  int correct = 0;
  for (const auto& b : bundles(1000, InjectionType::unbiased)) {
    auto p = extract_answer(client.complete(b).response_text);
    correct += p.choice == Letter::A;
  }
  const double se = std::sqrt(0.8 * 0.2 / 1000);
  EXPECT_LE(std::fabs(correct / 1000.0 - 0.8), 3 * se);
  EXPECT_EQ(correct, 788);  // golden at seed 42
}

TEST(ResponseCache, HitsCarryIdenticalText) {
  TempDir dir;
  auto cache = std::make_shared<ResponseCache>(dir / "cache.jsonl");
  auto backend = std::make_shared<SlowBackend>();
  Client client(mock_config(1.0, 0.0), backend, cache);
  auto b = bundles(1, InjectionType::unbiased).front();
  auto first = client.complete(b);
  auto second = client.complete(b);
  EXPECT_EQ(backend->calls, 1);
  EXPECT_EQ(second.backend, ServedBy::cache);
  EXPECT_EQ(second.response_text, first.response_text);

  ResponseCache reloaded(dir / "cache.jsonl");
  ASSERT_EQ(reloaded.size(), 1u);
  EXPECT_EQ(*reloaded.lookup(first.request_hash), first);
}

TEST(ResponseCache, FirstWriteWinsAndTornLinesIgnored) {
  TempDir dir;
  CompletionRecord r;
  r.bundle_id = "b";
  r.model_name = "m";
  r.request_hash = "h";
  r.response_text = "one";
  {
    ResponseCache c(dir / "c.jsonl");
    c.append(r);
    r.response_text = "two";
    c.append(r);
    EXPECT_EQ(c.lookup("h")->response_text, "one");
  }
  std::ofstream(dir / "c.jsonl", std::ios::app) << "{\"bundle_id\": \"tor";
  ResponseCache again(dir / "c.jsonl");
  EXPECT_EQ(again.size(), 1u);
  EXPECT_EQ(again.torn_lines(), 1u);
}

TEST(ResponseCache, ErrorRecordsAreNotCached) {
  ResponseCache c;
  CompletionRecord r;
  r.request_hash = "h";
  r.status = RecordStatus::error;
  c.append(r);
  EXPECT_EQ(c.size(), 0u);
}

TEST(CompleteBatch, InputOrderAndConcurrencyLimit) {
  auto cfg = mock_config(1.0, 0.0);
  cfg.max_concurrency = 3;
  auto backend = std::make_shared<SlowBackend>();
  Client client(cfg, backend);
  auto bs = bundles(10, InjectionType::unbiased);
  auto res = client.complete_batch(bs);
  ASSERT_EQ(res.records.size(), 10u);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    EXPECT_EQ(res.records[i].bundle_id, bs[i].id());
    EXPECT_EQ(res.records[i].response_text, "echo " + bs[i].id() + "\nThe answer is: (A)");
  }
  EXPECT_LE(backend->peak.load(), 3);
  EXPECT_LE(res.max_in_flight, 3u);
  EXPECT_EQ(res.backend_calls, 10u);
}

TEST(CompleteBatch, WarmCacheMakesNoCallsAndIsByteIdentical) {
  TempDir dir;
  auto cfg = mock_config(0.7, 0.5);
  auto bs = bundles(50, InjectionType::suggested_answer_b);
  auto backend = std::make_shared<MockBackend>();
  {
    Client cold(cfg, backend, std::make_shared<ResponseCache>(dir / "cache.jsonl"));
    EXPECT_EQ(cold.complete_batch(bs).backend_calls, 50u);
  }
  auto counting = std::make_shared<SlowBackend>();
  std::vector<std::string> dumps;
  for (int run = 0; run < 2; ++run) {
    Client warm(cfg, counting, std::make_shared<ResponseCache>(dir / "cache.jsonl"));
    auto res = warm.complete_batch(bs);
    EXPECT_EQ(res.backend_calls, 0u);
    EXPECT_EQ(res.cache_hits, 50u);
    std::string text;
    for (const auto& r : res.records) text += to_json(r).dump() + "\n";
    dumps.push_back(text);
  }
  EXPECT_EQ(counting->calls, 0);
  EXPECT_EQ(dumps[0], dumps[1]);
}

TEST(CompleteBatch, BudgetLeavesPendingRecords) {
  auto cfg = mock_config(1.0, 0.0);
  cfg.max_concurrency = 1;
  Client client(cfg, std::make_shared<MockBackend>(), std::make_shared<ResponseCache>());
  auto res = client.complete_batch(bundles(10, InjectionType::unbiased), BatchOptions{4});
  EXPECT_EQ(res.pending, 6u);
  EXPECT_EQ(res.backend_calls, 4u);
  EXPECT_EQ(std::count_if(res.records.begin(), res.records.end(),
                          [](const CompletionRecord& r) { return r.status == RecordStatus::pending; }),
            6);
}

TEST(Retry, TransientErrorsRetriedWithBackoff) {
  auto cfg = mock_config(1.0, 0.0);
  cfg.retry = {4, 100, 2.0};
  auto backend = std::make_shared<FlakyBackend>(2, "http_status", true);
  Client client(cfg, backend);
  std::vector<long long> sleeps;
  client.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  EXPECT_TRUE(rec.ok());
  EXPECT_EQ(rec.attempts, 3);
  EXPECT_EQ(sleeps, (std::vector<long long>{100, 200}));
}

TEST(Retry, TimeoutAfterRetriesIsLabelled) {
  auto cfg = mock_config(1.0, 0.0);
  cfg.retry = {3, 1, 1.0};
  Client client(cfg, std::make_shared<FlakyBackend>(100, "timeout", true));
  client.set_sleeper([](std::chrono::milliseconds) {});
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  EXPECT_EQ(rec.status, RecordStatus::error);
  EXPECT_EQ(rec.error_kind, "timeout");
  EXPECT_EQ(rec.attempts, 3);
  EXPECT_NE(rec.error_message.find("after 3 attempt(s)"), std::string::npos);
}

TEST(Retry, NonTransientErrorsAreNotRetried) {
  auto backend = std::make_shared<FlakyBackend>(100, "auth", false);
  Client client(mock_config(1.0, 0.0), backend);
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  EXPECT_EQ(rec.error_kind, "auth");
  EXPECT_EQ(backend->calls, 1);
}

TEST(Retry, BatchReportsFailedIds) {
  auto cfg = mock_config(1.0, 0.0);
  cfg.max_concurrency = 2;
  Client client(cfg, std::make_shared<FlakyBackend>(1000, "malformed_reply", false));
  auto bs = bundles(3, InjectionType::unbiased);
  auto res = client.complete_batch(bs);
  ASSERT_EQ(res.failed_ids.size(), 3u);
  EXPECT_EQ(res.records[1].status, RecordStatus::error);
}

TEST(WireFormat, SingleUserMessageNoSystem) {
  ModelConfig cfg;
  cfg.model_name = "gpt-4";
  auto body = chat_request_body(cfg, "hello");
  EXPECT_EQ(body["model"], "gpt-4");
  ASSERT_EQ(body["messages"].size(), 1u);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "hello");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["max_tokens"], 1000);
}

TEST(WireFormat, ReplyParsing) {
  auto r = parse_chat_reply(R"json({"choices":[{"message":{"role":"assistant","content":"The answer is: (A)"},"finish_reason":"stop"}]})json");
  EXPECT_EQ(r.text, "The answer is: (A)");
  EXPECT_EQ(r.finish_reason, "stop");
  try {
    parse_chat_reply(R"({"choices":[]})");
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), "malformed_reply");
    EXPECT_FALSE(e.transient());
  }
  EXPECT_THROW(parse_chat_reply("<html>"), BackendError);
}

TEST(WireFormat, SplitEndpoint) {
  auto u = split_endpoint("http://127.0.0.1:8080/v1/chat/completions");
  EXPECT_EQ(u.scheme_host_port, "http://127.0.0.1:8080");
  EXPECT_EQ(u.path, "/v1/chat/completions");
  EXPECT_THROW(split_endpoint("ftp://x/y"), Error);
}

namespace {

// Local chat-completions server whose behaviour is scripted per test.
class LocalServer {
 public:
  explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ModelConfig live_config(const std::string& endpoint) {
  ModelConfig cfg;
  cfg.model_name = "local-model";
  cfg.backend = BackendKind::openai;
  cfg.endpoint = endpoint;
  cfg.timeout_ms = 2000;
  cfg.retry = {3, 1, 1.0};
  return cfg;
}

const char* kOkReply = R"json({"choices":[{"message":{"content":"The answer is: (B)"},"finish_reason":"stop"}]})json";

}  // namespace

TEST(HttpBackend, SendsWireFormatAndCredential) {
  nlohmann::json seen;
  std::string auth;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(kOkReply, "application/json");
  });
  ::setenv("BIASPROBE_TEST_KEY", "sk-test", 1);
  auto cfg = live_config(server.endpoint());
  cfg.credential_env = "BIASPROBE_TEST_KEY";
  Client client(cfg, make_backend(cfg));
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  ASSERT_TRUE(rec.ok()) << rec.error_message;
  EXPECT_EQ(rec.backend, ServedBy::live);
  EXPECT_EQ(rec.response_text, "The answer is: (B)");
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(seen["messages"].size(), 1u);
  EXPECT_EQ(seen["temperature"], 0.0);
}

TEST(HttpBackend, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++hits < 3) {
      res.status = 503;
      return;
    }
    res.set_content(kOkReply, "application/json");
  });
  auto cfg = live_config(server.endpoint());
  Client client(cfg, make_backend(cfg));
  client.set_sleeper([](std::chrono::milliseconds) {});
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  EXPECT_TRUE(rec.ok());
  EXPECT_EQ(rec.attempts, 3);
}

TEST(HttpBackend, AuthFailureIsDistinct) {
  LocalServer server([](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  auto cfg = live_config(server.endpoint());
  Client client(cfg, make_backend(cfg));
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  EXPECT_EQ(rec.error_kind, "auth");
  EXPECT_EQ(rec.attempts, 1);

  auto missing = live_config(server.endpoint());
  missing.credential_env = "BIASPROBE_TEST_UNSET_VARIABLE";
  Client c2(missing, make_backend(missing));
  EXPECT_EQ(c2.complete(bundles(1, InjectionType::unbiased).front()).error_kind, "auth");
}

TEST(HttpBackend, MalformedReplyIsDistinct) {
  LocalServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"unexpected\": true}", "application/json");
  });
  auto cfg = live_config(server.endpoint());
  Client client(cfg, make_backend(cfg));
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  EXPECT_EQ(rec.error_kind, "malformed_reply");
}

TEST(HttpBackend, SlowServerTimesOut) {
  LocalServer server([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(kOkReply, "application/json");
  });
  auto cfg = live_config(server.endpoint());
  cfg.timeout_ms = 150;
  cfg.retry = {2, 1, 1.0};
  Client client(cfg, make_backend(cfg));
  client.set_sleeper([](std::chrono::milliseconds) {});
  auto rec = client.complete(bundles(1, InjectionType::unbiased).front());
  EXPECT_EQ(rec.status, RecordStatus::error);
  EXPECT_EQ(rec.error_kind, "timeout");
  EXPECT_EQ(rec.attempts, 2);
}
