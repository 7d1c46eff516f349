#pragma once

// Chat-completion clients: request hashing, an append-only response cache, a
// deterministic mock backend, and bounded-concurrency batch execution.

#include <array>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <thread>
#include <unordered_map>

#include <openssl/evp.h>

#include "biasprobe/prompt.hpp"

namespace biasprobe {

inline std::array<unsigned char, 32> sha256(std::string_view data) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw Error("sha256 failed");
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  auto d = sha256(data);
  std::string out;
  out.reserve(64);
  for (unsigned char c : d) {
    out += kHex[c >> 4];
    out += kHex[c & 15];
  }
  return out;
}

// Probability that the mock follows an injected suggestion, per injection type.
struct MockModelSpec {
  std::uint64_t seed = 0;
  double base_accuracy = 1.0;
  std::map<InjectionType, double> susceptibility;
  std::string verbosity_template =
      "Let's think step by step. Weighing both options against the question, option ({letter}) is the better "
      "supported choice.\nThe answer is: ({letter})";

  double susceptibility_for(InjectionType t) const {
    auto it = susceptibility.find(t);
    return it == susceptibility.end() ? 0.0 : it->second;
  }

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(base_accuracy)) throw Error("mock base_accuracy must be in [0, 1]");
    for (const auto& [t, p] : susceptibility)
      if (!prob(p)) throw Error("mock susceptibility for " + std::string(to_string(t)) + " must be in [0, 1]");
    if (verbosity_template.find("{letter}") == std::string::npos)
      throw Error("mock verbosity_template must contain {letter}");
  }

  nlohmann::json to_json() const {
    nlohmann::json sus = nlohmann::json::object();
    for (const auto& [t, p] : susceptibility) sus[std::string(to_string(t))] = p;
    return {{"seed", seed},
            {"base_accuracy", base_accuracy},
            {"susceptibility", sus},
            {"verbosity_template", verbosity_template}};
  }

  static MockModelSpec from_json(const nlohmann::json& j) {
    MockModelSpec m;
    m.seed = j.value("seed", std::uint64_t{0});
    m.base_accuracy = j.value("base_accuracy", 1.0);
    if (auto it = j.find("susceptibility"); it != j.end())
      for (const auto& [k, v] : it->items()) m.susceptibility[parse_injection_type(k)] = v.get<double>();
    if (auto it = j.find("verbosity_template"); it != j.end()) m.verbosity_template = it->get<std::string>();
    m.validate();
    return m;
  }
};

enum class BackendKind { openai, mock };

inline std::string_view to_string(BackendKind k) { return k == BackendKind::openai ? "openai" : "mock"; }

inline BackendKind parse_backend_kind(std::string_view s) {
  if (s == "openai") return BackendKind::openai;
  if (s == "mock") return BackendKind::mock;
  throw Error("unknown backend '" + std::string(s) + "'");
}

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_ms = 500;
  double backoff_multiplier = 2.0;
};

struct ModelConfig {
  std::string model_name = "mock";
  BackendKind backend = BackendKind::mock;
  std::string endpoint;        // full chat-completions URL
  std::string credential_env;  // environment variable holding the API key; empty = no auth header
  double temperature = 0.0;
  int max_tokens = 1000;
  int timeout_ms = 120000;
  int max_concurrency = 4;
  RetryPolicy retry;
  MockModelSpec mock;

  void validate() const {
    if (model_name.empty()) throw Error("model_name must not be empty");
    if (!(temperature >= 0)) throw Error("temperature must be >= 0");
    if (max_tokens < 1) throw Error("max_tokens must be >= 1");
    if (max_concurrency < 1) throw Error("max_concurrency must be >= 1");
    if (retry.max_attempts < 1) throw Error("retry.max_attempts must be >= 1");
    if (backend == BackendKind::openai && endpoint.empty()) throw Error("openai backend requires an endpoint");
    if (backend == BackendKind::mock) mock.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"model_name", model_name},
                        {"backend", to_string(backend)},
                        {"temperature", temperature},
                        {"max_tokens", max_tokens},
                        {"timeout_ms", timeout_ms},
                        {"max_concurrency", max_concurrency},
                        {"retry",
                         {{"max_attempts", retry.max_attempts},
                          {"backoff_ms", retry.backoff_ms},
                          {"backoff_multiplier", retry.backoff_multiplier}}}};
    if (backend == BackendKind::openai) {
      j["endpoint"] = endpoint;
      j["credential_env"] = credential_env;
    } else {
      j["mock"] = mock.to_json();
    }
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.model_name = j.at("model_name").get<std::string>();
    c.backend = parse_backend_kind(j.value("backend", std::string("mock")));
    c.endpoint = j.value("endpoint", std::string{});
    c.credential_env = j.value("credential_env", std::string{});
    c.temperature = j.value("temperature", 0.0);
    c.max_tokens = j.value("max_tokens", 1000);
    c.timeout_ms = j.value("timeout_ms", 120000);
    c.max_concurrency = j.value("max_concurrency", 4);
    if (auto it = j.find("retry"); it != j.end()) {
      c.retry.max_attempts = it->value("max_attempts", 3);
      c.retry.backoff_ms = it->value("backoff_ms", 500);
      c.retry.backoff_multiplier = it->value("backoff_multiplier", 2.0);
    }
    if (auto it = j.find("mock"); it != j.end()) c.mock = MockModelSpec::from_json(*it);
    c.validate();
    return c;
  }
};

// One request: the prompt plus the metadata a mock needs to play its role.
struct CompletionRequest {
  std::string bundle_id;
  std::string prompt;
  int repeat = 0;
  Letter gold = Letter::A;
  std::optional<Letter> suggested;
  InjectionType itype = InjectionType::unbiased;

  static CompletionRequest from_bundle(const PromptBundle& b, int repeat = 0) {
    CompletionRequest r;
    r.bundle_id = b.id() + (repeat > 0 ? "#r" + std::to_string(repeat) : "");
    r.prompt = b.full_prompt;
    r.repeat = repeat;
    r.gold = b.gold;
    r.suggested = b.suggested();
    r.itype = b.spec.itype;
    return r;
  }
};

// Digest of everything that determines a response: model, prompt, decoding
// parameters, backend identity (including the mock spec) and repeat index.
inline std::string request_hash(const ModelConfig& cfg, std::string_view prompt, int repeat = 0) {
  nlohmann::json key = {{"model", cfg.model_name},
                        {"prompt", prompt},
                        {"temperature", cfg.temperature},
                        {"max_tokens", cfg.max_tokens},
                        {"backend", to_string(cfg.backend)}};
  if (cfg.backend == BackendKind::mock) key["mock"] = cfg.mock.to_json();
  if (repeat > 0) key["repeat"] = repeat;
  return sha256_hex(key.dump());
}

enum class ServedBy { live, mock, cache };

inline std::string_view to_string(ServedBy s) {
  switch (s) {
    case ServedBy::live: return "live";
    case ServedBy::mock: return "mock";
    case ServedBy::cache: return "cache";
  }
  return "?";
}

inline ServedBy parse_served_by(std::string_view s) {
  if (s == "live") return ServedBy::live;
  if (s == "mock") return ServedBy::mock;
  if (s == "cache") return ServedBy::cache;
  throw Error("unknown backend tag '" + std::string(s) + "'");
}

enum class RecordStatus { ok, error, pending };

inline std::string_view to_string(RecordStatus s) {
  switch (s) {
    case RecordStatus::ok: return "ok";
    case RecordStatus::error: return "error";
    case RecordStatus::pending: return "pending";
  }
  return "?";
}

inline RecordStatus parse_record_status(std::string_view s) {
  if (s == "ok") return RecordStatus::ok;
  if (s == "error") return RecordStatus::error;
  if (s == "pending") return RecordStatus::pending;
  throw Error("unknown record status '" + std::string(s) + "'");
}

struct CompletionRecord {
  std::string bundle_id;
  std::string model_name;
  std::string request_hash;
  int repeat = 0;
  std::string response_text;
  std::string finish_reason;
  double latency_ms = 0;
  std::string timestamp;  // ISO 8601 UTC
  ServedBy backend = ServedBy::mock;
  RecordStatus status = RecordStatus::ok;
  std::string error_kind;  // auth | timeout | malformed_reply | http_status | transport | config
  std::string error_message;
  int attempts = 0;

  bool ok() const { return status == RecordStatus::ok; }

  friend bool operator==(const CompletionRecord&, const CompletionRecord&) = default;
};

inline nlohmann::json to_json(const CompletionRecord& r) {
  nlohmann::json j = {{"bundle_id", r.bundle_id},
                      {"model_name", r.model_name},
                      {"request_hash", r.request_hash},
                      {"repeat", r.repeat},
                      {"response_text", r.response_text},
                      {"finish_reason", r.finish_reason},
                      {"latency_ms", r.latency_ms},
                      {"timestamp", r.timestamp},
                      {"backend", to_string(r.backend)},
                      {"status", to_string(r.status)},
                      {"attempts", r.attempts}};
  if (!r.error_kind.empty()) {
    j["error_kind"] = r.error_kind;
    j["error_message"] = r.error_message;
  }
  return j;
}

inline CompletionRecord record_from_json(const nlohmann::json& j) {
  CompletionRecord r;
  r.bundle_id = j.at("bundle_id").get<std::string>();
  r.model_name = j.at("model_name").get<std::string>();
  r.request_hash = j.at("request_hash").get<std::string>();
  r.repeat = j.value("repeat", 0);
  r.response_text = j.at("response_text").get<std::string>();
  r.finish_reason = j.value("finish_reason", std::string{});
  r.latency_ms = j.value("latency_ms", 0.0);
  r.timestamp = j.value("timestamp", std::string{});
  r.backend = parse_served_by(j.at("backend").get<std::string>());
  r.status = parse_record_status(j.value("status", std::string("ok")));
  r.error_kind = j.value("error_kind", std::string{});
  r.error_message = j.value("error_message", std::string{});
  r.attempts = j.value("attempts", 0);
  return r;
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

// Append-only cache of successful completions keyed by request hash. Stored
// as one JSON record per line; readers are concurrent, appends serialized.
class ResponseCache {
 public:
  ResponseCache() = default;  // in-memory only

  explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      try {
        auto rec = record_from_json(nlohmann::json::parse(line));
        if (rec.ok()) entries_.emplace(rec.request_hash, std::move(rec));
      } catch (const std::exception&) {
        // A torn final line from an interrupted run; everything before it is intact.
        ++torn_lines_;
      }
    }
  }

  std::optional<CompletionRecord> lookup(const std::string& hash) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(hash);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  // First write wins: a record already present is never replaced.
  void append(const CompletionRecord& rec) {
    if (!rec.ok()) return;
    std::unique_lock lock(mu_);
    if (entries_.count(rec.request_hash)) return;
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::binary | std::ios::app);
      if (!out) throw Error("cannot append to cache '" + path_.string() + "'");
      out << to_json(rec).dump() << '\n';
      out.flush();
    }
    entries_.emplace(rec.request_hash, rec);
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }
  std::size_t torn_lines() const { return torn_lines_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, CompletionRecord> entries_;
  std::size_t torn_lines_ = 0;
};

// Raised by backends. Transient failures are retried by the client.
class BackendError : public Error {
 public:
  BackendError(std::string kind, std::string message, bool transient)
      : Error(message), kind_(std::move(kind)), transient_(transient) {}
  const std::string& kind() const { return kind_; }
  bool transient() const { return transient_; }

 private:
  std::string kind_;
  bool transient_;
};

struct BackendReply {
  std::string text;
  std::string finish_reason;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendReply call(const CompletionRequest& req, const ModelConfig& cfg) = 0;
  virtual ServedBy tag() const = 0;
};

// Deterministic stand-in for a model. With an injected suggestion L it answers
// L with probability `susceptibility`; otherwise it answers gold with
// probability `base_accuracy`. Draws come from a digest of the request, so
// (seed, spec, prompt) fixes the output.
class MockBackend final : public ChatBackend {
 public:
  BackendReply call(const CompletionRequest& req, const ModelConfig& cfg) override {
    const auto& spec = cfg.mock;
    auto digest = sha256(request_hash(cfg, req.prompt, req.repeat) + "/mock-draws");
    auto uniform = [&](std::size_t offset) {
      std::uint64_t x = 0;
      for (std::size_t i = 0; i < 8; ++i) x = (x << 8) | digest[offset + i];
      return static_cast<double>(x >> 11) * 0x1.0p-53;
    };
    Letter answer;
    if (req.suggested && uniform(0) < spec.susceptibility_for(req.itype))
      answer = *req.suggested;
    else
      answer = uniform(8) < spec.base_accuracy ? req.gold : other(req.gold);
    std::string text = spec.verbosity_template;
    for (auto pos = text.find("{letter}"); pos != std::string::npos; pos = text.find("{letter}", pos + 1))
      text.replace(pos, 8, to_string(answer));
    return {std::move(text), "stop"};
  }

  ServedBy tag() const override { return ServedBy::mock; }
};

struct BatchOptions {
  // Stop issuing new (non-cached) requests after this many; the rest are
  // returned as pending. Unset: no limit.
  std::optional<std::size_t> max_new_calls;
};

struct BatchResult {
  std::vector<CompletionRecord> records;  // input order
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t pending = 0;
  std::vector<std::string> failed_ids;
  std::size_t max_in_flight = 0;
};

class Client {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Client(ModelConfig cfg, std::shared_ptr<ChatBackend> backend, std::shared_ptr<ResponseCache> cache = nullptr)
      : cfg_(std::move(cfg)), backend_(std::move(backend)), cache_(std::move(cache)) {
    cfg_.validate();
    if (!backend_) throw Error("Client: backend required");
  }

  const ModelConfig& config() const { return cfg_; }

  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

  CompletionRecord complete(const CompletionRequest& req) {
    CompletionRecord rec;
    rec.bundle_id = req.bundle_id;
    rec.model_name = cfg_.model_name;
    rec.request_hash = request_hash(cfg_, req.prompt, req.repeat);
    rec.repeat = req.repeat;
    if (cache_) {
      if (auto hit = cache_->lookup(rec.request_hash)) {
        hit->bundle_id = req.bundle_id;
        hit->backend = ServedBy::cache;
        return *hit;
      }
    }
    rec.backend = backend_->tag();
    auto start = std::chrono::steady_clock::now();
    auto backoff = std::chrono::milliseconds(cfg_.retry.backoff_ms);
    for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
      rec.attempts = attempt;
      try {
        auto reply = backend_->call(req, cfg_);
        rec.response_text = std::move(reply.text);
        rec.finish_reason = std::move(reply.finish_reason);
        rec.status = RecordStatus::ok;
        rec.error_kind.clear();
        rec.error_message.clear();
        break;
      } catch (const BackendError& e) {
        rec.status = RecordStatus::error;
        rec.error_kind = e.kind();
        rec.error_message = e.what();
        if (!e.transient()) break;
        if (attempt < cfg_.retry.max_attempts) {
          sleeper_(backoff);
          backoff = std::chrono::milliseconds(
              static_cast<long long>(static_cast<double>(backoff.count()) * cfg_.retry.backoff_multiplier));
        } else if (e.kind() == "timeout") {
          rec.error_message = "timeout after " + std::to_string(attempt) + " attempt(s): " + e.what();
        }
      }
    }
    rec.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    rec.timestamp = utc_timestamp();
    if (rec.ok() && cache_) cache_->append(rec);
    return rec;
  }

  CompletionRecord complete(const PromptBundle& bundle, int repeat = 0) {
    return complete(CompletionRequest::from_bundle(bundle, repeat));
  }

  // Answers every request (or records an error) with at most
  // max_concurrency requests in flight; output order equals input order.
  BatchResult complete_batch(const std::vector<CompletionRequest>& reqs, const BatchOptions& opts = {}) {
    BatchResult out;
    out.records.resize(reqs.size());
    std::atomic<std::size_t> next{0}, new_calls{0}, hits{0}, pending{0}, in_flight{0}, peak{0};
    std::mutex err_mu;
    auto worker = [&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= reqs.size()) return;
        const auto& req = reqs[i];
        auto hash = request_hash(cfg_, req.prompt, req.repeat);
        bool cached = cache_ && cache_->lookup(hash).has_value();
        if (!cached && opts.max_new_calls && new_calls.fetch_add(1) >= *opts.max_new_calls) {
          auto& rec = out.records[i];
          rec.bundle_id = req.bundle_id;
          rec.model_name = cfg_.model_name;
          rec.request_hash = hash;
          rec.repeat = req.repeat;
          rec.status = RecordStatus::pending;
          ++pending;
          continue;
        }
        if (!cached && !opts.max_new_calls) ++new_calls;
        auto now = ++in_flight;
        for (auto p = peak.load(); now > p && !peak.compare_exchange_weak(p, now);) {
        }
        auto rec = complete(req);
        --in_flight;
        if (rec.backend == ServedBy::cache) ++hits;
        if (rec.status == RecordStatus::error) {
          std::lock_guard lock(err_mu);
          out.failed_ids.push_back(rec.bundle_id);
        }
        out.records[i] = std::move(rec);
      }
    };
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_concurrency), reqs.size());
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    out.cache_hits = hits;
    out.pending = pending;
    out.max_in_flight = peak;
    out.backend_calls = 0;
    for (const auto& r : out.records)
      if (r.status != RecordStatus::pending && r.backend != ServedBy::cache) ++out.backend_calls;
    std::sort(out.failed_ids.begin(), out.failed_ids.end());
    return out;
  }

  BatchResult complete_batch(const std::vector<PromptBundle>& bundles, const BatchOptions& opts = {}) {
    std::vector<CompletionRequest> reqs;
    reqs.reserve(bundles.size());
    for (const auto& b : bundles) reqs.push_back(CompletionRequest::from_bundle(b));
    return complete_batch(reqs, opts);
  }

 private:
  ModelConfig cfg_;
  std::shared_ptr<ChatBackend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  Sleeper sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

}  // namespace biasprobe
