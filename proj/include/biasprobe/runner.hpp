#pragma once

// Experiment orchestration: corpora -> prompt grid -> completions (cached) ->
// indicators -> statistics -> tables, all as plain files in one run directory.
//
// Run directory layout:
//   config.json        effective configuration snapshot
//   run.json           manifest: config digest, status, counts
//   bundles.jsonl      every composed prompt, grid order
//   skips.jsonl        grid cells that could not be composed
//   cache.jsonl        append-only response cache (unless cache_path is set)
//   completions.jsonl  run log: one CompletionRecord per request, grid order
//   indicators.jsonl   per-completion correctness
//   stats.jsonl        one DeltaStats per table cell
//   table.txt          monospace report table
//   table.csv          delimited report table
//   session.log        per-invocation call counts (not part of the replay contract)

#include <numeric>

#include "biasprobe/attention.hpp"
#include "biasprobe/http_backend.hpp"
#include "biasprobe/metrics.hpp"

namespace biasprobe {

struct CorpusRef {
  Task task;
  std::filesystem::path path;
};

struct ExperimentConfig {
  std::vector<CorpusRef> corpora;
  std::vector<InjectionType> itypes;  // unbiased is always added
  std::vector<Position> positions = {Position::tail};
  int repeat_count = kDefaultRepeatCount;
  int repeats = 1;
  std::vector<ModelConfig> models;
  UnparseablePolicy scoring_policy = UnparseablePolicy::incorrect;
  TestMethod test_method = TestMethod::paired;
  bool only_misleading = false;
  bool baseline_only = false;
  bool allow_live = false;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_samples_per_task;
  PromptStyle style;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> cache_path;

  // Unbiased first, then the configured types in table order.
  std::vector<InjectionType> grid_itypes() const {
    std::vector<InjectionType> out = {InjectionType::unbiased};
    for (auto t : kAllInjectionTypes)
      if (t != InjectionType::unbiased && std::find(itypes.begin(), itypes.end(), t) != itypes.end())
        out.push_back(t);
    return out;
  }

  void validate() const {
    if (corpora.empty()) throw Error("config: at least one corpus is required");
    if (models.empty()) throw Error("config: at least one model is required");
    bool any_biased = std::any_of(itypes.begin(), itypes.end(), [](auto t) { return t != InjectionType::unbiased; });
    if (!any_biased && !baseline_only)
      throw Error("config: no injection types selected; set baseline_only for a baseline-only run");
    if (baseline_only && any_biased) throw Error("config: baseline_only conflicts with the selected injection types");
    if (positions.empty()) throw Error("config: at least one position is required");
    if (repeat_count < 1) throw Error("config: repeat_count must be >= 1");
    if (repeats < 1) throw Error("config: repeats must be >= 1");
    style.validate();
    std::set<std::string> names;
    for (const auto& m : models) {
      m.validate();
      if (!names.insert(m.model_name).second) throw Error("config: duplicate model '" + m.model_name + "'");
      if (m.backend == BackendKind::openai && !allow_live)
        throw Error("config: model '" + m.model_name +
                    "' uses a live endpoint; set allow_live (or pass --live) to enable paid runs");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json corp = nlohmann::json::array();
    for (const auto& c : corpora) corp.push_back({{"task", to_string(c.task)}, {"path", c.path.string()}});
    nlohmann::json it = nlohmann::json::array();
    for (auto t : itypes) it.push_back(to_string(t));
    nlohmann::json pos = nlohmann::json::array();
    for (auto p : positions) pos.push_back(to_string(p));
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : models) ms.push_back(m.to_json());
    nlohmann::json j = {{"corpora", corp},
                        {"itypes", it},
                        {"positions", pos},
                        {"repeat_count", repeat_count},
                        {"repeats", repeats},
                        {"models", ms},
                        {"scoring_policy", to_string(scoring_policy)},
                        {"test_method", to_string(test_method)},
                        {"only_misleading", only_misleading},
                        {"baseline_only", baseline_only},
                        {"allow_live", allow_live},
                        {"seed", seed},
                        {"style",
                         {{"cot_cue", style.cot_cue},
                          {"answer_directive", style.answer_directive},
                          {"option_a_marker", style.option_a_marker},
                          {"option_b_marker", style.option_b_marker}}},
                        {"output_dir", output_dir.string()}};
    j["max_samples_per_task"] = max_samples_per_task ? nlohmann::json(*max_samples_per_task) : nlohmann::json(nullptr);
    j["cache_path"] = cache_path ? nlohmann::json(cache_path->string()) : nlohmann::json(nullptr);
    return j;
  }

  // Relative corpus, output and cache paths resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    ExperimentConfig c;
    for (const auto& cj : j.at("corpora"))
      c.corpora.push_back({parse_task(cj.at("task").get<std::string>()), resolve(cj.at("path").get<std::string>())});
    if (auto it = j.find("itypes"); it != j.end()) {
      if (it->is_string() && it->get<std::string>() == "all") {
        for (auto t : kAllInjectionTypes)
          if (t != InjectionType::unbiased) c.itypes.push_back(t);
      } else {
        for (const auto& t : *it) c.itypes.push_back(parse_injection_type(t.get<std::string>()));
      }
    } else {
      for (auto t : kAllInjectionTypes)
        if (t != InjectionType::unbiased) c.itypes.push_back(t);
    }
    if (auto it = j.find("positions"); it != j.end()) {
      c.positions.clear();
      for (const auto& p : *it) c.positions.push_back(parse_position(p.get<std::string>()));
    }
    c.repeat_count = j.value("repeat_count", kDefaultRepeatCount);
    c.repeats = j.value("repeats", 1);
    c.seed = j.value("seed", std::uint64_t{0});
    for (const auto& mj : j.at("models")) {
      auto copy = mj;
      if (copy.value("backend", std::string("mock")) == "mock") {
        if (!copy.contains("mock")) copy["mock"] = nlohmann::json::object();
        if (!copy["mock"].contains("seed")) copy["mock"]["seed"] = c.seed;
      }
      c.models.push_back(ModelConfig::from_json(copy));
    }
    c.scoring_policy = parse_unparseable_policy(j.value("scoring_policy", std::string("incorrect")));
    c.test_method = parse_test_method(j.value("test_method", std::string("paired")));
    c.only_misleading = j.value("only_misleading", false);
    c.baseline_only = j.value("baseline_only", false);
    c.allow_live = j.value("allow_live", false);
    if (auto it = j.find("max_samples_per_task"); it != j.end() && !it->is_null())
      c.max_samples_per_task = it->get<std::size_t>();
    if (auto it = j.find("style"); it != j.end()) {
      c.style.cot_cue = it->value("cot_cue", c.style.cot_cue);
      c.style.answer_directive = it->value("answer_directive", c.style.answer_directive);
      c.style.option_a_marker = it->value("option_a_marker", c.style.option_a_marker);
      c.style.option_b_marker = it->value("option_b_marker", c.style.option_b_marker);
    }
    if (auto it = j.find("output_dir"); it != j.end() && !it->is_null())
      c.output_dir = resolve(it->get<std::string>());
    if (auto it = j.find("cache_path"); it != j.end() && !it->is_null()) c.cache_path = resolve(it->get<std::string>());
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("config '" + path.string() + "': " + e.what());
    }
    return from_json(j, path.parent_path());
  }

  std::string snapshot() const { return to_json().dump(2) + "\n"; }
};

enum class RunStatus { complete, complete_with_errors, incomplete };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::complete: return "complete";
    case RunStatus::complete_with_errors: return "complete_with_errors";
    case RunStatus::incomplete: return "incomplete";
  }
  return "?";
}

struct RunOptions {
  bool resume = false;                       // continue an existing run directory
  std::optional<std::size_t> max_new_calls;  // stop after this many uncached requests
  std::ostream* progress = nullptr;
};

struct RunArtifacts {
  std::filesystem::path dir;
  RunStatus status = RunStatus::incomplete;
  std::size_t bundles = 0;
  std::size_t skipped = 0;
  std::size_t requests = 0;
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t pending = 0;
  std::vector<std::string> failed_ids;
  std::vector<DeltaStats> stats;

  std::filesystem::path file(std::string_view name) const { return dir / name; }
  int exit_code() const {
    switch (status) {
      case RunStatus::complete: return 0;
      case RunStatus::complete_with_errors: return 2;
      case RunStatus::incomplete: return 3;
    }
    return 1;
  }
};

namespace detail {

inline std::vector<BinaryQA> subset(std::vector<BinaryQA> samples, std::optional<std::size_t> limit,
                                    std::uint64_t seed) {
  if (!limit || *limit >= samples.size()) return samples;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
  idx.resize(*limit);
  std::sort(idx.begin(), idx.end());
  std::vector<BinaryQA> out;
  for (auto i : idx) out.push_back(std::move(samples[i]));
  return out;
}

template <typename Range, typename ToJson>
std::string jsonl(const Range& items, ToJson&& to) {
  std::string out;
  for (const auto& x : items) out += to(x).dump() + "\n";
  return out;
}

inline void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << line << '\n';
}

}  // namespace detail

// Runs (or continues) the full experiment. Completions already in the cache
// are never requested again, so a rerun over a warm cache reproduces every
// artifact except session.log byte for byte.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  cfg.validate();
  if (cfg.output_dir.empty()) throw Error("config: output_dir is required");
  RunArtifacts art;
  art.dir = cfg.output_dir;
  std::filesystem::create_directories(art.dir);

  const std::string snapshot = cfg.snapshot();
  const std::string config_digest = sha256_hex(snapshot);
  const auto manifest_path = art.file("run.json");
  if (std::filesystem::exists(manifest_path)) {
    auto manifest = nlohmann::json::parse(detail::read_file(manifest_path));
    if (manifest.value("config_sha256", std::string{}) != config_digest)
      throw Error("run directory '" + art.dir.string() +
                  "' belongs to a different configuration; refusing to mix results");
  } else if (opts.resume) {
    throw Error("nothing to resume: '" + art.dir.string() + "' has no run.json");
  }

  // Corpora and prompt grid.
  std::vector<PromptBundle> bundles;
  std::vector<GridSkip> skips;
  for (const auto& ref : cfg.corpora) {
    auto loaded = load_corpus(ref.path, ref.task);
    auto samples = detail::subset(loaded.require_clean(ref.path.string()), cfg.max_samples_per_task, cfg.seed);
    if (samples.empty()) throw Error("corpus '" + ref.path.string() + "' has no samples");
    auto grid = make_variant_grid(samples, cfg.grid_itypes(), cfg.positions, cfg.style, cfg.repeat_count);
    std::move(grid.bundles.begin(), grid.bundles.end(), std::back_inserter(bundles));
    std::move(grid.skipped.begin(), grid.skipped.end(), std::back_inserter(skips));
  }
  art.bundles = bundles.size();
  art.skipped = skips.size();

  detail::write_file_atomic(art.file("config.json"), snapshot);
  detail::write_file_atomic(art.file("bundles.jsonl"),
                            detail::jsonl(bundles, [](const PromptBundle& b) { return to_json(b); }));
  detail::write_file_atomic(art.file("skips.jsonl"), detail::jsonl(skips, [](const GridSkip& s) { return to_json(s); }));

  auto cache = std::make_shared<ResponseCache>(cfg.cache_path.value_or(art.file("cache.jsonl")));

  std::vector<CompletionRequest> reqs;
  std::vector<const PromptBundle*> req_bundle;
  for (const auto& b : bundles)
    for (int r = 0; r < cfg.repeats; ++r) {
      reqs.push_back(CompletionRequest::from_bundle(b, r));
      req_bundle.push_back(&b);
    }

  struct ModelRun {
    const ModelConfig* model;
    BatchResult batch;
  };
  std::vector<ModelRun> runs;
  std::optional<std::size_t> budget = opts.max_new_calls;
  for (const auto& m : cfg.models) {
    Client client(m, make_backend(m), cache);
    BatchOptions bo;
    bo.max_new_calls = budget;
    auto batch = client.complete_batch(reqs, bo);
    if (budget) {
      std::size_t used = 0;
      for (const auto& rec : batch.records)
        if (rec.status != RecordStatus::pending && rec.backend != ServedBy::cache) ++used;
      *budget -= std::min(*budget, used);
    }
    art.requests += reqs.size();
    art.backend_calls += batch.backend_calls;
    art.cache_hits += batch.cache_hits;
    art.pending += batch.pending;
    art.failed_ids.insert(art.failed_ids.end(), batch.failed_ids.begin(), batch.failed_ids.end());
    if (opts.progress)
      *opts.progress << m.model_name << ": " << reqs.size() << " requests, " << batch.backend_calls
                     << " backend calls, " << batch.cache_hits << " cache hits, " << batch.pending << " pending, "
                     << batch.failed_ids.size() << " errors\n";
    runs.push_back({&m, std::move(batch)});
  }

  nlohmann::json session = {{"timestamp", utc_timestamp()},
                            {"requests", art.requests},
                            {"backend_calls", art.backend_calls},
                            {"cache_hits", art.cache_hits},
                            {"pending", art.pending},
                            {"errors", art.failed_ids}};
  detail::append_line(art.file("session.log"), session.dump());

  const std::array<std::string_view, 6> downstream = {"completions.jsonl", "indicators.jsonl", "stats.jsonl",
                                                      "table.txt", "table.csv", "errors.jsonl"};
  if (art.pending > 0) {
    art.status = RunStatus::incomplete;
    for (auto name : downstream) std::filesystem::remove(art.file(name));
    nlohmann::json manifest = {{"config_sha256", config_digest},
                               {"status", to_string(art.status)},
                               {"bundles", art.bundles},
                               {"skipped", art.skipped},
                               {"requests", art.requests}};
    detail::write_file_atomic(manifest_path, manifest.dump(2) + "\n");
    return art;
  }

  // Run log from canonical cache records, then scoring.
  std::string completions, errors;
  std::vector<CorrectnessIndicator> indicators;
  std::set<std::tuple<std::string, Task, std::string>> errored;  // (model, task, sample)
  ExtractOptions extract_opts;
  extract_opts.echo_anchor = cfg.style.answer_directive;
  for (const auto& run : runs) {
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      auto rec = run.batch.records[i];
      if (rec.ok()) {
        auto canonical = cache->lookup(rec.request_hash);
        if (canonical) rec = *canonical;
        rec.bundle_id = reqs[i].bundle_id;
      }
      completions += to_json(rec).dump() + "\n";
      const auto& b = *req_bundle[i];
      if (!rec.ok()) {
        errors += to_json(rec).dump() + "\n";
        errored.insert({run.model->model_name, b.task, b.sample_id});
        continue;
      }
      indicators.push_back(score(extract_answer(rec.response_text, extract_opts), b, run.model->model_name,
                                 cfg.scoring_policy, reqs[i].repeat));
    }
  }
  if (!errored.empty()) {
    std::erase_if(indicators, [&](const CorrectnessIndicator& c) {
      return errored.count({c.model, c.task, c.sample_id}) > 0;
    });
  }

  StatsOptions so;
  so.method = cfg.test_method;
  so.only_misleading = cfg.only_misleading;
  art.stats = compute_stats(indicators, so);
  auto table = render_table(art.stats);

  detail::write_file_atomic(art.file("completions.jsonl"), completions);
  detail::write_file_atomic(art.file("errors.jsonl"), errors);
  detail::write_file_atomic(art.file("indicators.jsonl"),
                            detail::jsonl(indicators, [](const CorrectnessIndicator& c) { return to_json(c); }));
  detail::write_file_atomic(art.file("stats.jsonl"),
                            detail::jsonl(art.stats, [](const DeltaStats& s) { return to_json(s); }));
  detail::write_file_atomic(art.file("table.txt"), table.render_text());
  detail::write_file_atomic(art.file("table.csv"), table.render_csv());

  art.status = art.failed_ids.empty() ? RunStatus::complete : RunStatus::complete_with_errors;
  nlohmann::json manifest = {{"config_sha256", config_digest},
                             {"status", to_string(art.status)},
                             {"bundles", art.bundles},
                             {"skipped", art.skipped},
                             {"requests", art.requests},
                             {"indicators", indicators.size()},
                             {"stats_rows", art.stats.size()},
                             {"errored_samples", errored.size()}};
  detail::write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  return art;
}

// Continues an interrupted run from its directory, using the configuration
// snapshot stored there. Refuses when the snapshot no longer matches the
// manifest digest.
inline RunArtifacts resume(const std::filesystem::path& run_dir, RunOptions opts = {}) {
  auto manifest_path = run_dir / "run.json";
  auto config_path = run_dir / "config.json";
  if (!std::filesystem::exists(manifest_path)) throw Error("nothing to resume: '" + run_dir.string() + "' has no run.json");
  auto manifest = nlohmann::json::parse(detail::read_file(manifest_path));
  auto snapshot = detail::read_file(config_path);
  if (sha256_hex(snapshot) != manifest.value("config_sha256", std::string{}))
    throw Error("config.json in '" + run_dir.string() + "' was modified since the run started; refusing to resume");
  auto cfg = ExperimentConfig::from_json(nlohmann::json::parse(snapshot));
  if (std::filesystem::weakly_canonical(cfg.output_dir) != std::filesystem::weakly_canonical(run_dir))
    throw Error("config.json output_dir does not point at '" + run_dir.string() + "'");
  opts.resume = true;
  return run_experiment(cfg, opts);
}

}  // namespace biasprobe
