// biasprobe: command-line front end.
//
//   biasprobe ingest  --task sports_understanding --input sports.jsonl
//   biasprobe forge   --corpus sports.jsonl --task sports_understanding --itypes all --out bundles.jsonl
//   biasprobe run     --config experiment.json [--out DIR] [--resume] [--mock]
//   biasprobe score   --completions completions.jsonl --bundles bundles.jsonl --out indicators.jsonl
//   biasprobe report  --indicators indicators.jsonl --out-dir DIR
//   biasprobe analyze --dump unbiased.json --compare biased.json --curves curves.csv

#include <iostream>

#include "CLI11.hpp"

#include "biasprobe/biasprobe.hpp"

namespace bp = biasprobe;
namespace fs = std::filesystem;

namespace {

std::vector<bp::InjectionType> parse_itypes(const std::vector<std::string>& names) {
  std::vector<bp::InjectionType> out;
  for (const auto& n : names) {
    if (n == "all") {
      for (auto t : bp::kAllInjectionTypes) out.push_back(t);
      continue;
    }
    out.push_back(bp::parse_injection_type(n));
  }
  return out;
}

std::vector<bp::Position> parse_positions(const std::vector<std::string>& names) {
  std::vector<bp::Position> out;
  for (const auto& n : names) {
    if (n == "all") return {std::begin(bp::kAllPositions), std::end(bp::kAllPositions)};
    out.push_back(bp::parse_position(n));
  }
  return out;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw bp::Error("cannot open '" + path.string() + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line))
    if (!bp::detail::trim(line).empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  bp::detail::write_file_atomic(path, text);
}

int cmd_ingest(const std::string& task_name, const fs::path& input, const fs::path& from_bbh,
               const fs::path& output, const fs::path& report_path) {
  auto task = bp::parse_task(task_name);
  if (!from_bbh.empty()) {
    if (output.empty()) throw bp::Error("--from-bbh requires --output");
    auto samples = bp::convert_bbh_upstream(bp::detail::read_file(from_bbh), task);
    write_text(output, bp::to_jsonl(samples));
    std::cerr << "converted " << samples.size() << " examples to " << output << "\n";
    return 0;
  }
  auto loaded = bp::load_corpus(input, task);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
  auto report = bp::validate_corpus(loaded.samples);
  auto j = report.to_json();
  nlohmann::json rejected = nlohmann::json::array();
  for (const auto& r : loaded.rejected) rejected.push_back({{"line", r.line}, {"id", r.id}, {"reason", r.reason}});
  j["rejected"] = rejected;
  j["loaded"] = loaded.samples.size();
  auto text = j.dump(2) + "\n";
  if (!report_path.empty())
    write_text(report_path, text);
  else
    std::cout << text;
  std::cerr << "loaded " << loaded.samples.size() << " samples (" << loaded.rejected.size() << " rejected)\n";
  return loaded.rejected.empty() && report.clean() ? 0 : 1;
}

int cmd_forge(const fs::path& corpus, const std::string& task_name, const std::vector<std::string>& itypes,
              const std::vector<std::string>& positions, int repeat_count, const std::string& cot_cue,
              const std::string& directive, const fs::path& out, const fs::path& skips_out) {
  auto task = bp::parse_task(task_name);
  auto samples = bp::load_corpus(corpus, task).require_clean(corpus.string());
  bp::PromptStyle style;
  if (!cot_cue.empty()) style.cot_cue = cot_cue;
  if (!directive.empty()) style.answer_directive = directive;
  auto grid = bp::make_variant_grid(samples, parse_itypes(itypes), parse_positions(positions), style, repeat_count);
  std::string text;
  for (const auto& b : grid.bundles) text += bp::to_json(b).dump() + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text(out, text);
  std::string skips;
  for (const auto& s : grid.skipped) skips += bp::to_json(s).dump() + "\n";
  if (!skips_out.empty()) write_text(skips_out, skips);
  std::cerr << grid.bundles.size() << " bundles, " << grid.skipped.size() << " skipped\n";
  for (const auto& s : grid.skipped)
    if (skips_out.empty()) std::cerr << "skipped: " << bp::to_json(s).dump() << "\n";
  return 0;
}

int cmd_run(const fs::path& config_path, const fs::path& out, bool resume, bool only_misleading,
            const std::vector<std::string>& positions, bool mock, bool live, std::optional<std::size_t> max_calls) {
  bp::RunOptions opts;
  opts.progress = &std::cerr;
  opts.max_new_calls = max_calls;
  bp::RunArtifacts art;
  if (config_path.empty()) {
    if (!resume || out.empty()) throw bp::Error("run needs --config, or --resume with --out DIR");
    art = bp::resume(fs::absolute(out), opts);
  } else {
    auto cfg = bp::ExperimentConfig::load(config_path);
    if (!out.empty()) cfg.output_dir = out;
    if (cfg.output_dir.empty()) throw bp::Error("no output directory: set output_dir or pass --out");
    cfg.output_dir = fs::absolute(cfg.output_dir).lexically_normal();
    if (only_misleading) cfg.only_misleading = true;
    if (!positions.empty()) cfg.positions = parse_positions(positions);
    if (live) cfg.allow_live = true;
    if (mock)
      for (auto& m : cfg.models) m.backend = bp::BackendKind::mock;
    opts.resume = resume;
    art = bp::run_experiment(cfg, opts);
  }
  std::cerr << "run " << bp::to_string(art.status) << ": " << art.dir << "\n";
  if (art.status != bp::RunStatus::incomplete) std::cout << bp::detail::read_file(art.file("table.txt"));
  return art.exit_code();
}

int cmd_score(const fs::path& completions, const fs::path& bundles_path, const fs::path& out,
              const std::string& policy_name, const std::string& directive) {
  auto policy = bp::parse_unparseable_policy(policy_name);
  std::unordered_map<std::string, bp::PromptBundle> bundles;
  for (const auto& j : read_jsonl(bundles_path)) {
    auto b = bp::bundle_from_json(j);
    bundles.emplace(b.id(), std::move(b));
  }
  bp::ExtractOptions eo;
  if (!directive.empty()) eo.echo_anchor = directive;
  std::string text;
  std::size_t scored = 0, skipped = 0;
  for (const auto& j : read_jsonl(completions)) {
    auto rec = bp::record_from_json(j);
    if (!rec.ok()) {
      ++skipped;
      continue;
    }
    auto id = rec.bundle_id.substr(0, rec.bundle_id.find("#r"));
    auto it = bundles.find(id);
    if (it == bundles.end()) throw bp::Error("completion for unknown bundle '" + rec.bundle_id + "'");
    auto ind = bp::score(bp::extract_answer(rec.response_text, eo), it->second, rec.model_name, policy, rec.repeat);
    text += bp::to_json(ind).dump() + "\n";
    ++scored;
  }
  if (out.empty())
    std::cout << text;
  else
    write_text(out, text);
  std::cerr << scored << " completions scored, " << skipped << " error records skipped\n";
  return 0;
}

int cmd_report(const fs::path& indicators_path, const fs::path& out_dir, bool only_misleading,
               const std::string& method) {
  std::vector<bp::CorrectnessIndicator> indicators;
  for (const auto& j : read_jsonl(indicators_path)) indicators.push_back(bp::indicator_from_json(j));
  std::vector<bp::TestMethod> methods;
  if (method == "both")
    methods = {bp::TestMethod::paired, bp::TestMethod::unpaired};
  else
    methods = {bp::parse_test_method(method)};
  for (auto m : methods) {
    bp::StatsOptions so;
    so.method = m;
    so.only_misleading = only_misleading;
    auto stats = bp::compute_stats(indicators, so);
    std::string stats_text;
    for (const auto& s : stats) stats_text += bp::to_json(s).dump() + "\n";
    auto table = bp::render_table(std::move(stats));
    std::string suffix = methods.size() > 1 && m == bp::TestMethod::unpaired ? "_unpaired" : "";
    if (!out_dir.empty()) {
      write_text(out_dir / ("stats" + suffix + ".jsonl"), stats_text);
      write_text(out_dir / ("table" + suffix + ".txt"), table.render_text());
      write_text(out_dir / ("table" + suffix + ".csv"), table.render_csv());
    }
    if (methods.size() > 1) std::cout << "[" << bp::to_string(m) << "]\n";
    std::cout << table.render_text();
  }
  return 0;
}

nlohmann::json mass_json(const bp::OptionMass& m) {
  return {{"letter", bp::to_string(m.letter)}, {"value", m.value}, {"dump", m.dump_id}};
}

int cmd_analyze(const fs::path& dump_path, const fs::path& compare_path, const std::string& letter_opt,
                const std::string& rule_name, const fs::path& curves_out, bool per_head) {
  auto rule = bp::parse_match_rule(rule_name);
  std::vector<bp::Letter> letters;
  if (letter_opt == "both")
    letters = {bp::Letter::A, bp::Letter::B};
  else if (auto l = bp::parse_letter(letter_opt))
    letters = {*l};
  else
    throw bp::Error("--letter must be A, B or both");

  std::vector<bp::AttentionDump> dumps = {bp::load_dump(dump_path)};
  if (!compare_path.empty()) dumps.push_back(bp::load_dump(compare_path));

  nlohmann::json report;
  report["rule"] = bp::to_string(rule);
  nlohmann::json per_dump = nlohmann::json::array();
  for (const auto& d : dumps) {
    auto [sa, sb] = bp::token_index_sets(d.prompt_tokens, rule);
    nlohmann::json dj = {{"dump", d.id},
                         {"model_name", d.model_name},
                         {"layer_index", d.layer_index},
                         {"num_heads", d.num_heads},
                         {"num_prompt_tokens", d.n()},
                         {"num_output_tokens", d.m()},
                         {"final_prompt_token", d.final_prompt_token},
                         {"index_set_A", sa.indices},
                         {"index_set_B", sb.indices}};
    nlohmann::json masses = nlohmann::json::array();
    for (auto l : letters) masses.push_back(mass_json(bp::last_token_option_mass(d, l, rule)));
    dj["last_token_mass"] = masses;
    auto a = bp::last_token_option_mass(d, bp::Letter::A, rule);
    auto b = bp::last_token_option_mass(d, bp::Letter::B, rule);
    dj["ratio_B_over_A"] = a.value > 0 ? nlohmann::json(b.value / a.value) : nlohmann::json("undefined");
    if (per_head) {
      nlohmann::json heads = nlohmann::json::array();
      for (const auto& row : d.last_prompt_rows) {
        bp::AttentionRow single[] = {row};
        heads.push_back({{"A", bp::sum_over(bp::head_average(single), sa)},
                         {"B", bp::sum_over(bp::head_average(single), sb)}});
      }
      dj["per_head_last_token_mass"] = heads;
    }
    per_dump.push_back(dj);
  }
  report["dumps"] = per_dump;

  if (dumps.size() == 2) {
    auto c = bp::compare_dumps(dumps[0], dumps[1], rule);
    report["comparison"] = {{"unbiased", dumps[0].id},
                            {"biased", dumps[1].id},
                            {"delta_A", c.delta_a},
                            {"delta_B", c.delta_b},
                            {"ratio_unbiased", c.ratio_unbiased ? nlohmann::json(*c.ratio_unbiased) : nlohmann::json("undefined")},
                            {"ratio_biased", c.ratio_biased ? nlohmann::json(*c.ratio_biased) : nlohmann::json("undefined")},
                            {"warnings", c.warnings}};
    for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";
  }

  if (!curves_out.empty()) {
    std::vector<bp::CurvePoint> series;
    for (const auto& d : dumps)
      for (auto l : letters) {
        auto curve = bp::output_curve(d, l, rule);
        series.insert(series.end(), curve.begin(), curve.end());
      }
    bp::export_curves(series, curves_out);
    report["curves"] = curves_out.string();
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biasprobe: cognitive-bias injection experiments and attention analysis"};
  app.require_subcommand(1);

  std::string task = "sports_understanding", policy = "incorrect", method = "paired", letter = "both",
              rule = "all_letter_tokens", cot_cue, directive;
  fs::path input, from_bbh, output, report_path, corpus, skips_out, config, out, completions, bundles, indicators,
      dump, compare, curves;
  std::vector<std::string> itypes = {"all"}, positions_forge = {"tail"}, positions_run;
  int repeat_count = bp::kDefaultRepeatCount;
  bool resume = false, only_misleading = false, mock = false, live = false, per_head = false;
  std::optional<std::size_t> max_calls;

  auto* ingest = app.add_subcommand("ingest", "Load and validate a corpus, or convert an upstream BBH file");
  ingest->add_option("--task", task, "Task name")->required();
  ingest->add_option("--input", input, "Corpus file (JSON lines)");
  ingest->add_option("--from-bbh", from_bbh, "Upstream BBH task JSON to convert");
  ingest->add_option("--output", output, "Converted corpus output (with --from-bbh)");
  ingest->add_option("--report", report_path, "Write the validation report here instead of stdout");

  auto* forge = app.add_subcommand("forge", "Compose biased prompt bundles for audit");
  forge->add_option("--corpus", corpus, "Corpus file")->required();
  forge->add_option("--task", task, "Task name")->required();
  forge->add_option("--itypes", itypes, "Injection types (or 'all')")->delimiter(',');
  forge->add_option("--positions", positions_forge, "Positions: head, middle, tail (or 'all')")->delimiter(',');
  forge->add_option("--repeat-count", repeat_count, "Repetitions for many_wrong_answers")->check(CLI::PositiveNumber);
  forge->add_option("--cot-cue", cot_cue, "Override the chain-of-thought cue");
  forge->add_option("--answer-directive", directive, "Override the answer directive");
  forge->add_option("--out", output, "Bundle output file (default stdout)");
  forge->add_option("--skips", skips_out, "Skip report output file");

  auto* run = app.add_subcommand("run", "Run an experiment from a configuration file");
  run->add_option("--config", config, "Experiment configuration (JSON)");
  run->add_option("--out", out, "Output directory (overrides output_dir)");
  run->add_flag("--resume", resume, "Continue an interrupted run");
  run->add_flag("--only-misleading", only_misleading, "Score suggested answers only where they are wrong");
  run->add_option("--positions", positions_run, "Override injection positions")->delimiter(',');
  run->add_flag("--mock", mock, "Replace every model backend with the deterministic mock");
  run->add_flag("--live", live, "Allow live (paid) endpoints");
  run->add_option("--max-calls", max_calls, "Stop after this many uncached requests");

  auto* scorecmd = app.add_subcommand("score", "Score a run log into correctness indicators");
  scorecmd->add_option("--completions", completions, "Run log (completions.jsonl)")->required();
  scorecmd->add_option("--bundles", bundles, "Bundle manifest (bundles.jsonl)")->required();
  scorecmd->add_option("--out", output, "Indicator output file (default stdout)");
  scorecmd->add_option("--policy", policy, "Unparseable policy: incorrect | exclude");
  scorecmd->add_option("--answer-directive", directive, "Directive used in the prompts (echo detection)");

  auto* report = app.add_subcommand("report", "Compute statistics and render report tables");
  report->add_option("--indicators", indicators, "Indicator file")->required();
  report->add_option("--out-dir", out, "Directory for stats.jsonl, table.txt, table.csv");
  report->add_flag("--only-misleading", only_misleading, "Score suggested answers only where they are wrong");
  report->add_option("--method", method, "paired | unpaired | both");

  auto* analyze = app.add_subcommand("analyze", "Attention-weight analysis of dump files");
  analyze->add_option("--dump", dump, "Attention dump (the unbiased one when comparing)")->required();
  analyze->add_option("--compare", compare, "Biased dump to compare against");
  analyze->add_option("--letter", letter, "A, B or both");
  analyze->add_option("--rule", rule, "all_letter_tokens | marker_context");
  analyze->add_option("--curves", curves, "Export per-output-token curves to this CSV");
  analyze->add_flag("--per-head", per_head, "Also report per-head last-token masses");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      if (input.empty() && from_bbh.empty()) throw bp::Error("ingest needs --input or --from-bbh");
      return cmd_ingest(task, input, from_bbh, output, report_path);
    }
    if (*forge)
      return cmd_forge(corpus, task, itypes, positions_forge, repeat_count, cot_cue, directive, output, skips_out);
    if (*run) return cmd_run(config, out, resume, only_misleading, positions_run, mock, live, max_calls);
    if (*scorecmd) return cmd_score(completions, bundles, output, policy, directive);
    if (*report) return cmd_report(indicators, out, only_misleading, method);
    if (*analyze) return cmd_analyze(dump, compare, letter, rule, curves, per_head);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
