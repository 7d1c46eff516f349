#pragma once

// Last-layer attention analysis over dump files: head averaging, option-token
// attention mass at the final prompt token, biased-vs-unbiased deltas and
// ratios, and per-output-token curves.

#include <cmath>
#include <span>

#include "biasprobe/common.hpp"
#include "json.hpp"

namespace biasprobe {

inline constexpr std::string_view kDumpFormat = "biasprobe.attention_dump.v1";
inline constexpr double kRowSumTolerance = 1e-3;

using AttentionRow = std::vector<double>;
using HeadRows = std::vector<AttentionRow>;  // one row per head

struct AttentionDump {
  std::string id;  // source identifier (file stem for loaded dumps)
  std::string model_name;
  int layer_index = 0;
  int num_heads = 0;
  std::vector<std::string> prompt_tokens;
  std::vector<std::string> output_tokens;
  std::string final_prompt_token;
  HeadRows last_prompt_rows;             // H rows of length n
  std::vector<HeadRows> output_step_rows;  // step i (1-based): H rows of length n+i-1

  std::size_t n() const { return prompt_tokens.size(); }
  std::size_t m() const { return output_tokens.size(); }
};

struct DumpViolation {
  std::string where;  // "last_prompt head 1", "step 2 head 0", "metadata"
  std::string what;
};

class DumpError : public Error {
 public:
  DumpError(const std::string& source, std::vector<DumpViolation> violations)
      : Error(format(source, violations)), violations_(std::move(violations)) {}
  const std::vector<DumpViolation>& violations() const { return violations_; }

 private:
  static std::string format(const std::string& source, const std::vector<DumpViolation>& v) {
    std::string msg = "attention dump '" + source + "': " + std::to_string(v.size()) + " violation(s)";
    for (std::size_t i = 0; i < v.size() && i < 50; ++i) msg += "\n  " + v[i].where + ": " + v[i].what;
    return msg;
  }
  std::vector<DumpViolation> violations_;
};

namespace detail {

inline void check_row(const AttentionRow& row, std::size_t expected_len, const std::string& where,
                      std::vector<DumpViolation>& out) {
  if (row.size() != expected_len) {
    out.push_back({where, "row length " + std::to_string(row.size()) + ", expected " + std::to_string(expected_len)});
    return;
  }
  double sum = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    double w = row[j];
    if (!(w >= 0.0 && w <= 1.0)) {
      out.push_back({where, "weight " + exact(w) + " at position " + std::to_string(j) + " outside [0, 1]"});
      return;
    }
    sum += w;
  }
  if (std::fabs(sum - 1.0) > kRowSumTolerance)
    out.push_back({where, "row sum " + exact(sum) + " differs from 1 by more than 1e-3"});
}

}  // namespace detail

// Checks every dump invariant and returns all violations found.
inline std::vector<DumpViolation> validate_dump(const AttentionDump& d) {
  std::vector<DumpViolation> v;
  const std::size_t n = d.n();
  if (d.num_heads < 1) v.push_back({"metadata", "num_heads must be >= 1"});
  if (n == 0) v.push_back({"metadata", "prompt has no tokens"});
  if (n > 0 && d.final_prompt_token != d.prompt_tokens.back())
    v.push_back({"metadata", "final_prompt_token does not match the last prompt token"});
  const auto H = static_cast<std::size_t>(std::max(d.num_heads, 0));
  if (d.last_prompt_rows.size() != H)
    v.push_back({"last_prompt", std::to_string(d.last_prompt_rows.size()) + " head rows, expected " +
                                    std::to_string(H)});
  for (std::size_t h = 0; h < d.last_prompt_rows.size(); ++h)
    detail::check_row(d.last_prompt_rows[h], n, "last_prompt head " + std::to_string(h), v);
  if (d.output_step_rows.size() != d.m())
    v.push_back({"output_steps", std::to_string(d.output_step_rows.size()) + " steps, expected " +
                                     std::to_string(d.m())});
  for (std::size_t i = 0; i < d.output_step_rows.size(); ++i) {
    const auto& step = d.output_step_rows[i];
    const std::string step_name = "step " + std::to_string(i + 1);
    if (step.size() != H)
      v.push_back({step_name, std::to_string(step.size()) + " head rows, expected " + std::to_string(H)});
    for (std::size_t h = 0; h < step.size(); ++h) detail::check_row(step[h], n + i, step_name + " head " + std::to_string(h), v);
  }
  return v;
}

// Parses and validates a dump document. Throws DumpError listing every
// violation (with head and step coordinates), or for truncated input.
inline AttentionDump parse_dump(std::string_view text, const std::string& source = "<memory>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DumpError(source, {{"document", std::string("truncated or malformed: ") + e.what()}});
  }
  AttentionDump d;
  d.id = source;
  try {
    if (j.at("format").get<std::string>() != kDumpFormat)
      throw DumpError(source, {{"metadata", "unsupported format '" + j.at("format").get<std::string>() + "'"}});
    d.model_name = j.at("model_name").get<std::string>();
    d.layer_index = j.at("layer_index").get<int>();
    d.num_heads = j.at("num_heads").get<int>();
    d.final_prompt_token = j.at("final_prompt_token").get<std::string>();
    d.prompt_tokens = j.at("prompt_tokens").get<std::vector<std::string>>();
    d.output_tokens = j.at("output_tokens").get<std::vector<std::string>>();
    d.last_prompt_rows = j.at("last_prompt_rows").get<HeadRows>();
    d.output_step_rows = j.at("output_step_rows").get<std::vector<HeadRows>>();
    std::vector<DumpViolation> v;
    if (j.at("num_prompt_tokens").get<std::size_t>() != d.n())
      v.push_back({"metadata", "num_prompt_tokens disagrees with prompt_tokens"});
    if (j.at("num_output_tokens").get<std::size_t>() != d.m())
      v.push_back({"metadata", "num_output_tokens disagrees with output_tokens"});
    auto rest = validate_dump(d);
    v.insert(v.end(), rest.begin(), rest.end());
    if (!v.empty()) throw DumpError(source, std::move(v));
  } catch (const nlohmann::json::exception& e) {
    throw DumpError(source, {{"document", std::string("shape mismatch: ") + e.what()}});
  }
  return d;
}

inline AttentionDump load_dump(const std::filesystem::path& path) {
  auto d = parse_dump(detail::read_file(path), path.string());
  d.id = path.stem().string();
  return d;
}

namespace detail {

inline void write_row(std::string& out, const AttentionRow& row) {
  out += '[';
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j) out += ',';
    out += exact(row[j]);
  }
  out += ']';
}

inline void write_head_rows(std::string& out, const HeadRows& rows, std::string_view indent) {
  out += "[\n";
  for (std::size_t h = 0; h < rows.size(); ++h) {
    out += indent;
    write_row(out, rows[h]);
    out += h + 1 < rows.size() ? ",\n" : "\n";
  }
  out += indent.substr(0, indent.size() >= 2 ? indent.size() - 2 : 0);
  out += ']';
}

}  // namespace detail

// Serializes a dump: metadata keys first, then the row arrays, one head row
// per line, weights at 17 significant digits.
inline std::string serialize_dump(const AttentionDump& d) {
  auto str = [](const std::string& s) { return nlohmann::json(s).dump(); };
  std::string out = "{\n";
  out += "  \"format\": " + str(std::string(kDumpFormat)) + ",\n";
  out += "  \"model_name\": " + str(d.model_name) + ",\n";
  out += "  \"layer_index\": " + std::to_string(d.layer_index) + ",\n";
  out += "  \"num_heads\": " + std::to_string(d.num_heads) + ",\n";
  out += "  \"num_prompt_tokens\": " + std::to_string(d.n()) + ",\n";
  out += "  \"num_output_tokens\": " + std::to_string(d.m()) + ",\n";
  out += "  \"final_prompt_token\": " + str(d.final_prompt_token) + ",\n";
  out += "  \"prompt_tokens\": " + nlohmann::json(d.prompt_tokens).dump() + ",\n";
  out += "  \"output_tokens\": " + nlohmann::json(d.output_tokens).dump() + ",\n";
  out += "  \"last_prompt_rows\": ";
  detail::write_head_rows(out, d.last_prompt_rows, "    ");
  out += ",\n  \"output_step_rows\": [";
  for (std::size_t i = 0; i < d.output_step_rows.size(); ++i) {
    out += i ? ",\n    " : "\n    ";
    detail::write_head_rows(out, d.output_step_rows[i], "      ");
  }
  out += d.output_step_rows.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

// Elementwise mean across heads.
inline AttentionRow head_average(std::span<const AttentionRow> rows) {
  if (rows.empty()) throw Error("head_average: at least one head row is required");
  AttentionRow avg(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    if (r.size() != avg.size()) throw Error("head_average: head rows have different lengths");
    for (std::size_t j = 0; j < r.size(); ++j) avg[j] += r[j];
  }
  const double h = static_cast<double>(rows.size());
  for (double& x : avg) x /= h;
  return avg;
}

enum class MatchRule { all_letter_tokens, marker_context };

inline std::string_view to_string(MatchRule r) {
  return r == MatchRule::all_letter_tokens ? "all_letter_tokens" : "marker_context";
}

inline MatchRule parse_match_rule(std::string_view s) {
  if (s == "all_letter_tokens" || s == "all") return MatchRule::all_letter_tokens;
  if (s == "marker_context" || s == "marker") return MatchRule::marker_context;
  throw Error("unknown token rule '" + std::string(s) + "'");
}

// Drops leading whitespace and the visible whitespace markers byte-level BPE
// tokenizers emit (SentencePiece U+2581, GPT-2 U+0120 and U+010A).
inline std::string_view strip_token_markers(std::string_view tok) {
  for (;;) {
    if (!tok.empty() && (tok[0] == ' ' || tok[0] == '\t' || tok[0] == '\n' || tok[0] == '\r')) {
      tok.remove_prefix(1);
    } else if (detail::starts_with(tok, "\xE2\x96\x81")) {
      tok.remove_prefix(3);
    } else if (detail::starts_with(tok, "\xC4\xA0") || detail::starts_with(tok, "\xC4\x8A")) {
      tok.remove_prefix(2);
    } else {
      return tok;
    }
  }
}

struct IndexSet {
  Letter letter = Letter::A;
  std::vector<std::size_t> indices;
  MatchRule rule = MatchRule::all_letter_tokens;
};

// Index sets of the tokens named "A" and "B". marker_context additionally
// requires the previous token to end with "(".
inline std::pair<IndexSet, IndexSet> token_index_sets(std::span<const std::string> tokens,
                                                      MatchRule rule = MatchRule::all_letter_tokens) {
  IndexSet a{Letter::A, {}, rule}, b{Letter::B, {}, rule};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto t = strip_token_markers(tokens[i]);
    if (t != "A" && t != "B") continue;
    if (rule == MatchRule::marker_context) {
      if (i == 0) continue;
      const auto& prev = tokens[i - 1];
      if (prev.empty() || prev.back() != '(') continue;
    }
    (t == "A" ? a : b).indices.push_back(i);
  }
  return {std::move(a), std::move(b)};
}

inline IndexSet index_set(std::span<const std::string> tokens, Letter letter, MatchRule rule) {
  auto [a, b] = token_index_sets(tokens, rule);
  return letter == Letter::A ? a : b;
}

struct OptionMass {
  Letter letter = Letter::A;
  double value = 0;
  std::string dump_id;
};

inline double sum_over(const AttentionRow& row, const IndexSet& set) {
  double s = 0;
  for (auto j : set.indices)
    if (j < row.size()) s += row[j];
  return s;
}

// Head-averaged attention from the final prompt token summed over the
// letter's token positions.
inline OptionMass last_token_option_mass(const AttentionDump& d, Letter letter,
                                         MatchRule rule = MatchRule::all_letter_tokens) {
  auto avg = head_average(d.last_prompt_rows);
  return {letter, sum_over(avg, index_set(d.prompt_tokens, letter, rule)), d.id};
}

// Biased minus unbiased mass for the same letter.
inline double option_mass_delta(const OptionMass& unbiased, const OptionMass& biased) {
  if (unbiased.letter != biased.letter) throw Error("option_mass_delta: letters differ");
  return biased.value - unbiased.value;
}

inline double option_mass_ratio(const OptionMass& b_mass, const OptionMass& a_mass) {
  if (b_mass.letter != Letter::B || a_mass.letter != Letter::A)
    throw Error("option_mass_ratio: expects the B mass and the A mass");
  if (!(a_mass.value > 0)) throw Error("option_mass_ratio: undefined ratio, attention mass on A is zero");
  return b_mass.value / a_mass.value;
}

// mass(B) / mass(A) within one dump.
inline double option_mass_ratio(const AttentionDump& d, MatchRule rule = MatchRule::all_letter_tokens) {
  return option_mass_ratio(last_token_option_mass(d, Letter::B, rule), last_token_option_mass(d, Letter::A, rule));
}

struct CurvePoint {
  std::size_t step = 0;  // 1-based output step
  Letter letter = Letter::A;
  double value = 0;
  std::string dump_id;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

// Per output step: head-averaged attention summed over the letter's prompt
// positions. Generated-token positions never contribute.
inline std::vector<CurvePoint> output_curve(const AttentionDump& d, Letter letter,
                                            MatchRule rule = MatchRule::all_letter_tokens) {
  if (d.m() == 0) throw Error("output_curve: dump '" + d.id + "' has no output tokens");
  auto set = index_set(d.prompt_tokens, letter, rule);
  std::vector<CurvePoint> out;
  out.reserve(d.m());
  for (std::size_t i = 0; i < d.output_step_rows.size(); ++i) {
    auto avg = head_average(d.output_step_rows[i]);
    double v = 0;
    for (auto j : set.indices)
      if (j < d.n()) v += avg[j];
    out.push_back({i + 1, letter, v, d.id});
  }
  return out;
}

inline constexpr std::string_view kCurveHeader = "step,letter,value,dump_id";

// Rows sorted by (step, letter); ties keep input order.
inline std::string render_curves(std::vector<CurvePoint> series) {
  std::stable_sort(series.begin(), series.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return std::pair(a.step, a.letter) < std::pair(b.step, b.letter);
  });
  std::string out = std::string(kCurveHeader) + "\n";
  for (const auto& p : series) {
    if (p.dump_id.find_first_of(",\"\n") != std::string::npos)
      throw Error("export_curves: dump id '" + p.dump_id + "' contains a delimiter");
    out += std::to_string(p.step) + "," + to_string(p.letter) + "," + detail::exact(p.value) + "," + p.dump_id + "\n";
  }
  return out;
}

inline void export_curves(const std::vector<CurvePoint>& series, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write curve file '" + path.string() + "'");
  out << render_curves(series);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline std::vector<CurvePoint> parse_curves(std::string_view csv) {
  auto lines = detail::split(csv, '\n');
  if (lines.empty() || lines[0] != kCurveHeader) throw Error("curve file: unexpected header");
  std::vector<CurvePoint> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = detail::split(lines[i], ',');
    if (f.size() != 4) throw Error("curve file line " + std::to_string(i + 1) + ": expected 4 fields");
    auto letter = parse_letter(f[1]);
    if (!letter) throw Error("curve file line " + std::to_string(i + 1) + ": bad letter");
    out.push_back({std::stoull(f[0]), *letter, std::stod(f[2]), f[3]});
  }
  return out;
}

inline std::vector<CurvePoint> import_curves(const std::filesystem::path& path) {
  return parse_curves(detail::read_file(path));
}

struct DumpComparison {
  OptionMass unbiased_a, unbiased_b, biased_a, biased_b;
  double delta_a = 0, delta_b = 0;
  std::optional<double> ratio_unbiased, ratio_biased;  // B / A; absent when A mass is zero
  std::vector<std::string> warnings;
};

// Paired analysis of an unbiased and a biased dump.
inline DumpComparison compare_dumps(const AttentionDump& unbiased, const AttentionDump& biased,
                                    MatchRule rule = MatchRule::all_letter_tokens) {
  DumpComparison c;
  if (unbiased.final_prompt_token != biased.final_prompt_token)
    c.warnings.push_back("final prompt tokens differ ('" + unbiased.final_prompt_token + "' vs '" +
                         biased.final_prompt_token + "')");
  if (unbiased.model_name != biased.model_name)
    c.warnings.push_back("dumps come from different models");
  c.unbiased_a = last_token_option_mass(unbiased, Letter::A, rule);
  c.unbiased_b = last_token_option_mass(unbiased, Letter::B, rule);
  c.biased_a = last_token_option_mass(biased, Letter::A, rule);
  c.biased_b = last_token_option_mass(biased, Letter::B, rule);
  c.delta_a = option_mass_delta(c.unbiased_a, c.biased_a);
  c.delta_b = option_mass_delta(c.unbiased_b, c.biased_b);
  if (c.unbiased_a.value > 0) c.ratio_unbiased = c.unbiased_b.value / c.unbiased_a.value;
  if (c.biased_a.value > 0) c.ratio_biased = c.biased_b.value / c.biased_a.value;
  return c;
}

}  // namespace biasprobe
