#pragma once

// Benchmark corpora as canonical binary-choice records.
//
// On-disk corpus format: one JSON object per line.
//
//   {"id": "sports-0001", "question": "...", "option_a": "plausible",
//    "option_b": "implausible", "gold": "A",
//    "focal_statement": "Derek Carr hit the screen pass in the Superbowl",
//    "context": "..."}
//
// `focal_statement` and `context` are optional. FinQA files use a different
// record shape (see load_finqa).

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "biasprobe/common.hpp"

namespace biasprobe {

struct BinaryQA {
  std::string id;
  Task task = Task::sports_understanding;
  std::string question_text;
  std::string option_a_text;
  std::string option_b_text;
  Letter gold = Letter::A;
  std::optional<std::string> focal_statement;
  std::optional<std::string> context_text;

  const std::string& option_text(Letter l) const { return l == Letter::A ? option_a_text : option_b_text; }

  friend bool operator==(const BinaryQA&, const BinaryQA&) = default;
};

struct Rejection {
  std::size_t line = 0;  // 1-based
  std::string id;        // empty when the record had no readable id
  std::string reason;
};

struct LoadResult {
  std::vector<BinaryQA> samples;
  std::vector<Rejection> rejected;
  std::vector<std::string> warnings;

  // Throws when any record was rejected; the message lists every rejection.
  const std::vector<BinaryQA>& require_clean(std::string_view what) const {
    if (rejected.empty()) return samples;
    std::string msg = std::string(what) + ": " + std::to_string(rejected.size()) + " record(s) rejected";
    for (const auto& r : rejected)
      msg += "\n  line " + std::to_string(r.line) + (r.id.empty() ? "" : " (" + r.id + ")") + ": " + r.reason;
    throw Error(msg);
  }
};

inline nlohmann::json to_json(const BinaryQA& s) {
  nlohmann::json j = {{"id", s.id},
                      {"task", to_string(s.task)},
                      {"question", s.question_text},
                      {"option_a", s.option_a_text},
                      {"option_b", s.option_b_text},
                      {"gold", to_string(s.gold)}};
  if (s.focal_statement) j["focal_statement"] = *s.focal_statement;
  if (s.context_text) j["context"] = *s.context_text;
  return j;
}

namespace detail {

inline std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw Error(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

inline std::string req_string(const nlohmann::json& j, const char* key) {
  auto v = opt_string(j, key);
  if (!v) throw Error(std::string("missing field '") + key + "'");
  return *v;
}

// Record-level invariants shared by every loader. Returns an empty string when
// the record is acceptable.
inline std::string record_defect(const BinaryQA& s) {
  if (s.id.empty()) return "empty id";
  if (trim(s.question_text).empty()) return "empty question";
  if (trim(s.option_a_text).empty() || trim(s.option_b_text).empty()) return "empty option text";
  if (s.option_a_text == s.option_b_text) return "option texts are identical";
  return {};
}

template <typename ParseRecord>
LoadResult load_lines(const std::filesystem::path& path, ParseRecord&& parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus '" + path.string() + "'");
  LoadResult result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      result.rejected.push_back({lineno, {}, std::string("malformed JSON: ") + e.what()});
      continue;
    }
    if (!j.is_object()) {
      result.rejected.push_back({lineno, {}, "record is not an object"});
      continue;
    }
    std::string id;
    if (auto it = j.find("id"); it != j.end() && it->is_string()) id = it->get<std::string>();
    std::optional<BinaryQA> parsed;
    try {
      parsed = parse(j);
    } catch (const nlohmann::json::exception& e) {
      result.rejected.push_back({lineno, id, e.what()});
      continue;
    } catch (const Error& e) {
      result.rejected.push_back({lineno, id, e.what()});
      continue;
    }
    if (auto defect = record_defect(*parsed); !defect.empty()) {
      result.rejected.push_back({lineno, id, defect});
      continue;
    }
    if (!seen.insert(parsed->id).second)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": duplicate id '" + parsed->id + "'");
    result.samples.push_back(std::move(*parsed));
  }
  if (lineno == 0 || (result.samples.empty() && result.rejected.empty()))
    result.warnings.push_back("corpus '" + path.string() + "' is empty");
  return result;
}

}  // namespace detail

// Loads a BBH task file. Malformed records are rejected with their line
// number; a duplicate id aborts the load.
inline LoadResult load_bbh(const std::filesystem::path& path, Task task) {
  return detail::load_lines(path, [task](const nlohmann::json& j) {
    BinaryQA s;
    s.id = detail::req_string(j, "id");
    s.task = task;
    s.question_text = detail::req_string(j, "question");
    s.option_a_text = detail::req_string(j, "option_a");
    s.option_b_text = detail::req_string(j, "option_b");
    auto gold = parse_letter(detail::trim(detail::req_string(j, "gold")));
    if (!gold) throw Error("gold must be \"A\" or \"B\"");
    s.gold = *gold;
    s.focal_statement = detail::opt_string(j, "focal_statement");
    s.context_text = detail::opt_string(j, "context");
    return s;
  });
}

inline constexpr std::string_view kFinqaYes = "Yes";
inline constexpr std::string_view kFinqaNo = "No";

// Fixed answer convention for yes/no corpora: A = "Yes", B = "No".
inline std::optional<Letter> yes_no_to_letter(std::string_view answer) {
  std::string a = detail::trim(answer);
  std::transform(a.begin(), a.end(), a.begin(), [](unsigned char c) { return std::tolower(c); });
  if (a == "yes") return Letter::A;
  if (a == "no") return Letter::B;
  return std::nullopt;
}

inline std::string_view letter_to_yes_no(Letter l) { return l == Letter::A ? kFinqaYes : kFinqaNo; }

// Flattens a table row-wise: each data row becomes "header: value" clauses,
// and all clauses are joined with "; ". The first row is the header row.
inline std::string linearize_table(const std::vector<std::vector<std::string>>& table) {
  if (table.empty()) return {};
  const auto& header = table.front();
  std::vector<std::string> clauses;
  for (std::size_t r = 1; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c) {
      std::string h = c < header.size() ? detail::trim(header[c]) : std::string{};
      std::string v = detail::trim(table[r][c]);
      if (v.empty()) continue;
      clauses.push_back(h.empty() ? v : h + ": " + v);
    }
  }
  std::string out;
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i) out += "; ";
    out += clauses[i];
  }
  return out;
}

namespace detail {

inline std::string text_block(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (it->is_string()) return trim(it->get<std::string>());
  std::string out;
  for (const auto& part : *it) {
    std::string p = trim(part.get<std::string>());
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

}  // namespace detail

// Loads FinQA-derived yes/no records:
//
//   {"id": "...", "question": "...", "gold": "Yes",
//    "context": "..."}                        or
//   {"id": "...", "question": "...", "gold": "No",
//    "pre_text": [...], "table": [[...], ...], "post_text": [...]}
//
// An explicit "context" wins; otherwise context is pre_text, the linearized
// table, and post_text joined by newlines.
inline LoadResult load_finqa(const std::filesystem::path& path) {
  return detail::load_lines(path, [](const nlohmann::json& j) {
    BinaryQA s;
    s.id = detail::req_string(j, "id");
    s.task = Task::finqa;
    s.question_text = detail::req_string(j, "question");
    s.option_a_text = std::string(kFinqaYes);
    s.option_b_text = std::string(kFinqaNo);
    auto raw_gold = detail::req_string(j, "gold");
    auto gold = yes_no_to_letter(raw_gold);
    if (!gold) throw Error("gold '" + raw_gold + "' is not Yes/No (id " + s.id + ")");
    s.gold = *gold;
    if (auto ctx = detail::opt_string(j, "context")) {
      s.context_text = *ctx;
    } else {
      std::vector<std::string> parts;
      if (auto pre = detail::text_block(j, "pre_text"); !pre.empty()) parts.push_back(pre);
      if (auto it = j.find("table"); it != j.end() && !it->is_null())
        if (auto t = linearize_table(it->get<std::vector<std::vector<std::string>>>()); !t.empty())
          parts.push_back(t);
      if (auto post = detail::text_block(j, "post_text"); !post.empty()) parts.push_back(post);
      if (!parts.empty()) {
        std::string ctx;
        for (std::size_t i = 0; i < parts.size(); ++i) ctx += (i ? "\n" : "") + parts[i];
        s.context_text = std::move(ctx);
      }
    }
    return s;
  });
}

inline LoadResult load_corpus(const std::filesystem::path& path, Task task) {
  return task == Task::finqa ? load_finqa(path) : load_bbh(path, task);
}

// Converts an upstream BIG-Bench Hard task file ({"examples": [{"input",
// "target"}, ...]}) into canonical records. Sports Understanding becomes
// (A) plausible / (B) implausible with the quoted sentence as focal
// statement; the other tasks become (A) Yes / (B) No with the trailing
// "Options:" block stripped from the question.
inline std::vector<BinaryQA> convert_bbh_upstream(std::string_view json_text, Task task) {
  if (task == Task::finqa) throw Error("convert_bbh_upstream: finqa is not a BBH task");
  auto doc = nlohmann::json::parse(json_text);
  const auto& examples = doc.at("examples");
  std::vector<BinaryQA> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    std::string input = ex.at("input").get<std::string>();
    std::string target = ex.at("target").get<std::string>();
    auto gold = yes_no_to_letter(target);
    if (!gold) throw Error("example " + std::to_string(i) + ": target '" + target + "' is not yes/no");
    BinaryQA s;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "-%04zu", i + 1);
    s.id = std::string(to_string(task)) + idbuf;
    s.task = task;
    s.gold = *gold;
    if (auto opt = input.find("\nOptions:"); opt != std::string::npos) input.erase(opt);
    s.question_text = detail::trim(input);
    if (task == Task::sports_understanding) {
      s.option_a_text = "plausible";
      s.option_b_text = "implausible";
      auto q1 = input.find('"');
      auto q2 = q1 == std::string::npos ? q1 : input.rfind('"');
      if (q1 != std::string::npos && q2 > q1) {
        std::string focal = input.substr(q1 + 1, q2 - q1 - 1);
        while (!focal.empty() && (focal.back() == '.' || focal.back() == ' ')) focal.pop_back();
        if (!focal.empty()) s.focal_statement = focal;
      }
    } else {
      s.option_a_text = std::string(kFinqaYes);
      s.option_b_text = std::string(kFinqaNo);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string to_jsonl(const std::vector<BinaryQA>& samples) {
  std::string out;
  for (const auto& s : samples) out += to_json(s).dump() + "\n";
  return out;
}

struct TaskCounts {
  std::size_t total = 0;
  std::size_t ok = 0;
  std::size_t missing_focal = 0;
  std::size_t defects = 0;
};

struct SampleDefect {
  std::string id;
  std::string problem;
};

struct ValidationReport {
  std::map<Task, TaskCounts> per_task;
  std::vector<std::string> duplicate_ids;
  std::vector<SampleDefect> defects;
  std::vector<std::string> availability_ineligible;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : per_task) n += c.total;
    return n;
  }
  bool clean() const { return duplicate_ids.empty() && defects.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json tasks = nlohmann::json::object();
    for (const auto& [t, c] : per_task)
      tasks[std::string(biasprobe::to_string(t))] = {
          {"total", c.total}, {"ok", c.ok}, {"missing_focal_statement", c.missing_focal}, {"defects", c.defects}};
    nlohmann::json defs = nlohmann::json::array();
    for (const auto& d : defects) defs.push_back({{"id", d.id}, {"problem", d.problem}});
    return {{"total", total()},
            {"tasks", tasks},
            {"duplicate_ids", duplicate_ids},
            {"defects", defs},
            {"availability_ineligible", availability_ineligible}};
  }
};

// Report-only check of a corpus. A sports sample without a focal statement is
// not a defect by itself, but it cannot take availability injections.
inline ValidationReport validate_corpus(const std::vector<BinaryQA>& samples) {
  ValidationReport rep;
  std::unordered_set<std::string> seen;
  std::set<std::string> dup;
  for (const auto& s : samples) {
    auto& counts = rep.per_task[s.task];
    ++counts.total;
    bool bad = false;
    if (!seen.insert(s.id).second && dup.insert(s.id).second) rep.duplicate_ids.push_back(s.id);
    if (auto d = detail::record_defect(s); !d.empty()) {
      rep.defects.push_back({s.id, d});
      bad = true;
    }
    if (!s.focal_statement || detail::trim(*s.focal_statement).empty()) {
      if (s.task == Task::sports_understanding) {
        ++counts.missing_focal;
        rep.availability_ineligible.push_back(s.id);
      }
    }
    if (bad)
      ++counts.defects;
    else
      ++counts.ok;
  }
  return rep;
}

// Deterministic synthetic corpus for smoke tests and mock experiments. Every
// question text is distinct. With `fixed_gold` unset, golds alternate A/B
// pseudo-randomly from `seed`.
inline std::vector<BinaryQA> make_synthetic_corpus(std::size_t n, Task task, std::optional<Letter> fixed_gold,
                                                   std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::vector<BinaryQA> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    BinaryQA s;
    char idbuf[48];
    std::snprintf(idbuf, sizeof idbuf, "syn-%s-%05zu", std::string(to_string(task)).c_str(), i);
    s.id = idbuf;
    s.task = task;
    s.gold = fixed_gold ? *fixed_gold : ((rng() & 1) ? Letter::A : Letter::B);
    std::string focal = "Player " + std::to_string(i) + " scored goal number " + std::to_string(rng() % 1000);
    if (task == Task::sports_understanding) {
      s.question_text = "Is the following sentence plausible? \"" + focal + ".\"";
      s.option_a_text = "plausible";
      s.option_b_text = "implausible";
      s.focal_statement = focal;
    } else {
      s.question_text = "Synthetic question " + std::to_string(i) + ": is statement " +
                        std::to_string(rng() % 100000) + " correct?";
      s.option_a_text = std::string(kFinqaYes);
      s.option_b_text = std::string(kFinqaNo);
      s.focal_statement = focal;
      if (task == Task::finqa) s.context_text = "revenue: " + std::to_string(rng() % 9000 + 1000);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace biasprobe
