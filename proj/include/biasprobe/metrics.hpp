#pragma once

// Accuracies, biased-vs-baseline differences with t-test significance, and
// report tables.

#include <cmath>
#include <limits>
#include <span>
#include <unordered_map>

#include "biasprobe/scoring.hpp"

namespace biasprobe {

namespace stats {

// Regularized incomplete beta I_x(a, b), continued fraction evaluated with the
// modified Lentz method.
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw Error("incomplete_beta: a and b must be positive");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;

  auto continued_fraction = [](double a, double b, double x) {
    constexpr int kMaxIter = 1000;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1, d = 1 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
      int m2 = 2 * m;
      double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
      d = 1 + aa * d;
      if (std::fabs(d) < kTiny) d = kTiny;
      c = 1 + aa / c;
      if (std::fabs(c) < kTiny) c = kTiny;
      d = 1 / d;
      h *= d * c;
      aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
      d = 1 + aa * d;
      if (std::fabs(d) < kTiny) d = kTiny;
      c = 1 + aa / c;
      if (std::fabs(c) < kTiny) c = kTiny;
      d = 1 / d;
      double del = d * c;
      h *= del;
      if (std::fabs(del - 1) < kEps) return h;
    }
    throw Error("incomplete_beta: continued fraction did not converge");
  };

  double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(log_front);
  if (x < (a + 1) / (a + b + 2)) return front * continued_fraction(a, b, x) / a;
  return 1 - front * continued_fraction(b, a, 1 - x) / b;
}

// Two-sided p-value P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double t_two_sided_p(double t, double df) {
  if (!(df > 0)) throw Error("t_two_sided_p: df must be positive");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  double x = df / (df + t * t);
  return incomplete_beta(df / 2, 0.5, x);
}

}  // namespace stats

enum class Stars { ns, one, two, three };

inline Stars stars_for(double p) {
  if (p < 0.001) return Stars::three;
  if (p < 0.01) return Stars::two;
  if (p < 0.05) return Stars::one;
  return Stars::ns;
}

inline std::string_view to_string(Stars s) {
  switch (s) {
    case Stars::ns: return "ns";
    case Stars::one: return "*";
    case Stars::two: return "**";
    case Stars::three: return "***";
  }
  return "?";
}

inline Stars parse_stars(std::string_view s) {
  if (s == "ns") return Stars::ns;
  if (s == "*") return Stars::one;
  if (s == "**") return Stars::two;
  if (s == "***") return Stars::three;
  throw Error("unknown significance marker '" + std::string(s) + "'");
}

// One per-sample outcome: correctness in [0, 1] (a fraction when a prompt was
// sent more than once).
struct Outcome {
  std::string id;
  double value = 0;
};

// 100 * mean(correct).
inline double accuracy(std::span<const double> correct) {
  if (correct.empty()) throw Error("accuracy: empty indicator list");
  double sum = 0;
  for (double c : correct) sum += c;
  return 100.0 * sum / static_cast<double>(correct.size());
}

inline double accuracy(std::span<const Outcome> outcomes) {
  std::vector<double> v;
  v.reserve(outcomes.size());
  for (const auto& o : outcomes) v.push_back(o.value);
  return accuracy(v);
}

enum class TestMethod { paired, unpaired };

inline std::string_view to_string(TestMethod m) { return m == TestMethod::paired ? "paired" : "unpaired"; }

inline TestMethod parse_test_method(std::string_view s) {
  if (s == "paired") return TestMethod::paired;
  if (s == "unpaired") return TestMethod::unpaired;
  throw Error("unknown test method '" + std::string(s) + "'");
}

struct DeltaStats {
  // Row identity.
  Task task = Task::sports_understanding;
  std::string model;
  InjectionType itype = InjectionType::unbiased;
  Position position = Position::tail;
  TestMethod method = TestMethod::paired;

  std::size_t n = 0;
  double acc_base = 0;    // %
  double acc_biased = 0;  // %
  double diff = 0;        // percentage points, biased - baseline
  double se = 0;          // percentage points
  double t = 0;
  double df = 0;
  double p = 1;
  Stars stars = Stars::ns;

  std::size_t unparseable_base = 0;
  std::size_t unparseable_biased = 0;
  std::size_t excluded = 0;

  bool is_baseline() const { return itype == InjectionType::unbiased; }

  friend bool operator==(const DeltaStats&, const DeltaStats&) = default;
};

namespace detail {

inline void finish_t_test(DeltaStats& s, double mean_diff, double se_unit) {
  s.diff = 100.0 * mean_diff;
  s.se = 100.0 * se_unit;
  if (se_unit > 0) {
    s.t = mean_diff / se_unit;
    s.p = stats::t_two_sided_p(s.t, s.df);
  } else if (mean_diff == 0) {
    s.t = 0;
    s.p = 1.0;
  } else {
    // Every pair moved the same way: zero spread with a non-zero shift.
    s.t = mean_diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    s.p = 0.0;
  }
  s.stars = stars_for(s.p);
}

inline std::string list_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < 20; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > 20) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

}  // namespace detail

// Paired t-test on per-sample differences d_i = biased_i - base_i, matched by
// id. Requires identical id sets and at least two pairs.
inline DeltaStats paired_delta(std::span<const Outcome> base, std::span<const Outcome> biased) {
  std::unordered_map<std::string, double> base_by_id;
  for (const auto& o : base)
    if (!base_by_id.emplace(o.id, o.value).second) throw Error("paired_delta: duplicate baseline id '" + o.id + "'");

  std::vector<std::string> unmatched;
  std::vector<double> d;
  d.reserve(biased.size());
  std::unordered_map<std::string, bool> used;
  double sum_base = 0, sum_biased = 0;
  for (const auto& o : biased) {
    auto it = base_by_id.find(o.id);
    if (it == base_by_id.end()) {
      unmatched.push_back(o.id);
      continue;
    }
    if (!used.emplace(o.id, true).second) throw Error("paired_delta: duplicate biased id '" + o.id + "'");
    d.push_back(o.value - it->second);
    sum_base += it->second;
    sum_biased += o.value;
  }
  for (const auto& o : base)
    if (!used.count(o.id)) unmatched.push_back(o.id);
  if (!unmatched.empty()) throw Error("paired_delta: unmatched ids: " + detail::list_ids(unmatched));
  if (d.size() < 2) throw Error("paired_delta: at least two paired samples are required");

  DeltaStats s;
  s.method = TestMethod::paired;
  s.n = d.size();
  const double n = static_cast<double>(d.size());
  s.acc_base = 100.0 * sum_base / n;
  s.acc_biased = 100.0 * sum_biased / n;
  double mean = 0;
  for (double x : d) mean += x;
  mean /= n;
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / (n - 1));
  s.df = n - 1;
  detail::finish_t_test(s, mean, sd / std::sqrt(n));
  return s;
}

// Welch t-test treating the two prompt conditions as independent samples.
inline DeltaStats unpaired_delta(std::span<const Outcome> base, std::span<const Outcome> biased) {
  if (base.size() < 2 || biased.size() < 2) throw Error("unpaired_delta: each side needs at least two samples");
  auto moments = [](std::span<const Outcome> xs) {
    double m = 0;
    for (const auto& o : xs) m += o.value;
    m /= static_cast<double>(xs.size());
    double ss = 0;
    for (const auto& o : xs) ss += (o.value - m) * (o.value - m);
    return std::pair{m, ss / static_cast<double>(xs.size() - 1)};
  };
  auto [mb, vb] = moments(base);
  auto [mx, vx] = moments(biased);
  const double nb = static_cast<double>(base.size()), nx = static_cast<double>(biased.size());
  DeltaStats s;
  s.method = TestMethod::unpaired;
  s.n = std::min(base.size(), biased.size());
  s.acc_base = 100.0 * mb;
  s.acc_biased = 100.0 * mx;
  double qb = vb / nb, qx = vx / nx;
  double se = std::sqrt(qb + qx);
  double denom = (nb > 1 ? qb * qb / (nb - 1) : 0) + (nx > 1 ? qx * qx / (nx - 1) : 0);
  s.df = denom > 0 ? (qb + qx) * (qb + qx) / denom : nb + nx - 2;
  detail::finish_t_test(s, mx - mb, se);
  return s;
}

// Baseline row: accuracy only, difference rendered as "/".
inline DeltaStats baseline_stats(std::span<const Outcome> base) {
  DeltaStats s;
  s.n = base.size();
  s.acc_base = s.acc_biased = accuracy(base);
  return s;
}

inline nlohmann::json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double number_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw Error("bad numeric value '" + s + "'");
}

inline nlohmann::json to_json(const DeltaStats& s) {
  return {{"task", to_string(s.task)},
          {"model", s.model},
          {"itype", to_string(s.itype)},
          {"position", to_string(s.position)},
          {"method", to_string(s.method)},
          {"n", s.n},
          {"acc_base", s.acc_base},
          {"acc_biased", s.acc_biased},
          {"diff", s.diff},
          {"se", s.se},
          {"t", number_or_string(s.t)},
          {"df", s.df},
          {"p", s.p},
          {"stars", to_string(s.stars)},
          {"unparseable_base", s.unparseable_base},
          {"unparseable_biased", s.unparseable_biased},
          {"excluded", s.excluded}};
}

inline DeltaStats delta_stats_from_json(const nlohmann::json& j) {
  DeltaStats s;
  s.task = parse_task(j.at("task").get<std::string>());
  s.model = j.at("model").get<std::string>();
  s.itype = parse_injection_type(j.at("itype").get<std::string>());
  s.position = parse_position(j.at("position").get<std::string>());
  s.method = parse_test_method(j.at("method").get<std::string>());
  s.n = j.at("n").get<std::size_t>();
  s.acc_base = j.at("acc_base").get<double>();
  s.acc_biased = j.at("acc_biased").get<double>();
  s.diff = j.at("diff").get<double>();
  s.se = j.at("se").get<double>();
  s.t = number_from_json(j.at("t"));
  s.df = j.at("df").get<double>();
  s.p = j.at("p").get<double>();
  s.stars = parse_stars(j.at("stars").get<std::string>());
  s.unparseable_base = j.value("unparseable_base", std::size_t{0});
  s.unparseable_biased = j.value("unparseable_biased", std::size_t{0});
  s.excluded = j.value("excluded", std::size_t{0});
  return s;
}

// "-17.13 (2.38)***"; the baseline renders as "/".
inline std::string format_difference(const DeltaStats& s) {
  if (s.is_baseline()) return "/";
  std::string out = detail::fixed(s.diff, 2) + " (" + detail::fixed(s.se, 2) + ")";
  if (s.stars != Stars::ns) out += to_string(s.stars);
  return out;
}

struct ReportRow {
  Task task;
  InjectionType itype;
  Position position;
  std::string label;                     // injection-type column text
  std::vector<const DeltaStats*> cells;  // one per model column, may be null
};

struct ReportTable {
  std::vector<std::string> models;
  std::vector<ReportRow> rows;
  std::vector<DeltaStats> stats;  // owned; rows point into it

  ReportTable() = default;
  ReportTable(const ReportTable&) = delete;
  ReportTable& operator=(const ReportTable&) = delete;
  ReportTable(ReportTable&&) = default;
  ReportTable& operator=(ReportTable&&) = default;

  std::string render_text() const;
  std::string render_csv() const;
};

// Builds the table: tasks in fixed order, then baseline, confirmation, and
// availability rows. Each non-baseline row needs a baseline row for the same
// (task, model).
inline ReportTable render_table(std::vector<DeltaStats> all) {
  ReportTable table;
  table.stats = std::move(all);
  for (const auto& s : table.stats)
    if (std::find(table.models.begin(), table.models.end(), s.model) == table.models.end())
      table.models.push_back(s.model);

  std::vector<std::string> missing;
  for (const auto& s : table.stats) {
    if (s.is_baseline()) continue;
    bool found = std::any_of(table.stats.begin(), table.stats.end(), [&](const DeltaStats& b) {
      return b.is_baseline() && b.task == s.task && b.model == s.model;
    });
    if (!found) missing.push_back(std::string(to_string(s.task)) + "/" + s.model);
  }
  if (!missing.empty()) throw Error("render_table: missing baseline row for " + detail::list_ids(missing));

  std::set<Position> positions;
  for (const auto& s : table.stats)
    if (!s.is_baseline()) positions.insert(s.position);
  const bool label_positions = positions.size() > 1;

  for (Task task : kAllTasks)
    for (InjectionType itype : kAllInjectionTypes)
      for (Position pos : kAllPositions) {
        ReportRow row{task, itype, pos, std::string(display_name(itype)), {}};
        if (label_positions && itype != InjectionType::unbiased) row.label += " [" + std::string(to_string(pos)) + "]";
        bool any = false;
        for (const auto& m : table.models) {
          const DeltaStats* cell = nullptr;
          for (const auto& s : table.stats)
            if (s.task == task && s.itype == itype && s.model == m &&
                (itype == InjectionType::unbiased || s.position == pos)) {
              cell = &s;
              break;
            }
          any |= cell != nullptr;
          row.cells.push_back(cell);
        }
        if (!any) continue;
        if (itype == InjectionType::unbiased) {
          bool dup = std::any_of(table.rows.begin(), table.rows.end(), [&](const ReportRow& r) {
            return r.task == task && r.itype == InjectionType::unbiased;
          });
          if (dup) continue;
        }
        table.rows.push_back(std::move(row));
      }
  return table;
}

inline std::string ReportTable::render_text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"Task", "Injection Type"};
  for (const auto& m : models) {
    header.push_back(m + " Accuracy (%)");
    header.push_back(m + " Difference (%)");
  }
  grid.push_back(header);
  Task last_task{};
  bool first = true;
  for (const auto& r : rows) {
    std::vector<std::string> line;
    line.push_back(first || r.task != last_task ? std::string(display_name(r.task)) : "");
    first = false;
    last_task = r.task;
    line.push_back(r.label);
    for (const auto* c : r.cells) {
      line.push_back(c ? detail::fixed(c->acc_biased, 2) : "");
      line.push_back(c ? format_difference(*c) : "");
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::string out;
  auto emit = [&](const std::vector<std::string>& line) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) text += " | ";
      text += line[i] + std::string(width[i] - line[i].size(), ' ');
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + "\n";
  };
  emit(grid[0]);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 3 * (width.size() - 1), '-') + "\n";
  for (std::size_t i = 1; i < grid.size(); ++i) emit(grid[i]);
  out += "(Note: *p<5% **p<1% ***p<0.1%)\n";
  return out;
}

inline constexpr std::string_view kCsvHeader =
    "task,itype,position,model,method,n,acc_base,acc_biased,diff,se,t,df,p,stars,"
    "unparseable_base,unparseable_biased,excluded,accuracy_display,difference_display";

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = std::stod(s, &used);
  if (used != s.size()) throw Error("bad number '" + s + "'");
  return v;
}

}  // namespace detail

// Long-format CSV in row order, full precision plus the display strings.
inline std::string ReportTable::render_csv() const {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows)
    for (const auto* c : r.cells) {
      if (!c) continue;
      const auto& s = *c;
      std::vector<std::string> f = {std::string(to_string(s.task)),
                                    std::string(to_string(s.itype)),
                                    std::string(to_string(s.position)),
                                    s.model,
                                    std::string(to_string(s.method)),
                                    std::to_string(s.n),
                                    detail::exact(s.acc_base),
                                    detail::exact(s.acc_biased),
                                    detail::exact(s.diff),
                                    detail::exact(s.se),
                                    detail::exact(s.t),
                                    detail::exact(s.df),
                                    detail::exact(s.p),
                                    std::string(to_string(s.stars)),
                                    std::to_string(s.unparseable_base),
                                    std::to_string(s.unparseable_biased),
                                    std::to_string(s.excluded),
                                    detail::fixed(s.acc_biased, 2),
                                    format_difference(s)};
      for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + detail::csv_field(f[i]);
      out += "\n";
    }
  return out;
}

inline std::vector<DeltaStats> parse_table_csv(std::string_view csv) {
  std::vector<DeltaStats> out;
  auto lines = detail::split(csv, '\n');
  if (lines.empty() || lines[0] != kCsvHeader) throw Error("table CSV: unexpected header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = detail::parse_csv_line(lines[i]);
    if (f.size() != 19) throw Error("table CSV line " + std::to_string(i + 1) + ": expected 19 fields");
    DeltaStats s;
    s.task = parse_task(f[0]);
    s.itype = parse_injection_type(f[1]);
    s.position = parse_position(f[2]);
    s.model = f[3];
    s.method = parse_test_method(f[4]);
    s.n = std::stoull(f[5]);
    s.acc_base = detail::parse_double(f[6]);
    s.acc_biased = detail::parse_double(f[7]);
    s.diff = detail::parse_double(f[8]);
    s.se = detail::parse_double(f[9]);
    s.t = detail::parse_double(f[10]);
    s.df = detail::parse_double(f[11]);
    s.p = detail::parse_double(f[12]);
    s.stars = parse_stars(f[13]);
    s.unparseable_base = std::stoull(f[14]);
    s.unparseable_biased = std::stoull(f[15]);
    s.excluded = std::stoull(f[16]);
    out.push_back(s);
  }
  return out;
}

struct StatsOptions {
  TestMethod method = TestMethod::paired;
  bool only_misleading = false;
};

// Groups indicators by (task, model) and computes one baseline row plus one
// DeltaStats per (itype, position). Repeats of the same prompt are averaged
// per sample; unbiased prompts are deduplicated per sample across positions.
inline std::vector<DeltaStats> compute_stats(const std::vector<CorrectnessIndicator>& indicators,
                                             const StatsOptions& opts = {}) {
  struct CellKey {
    Task task;
    std::string model;
    InjectionType itype;
    Position position;
    auto operator<=>(const CellKey&) const = default;
  };
  struct Acc {
    double sum = 0;
    int count = 0;
    bool excluded = false;
    bool unparseable = false;
    bool misleading = true;
    std::set<int> repeats;
  };
  // Per cell: sample id -> aggregated correctness, in first-seen order.
  std::map<CellKey, std::vector<std::pair<std::string, Acc>>> cells;
  std::map<CellKey, std::unordered_map<std::string, std::size_t>> index;

  for (const auto& ind : indicators) {
    const bool baseline = ind.itype == InjectionType::unbiased;
    CellKey key{ind.task, ind.model, ind.itype, baseline ? Position::tail : ind.position};
    auto& idx = index[key];
    auto& vec = cells[key];
    auto [it, fresh] = idx.emplace(ind.sample_id, vec.size());
    if (fresh) vec.push_back({ind.sample_id, {}});
    auto& acc = vec[it->second].second;
    if (!acc.repeats.insert(ind.repeat).second) {
      if (baseline) continue;  // same unbiased prompt under another position label
      throw Error("compute_stats: duplicate indicator for " + ind.sample_id + " / " +
                  std::string(to_string(ind.itype)) + " / " + std::string(to_string(ind.position)));
    }
    if (ind.excluded) acc.excluded = true;
    if (!ind.parseable) acc.unparseable = true;
    acc.misleading = ind.misleading();
    acc.sum += ind.correct ? 1.0 : 0.0;
    ++acc.count;
  }

  std::vector<DeltaStats> out;
  std::set<std::pair<Task, std::string>> groups;
  for (const auto& [k, _] : cells) groups.insert({k.task, k.model});

  for (const auto& [task, model] : groups) {
    auto base_it = cells.find(CellKey{task, model, InjectionType::unbiased, Position::tail});
    if (base_it == cells.end())
      throw Error("compute_stats: no unbiased indicators for " + std::string(to_string(task)) + "/" + model);
    const auto& base_cell = base_it->second;

    std::vector<Outcome> base_all;
    std::size_t base_unparseable = 0;
    for (const auto& [id, acc] : base_cell) {
      if (acc.unparseable) ++base_unparseable;
      if (!acc.excluded) base_all.push_back({id, acc.sum / acc.count});
    }
    if (base_all.empty()) throw Error("compute_stats: every baseline item excluded for " + model);
    DeltaStats b = baseline_stats(base_all);
    b.task = task;
    b.model = model;
    b.method = opts.method;
    b.unparseable_base = b.unparseable_biased = base_unparseable;
    b.excluded = base_cell.size() - base_all.size();
    out.push_back(b);

    std::unordered_map<std::string, const Acc*> base_by_id;
    for (const auto& [id, acc] : base_cell) base_by_id.emplace(id, &acc);

    for (const auto& [key, cell] : cells) {
      if (key.task != task || key.model != model || key.itype == InjectionType::unbiased) continue;
      std::vector<Outcome> xb, xs;
      std::size_t unp_biased = 0, excluded = 0, unp_base = 0;
      for (const auto& [id, acc] : cell) {
        auto bit = base_by_id.find(id);
        if (bit == base_by_id.end()) throw Error("compute_stats: no baseline indicator for sample '" + id + "'");
        if (opts.only_misleading && !acc.misleading) continue;
        if (acc.unparseable) ++unp_biased;
        if (bit->second->unparseable) ++unp_base;
        if (acc.excluded || bit->second->excluded) {
          ++excluded;
          continue;
        }
        xb.push_back({id, bit->second->sum / bit->second->count});
        xs.push_back({id, acc.sum / acc.count});
      }
      if (xs.size() < 2) continue;
      DeltaStats s = opts.method == TestMethod::paired ? paired_delta(xb, xs) : unpaired_delta(xb, xs);
      s.task = task;
      s.model = model;
      s.itype = key.itype;
      s.position = key.position;
      s.unparseable_base = unp_base;
      s.unparseable_biased = unp_biased;
      s.excluded = excluded;
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace biasprobe
