#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <filesystem>

namespace biasprobe {

// Base class for every error raised by the library. Messages are meant to be
// shown to the user as-is.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Letter { A, B };

inline char to_char(Letter l) { return l == Letter::A ? 'A' : 'B'; }
inline std::string to_string(Letter l) { return std::string(1, to_char(l)); }
inline Letter other(Letter l) { return l == Letter::A ? Letter::B : Letter::A; }

inline std::optional<Letter> parse_letter(std::string_view s) {
  if (s == "A" || s == "a") return Letter::A;
  if (s == "B" || s == "b") return Letter::B;
  return std::nullopt;
}

enum class Task { sports_understanding, causal_judgment, navigate, finqa };

inline constexpr Task kAllTasks[] = {Task::sports_understanding, Task::causal_judgment,
                                     Task::navigate, Task::finqa};

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::sports_understanding: return "sports_understanding";
    case Task::causal_judgment: return "causal_judgment";
    case Task::navigate: return "navigate";
    case Task::finqa: return "finqa";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  for (Task t : kAllTasks)
    if (to_string(t) == s) return t;
  throw Error("unknown task '" + std::string(s) + "'");
}

// Human-readable task name used in rendered tables.
inline std::string_view display_name(Task t) {
  switch (t) {
    case Task::sports_understanding: return "Sports Understanding";
    case Task::causal_judgment: return "Causal Judgment";
    case Task::navigate: return "Navigate";
    case Task::finqa: return "FinQA";
  }
  return "?";
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.size() - start : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file and renames, so readers never observe a
// half-written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

// Fixed-point rendering with `digits` decimals ("%.2f").
inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

// Shortest decimal text that round-trips a double (17 significant digits).
inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail
}  // namespace biasprobe
