#pragma once

// Line-oriented text dumps shared by every model type.
//
//   flowuq-<kind> <version>
//   <key> <n> <v1> ... <vn>      numeric array
//   <key> = <text>               string value (rest of line)
//
// Doubles are written in shortest round-trip form (std::to_chars), so a dump
// reloads bit-for-bit.

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "flowuq/error.hpp"
#include "flowuq/num_core.hpp"

namespace flowuq {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  // from_chars rejects a leading '+', which some CSV writers emit.
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("cannot parse number '" + std::string(s) + "'");
  return v;
}

class DumpWriter {
 public:
  DumpWriter(std::ostream& os, std::string_view kind, int version) : os_(os) {
    os_ << "flowuq-" << kind << ' ' << version << '\n';
  }

  void text(std::string_view key, std::string_view value) {
    os_ << key << " = " << value << '\n';
  }

  void values(std::string_view key, std::span<const double> v) {
    os_ << key << ' ' << v.size();
    for (double x : v) os_ << ' ' << format_double(x);
    os_ << '\n';
  }

  void value(std::string_view key, double v) { values(key, std::span<const double>(&v, 1)); }

  template <class Int>
  void integers(std::string_view key, std::span<const Int> v) {
    os_ << key << ' ' << v.size();
    for (Int x : v) os_ << ' ' << x;
    os_ << '\n';
  }

  void integer(std::string_view key, std::int64_t v) {
    integers(key, std::span<const std::int64_t>(&v, 1));
  }

  void matrix(std::string_view key, const Matrix& m) {
    integer(std::string(key) + ".rows", static_cast<std::int64_t>(m.rows()));
    integer(std::string(key) + ".cols", static_cast<std::int64_t>(m.cols()));
    values(std::string(key) + ".data", m.data());
  }

 private:
  std::ostream& os_;
};

/// Reads a whole dump into a key map; accessors throw FormatError on
/// missing keys so corrupt files fail loudly.
class DumpReader {
 public:
  DumpReader(std::istream& is, std::string_view kind, int max_version) {
    std::string magic;
    if (!(is >> magic >> version_))
      throw FormatError("dump: missing header");
    if (magic != "flowuq-" + std::string(kind))
      throw FormatError("dump: expected flowuq-" + std::string(kind) + ", found " + magic);
    if (version_ < 1 || version_ > max_version)
      throw FormatError("dump: unsupported version " + std::to_string(version_));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto sp = line.find(' ');
      if (sp == std::string::npos) throw FormatError("dump: malformed line '" + line + "'");
      std::string key = line.substr(0, sp);
      std::string rest = line.substr(sp + 1);
      if (rest.rfind("= ", 0) == 0) {
        texts_[key] = rest.substr(2);
        continue;
      }
      std::vector<std::string> tokens;
      std::size_t pos = 0;
      while (pos < rest.size()) {
        auto next = rest.find(' ', pos);
        if (next == std::string::npos) next = rest.size();
        if (next > pos) tokens.push_back(rest.substr(pos, next - pos));
        pos = next + 1;
      }
      if (tokens.empty()) throw FormatError("dump: missing count for " + key);
      std::size_t n = static_cast<std::size_t>(parse_double(tokens[0]));
      if (tokens.size() != n + 1) throw FormatError("dump: count mismatch for " + key);
      tokens.erase(tokens.begin());
      arrays_[key] = std::move(tokens);
    }
  }

  int version() const noexcept { return version_; }
  bool has(const std::string& key) const { return arrays_.count(key) || texts_.count(key); }

  const std::string& text(const std::string& key) const {
    auto it = texts_.find(key);
    if (it == texts_.end()) throw FormatError("dump: missing key " + key);
    return it->second;
  }

  std::vector<double> values(const std::string& key) const {
    std::vector<double> out;
    for (const auto& t : tokens(key)) out.push_back(parse_double(t));
    return out;
  }

  double value(const std::string& key) const {
    auto v = values(key);
    if (v.size() != 1) throw FormatError("dump: expected scalar for " + key);
    return v[0];
  }

  template <class Int = std::int64_t>
  std::vector<Int> integers(const std::string& key) const {
    std::vector<Int> out;
    for (const auto& t : tokens(key)) {
      Int v{};
      auto res = std::from_chars(t.data(), t.data() + t.size(), v);
      if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw FormatError("dump: bad integer in " + key);
      out.push_back(v);
    }
    return out;
  }

  std::int64_t integer(const std::string& key) const {
    auto v = integers(key);
    if (v.size() != 1) throw FormatError("dump: expected scalar for " + key);
    return v[0];
  }

  Matrix matrix(const std::string& key) const {
    auto r = static_cast<std::size_t>(integer(key + ".rows"));
    auto c = static_cast<std::size_t>(integer(key + ".cols"));
    auto d = values(key + ".data");
    if (d.size() != r * c) throw FormatError("dump: matrix size mismatch for " + key);
    return Matrix(r, c, std::move(d));
  }

 private:
  const std::vector<std::string>& tokens(const std::string& key) const {
    auto it = arrays_.find(key);
    if (it == arrays_.end()) throw FormatError("dump: missing key " + key);
    return it->second;
  }

  int version_ = 0;
  std::map<std::string, std::vector<std::string>> arrays_;
  std::map<std::string, std::string> texts_;
};

}  // namespace flowuq
