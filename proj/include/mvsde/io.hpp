#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "kernels.hpp"
#include "solver.hpp"

namespace mvsde {

/// Flat ordered `key = value` configuration.
/// Values: true/false, integers, reals, "quoted strings", bare words, [lists], kernel:<catalog name>.
class Config {
 public:
  enum class Type { boolean, integer, real, string, list, kernel };

  struct Entry {
    std::string key;
    Type type;
    /// Canonical text: trimmed value, list items joined by ", ", kernel as its catalog name.
    std::string text;
    std::vector<std::string> items;
  };

  static Config parse(const std::string& body, const std::string& origin = "<config>") {
    Config cfg;
    std::istringstream in(body);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = find_comment(line);
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        fail(ErrorKind::InvalidArgument, origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty()) fail(ErrorKind::InvalidArgument, origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.set_raw(key, val);
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot open config '" + path + "': " + std::strerror(errno));
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  /// Inserts or replaces; replacing keeps the original position.
  void set_raw(const std::string& key, const std::string& raw) {
    Entry e = classify(key, trim(raw));
    for (auto& x : entries_)
      if (x.key == key) {
        x = std::move(e);
        return;
      }
    entries_.push_back(std::move(e));
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::string get_string(const std::string& key, const std::string& def = "") const {
    const Entry* e = find(key);
    return e ? e->text : def;
  }
  double get_double(const std::string& key, double def) const {
    const Entry* e = find(key);
    return e ? to_double(key, e->text) : def;
  }
  long long get_int(const std::string& key, long long def) const {
    const Entry* e = find(key);
    if (!e) return def;
    if (e->type != Type::integer) fail(ErrorKind::InvalidArgument, "config key '" + key + "' must be an integer");
    return std::stoll(e->text);
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    const Entry* e = find(key);
    if (!e) return def;
    if (e->type != Type::integer || e->text[0] == '-')
      fail(ErrorKind::InvalidArgument, "config key '" + key + "' must be a nonnegative integer");
    return std::stoull(e->text);
  }
  bool get_bool(const std::string& key, bool def) const {
    const Entry* e = find(key);
    if (!e) return def;
    if (e->type != Type::boolean) fail(ErrorKind::InvalidArgument, "config key '" + key + "' must be true or false");
    return e->text == "true";
  }
  /// A scalar reads as a one-element list.
  std::vector<std::string> get_items(const std::string& key, std::vector<std::string> def = {}) const {
    const Entry* e = find(key);
    if (!e) return def;
    return e->type == Type::list ? e->items : std::vector<std::string>{e->text};
  }
  std::vector<double> get_doubles(const std::string& key, std::vector<double> def = {}) const {
    const Entry* e = find(key);
    if (!e) return def;
    std::vector<double> out;
    for (const auto& s : get_items(key)) out.push_back(to_double(key, s));
    return out;
  }
  /// Kernel reference by catalog name; accepts `kernel:name` or a bare name.
  KernelSpec get_kernel(const std::string& key, int dim, const std::string& def = "zero") const {
    const Entry* e = find(key);
    return kernel_catalog(e ? e->text : def, dim);
  }

  /// Canonical serialization: one `key = value` per line in insertion order.
  std::string canonical() const {
    std::string out;
    for (const auto& e : entries_) {
      out += e.key + " = ";
      if (e.type == Type::list)
        out += "[" + e.text + "]";
      else if (e.type == Type::kernel)
        out += "kernel:" + e.text;
      else if (e.type == Type::string)
        out += "\"" + e.text + "\"";
      else
        out += e.text;
      out += "\n";
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;

  const Entry* find(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }

  static std::size_t find_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return i;
    }
    return std::string::npos;
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static bool is_integer(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
  }

  static bool is_real(const std::string& s) {
    if (s == "inf" || s == "-inf") return true;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return !s.empty() && end == s.c_str() + s.size();
  }

  static double to_double(const std::string& key, const std::string& s) {
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (!is_real(s)) fail(ErrorKind::InvalidArgument, "config key '" + key + "' expects a number, got '" + s + "'");
    return std::strtod(s.c_str(), nullptr);
  }

  static Entry classify(const std::string& key, const std::string& v) {
    Entry e{key, Type::string, v, {}};
    if (v == "true" || v == "false") {
      e.type = Type::boolean;
    } else if (is_integer(v)) {
      e.type = Type::integer;
    } else if (is_real(v)) {
      e.type = Type::real;
    } else if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
      e.text = v.substr(1, v.size() - 2);
    } else if (v.rfind("kernel:", 0) == 0) {
      e.type = Type::kernel;
      e.text = trim(v.substr(7));
      kernel_catalog(e.text, 1);
    } else if (!v.empty() && v.front() == '[') {
      if (v.back() != ']') fail(ErrorKind::InvalidArgument, "config key '" + key + "': unterminated list");
      e.type = Type::list;
      std::string body = v.substr(1, v.size() - 2);
      std::istringstream ss(body);
      std::string item;
      e.text.clear();
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = item.substr(1, item.size() - 2);
        if (!e.items.empty()) e.text += ", ";
        e.text += item;
        e.items.push_back(item);
      }
    }
    return e;
  }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const Config& cfg) { return hex64(fnv1a64(cfg.canonical())); }

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open '" + path + "' for writing: " + std::strerror(errno));
  f << body;
  if (!f) fail(ErrorKind::Io, "write to '" + path + "' failed: " + std::strerror(errno));
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open '" + path + "': " + std::strerror(errno));
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Flow binary layout, all little-endian:
//   char[4] "MVSF", u32 version (1), u32 dim, u32 points, f64 extent, u64 ntimes,
//   f64 times[ntimes], then ntimes blocks of points^dim f64 densities (row-major, x slowest).

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) fail(ErrorKind::Io, "flow binary is truncated");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string encode_flow(const std::vector<double>& times, const std::vector<ScalarField>& densities) {
  require(!densities.empty() && times.size() == densities.size(), "flow needs one density per time");
  const GridSpec g = densities.front().grid;
  std::string out = "MVSF";
  detail::put_le<std::uint32_t>(out, 1);
  detail::put_le<std::uint32_t>(out, std::uint32_t(g.dim));
  detail::put_le<std::uint32_t>(out, std::uint32_t(g.points));
  detail::put_le<double>(out, g.extent);
  detail::put_le<std::uint64_t>(out, times.size());
  for (double t : times) detail::put_le<double>(out, t);
  for (const auto& f : densities) {
    require_same_grid(f.grid, g);
    for (double v : f.values) detail::put_le<double>(out, v);
  }
  return out;
}

struct DecodedFlow {
  GridSpec grid;
  std::vector<double> times;
  std::vector<ScalarField> densities;
};

inline DecodedFlow decode_flow(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "MVSF") != 0) fail(ErrorKind::Io, "not a flow binary (bad magic)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != 1) fail(ErrorKind::Io, "unsupported flow binary version " + std::to_string(version));
  DecodedFlow out;
  out.grid.dim = int(detail::get_le<std::uint32_t>(bytes, pos));
  out.grid.points = int(detail::get_le<std::uint32_t>(bytes, pos));
  out.grid.extent = detail::get_le<double>(bytes, pos);
  out.grid.validate();
  const auto nt = detail::get_le<std::uint64_t>(bytes, pos);
  for (std::uint64_t i = 0; i < nt; ++i) out.times.push_back(detail::get_le<double>(bytes, pos));
  for (std::uint64_t i = 0; i < nt; ++i) {
    ScalarField f(out.grid);
    for (double& v : f.values) v = detail::get_le<double>(bytes, pos);
    out.densities.push_back(std::move(f));
  }
  if (pos != bytes.size()) fail(ErrorKind::Io, "flow binary has trailing bytes");
  return out;
}

inline void write_flow_binary(const std::string& path, const MeasureFlow& flow) {
  write_text_file(path, encode_flow(flow.times, flow.densities));
}

/// Long format: t, x[, y], density.
inline std::string flow_csv(const std::vector<double>& times, const std::vector<ScalarField>& densities) {
  require(times.size() == densities.size(), "flow needs one density per time");
  std::string out = densities.empty() || densities.front().grid.dim == 1 ? "t,x,density\n" : "t,x,y,density\n";
  for (std::size_t i = 0; i < times.size(); ++i) {
    const GridSpec& g = densities[i].grid;
    const std::string ts = format_double(times[i]);
    for (int a = 0; a < g.points; ++a) {
      if (g.dim == 1) {
        out += ts + "," + format_double(g.coord(a)) + "," + format_double(densities[i].values[std::size_t(a)]) + "\n";
      } else {
        for (int b = 0; b < g.points; ++b)
          out += ts + "," + format_double(g.coord(a)) + "," + format_double(g.coord(b)) + "," +
                 format_double(densities[i].values[std::size_t(a) * g.points + b]) + "\n";
      }
    }
  }
  return out;
}

}  // namespace mvsde
