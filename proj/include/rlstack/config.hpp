#pragma once

// Flat namespaced key = value configuration with typed values, plus variant
// grids (cartesian products over per-key value lists).

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rlstack {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { integer, real, boolean, string, int_list };

using ConfigValue = std::variant<std::int64_t, double, bool, std::string, std::vector<std::int64_t>>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_int(std::string_view s, std::int64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_real(std::string_view s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

inline std::string type_name(ValueType t) {
  switch (t) {
    case ValueType::integer: return "integer";
    case ValueType::real: return "float";
    case ValueType::boolean: return "bool";
    case ValueType::string: return "string";
    case ValueType::int_list: return "integer list";
  }
  return "?";
}

/// Parses `text` as type `t`; throws ConfigError with a short reason.
inline ConfigValue parse_value(ValueType t, std::string_view text) {
  text = detail::trim(text);
  switch (t) {
    case ValueType::integer: {
      std::int64_t v;
      if (!detail::parse_int(text, v)) throw ConfigError("expected an integer, got '" + std::string(text) + "'");
      return v;
    }
    case ValueType::real: {
      double v;
      if (!detail::parse_real(text, v)) throw ConfigError("expected a number, got '" + std::string(text) + "'");
      return v;
    }
    case ValueType::boolean:
      if (text == "true") return true;
      if (text == "false") return false;
      throw ConfigError("expected true or false, got '" + std::string(text) + "'");
    case ValueType::string:
      if (text.empty()) throw ConfigError("empty string value");
      for (char c : text)
        if (c == '#' || c == '=' || c == ' ' || c == '|' || c == '\t')
          throw ConfigError("string values may not contain spaces, '#', '=' or '|'");
      return std::string(text);
    case ValueType::int_list: {
      if (text.size() < 2 || text.front() != '[' || text.back() != ']')
        throw ConfigError("expected a list like [64, 64], got '" + std::string(text) + "'");
      std::vector<std::int64_t> out;
      auto body = detail::trim(text.substr(1, text.size() - 2));
      while (!body.empty()) {
        auto comma = body.find(',');
        auto item = detail::trim(body.substr(0, comma));
        std::int64_t v;
        if (!detail::parse_int(item, v)) throw ConfigError("bad list element '" + std::string(item) + "'");
        out.push_back(v);
        if (comma == std::string_view::npos) break;
        body = body.substr(comma + 1);
        if (detail::trim(body).empty()) throw ConfigError("trailing comma in list");
      }
      return out;
    }
  }
  throw ConfigError("unknown type");
}

/// Canonical text; parse_value(format_value(v)) == v.
inline std::string format_value(const ConfigValue& v) {
  struct V {
    std::string operator()(std::int64_t x) const { return std::to_string(x); }
    std::string operator()(double x) const {
      char buf[64];
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
      std::string s(buf, p);
      if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
      return s;
    }
    std::string operator()(bool x) const { return x ? "true" : "false"; }
    std::string operator()(const std::string& x) const { return x; }
    std::string operator()(const std::vector<std::int64_t>& x) const {
      std::string s = "[";
      for (std::size_t i = 0; i < x.size(); ++i) s += (i ? ", " : "") + std::to_string(x[i]);
      return s + "]";
    }
  };
  return std::visit(V{}, v);
}

struct KeySpec {
  std::string key;
  ValueType type;
  ConfigValue default_value;
  std::string help;
};

/// Ordered key table with defaults.
class ConfigSchema {
 public:
  ConfigSchema& add(std::string key, ValueType t, ConfigValue def, std::string help = {}) {
    if (index_.count(key)) throw ConfigError("duplicate schema key " + key);
    index_[key] = keys_.size();
    keys_.push_back({std::move(key), t, std::move(def), std::move(help)});
    return *this;
  }
  const KeySpec* find(std::string_view key) const {
    auto it = index_.find(std::string(key));
    return it == index_.end() ? nullptr : &keys_[it->second];
  }
  const std::vector<KeySpec>& keys() const { return keys_; }

 private:
  std::vector<KeySpec> keys_;
  std::map<std::string, std::size_t> index_;
};

/// Values for every schema key. Serialization lists all keys in schema order.
class Config {
 public:
  explicit Config(const ConfigSchema& schema) : schema_(&schema) {
    for (const auto& k : schema.keys()) values_[k.key] = k.default_value;
  }

  const ConfigSchema& schema() const { return *schema_; }

  /// `source` names the input in error messages.
  void parse(std::string_view text, const std::string& source = "config") {
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    std::istringstream is{std::string(text)};
    for (std::string raw; std::getline(is, raw);) {
      ++line_no;
      auto line = detail::trim(raw);
      if (line.empty() || line.front() == '#') continue;
      auto eq = line.find('=');
      auto where = source + ":" + std::to_string(line_no) + ": ";
      if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
      auto key = std::string(detail::trim(line.substr(0, eq)));
      if (seen.count(key))
        throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(seen[key]) + ")");
      seen[key] = line_no;
      try {
        set(key, line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    }
  }

  void parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    parse(ss.str(), path);
  }

  /// `key=value` override.
  void apply_override(std::string_view kv) {
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(kv) + "': expected key=value");
    try {
      set(std::string(detail::trim(kv.substr(0, eq))), kv.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("override '" + std::string(kv) + "': " + e.what());
    }
  }

  void set(const std::string& key, std::string_view text) {
    const KeySpec* k = schema_->find(key);
    if (!k) throw ConfigError("unknown key '" + key + "'");
    try {
      values_[key] = parse_value(k->type, text);
    } catch (const ConfigError& e) {
      throw ConfigError("key '" + key + "' (" + type_name(k->type) + "): " + e.what());
    }
  }

  std::string serialize() const {
    std::string out;
    for (const auto& k : schema_->keys()) out += k.key + " = " + format_value(values_.at(k.key)) + "\n";
    return out;
  }

  std::vector<std::pair<std::string, std::string>> entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : schema_->keys()) out.emplace_back(k.key, format_value(values_.at(k.key)));
    return out;
  }

  const ConfigValue& value(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
  }

  std::int64_t integer(const std::string& key) const { return get<std::int64_t>(key); }
  std::size_t count(const std::string& key) const {
    auto v = integer(key);
    if (v < 0) throw ConfigError("key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }
  double real(const std::string& key) const { return get<double>(key); }
  bool boolean(const std::string& key) const { return get<bool>(key); }
  const std::string& string(const std::string& key) const { return get<std::string>(key); }
  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (auto v : get<std::vector<std::int64_t>>(key)) {
      if (v <= 0) throw ConfigError("key '" + key + "' needs positive entries");
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  bool operator==(const Config& o) const { return values_ == o.values_; }

 private:
  template <class T>
  const T& get(const std::string& key) const {
    const auto& v = value(key);
    if (!std::holds_alternative<T>(v)) throw ConfigError("key '" + key + "' has a different type");
    return std::get<T>(v);
  }

  const ConfigSchema* schema_;
  std::map<std::string, ConfigValue> values_;
};

// ---------------------------------------------------------------------------
// Variant grids.

struct GridAxis {
  std::string key;
  /// Values as written; used for directory names.
  std::vector<std::string> texts;
};

struct Variant {
  Config config;
  /// e.g. "lr_1e-4/seed_0"
  std::string path;
  std::vector<std::pair<std::string, std::string>> choices;
};

/// Grid file:
///   base = relative/or/absolute.cfg   (optional)
///   set  key = value                  (fixed override)
///   vary key = v1 | v2 | v3
class VariantGrid {
 public:
  explicit VariantGrid(const ConfigSchema& schema) : base_(schema) {}

  void parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read grid " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    auto dir = path.find_last_of('/') == std::string::npos ? std::string() : path.substr(0, path.find_last_of('/') + 1);
    parse(ss.str(), path, dir);
  }

  void parse(std::string_view text, const std::string& source = "grid", const std::string& base_dir = {}) {
    std::size_t line_no = 0;
    std::istringstream is{std::string(text)};
    for (std::string raw; std::getline(is, raw);) {
      ++line_no;
      auto line = detail::trim(raw);
      if (line.empty() || line.front() == '#') continue;
      auto where = source + ":" + std::to_string(line_no) + ": ";
      try {
        if (line.rfind("vary ", 0) == 0) {
          auto rest = line.substr(5);
          auto eq = rest.find('=');
          if (eq == std::string_view::npos) throw ConfigError("expected 'vary key = v1 | v2'");
          GridAxis ax{std::string(detail::trim(rest.substr(0, eq))), {}};
          const KeySpec* k = base_.schema().find(ax.key);
          if (!k) throw ConfigError("unknown key '" + ax.key + "'");
          for (const auto& a : axes_)
            if (a.key == ax.key) throw ConfigError("key '" + ax.key + "' varied twice");
          auto vals = rest.substr(eq + 1);
          while (true) {
            auto bar = vals.find('|');
            auto item = detail::trim(vals.substr(0, bar));
            parse_value(k->type, item);
            ax.texts.emplace_back(item);
            if (bar == std::string_view::npos) break;
            vals = vals.substr(bar + 1);
          }
          axes_.push_back(std::move(ax));
        } else if (line.rfind("set ", 0) == 0) {
          fixed_.emplace_back(detail::trim(line.substr(4)));
          base_.apply_override(fixed_.back());
        } else {
          auto eq = line.find('=');
          if (eq == std::string_view::npos || detail::trim(line.substr(0, eq)) != "base")
            throw ConfigError("expected 'base = file', 'set key = value' or 'vary key = a | b'");
          auto file = std::string(detail::trim(line.substr(eq + 1)));
          if (!file.empty() && file.front() != '/') file = base_dir + file;
          base_.parse_file(file);
          for (const auto& f : fixed_) base_.apply_override(f);
        }
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    }
  }

  const Config& base() const { return base_; }
  Config& base() { return base_; }
  const std::vector<GridAxis>& axes() const { return axes_; }
  void add_axis(GridAxis ax) { axes_.push_back(std::move(ax)); }

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& a : axes_) n *= a.texts.size();
    return n;
  }

  /// Cartesian expansion; the first axis varies slowest.
  std::vector<Variant> expand() const {
    std::vector<Variant> out;
    std::size_t n = size();
    std::map<std::string, std::size_t> paths;
    for (std::size_t i = 0; i < n; ++i) {
      Variant v{base_, {}, {}};
      std::size_t rem = i;
      std::vector<std::size_t> pick(axes_.size());
      for (std::size_t a = axes_.size(); a-- > 0;) {
        pick[a] = rem % axes_[a].texts.size();
        rem /= axes_[a].texts.size();
      }
      for (std::size_t a = 0; a < axes_.size(); ++a) {
        const auto& ax = axes_[a];
        const auto& text = ax.texts[pick[a]];
        v.config.set(ax.key, text);
        v.choices.emplace_back(ax.key, text);
        if (!v.path.empty()) v.path += '/';
        v.path += path_component(ax.key, text);
      }
      if (v.path.empty()) v.path = "run";
      if (paths.count(v.path)) throw ConfigError("variants " + std::to_string(paths[v.path]) + " and " + std::to_string(i) + " share directory " + v.path);
      paths[v.path] = i;
      out.push_back(std::move(v));
    }
    return out;
  }

  /// Last dotted segment of the key, '_', then the value text with unsafe
  /// characters replaced.
  static std::string path_component(const std::string& key, const std::string& text) {
    auto dot = key.find_last_of('.');
    std::string out = (dot == std::string::npos ? key : key.substr(dot + 1)) + "_";
    for (char c : text) {
      bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '+' || c == '_';
      out += ok ? c : '_';
    }
    return out;
  }

 private:
  Config base_;
  std::vector<std::string> fixed_;
  std::vector<GridAxis> axes_;
};

}  // namespace rlstack
