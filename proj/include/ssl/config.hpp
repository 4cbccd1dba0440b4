#pragma once

// Experiment configuration in a small TOML subset:
//
//   # comment
//   kind = "lmc"
//   [sampler]
//   step_size = 0.1
//   record = [0, 10, 50]
//   [[target.component]]
//   weight = 0.5
//   mean = [-4]
//   variance = 1
//
// Values are numbers, "strings", true/false, or flat arrays of numbers.
// Unknown sections or keys are errors, reported with their line number.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace ssl {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Shortest round-tripping decimal form, independent of the C locale.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, std::size_t line) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  auto res = std::from_chars(first, s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("not a number: '" + s + "'", line);
  }
  return v;
}

using ConfigValue = std::variant<double, std::string, bool, std::vector<double>>;

struct ConfigEntry {
  ConfigValue value;
  std::size_t line = 0;
  bool used = false;
};

/// One [section] or one element of a [[section]] array.
struct ConfigTable {
  std::string name;
  std::size_t line = 0;
  std::map<std::string, ConfigEntry> entries;
};

struct ConfigDocument {
  std::vector<ConfigTable> tables;  // the root table is named ""

  static ConfigDocument parse(const std::string& text) {
    ConfigDocument doc;
    doc.tables.push_back({"", 0, {}});
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      const std::string line = trim(strip_comment(raw));
      if (line.empty()) continue;
      if (line.rfind("[[", 0) == 0) {
        if (line.size() < 4 || line.substr(line.size() - 2) != "]]") throw ConfigError("unterminated [[table]]", lineno);
        doc.tables.push_back({trim(line.substr(2, line.size() - 4)), lineno, {}});
        continue;
      }
      if (line[0] == '[') {
        if (line.back() != ']') throw ConfigError("unterminated [section]", lineno);
        const std::string name = trim(line.substr(1, line.size() - 2));
        for (const auto& t : doc.tables) {
          if (t.name == name) throw ConfigError("section [" + name + "] appears twice", lineno);
        }
        doc.tables.push_back({name, lineno, {}});
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value", lineno);
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("empty key", lineno);
      auto& table = doc.tables.back();
      if (table.entries.count(key)) throw ConfigError("duplicate key '" + key + "'", lineno);
      table.entries[key] = {parse_value(trim(line.substr(eq + 1)), lineno), lineno, false};
    }
    return doc;
  }

 private:
  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  static ConfigValue parse_value(const std::string& v, std::size_t line) {
    if (v.empty()) throw ConfigError("missing value", line);
    if (v.front() == '"') {
      if (v.size() < 2 || v.back() != '"') throw ConfigError("unterminated string", line);
      return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
      if (v.back() != ']') throw ConfigError("unterminated array", line);
      std::vector<double> out;
      std::string body = trim(v.substr(1, v.size() - 2));
      std::istringstream items(body);
      std::string item;
      while (std::getline(items, item, ',')) {
        item = trim(item);
        if (item.empty()) {
          if (out.empty() && body.empty()) break;
          throw ConfigError("empty array element", line);
        }
        out.push_back(parse_double(item, line));
      }
      return out;
    }
    return parse_double(v, line);
  }
};

/// Typed access to one table; marks keys as consumed so leftovers can be
/// reported.
class TableReader {
 public:
  explicit TableReader(ConfigTable* t) : t_(t) {}

  void get(const std::string& key, double& out) {
    if (auto* e = find(key)) out = as<double>(*e, key, "a number");
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (auto* e = find(key)) {
      const double v = as<double>(*e, key, "a number");
      if (!(v >= 0) || v != std::floor(v) || v > 9.007199254740992e15) {
        throw ConfigError("'" + key + "' must be a non-negative integer", e->line);
      }
      out = static_cast<std::uint64_t>(v);
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto* e = find(key)) out = as<std::string>(*e, key, "a string");
  }
  void get(const std::string& key, bool& out) {
    if (auto* e = find(key)) out = as<bool>(*e, key, "true or false");
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (auto* e = find(key)) out = as<std::vector<double>>(*e, key, "an array of numbers");
  }
  void get(const std::string& key, std::optional<double>& out) {
    if (auto* e = find(key)) out = as<double>(*e, key, "a number");
  }

  void expect_all_used() const {
    if (!t_) return;
    for (const auto& [k, e] : t_->entries) {
      if (!e.used) {
        throw ConfigError("unknown key '" + k + "'" + (t_->name.empty() ? "" : " in [" + t_->name + "]"), e.line);
      }
    }
  }

 private:
  ConfigEntry* find(const std::string& key) {
    if (!t_) return nullptr;
    auto it = t_->entries.find(key);
    if (it == t_->entries.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }
  template <typename T>
  static T as(const ConfigEntry& e, const std::string& key, const char* what) {
    if (const T* v = std::get_if<T>(&e.value)) return *v;
    throw ConfigError("'" + key + "' must be " + what, e.line);
  }

  ConfigTable* t_;
};

/// Writes key = value lines.
class TableWriter {
 public:
  explicit TableWriter(std::ostringstream& os) : os_(os) {}
  void put(const std::string& k, double v) { os_ << k << " = " << format_double(v) << "\n"; }
  void put(const std::string& k, std::uint64_t v) { os_ << k << " = " << v << "\n"; }
  void put(const std::string& k, const std::string& v) { os_ << k << " = \"" << v << "\"\n"; }
  void put(const std::string& k, const char* v) { put(k, std::string(v)); }
  void put(const std::string& k, bool v) { os_ << k << " = " << (v ? "true" : "false") << "\n"; }
  void put(const std::string& k, const std::vector<double>& v) {
    os_ << k << " = [";
    for (std::size_t i = 0; i < v.size(); ++i) os_ << (i ? ", " : "") << format_double(v[i]);
    os_ << "]\n";
  }
  void put(const std::string& k, const std::optional<double>& v) {
    if (v) put(k, *v);
  }

 private:
  std::ostringstream& os_;
};

// ---------------------------------------------------------------------------

struct ComponentSpec {
  double weight = 1.0;
  std::vector<double> mean = {0.0};
  double variance = 1.0;
  bool operator==(const ComponentSpec&) const = default;
};

struct TargetSpec {
  std::string type = "gaussian_mixture";  // or "bump"
  std::vector<ComponentSpec> components = {ComponentSpec{}};
  double bump_offset = 4.0;
  std::optional<double> lsi;  // C_LS supplied for mixtures
  bool operator==(const TargetSpec&) const = default;
};

struct ModelSpec {
  std::string family = "ddpm";
  std::string schedule = "constant";  // constant | exponential | affine_sq
  double a = 1.0;                     // c, a, or b depending on the kind
  double b = 1.0;                     // b (exponential) or alpha (affine_sq)
  double horizon = 1.0;
  bool operator==(const ModelSpec&) const = default;
};

struct OracleSpec {
  std::string mode = "exact";  // exact | linf_perturbed | l2_badset | bump_mismatch
  double eps = 0.0;
  double eps1 = 0.0;
  std::uint64_t seed = 0;
  std::string shape = "constant_rotation";  // or smooth_field
  std::vector<double> center;
  double radius = 1.0;
  double calibration_time = 0.0;
  double bump_offset = 4.0;
  bool operator==(const OracleSpec&) const = default;
};

struct SamplerSpec {
  double step_size = 0.01;
  std::uint64_t steps = 100;
  std::uint64_t chains = 1000;
  std::string init = "target";  // target | point | gaussian | prior
  std::vector<double> init_point;
  std::vector<double> init_mean;
  double init_variance = 1.0;
  std::string plan = "none";  // none | final | interleaved
  std::uint64_t corrector_steps = 0;
  double corrector_step_size = 0.0;
  std::vector<double> record;    // steps at which statistics are written
  std::vector<double> runtimes;  // lmc: T grid, recorded at round(T / h)
  bool operator==(const SamplerSpec&) const = default;
};

struct AnnealSpec {
  double sigma_min2 = 0.01;
  double c = 1.0;
  double eps_tv = 0.1;
  double lsi = 1.0;
  std::optional<double> M1;    // |E x|; taken from the target when absent
  std::vector<double> sigma2;  // explicit levels override the geometric rule
  double step_scale = 0.0;     // > 0: h_m = step_scale (1 + sigma_m^2)
  std::uint64_t steps_per_level = 0;  // > 0 overrides N_m
  bool operator==(const AnnealSpec&) const = default;
};

struct BoundsSpec {
  std::string theorem = "lmc";  // lmc | predictor | constants | budget | warm | framework
  std::uint64_t d = 1;
  double L = 1.0;
  double L_s = 1.0;
  double lsi = 1.0;
  double M1 = 0.0;
  double M2 = 1.0;
  double eps = 0.0;
  double eps1 = 0.0;
  double h = 1e-4;
  std::uint64_t steps = 100;
  double chi0 = 1.0;
  double eps_tv = 0.1;
  double eps_chi = 0.1;
  double K_chi = 1.0;
  double C_T = 1.0;
  double sigma2 = 1.0;
  double hidden_constant = 1.0;
  std::vector<double> D;
  std::vector<double> delta;
  bool operator==(const BoundsSpec&) const = default;
};

struct ExperimentConfig {
  std::string kind = "lmc";  // lmc | anneal | predictor | pc | coupled | counterexample | bounds | schedule
  std::uint64_t seed = 0;
  std::uint64_t threads = 1;
  std::string output = "out";
  TargetSpec target;
  ModelSpec model;
  OracleSpec oracle;
  SamplerSpec sampler;
  AnnealSpec anneal;
  BoundsSpec bounds;
  std::vector<double> sweep;  // counterexample: L values
  bool operator==(const ExperimentConfig&) const = default;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k = {"lmc",     "anneal",         "predictor", "pc",
                                             "coupled", "counterexample", "bounds",    "schedule"};
  return k;
}

inline ExperimentConfig parse_config(const std::string& text) {
  ConfigDocument doc = ConfigDocument::parse(text);
  ExperimentConfig c;
  bool components_seen = false;
  for (auto& t : doc.tables) {
    TableReader r(&t);
    if (t.name.empty()) {
      r.get("kind", c.kind);
      r.get("seed", c.seed);
      r.get("threads", c.threads);
      r.get("output", c.output);
      r.get("sweep", c.sweep);
    } else if (t.name == "target") {
      r.get("type", c.target.type);
      r.get("bump_offset", c.target.bump_offset);
      r.get("lsi", c.target.lsi);
    } else if (t.name == "target.component") {
      if (!components_seen) c.target.components.clear();
      components_seen = true;
      ComponentSpec s;
      r.get("weight", s.weight);
      r.get("mean", s.mean);
      r.get("variance", s.variance);
      c.target.components.push_back(s);
    } else if (t.name == "model") {
      r.get("family", c.model.family);
      r.get("schedule", c.model.schedule);
      r.get("a", c.model.a);
      r.get("b", c.model.b);
      r.get("horizon", c.model.horizon);
    } else if (t.name == "oracle") {
      auto& o = c.oracle;
      r.get("mode", o.mode);
      r.get("eps", o.eps);
      r.get("eps1", o.eps1);
      r.get("seed", o.seed);
      r.get("shape", o.shape);
      r.get("center", o.center);
      r.get("radius", o.radius);
      r.get("calibration_time", o.calibration_time);
      r.get("bump_offset", o.bump_offset);
    } else if (t.name == "sampler") {
      auto& s = c.sampler;
      r.get("step_size", s.step_size);
      r.get("steps", s.steps);
      r.get("chains", s.chains);
      r.get("init", s.init);
      r.get("init_point", s.init_point);
      r.get("init_mean", s.init_mean);
      r.get("init_variance", s.init_variance);
      r.get("plan", s.plan);
      r.get("corrector_steps", s.corrector_steps);
      r.get("corrector_step_size", s.corrector_step_size);
      r.get("record", s.record);
      r.get("runtimes", s.runtimes);
    } else if (t.name == "anneal") {
      auto& a = c.anneal;
      r.get("sigma_min2", a.sigma_min2);
      r.get("c", a.c);
      r.get("eps_tv", a.eps_tv);
      r.get("lsi", a.lsi);
      r.get("M1", a.M1);
      r.get("sigma2", a.sigma2);
      r.get("step_scale", a.step_scale);
      r.get("steps_per_level", a.steps_per_level);
    } else if (t.name == "bounds") {
      auto& b = c.bounds;
      r.get("theorem", b.theorem);
      r.get("d", b.d);
      r.get("L", b.L);
      r.get("L_s", b.L_s);
      r.get("lsi", b.lsi);
      r.get("M1", b.M1);
      r.get("M2", b.M2);
      r.get("eps", b.eps);
      r.get("eps1", b.eps1);
      r.get("h", b.h);
      r.get("steps", b.steps);
      r.get("chi0", b.chi0);
      r.get("eps_tv", b.eps_tv);
      r.get("eps_chi", b.eps_chi);
      r.get("K_chi", b.K_chi);
      r.get("C_T", b.C_T);
      r.get("sigma2", b.sigma2);
      r.get("hidden_constant", b.hidden_constant);
      r.get("D", b.D);
      r.get("delta", b.delta);
    } else {
      throw ConfigError("unknown section [" + t.name + "]", t.line);
    }
    r.expect_all_used();
  }
  bool known = false;
  for (const auto& k : experiment_kinds()) known = known || k == c.kind;
  if (!known) {
    std::size_t line = 0;
    for (const auto& [k, e] : doc.tables.front().entries) {
      if (k == "kind") line = e.line;
    }
    throw ConfigError("unknown experiment kind '" + c.kind + "'", line);
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path, 0);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  TableWriter w(os);
  w.put("kind", c.kind);
  w.put("seed", c.seed);
  w.put("threads", c.threads);
  w.put("output", c.output);
  w.put("sweep", c.sweep);
  os << "\n[target]\n";
  w.put("type", c.target.type);
  w.put("bump_offset", c.target.bump_offset);
  w.put("lsi", c.target.lsi);
  for (const auto& s : c.target.components) {
    os << "\n[[target.component]]\n";
    w.put("weight", s.weight);
    w.put("mean", s.mean);
    w.put("variance", s.variance);
  }
  os << "\n[model]\n";
  w.put("family", c.model.family);
  w.put("schedule", c.model.schedule);
  w.put("a", c.model.a);
  w.put("b", c.model.b);
  w.put("horizon", c.model.horizon);
  const auto& o = c.oracle;
  os << "\n[oracle]\n";
  w.put("mode", o.mode);
  w.put("eps", o.eps);
  w.put("eps1", o.eps1);
  w.put("seed", o.seed);
  w.put("shape", o.shape);
  w.put("center", o.center);
  w.put("radius", o.radius);
  w.put("calibration_time", o.calibration_time);
  w.put("bump_offset", o.bump_offset);
  const auto& s = c.sampler;
  os << "\n[sampler]\n";
  w.put("step_size", s.step_size);
  w.put("steps", s.steps);
  w.put("chains", s.chains);
  w.put("init", s.init);
  w.put("init_point", s.init_point);
  w.put("init_mean", s.init_mean);
  w.put("init_variance", s.init_variance);
  w.put("plan", s.plan);
  w.put("corrector_steps", s.corrector_steps);
  w.put("corrector_step_size", s.corrector_step_size);
  w.put("record", s.record);
  w.put("runtimes", s.runtimes);
  const auto& a = c.anneal;
  os << "\n[anneal]\n";
  w.put("sigma_min2", a.sigma_min2);
  w.put("c", a.c);
  w.put("eps_tv", a.eps_tv);
  w.put("lsi", a.lsi);
  w.put("M1", a.M1);
  w.put("sigma2", a.sigma2);
  w.put("step_scale", a.step_scale);
  w.put("steps_per_level", a.steps_per_level);
  const auto& b = c.bounds;
  os << "\n[bounds]\n";
  w.put("theorem", b.theorem);
  w.put("d", b.d);
  w.put("L", b.L);
  w.put("L_s", b.L_s);
  w.put("lsi", b.lsi);
  w.put("M1", b.M1);
  w.put("M2", b.M2);
  w.put("eps", b.eps);
  w.put("eps1", b.eps1);
  w.put("h", b.h);
  w.put("steps", b.steps);
  w.put("chi0", b.chi0);
  w.put("eps_tv", b.eps_tv);
  w.put("eps_chi", b.eps_chi);
  w.put("K_chi", b.K_chi);
  w.put("C_T", b.C_T);
  w.put("sigma2", b.sigma2);
  w.put("hidden_constant", b.hidden_constant);
  w.put("D", b.D);
  w.put("delta", b.delta);
  return os.str();
}

}  // namespace ssl
