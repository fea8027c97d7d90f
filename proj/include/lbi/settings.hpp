#pragma once

// Key/value configuration documents for the command-line tools.
//
// Syntax, one setting per line:
//
//     # comment (also allowed after a value)
//     lambda      = 3e-3
//     lr.V        = 0.002
//     data.shift  = 1.0
//     run.seeds   = 0..4          # or 0,1,2,3,4
//     run.ids     = all           # or A2,A5,FULL
//     sweep.grid  = 1e-3, 3e-3, 7e-3
//
// Keys are dotted paths; blank lines are ignored; a key may appear once per
// file. Command-line overrides use the same `key=value` form and are applied
// after the file, in order. The full list of keys is `settings_keys()`.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lbi/config.hpp"
#include "lbi/datasets.hpp"
#include "lbi/errors.hpp"
#include "lbi/experiments.hpp"
#include "lbi/grad_oracle.hpp"
#include "lbi/io.hpp"

namespace lbi {

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Splits a document into entries. Throws ParseError on a line without '=',
/// an empty key, or a repeated key.
inline std::vector<KvEntry> parse_kv(std::string_view text) {
  std::vector<KvEntry> out;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError("empty key", line_no);
    if (!seen.insert(key).second) throw ParseError("duplicate key '" + key + "'", line_no);
    out.push_back({key, value, line_no});
  }
  return out;
}

enum class DataKind { synthetic, csv };

struct DataSettings {
  DataKind kind = DataKind::synthetic;
  SynthSpec synth;
  std::filesystem::path path;  // csv only
};

struct VerifySettings {
  VerifyInstanceSpec instance;
  double step = 1e-4;
  double tolerance = 1e-4;
  OraclePrecision precision = OraclePrecision::quad;
};

struct Settings {
  LbiConfig lbi;
  DataSettings data;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<AblationId> ids{kAllAblations.begin(), kAllAblations.end()};
  SweepParam sweep_param = SweepParam::lambda;
  std::optional<std::vector<double>> sweep_grid;  // default depends on the parameter
  VerifySettings verify;
  std::size_t threads = 1;

  const std::vector<double>& grid() const {
    if (sweep_grid) return *sweep_grid;
    return sweep_param == SweepParam::lambda ? default_lambda_grid() : default_gamma_grid();
  }
};

namespace detail {

inline double parse_real(std::string_view key, std::string_view v) {
  double x = 0.0;
  if (!parse_double(v, x)) throw ConfigError(std::string(key) + ": not a number: '" + std::string(v) + "'");
  return x;
}

inline std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(std::string(key) + ": not a non-negative integer: '" + std::string(v) + "'");
  return x;
}

inline std::size_t parse_count(std::string_view key, std::string_view v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::vector<std::string_view> parse_list(std::string_view v) {
  std::vector<std::string_view> out;
  for (std::string_view f : split_fields(v, ','))
    if (!(f = trim(f)).empty()) out.push_back(f);
  return out;
}

/// "0..4" or "0,1,7".
inline std::vector<std::uint64_t> parse_seed_list(std::string_view key, std::string_view v) {
  std::vector<std::uint64_t> out;
  for (std::string_view item : parse_list(v)) {
    if (const auto dots = item.find(".."); dots != std::string_view::npos) {
      const std::uint64_t lo = parse_u64(key, trim(item.substr(0, dots)));
      const std::uint64_t hi = parse_u64(key, trim(item.substr(dots + 2)));
      if (hi < lo) throw ConfigError(std::string(key) + ": empty range '" + std::string(item) + "'");
      if (hi - lo > 100000) throw ConfigError(std::string(key) + ": range too large");
      for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      out.push_back(parse_u64(key, item));
    }
  }
  if (out.empty()) throw ConfigError(std::string(key) + ": needs at least one seed");
  return out;
}

inline std::vector<double> parse_real_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  for (std::string_view item : parse_list(v)) out.push_back(parse_real(key, item));
  if (out.empty()) throw ConfigError(std::string(key) + ": empty list");
  return out;
}

/// Class centroids as rows separated by ';': "0,0 ; 3,0".
inline std::vector<std::vector<double>> parse_matrix(std::string_view key, std::string_view v) {
  std::vector<std::vector<double>> out;
  for (std::string_view row : split_fields(v, ';'))
    if (!(row = trim(row)).empty()) out.push_back(parse_real_list(key, row));
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::fmt(v[i]);
  return s;
}

using Setter = std::function<void(Settings&, std::string_view key, std::string_view value)>;
using Getter = std::function<std::string(const Settings&)>;

struct KeyHandler {
  Setter set;
  Getter get;
};

inline const std::map<std::string, KeyHandler, std::less<>>& key_table() {
  static const std::map<std::string, KeyHandler, std::less<>> table = [] {
    std::map<std::string, KeyHandler, std::less<>> t;
    auto real = [&](const char* key, auto field) {
      t[key] = {[field](Settings& s, std::string_view k, std::string_view v) { field(s) = parse_real(k, v); },
                [field](const Settings& s) { return io::fmt(field(s)); }};
    };
    auto count = [&](const char* key, auto field) {
      t[key] = {[field](Settings& s, std::string_view k, std::string_view v) { field(s) = parse_count(k, v); },
                [field](const Settings& s) { return std::to_string(field(s)); }};
    };
    auto u64 = [&](const char* key, auto field) {
      t[key] = {[field](Settings& s, std::string_view k, std::string_view v) { field(s) = parse_u64(k, v); },
                [field](const Settings& s) { return std::to_string(field(s)); }};
    };

    real("lambda", [](auto& s) -> auto& { return s.lbi.lambda; });
    real("gamma", [](auto& s) -> auto& { return s.lbi.gamma; });
    real("lr.V", [](auto& s) -> auto& { return s.lbi.lr.V; });
    real("lr.J", [](auto& s) -> auto& { return s.lbi.lr.J; });
    real("lr.W", [](auto& s) -> auto& { return s.lbi.lr.W; });
    real("lr.H", [](auto& s) -> auto& { return s.lbi.lr.H; });
    real("lr.A", [](auto& s) -> auto& { return s.lbi.lr.A; });
    real("lr.B", [](auto& s) -> auto& { return s.lbi.lr.B; });
    real("weight_decay", [](auto& s) -> auto& { return s.lbi.weight_decay; });
    count("iterations", [](auto& s) -> auto& { return s.lbi.iterations; });
    count("hidden", [](auto& s) -> auto& { return s.lbi.hidden; });
    count("batch_size", [](auto& s) -> auto& { return s.lbi.batch_size; });
    u64("seed", [](auto& s) -> auto& { return s.lbi.seed; });
    t["mode"] = {[](Settings& s, std::string_view, std::string_view v) { s.lbi.mode = parse_mode(v); },
                 [](const Settings& s) { return std::string(to_string(s.lbi.mode)); }};
    t["ignore_mode"] = {
        [](Settings& s, std::string_view, std::string_view v) { s.lbi.ignore_mode = parse_ignore_mode(v); },
        [](const Settings& s) { return std::string(to_string(s.lbi.ignore_mode)); }};
    t["step_decay"] = {
        [](Settings& s, std::string_view k, std::string_view v) { s.lbi.step_decay = parse_bool(k, v); },
        [](const Settings& s) { return std::string(s.lbi.step_decay ? "true" : "false"); }};

    t["data.source"] = {[](Settings& s, std::string_view k, std::string_view v) {
                          if (v == "synthetic") s.data.kind = DataKind::synthetic;
                          else if (v == "csv") s.data.kind = DataKind::csv;
                          else throw ConfigError(std::string(k) + ": expected synthetic or csv");
                        },
                        [](const Settings& s) {
                          return std::string(s.data.kind == DataKind::synthetic ? "synthetic" : "csv");
                        }};
    t["data.path"] = {[](Settings& s, std::string_view, std::string_view v) { s.data.path = std::string(v); },
                      [](const Settings& s) { return s.data.path.string(); }};
    count("data.D", [](auto& s) -> auto& { return s.data.synth.D; });
    count("data.C", [](auto& s) -> auto& { return s.data.synth.C; });
    count("data.M", [](auto& s) -> auto& { return s.data.synth.M; });
    count("data.N", [](auto& s) -> auto& { return s.data.synth.N; });
    count("data.O", [](auto& s) -> auto& { return s.data.synth.O; });
    count("data.test", [](auto& s) -> auto& { return s.data.synth.test; });
    u64("data.seed", [](auto& s) -> auto& { return s.data.synth.seed; });
    real("data.class_sep", [](auto& s) -> auto& { return s.data.synth.class_sep; });
    real("data.shift", [](auto& s) -> auto& { return s.data.synth.shift; });
    real("data.noise_sigma", [](auto& s) -> auto& { return s.data.synth.noise_sigma; });
    real("data.corrupt_frac", [](auto& s) -> auto& { return s.data.synth.corrupt_frac; });
    real("data.corrupt_shift", [](auto& s) -> auto& { return s.data.synth.corrupt_shift; });
    t["data.corrupt_kind"] = {
        [](Settings& s, std::string_view, std::string_view v) { s.data.synth.corrupt_kind = parse_corrupt_kind(v); },
        [](const Settings& s) { return std::string(to_string(s.data.synth.corrupt_kind)); }};
    auto matrix = [&](const char* key, auto field) {
      t[key] = {[field](Settings& s, std::string_view k, std::string_view v) { field(s) = parse_matrix(k, v); },
                [field](const Settings& s) {
                  std::string out;
                  for (const auto& row : field(s)) out += (out.empty() ? "" : "; ") + join(row);
                  return out;
                }};
    };
    matrix("data.target_means", [](auto& s) -> auto& { return s.data.synth.target_means; });
    matrix("data.source_means", [](auto& s) -> auto& { return s.data.synth.source_means; });

    t["run.seeds"] = {[](Settings& s, std::string_view k, std::string_view v) { s.seeds = parse_seed_list(k, v); },
                      [](const Settings& s) {
                        std::string out;
                        for (std::uint64_t x : s.seeds) out += (out.empty() ? "" : ",") + std::to_string(x);
                        return out;
                      }};
    t["run.ids"] = {[](Settings& s, std::string_view k, std::string_view v) {
                      if (v == "all") {
                        s.ids.assign(kAllAblations.begin(), kAllAblations.end());
                        return;
                      }
                      s.ids.clear();
                      for (std::string_view id : parse_list(v)) s.ids.push_back(parse_ablation(id));
                      if (s.ids.empty()) throw ConfigError(std::string(k) + ": needs at least one id");
                    },
                    [](const Settings& s) {
                      std::string out;
                      for (AblationId id : s.ids) out += (out.empty() ? "" : ",") + std::string(to_string(id));
                      return out;
                    }};
    count("run.threads", [](auto& s) -> auto& { return s.threads; });

    t["sweep.param"] = {
        [](Settings& s, std::string_view, std::string_view v) { s.sweep_param = parse_sweep_param(v); },
        [](const Settings& s) { return std::string(to_string(s.sweep_param)); }};
    t["sweep.grid"] = {
        [](Settings& s, std::string_view k, std::string_view v) { s.sweep_grid = parse_real_list(k, v); },
        [](const Settings& s) { return join(s.grid()); }};

    t["verify.precision"] = {
        [](Settings& s, std::string_view, std::string_view v) { s.verify.precision = parse_oracle_precision(v); },
        [](const Settings& s) { return std::string(to_string(s.verify.precision)); }};
    real("verify.step", [](auto& s) -> auto& { return s.verify.step; });
    real("verify.tolerance", [](auto& s) -> auto& { return s.verify.tolerance; });
    real("verify.param_scale", [](auto& s) -> auto& { return s.verify.instance.param_scale; });
    count("verify.D", [](auto& s) -> auto& { return s.verify.instance.D; });
    count("verify.C", [](auto& s) -> auto& { return s.verify.instance.C; });
    count("verify.M", [](auto& s) -> auto& { return s.verify.instance.M; });
    count("verify.N", [](auto& s) -> auto& { return s.verify.instance.N; });
    count("verify.O", [](auto& s) -> auto& { return s.verify.instance.O; });
    u64("verify.seed", [](auto& s) -> auto& { return s.verify.instance.seed; });
    return t;
  }();
  return table;
}

}  // namespace detail

inline std::vector<std::string> settings_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::key_table()) keys.push_back(k);
  return keys;
}

inline void apply_setting(Settings& s, std::string_view key, std::string_view value) {
  const auto& table = detail::key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + std::string(key) + "'");
  it->second.set(s, key, value);
}

/// Applies a "key=value" override.
inline void apply_override(Settings& s, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must be key=value: '" + std::string(assignment) + "'");
  apply_setting(s, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Cross-field checks, run once all settings have been applied.
inline void validate(const Settings& s) {
  validate(s.lbi);
  if (s.data.kind == DataKind::synthetic) validate(s.data.synth);
  if (s.data.kind == DataKind::csv && s.data.path.empty()) throw ConfigError("data.source = csv needs data.path");
  if (s.seeds.empty()) throw ConfigError("run.seeds is empty");
  if (s.ids.empty()) throw ConfigError("run.ids is empty");
  if (!(s.verify.step > 0.0)) throw ConfigError("verify.step must be positive");
  if (!(s.verify.tolerance > 0.0)) throw ConfigError("verify.tolerance must be positive");
}

inline Settings parse_settings(std::string_view text, const std::vector<std::string>& overrides = {}) {
  Settings s;
  for (const KvEntry& e : parse_kv(text)) {
    try {
      apply_setting(s, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ParseError(err.what(), e.line);
    }
  }
  for (const std::string& o : overrides) apply_override(s, o);
  validate(s);
  return s;
}

/// Reads the document at `path` (or starts from defaults if empty).
inline Settings load_settings(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  if (path.empty()) return parse_settings("", overrides);
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_settings(io::read_file(path), overrides);
}

/// Every key with its current value, in the document syntax. Parsing the
/// result reproduces `s` exactly (reals use 17 significant digits).
inline std::string to_document(const Settings& s) {
  std::string out;
  for (const auto& [key, h] : detail::key_table()) {
    const std::string v = h.get(s);
    if (v.empty()) continue;  // empty lists / paths keep their defaults
    out += key + " = " + v + '\n';
  }
  return out;
}

inline nlohmann::json to_json(const Settings& s) {
  nlohmann::json data = {{"source", s.data.kind == DataKind::synthetic ? "synthetic" : "csv"}};
  if (s.data.kind == DataKind::synthetic) data["synth"] = to_json(s.data.synth);
  else data["path"] = s.data.path.string();
  std::vector<std::string> ids;
  for (AblationId id : s.ids) ids.emplace_back(to_string(id));
  const VerifyInstanceSpec& v = s.verify.instance;
  return {{"lbi", to_json(s.lbi)},
          {"data", data},
          {"seeds", s.seeds},
          {"ids", ids},
          {"sweep", {{"param", std::string(to_string(s.sweep_param))}, {"grid", s.grid()}}},
          {"verify",
           {{"step", s.verify.step},
            {"precision", std::string(to_string(s.verify.precision))},
            {"tolerance", s.verify.tolerance},
            {"D", v.D},
            {"C", v.C},
            {"M", v.M},
            {"N", v.N},
            {"O", v.O},
            {"seed", v.seed},
            {"param_scale", v.param_scale}}},
          {"threads", s.threads}};
}

}  // namespace lbi
