#pragma once

// Synthetic domain-shift data, CSV ingestion and ratio splits.
//
// A bundle carries four disjoint splits: source-domain pretraining examples
// and target-domain train / validation / test examples. Synthetic bundles
// are isotropic Gaussian mixtures whose source class centroids are displaced
// from the target ones, with a controllable fraction of corrupted
// pretraining examples. The `corrupted` flag is ground truth for scoring
// only and is never read by the optimizer.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lbi/errors.hpp"
#include "lbi/io.hpp"
#include "lbi/rng.hpp"

namespace lbi {

enum class Domain { source, target };

struct Example {
  std::vector<double> features;
  std::size_t label = 0;
  Domain domain = Domain::target;
  bool corrupted = false;

  friend bool operator==(const Example&, const Example&) = default;
};

enum class Split { pretrain, train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::pretrain: return "pretrain";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "pretrain") return Split::pretrain;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct DatasetBundle {
  std::vector<Example> pretrain;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;
  std::size_t D = 0;
  std::size_t C = 0;

  std::size_t M() const noexcept { return pretrain.size(); }
  std::size_t N() const noexcept { return train.size(); }
  std::size_t O() const noexcept { return val.size(); }

  const std::vector<Example>& split(Split s) const {
    switch (s) {
      case Split::pretrain: return pretrain;
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    return test;
  }
  std::vector<Example>& split(Split s) {
    return const_cast<std::vector<Example>&>(std::as_const(*this).split(s));
  }

  std::size_t corrupted_count() const {
    return static_cast<std::size_t>(
        std::count_if(pretrain.begin(), pretrain.end(), [](const Example& e) { return e.corrupted; }));
  }

  /// Throws ContractViolation if any example breaks the shared D / C shape.
  void validate() const {
    for (Split s : {Split::pretrain, Split::train, Split::val, Split::test}) {
      for (const Example& e : split(s)) {
        detail::require(e.features.size() == D, "example dimension differs from bundle D");
        detail::require(e.label < C, "example label outside [0, C)");
        for (double x : e.features) detail::require(std::isfinite(x), "non-finite feature");
      }
    }
  }

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

// ---------------------------------------------------------------------------
// Synthetic generation

enum class CorruptKind { label_flip, feature_shift };

inline std::string_view to_string(CorruptKind k) {
  return k == CorruptKind::label_flip ? "label_flip" : "feature_shift";
}

inline CorruptKind parse_corrupt_kind(std::string_view s) {
  if (s == "label_flip") return CorruptKind::label_flip;
  if (s == "feature_shift") return CorruptKind::feature_shift;
  throw ConfigError("unknown corrupt_kind '" + std::string(s) + "'");
}

struct SynthSpec {
  std::size_t D = 5;
  std::size_t C = 2;
  // Explicit class centroids (C rows of D). Empty means derive from the seed:
  // target centroids lie on random orthogonal directions, pairwise class_sep
  // apart (exact while C <= D) and centred on the origin; source
  // centroids are the target ones displaced by `shift` along a random unit
  // direction per class.
  std::vector<std::vector<double>> target_means;
  std::vector<std::vector<double>> source_means;
  double class_sep = 1.0;
  double shift = 0.0;
  double noise_sigma = 1.0;
  double corrupt_frac = 0.0;
  CorruptKind corrupt_kind = CorruptKind::label_flip;
  // feature_shift corruption moves an example by corrupt_shift * noise_sigma
  // along one bundle-wide random direction.
  double corrupt_shift = 3.0;
  std::size_t M = 200;
  std::size_t N = 60;
  std::size_t O = 40;
  std::size_t test = 1000;
  std::uint64_t seed = 0;
};

inline void validate(const SynthSpec& s) {
  if (s.D == 0) throw ConfigError("D must be positive");
  if (s.C < 2) throw ConfigError("C must be at least 2");
  if (s.M == 0 || s.N == 0 || s.O == 0 || s.test == 0)
    throw ConfigError("split sizes must be positive");
  if (!(s.corrupt_frac >= 0.0 && s.corrupt_frac <= 1.0))
    throw ConfigError("corrupt_frac must lie in [0,1]");
  if (!(s.noise_sigma > 0.0) || !std::isfinite(s.noise_sigma))
    throw ConfigError("noise_sigma must be positive");
  if (!(s.shift >= 0.0) || !std::isfinite(s.shift)) throw ConfigError("shift must be >= 0");
  if (!(s.class_sep >= 0.0) || !std::isfinite(s.class_sep))
    throw ConfigError("class_sep must be >= 0");
  auto check_means = [&](const std::vector<std::vector<double>>& m, const char* which) {
    if (m.empty()) return;
    if (m.size() != s.C) throw ConfigError(std::string(which) + " must have C rows");
    for (const auto& row : m)
      if (row.size() != s.D) throw ConfigError(std::string(which) + " rows must have D entries");
  };
  check_means(s.target_means, "target_means");
  check_means(s.source_means, "source_means");
}

inline std::size_t corrupted_target_count(const SynthSpec& s) {
  return static_cast<std::size_t>(std::llround(s.corrupt_frac * static_cast<double>(s.M)));
}

namespace detail {

inline std::vector<double> random_unit(std::size_t D, Rng& rng) {
  std::vector<double> v(D);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail

struct ClassMeans {
  std::vector<std::vector<double>> target;
  std::vector<std::vector<double>> source;
};

/// The class-conditional centroids a spec generates from.
inline ClassMeans resolve_means(const SynthSpec& spec) {
  validate(spec);
  const Rng root(spec.seed);
  ClassMeans out;
  out.target = spec.target_means;
  if (out.target.empty()) {
    // Random orthonormal directions (Gram-Schmidt) scaled so every pair of
    // centroids sits class_sep apart. With C > D the directions beyond D are
    // random unit vectors and only approximately separated.
    Rng r = root.split("means.target");
    std::vector<std::vector<double>> basis;
    for (std::size_t c = 0; c < spec.C; ++c) {
      auto u = detail::random_unit(spec.D, r);
      if (basis.size() < spec.D) {
        for (;;) {
          for (const auto& q : basis) {
            double proj = 0.0;
            for (std::size_t d = 0; d < spec.D; ++d) proj += u[d] * q[d];
            for (std::size_t d = 0; d < spec.D; ++d) u[d] -= proj * q[d];
          }
          double n2 = 0.0;
          for (double x : u) n2 += x * x;
          if (n2 > 1e-12) {
            for (double& x : u) x /= std::sqrt(n2);
            break;
          }
          u = detail::random_unit(spec.D, r);
        }
        basis.push_back(u);
      }
      for (double& x : u) x *= spec.class_sep / std::numbers::sqrt2;
      out.target.push_back(std::move(u));
    }
    std::vector<double> center(spec.D, 0.0);
    for (const auto& m : out.target)
      for (std::size_t d = 0; d < spec.D; ++d) center[d] += m[d] / static_cast<double>(spec.C);
    for (auto& m : out.target)
      for (std::size_t d = 0; d < spec.D; ++d) m[d] -= center[d];
  }
  out.source = spec.source_means;
  if (out.source.empty()) {
    Rng r = root.split("means.source");
    for (std::size_t c = 0; c < spec.C; ++c) {
      auto u = detail::random_unit(spec.D, r);
      std::vector<double> m = out.target[c];
      for (std::size_t d = 0; d < spec.D; ++d) m[d] += spec.shift * u[d];
      out.source.push_back(std::move(m));
    }
  }
  return out;
}

inline DatasetBundle generate(const SynthSpec& spec) {
  const ClassMeans means = resolve_means(spec);
  const Rng root(spec.seed);

  auto draw = [&](std::size_t n, Domain domain, std::string_view stream) {
    Rng r = root.split(stream);
    const auto& centroids = domain == Domain::source ? means.source : means.target;
    std::vector<Example> out(n);
    for (Example& e : out) {
      e.label = static_cast<std::size_t>(r.below(spec.C));
      e.domain = domain;
      e.features.resize(spec.D);
      for (std::size_t d = 0; d < spec.D; ++d)
        e.features[d] = centroids[e.label][d] + spec.noise_sigma * r.normal();
    }
    return out;
  };

  DatasetBundle b;
  b.D = spec.D;
  b.C = spec.C;
  b.pretrain = draw(spec.M, Domain::source, "split.pretrain");
  b.train = draw(spec.N, Domain::target, "split.train");
  b.val = draw(spec.O, Domain::target, "split.val");
  b.test = draw(spec.test, Domain::target, "split.test");

  const std::size_t k = corrupted_target_count(spec);
  if (k > 0) {
    Rng r = root.split("corrupt");
    std::vector<std::size_t> order(spec.M);
    for (std::size_t i = 0; i < spec.M; ++i) order[i] = i;
    shuffle(order, r);
    const auto offset = detail::random_unit(spec.D, r);
    for (std::size_t j = 0; j < k; ++j) {
      Example& e = b.pretrain[order[j]];
      e.corrupted = true;
      if (spec.corrupt_kind == CorruptKind::label_flip) {
        const auto bump = 1 + static_cast<std::size_t>(r.below(spec.C - 1));
        e.label = (e.label + bump) % spec.C;
      } else {
        for (std::size_t d = 0; d < spec.D; ++d)
          e.features[d] += spec.corrupt_shift * spec.noise_sigma * offset[d];
      }
    }
  }
  return b;
}

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"D", s.D},
          {"C", s.C},
          {"target_means", s.target_means},
          {"source_means", s.source_means},
          {"class_sep", s.class_sep},
          {"shift", s.shift},
          {"noise_sigma", s.noise_sigma},
          {"corrupt_frac", s.corrupt_frac},
          {"corrupt_kind", std::string(to_string(s.corrupt_kind))},
          {"corrupt_shift", s.corrupt_shift},
          {"M", s.M},
          {"N", s.N},
          {"O", s.O},
          {"test", s.test},
          {"seed", s.seed}};
}

// ---------------------------------------------------------------------------
// CSV
//
// One example per line: `split,label,f_0,...,f_{D-1}` with split one of
// pretrain|train|val|test. Blank lines and lines starting with '#' are
// skipped. A sidecar `<file>.json` records the class count, split sizes,
// the corrupted pretraining indices and (for synthetic data) the generating
// spec; it is optional on load.

struct CsvSchema {
  std::optional<std::size_t> D;
  std::optional<std::size_t> C;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".json";
  return p;
}

inline std::string to_csv(const DatasetBundle& b) {
  std::string out;
  for (Split s : {Split::pretrain, Split::train, Split::val, Split::test}) {
    for (const Example& e : b.split(s)) {
      out += to_string(s);
      out += ',';
      out += std::to_string(e.label);
      for (double x : e.features) {
        out += ',';
        out += io::fmt(x);
      }
      out += '\n';
    }
  }
  return out;
}

inline nlohmann::json sidecar_json(const DatasetBundle& b, const SynthSpec* spec = nullptr) {
  std::vector<std::size_t> corrupted;
  for (std::size_t i = 0; i < b.pretrain.size(); ++i)
    if (b.pretrain[i].corrupted) corrupted.push_back(i);
  nlohmann::json j = {{"format", "lbi-dataset"},
                      {"version", 1},
                      {"D", b.D},
                      {"C", b.C},
                      {"sizes",
                       {{"pretrain", b.pretrain.size()},
                        {"train", b.train.size()},
                        {"val", b.val.size()},
                        {"test", b.test.size()}}},
                      {"corrupted_pretrain", corrupted}};
  if (spec) j["synth_spec"] = to_json(*spec);
  return j;
}

inline void save_csv(const std::filesystem::path& path, const DatasetBundle& b,
                     const SynthSpec* spec = nullptr) {
  io::write_file_atomic(path, to_csv(b));
  io::write_file_atomic(sidecar_path(path), sidecar_json(b, spec).dump(2) + "\n");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_size(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses CSV text. `text` is the file contents; line numbers are 1-based.
inline DatasetBundle parse_csv(std::string_view text, const CsvSchema& schema = {}) {
  DatasetBundle b;
  std::optional<std::size_t> D = schema.D;
  std::size_t max_label = 0;
  bool any = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = detail::trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    const auto fields = detail::split_fields(line, ',');
    if (fields.size() < 3) throw ParseError("expected split,label,features...", line_no);
    const auto split = parse_split(fields[0]);
    if (!split) throw ParseError("unknown split tag '" + std::string(fields[0]) + "'", line_no);
    Example e;
    if (!detail::parse_size(fields[1], e.label))
      throw ParseError("label is not a non-negative integer", line_no);
    const std::size_t d = fields.size() - 2;
    if (!D) D = d;
    if (d != *D)
      throw ParseError("expected " + std::to_string(*D) + " features, found " + std::to_string(d), line_no);
    e.features.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
      if (!detail::parse_double(fields[k + 2], e.features[k]) || !std::isfinite(e.features[k]))
        throw ParseError("feature " + std::to_string(k) + " is not a finite number", line_no);
    }
    if (schema.C && e.label >= *schema.C)
      throw ParseError("label " + std::to_string(e.label) + " outside [0, C)", line_no);
    e.domain = *split == Split::pretrain ? Domain::source : Domain::target;
    max_label = std::max(max_label, e.label);
    any = true;
    b.split(*split).push_back(std::move(e));
    if (end == text.size()) break;
  }
  if (!any) throw ParseError("no examples", line_no);
  b.D = *D;
  b.C = schema.C ? *schema.C : std::max<std::size_t>(2, max_label + 1);
  return b;
}

/// Loads a CSV file plus its sidecar if present (class count and corrupted
/// flags come from the sidecar).
inline DatasetBundle load_csv(const std::filesystem::path& path, CsvSchema schema = {}) {
  if (!std::filesystem::exists(path)) throw ConfigError("data file not found: " + path.string());
  std::vector<std::size_t> corrupted;
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    const auto j = nlohmann::json::parse(io::read_file(side));
    if (!schema.C && j.contains("C")) schema.C = j.at("C").get<std::size_t>();
    if (j.contains("corrupted_pretrain"))
      corrupted = j.at("corrupted_pretrain").get<std::vector<std::size_t>>();
  }
  DatasetBundle b = parse_csv(io::read_file(path), schema);
  for (std::size_t i : corrupted) {
    if (i >= b.pretrain.size()) throw ParseError("sidecar corrupted index out of range", 0);
    b.pretrain[i].corrupted = true;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Ratio split of a target-domain pool into train / val / test.

/// Sizes are round(r_train * n) and round(r_val * n); test takes the rest.
inline DatasetBundle split_ratio(std::vector<Example> pool, std::array<double, 3> ratios,
                                 std::uint64_t seed, std::vector<Example> pretrain = {}) {
  if (pool.empty()) throw ConfigError("split_ratio: empty pool");
  for (double r : ratios)
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("split_ratio: ratios must be >= 0");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw ConfigError("split_ratio: ratios must sum to 1");
  const std::size_t n = pool.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw ConfigError("split_ratio: ratios produce an empty split");

  Rng rng = Rng(seed).split("split_ratio");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);

  DatasetBundle b;
  b.D = pool.front().features.size();
  std::size_t max_label = 0;
  for (const Example& e : pool) max_label = std::max(max_label, e.label);
  for (const Example& e : pretrain) max_label = std::max(max_label, e.label);
  b.C = std::max<std::size_t>(2, max_label + 1);
  for (std::size_t j = 0; j < n; ++j) {
    Example& e = pool[order[j]];
    if (j < n_train) b.train.push_back(std::move(e));
    else if (j < n_train + n_val) b.val.push_back(std::move(e));
    else b.test.push_back(std::move(e));
  }
  b.pretrain = std::move(pretrain);
  return b;
}

}  // namespace lbi
