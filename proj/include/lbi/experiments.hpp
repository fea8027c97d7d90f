#pragma once

// Ablation matrix, hyperparameter sweeps and ignore-quality metrics.
//
//   id    pretrain          finetune          reduction of the extended problem
//   A1    none              target only       lambda = 0, gamma = 0
//   A2    none              target + all src  lambda = 0, B frozen at 1
//   A3    none              target + weighted lambda = 0
//   A4    all source        target only       gamma = 0, A frozen at 1
//   A5    all source        target + all src  A, B frozen at 1
//   A6    all source        target + weighted A frozen at 1
//   A7    weighted source   target only       gamma = 0 (B frozen, vacuous)
//   A8    weighted source   target + all src  B frozen at 1
//   FULL  weighted source   target + weighted nothing frozen

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lbi/config.hpp"
#include "lbi/datasets.hpp"
#include "lbi/engine.hpp"
#include "lbi/errors.hpp"
#include "lbi/io.hpp"
#include "lbi/model.hpp"
#include "lbi/rng.hpp"

namespace lbi {

enum class AblationId { A1, A2, A3, A4, A5, A6, A7, A8, FULL };

inline constexpr std::array<AblationId, 9> kAllAblations = {AblationId::A1, AblationId::A2, AblationId::A3,
                                                           AblationId::A4, AblationId::A5, AblationId::A6,
                                                           AblationId::A7, AblationId::A8, AblationId::FULL};

inline std::string_view to_string(AblationId id) {
  constexpr std::array<std::string_view, 9> names = {"A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "FULL"};
  return names[static_cast<std::size_t>(id)];
}

inline AblationId parse_ablation(std::string_view s) {
  for (AblationId id : kAllAblations)
    if (to_string(id) == s) return id;
  throw ConfigError("unknown ablation id '" + std::string(s) + "'");
}

struct AblationSetup {
  LbiConfig config;
  FrozenMask frozen;
};

inline AblationSetup ablation_config(AblationId id, const LbiConfig& base) {
  AblationSetup s{base, {}};
  s.config.mode = Mode::extended;
  switch (id) {
    case AblationId::A1:
      s.config.lambda = 0.0;
      s.config.gamma = 0.0;
      s.frozen = {true, true};
      break;
    case AblationId::A2:
      s.config.lambda = 0.0;
      s.frozen.b = true;
      break;
    case AblationId::A3:
      s.config.lambda = 0.0;
      break;
    case AblationId::A4:
      s.config.gamma = 0.0;
      s.frozen.a = true;
      break;
    case AblationId::A5:
      s.frozen = {true, true};
      break;
    case AblationId::A6:
      s.frozen.a = true;
      break;
    case AblationId::A7:
      s.config.gamma = 0.0;
      s.frozen.b = true;
      break;
    case AblationId::A8:
      s.frozen.b = true;
      break;
    case AblationId::FULL:
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Metrics

/// AUC of ranking pretraining examples by ascending effective weight against
/// the corrupted flag (corrupted = positive). Ties count one half. Empty when
/// either class is absent.
inline std::optional<double> corrupted_recovery_auc(std::span<const double> weights, const DatasetBundle& bundle) {
  detail::require(weights.size() == bundle.M(), "one weight per pretraining example required");
  const std::size_t n = weights.size();
  std::size_t pos = 0;
  for (const Example& e : bundle.pretrain) pos += e.corrupted ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  // Average ranks of the score -w (higher score = more suspicious).
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return weights[x] > weights[y]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && weights[order[j + 1]] == weights[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (bundle.pretrain[i].corrupted) rank_sum += rank[i];
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

struct RunResult {
  AblationId id = AblationId::FULL;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double test_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::vector<double> final_a;
  std::vector<double> final_b;
  std::optional<double> auc_a;
  std::optional<double> auc_b;
  LbiConfig config;
  FrozenMask frozen;
  std::vector<TraceRow> trace;
};

inline RunResult evaluate_run(AblationId id, std::uint64_t seed, const DatasetBundle& bundle,
                              const AblationSetup& setup) {
  RunResult r;
  r.id = id;
  r.seed = seed;
  r.config = setup.config;
  r.frozen = setup.frozen;
  try {
    RunOutput out = run(bundle, setup.config, setup.frozen);
    r.trace = std::move(out.state.trace);
    if (!out.ok()) {
      r.ok = false;
      r.error = *out.failure;
      return r;
    }
    const LbiState& s = out.state;
    r.test_accuracy = accuracy(s.fine, bundle.test);
    r.val_accuracy = accuracy(s.fine, bundle.val);
    r.final_a = s.A.effective();
    r.final_b = s.B.effective();
    r.auc_a = corrupted_recovery_auc(r.final_a, bundle);
    r.auc_b = corrupted_recovery_auc(r.final_b, bundle);
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Matrix

/// Produces the bundle for a given run seed. Every ablation id sees the same
/// bundle and the same initialization for a given seed.
using BundleSource = std::function<DatasetBundle(std::uint64_t seed)>;

/// Synthetic source: the spec's seed is mixed with the run seed.
inline BundleSource synthetic_source(SynthSpec spec) {
  return [spec](std::uint64_t seed) {
    SynthSpec s = spec;
    s.seed = derive_seed(spec.seed, seed);
    return generate(s);
  };
}

/// The same bundle for every seed (external data).
inline BundleSource fixed_source(DatasetBundle bundle) {
  return [b = std::move(bundle)](std::uint64_t) { return b; };
}

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 with fewer than 2 values
  std::size_t count = 0;
};

inline Stat summarize(const std::vector<double>& v) {
  Stat s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct Aggregate {
  AblationId id = AblationId::FULL;
  std::size_t runs = 0;
  std::size_t failed = 0;
  Stat test_accuracy;
  Stat val_accuracy;
  Stat auc_a;
  Stat auc_b;
};

struct MatrixResult {
  std::vector<RunResult> rows;  // id-major, seeds in the given order
  std::vector<Aggregate> aggregates;

  const Aggregate& aggregate(AblationId id) const {
    for (const Aggregate& a : aggregates)
      if (a.id == id) return a;
    throw ContractViolation("ablation id not in matrix");
  }
};

namespace detail {

/// Runs fn(0..n-1) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
}

}  // namespace detail

inline Aggregate aggregate_runs(AblationId id, const std::vector<const RunResult*>& runs) {
  Aggregate a;
  a.id = id;
  a.runs = runs.size();
  std::vector<double> test, val, auc_a, auc_b;
  for (const RunResult* r : runs) {
    if (!r->ok) {
      ++a.failed;
      continue;
    }
    test.push_back(r->test_accuracy);
    val.push_back(r->val_accuracy);
    if (r->auc_a) auc_a.push_back(*r->auc_a);
    if (r->auc_b) auc_b.push_back(*r->auc_b);
  }
  a.test_accuracy = summarize(test);
  a.val_accuracy = summarize(val);
  a.auc_a = summarize(auc_a);
  a.auc_b = summarize(auc_b);
  return a;
}

inline MatrixResult run_matrix(const BundleSource& source, const std::vector<AblationId>& ids,
                               const std::vector<std::uint64_t>& seeds, const LbiConfig& base,
                               std::size_t threads = 1) {
  if (seeds.empty()) throw ConfigError("run_matrix needs at least one seed");
  if (ids.empty()) throw ConfigError("run_matrix needs at least one ablation id");
  validate(base);

  std::vector<DatasetBundle> bundles(seeds.size());
  std::vector<std::string> bundle_errors(seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    try {
      bundles[s] = source(seeds[s]);
    } catch (const std::exception& e) {
      bundle_errors[s] = e.what();
    }
  }

  MatrixResult out;
  out.rows.resize(ids.size() * seeds.size());
  detail::parallel_for(out.rows.size(), threads, [&](std::size_t cell) {
    const std::size_t i = cell / seeds.size(), s = cell % seeds.size();
    AblationSetup setup = ablation_config(ids[i], base);
    setup.config.seed = seeds[s];
    if (!bundle_errors[s].empty()) {
      RunResult& r = out.rows[cell];
      r.id = ids[i];
      r.seed = seeds[s];
      r.ok = false;
      r.error = bundle_errors[s];
      r.config = setup.config;
      r.frozen = setup.frozen;
      return;
    }
    out.rows[cell] = evaluate_run(ids[i], seeds[s], bundles[s], setup);
  });

  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<const RunResult*> runs;
    for (std::size_t s = 0; s < seeds.size(); ++s) runs.push_back(&out.rows[i * seeds.size() + s]);
    out.aggregates.push_back(aggregate_runs(ids[i], runs));
  }
  return out;
}

inline MatrixResult run_matrix(const SynthSpec& spec, const std::vector<AblationId>& ids,
                               const std::vector<std::uint64_t>& seeds, const LbiConfig& base,
                               std::size_t threads = 1) {
  validate(spec);
  return run_matrix(synthetic_source(spec), ids, seeds, base, threads);
}

// ---------------------------------------------------------------------------
// Sweeps over lambda or gamma with the full method.

enum class SweepParam { lambda, gamma };

inline std::string_view to_string(SweepParam p) { return p == SweepParam::lambda ? "lambda" : "gamma"; }

inline SweepParam parse_sweep_param(std::string_view s) {
  if (s == "lambda") return SweepParam::lambda;
  if (s == "gamma") return SweepParam::gamma;
  throw ConfigError("sweep parameter must be lambda or gamma, got '" + std::string(s) + "'");
}

inline const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> g = {1e-3, 3e-3, 7e-3, 2e-2, 5e-2};
  return g;
}

inline const std::vector<double>& default_gamma_grid() {
  static const std::vector<double> g = {1e-3, 1e-2, 1e-1, 1.0, 10.0};
  return g;
}

struct SweepPoint {
  double value = 0.0;
  Stat val_accuracy;
  Stat test_accuracy;
  std::size_t failed = 0;
};

struct SweepResult {
  SweepParam param = SweepParam::lambda;
  std::vector<SweepPoint> points;  // grid order
  std::size_t argmax = 0;          // highest mean validation accuracy, first on ties

  bool argmax_interior() const { return argmax > 0 && argmax + 1 < points.size(); }
};

inline SweepResult sweep(SweepParam param, const std::vector<double>& grid, const BundleSource& source,
                         const std::vector<std::uint64_t>& seeds, const LbiConfig& base,
                         std::size_t threads = 1, std::size_t min_points = 3) {
  if (grid.size() < min_points)
    throw ConfigError("sweep grid needs at least " + std::to_string(min_points) + " points");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  for (double v : grid)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("sweep values must be finite and >= 0");

  std::vector<DatasetBundle> bundles;
  for (std::uint64_t s : seeds) bundles.push_back(source(s));

  std::vector<RunResult> cells(grid.size() * seeds.size());
  detail::parallel_for(cells.size(), threads, [&](std::size_t cell) {
    const std::size_t g = cell / seeds.size(), s = cell % seeds.size();
    LbiConfig cfg = base;
    (param == SweepParam::lambda ? cfg.lambda : cfg.gamma) = grid[g];
    AblationSetup setup = ablation_config(AblationId::FULL, cfg);
    setup.config.seed = seeds[s];
    cells[cell] = evaluate_run(AblationId::FULL, seeds[s], bundles[s], setup);
  });

  SweepResult out;
  out.param = param;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    SweepPoint p;
    p.value = grid[g];
    std::vector<double> val, test;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const RunResult& r = cells[g * seeds.size() + s];
      if (!r.ok) {
        ++p.failed;
        continue;
      }
      val.push_back(r.val_accuracy);
      test.push_back(r.test_accuracy);
    }
    p.val_accuracy = summarize(val);
    p.test_accuracy = summarize(test);
    out.points.push_back(p);
  }
  for (std::size_t g = 1; g < out.points.size(); ++g)
    if (out.points[g].val_accuracy.mean > out.points[out.argmax].val_accuracy.mean) out.argmax = g;
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string results_csv(const MatrixResult& m) {
  std::string out = "id,seed,status,test_accuracy,val_accuracy,auc_a,auc_b,mean_a,mean_b,error\n";
  auto opt = [](const std::optional<double>& v) { return v ? io::fmt(*v) : std::string(); };
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return std::string();
    double s = 0.0;
    for (double x : v) s += x;
    return io::fmt(s / static_cast<double>(v.size()));
  };
  for (const RunResult& r : m.rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out += std::string(to_string(r.id)) + ',' + std::to_string(r.seed) + ',' + (r.ok ? "ok" : "failed") + ',' +
           (r.ok ? io::fmt(r.test_accuracy) : "") + ',' + (r.ok ? io::fmt(r.val_accuracy) : "") + ',' +
           opt(r.auc_a) + ',' + opt(r.auc_b) + ',' + mean(r.final_a) + ',' + mean(r.final_b) + ',' + err + '\n';
  }
  return out;
}

inline std::string aggregates_csv(const MatrixResult& m) {
  std::string out =
      "id,runs,failed,test_accuracy_mean,test_accuracy_std,val_accuracy_mean,val_accuracy_std,auc_a_mean,"
      "auc_a_std,auc_b_mean,auc_b_std\n";
  auto stat = [](const Stat& s) {
    return s.count ? io::fmt(s.mean) + ',' + io::fmt(s.stddev) : std::string(",");
  };
  for (const Aggregate& a : m.aggregates) {
    out += std::string(to_string(a.id)) + ',' + std::to_string(a.runs) + ',' + std::to_string(a.failed) + ',' +
           stat(a.test_accuracy) + ',' + stat(a.val_accuracy) + ',' + stat(a.auc_a) + ',' + stat(a.auc_b) + '\n';
  }
  return out;
}

inline nlohmann::json to_json(const Stat& s) {
  if (s.count == 0) return nullptr;
  return {{"mean", s.mean}, {"std", s.stddev}, {"n", s.count}};
}

inline nlohmann::json summary_json(const MatrixResult& m) {
  nlohmann::json aggs = nlohmann::json::array();
  for (const Aggregate& a : m.aggregates) {
    aggs.push_back({{"id", std::string(to_string(a.id))},
                    {"runs", a.runs},
                    {"failed", a.failed},
                    {"test_accuracy", to_json(a.test_accuracy)},
                    {"val_accuracy", to_json(a.val_accuracy)},
                    {"auc_a", to_json(a.auc_a)},
                    {"auc_b", to_json(a.auc_b)}});
  }
  return {{"rows", m.rows.size()}, {"aggregates", aggs}};
}

inline std::string sweep_csv(const SweepResult& s) {
  std::string out = std::string(to_string(s.param)) +
                    ",val_accuracy_mean,val_accuracy_std,test_accuracy_mean,test_accuracy_std,failed,argmax\n";
  for (std::size_t g = 0; g < s.points.size(); ++g) {
    const SweepPoint& p = s.points[g];
    out += io::fmt(p.value) + ',' + io::fmt(p.val_accuracy.mean) + ',' + io::fmt(p.val_accuracy.stddev) + ',' +
           io::fmt(p.test_accuracy.mean) + ',' + io::fmt(p.test_accuracy.stddev) + ',' + std::to_string(p.failed) +
           ',' + (g == s.argmax ? "1" : "0") + '\n';
  }
  return out;
}

inline nlohmann::json to_json(const SweepResult& s) {
  nlohmann::json pts = nlohmann::json::array();
  for (const SweepPoint& p : s.points)
    pts.push_back({{"value", p.value},
                   {"val_accuracy", to_json(p.val_accuracy)},
                   {"test_accuracy", to_json(p.test_accuracy)},
                   {"failed", p.failed}});
  return {{"param", std::string(to_string(s.param))},
          {"points", pts},
          {"argmax_index", s.argmax},
          {"argmax_value", s.points.empty() ? 0.0 : s.points[s.argmax].value},
          {"argmax_interior", s.argmax_interior()}};
}

}  // namespace lbi
