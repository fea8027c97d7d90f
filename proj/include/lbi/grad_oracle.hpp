#pragma once

// Finite-difference check of the closed-form ignore-score hypergradients.
//
// The numeric side perturbs one raw score, reruns the pretraining and
// finetuning steps from a private copy of the state and re-evaluates the
// validation loss. It never calls hypergrad_A / hypergrad_B.

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lbi/datasets.hpp"
#include "lbi/engine.hpp"
#include "lbi/errors.hpp"
#include "lbi/io.hpp"
#include "lbi/model.hpp"

namespace lbi {

enum class IgnoreWhich { A, B };

inline char to_char(IgnoreWhich w) { return w == IgnoreWhich::A ? 'A' : 'B'; }

/// Arithmetic used when replaying the lookahead. With the default rates an
/// A hypergradient is often 1e-8 or smaller, and a raw-score step of 1e-4
/// moves W' by roughly 1e-12: a double replay resolves that to only about
/// 1e-4 relative, and long double (64-bit mantissa) still leaves components
/// near 1e-11 at the round-off floor. The default replays in 113-bit binary
/// floating point, so only the O(step^2) truncation error remains. The
/// closed-form side is always evaluated in double.
enum class OraclePrecision { double_precision, extended, quad };

using QuadReal = boost::multiprecision::cpp_bin_float_quad;

inline std::string_view to_string(OraclePrecision p) {
  switch (p) {
    case OraclePrecision::double_precision:
      return "double";
    case OraclePrecision::extended:
      return "extended";
    case OraclePrecision::quad:
      break;
  }
  return "quad";
}

inline OraclePrecision parse_oracle_precision(std::string_view s) {
  if (s == "quad") return OraclePrecision::quad;
  if (s == "extended") return OraclePrecision::extended;
  if (s == "double") return OraclePrecision::double_precision;
  throw ConfigError("oracle precision must be quad, extended or double, got '" + std::string(s) + "'");
}

namespace detail {

template <typename T>
T lookahead_val_loss_as(const LbiState& state, const DatasetBundle& bundle, const LbiConfig& cfg) {
  check_state(state, bundle);
  const double pretrain_weight = cfg.mode == Mode::extended ? cfg.gamma : 0.0;
  const BasicParams<T> pre = cast_params<T>(state.pre);
  const BasicParams<T> fine = cast_params<T>(state.fine);
  // The J half of pre_next does not reach the validation loss; it is
  // recomputed anyway because it is part of the same step.
  const BasicParams<T> pre_next = pretrain_update(pre, state.A.effective(), bundle, cfg, state.iteration);
  const BasicParams<T> fine_next =
      finetune_update(fine, pre_next, state.B.effective(), bundle, cfg, state.iteration, pretrain_weight);
  const T v = batch_loss(fine_next, bundle.val);
  using std::isfinite;
  if (!isfinite(v)) throw NumericFailure("non-finite validation loss in oracle", state.iteration);
  return v;
}

}  // namespace detail

/// Sum of validation losses after one pretraining and one finetuning step.
inline double lookahead_val_loss(const LbiState& state, const DatasetBundle& bundle, const LbiConfig& cfg) {
  return detail::lookahead_val_loss_as<double>(state, bundle, cfg);
}

/// Central difference of the lookahead validation loss in raw score `index`.
inline double fd_val_loss_wrt_ignore(const LbiState& state, const DatasetBundle& bundle, const LbiConfig& cfg,
                                     IgnoreWhich which, std::size_t index, double step,
                                     OraclePrecision precision = OraclePrecision::quad) {
  detail::require(index < bundle.M(), "oracle index out of range");
  detail::require(step > 0.0, "oracle step must be positive");
  detail::require(which == IgnoreWhich::A || cfg.mode == Mode::extended, "B exists only in extended mode");
  auto central = [&]<typename T>(T) {
    auto at = [&](double raw) {
      LbiState copy = state;
      (which == IgnoreWhich::A ? copy.A : copy.B).raw[index] = raw;
      return detail::lookahead_val_loss_as<T>(copy, bundle, cfg);
    };
    const double r = (which == IgnoreWhich::A ? state.A : state.B).raw[index];
    return static_cast<double>((at(r + step) - at(r - step)) / (T(2) * static_cast<T>(step)));
  };
  switch (precision) {
    case OraclePrecision::double_precision:
      return central(0.0);
    case OraclePrecision::extended:
      return central((long double)0);
    case OraclePrecision::quad:
      break;
  }
  return central(QuadReal(0));
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

struct FdEntry {
  IgnoreWhich which = IgnoreWhich::A;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;         // at the report step
  double numeric_coarse = 0.0;  // at 10x the report step
  double abs_error = 0.0;
  double rel_error = 0.0;
  bool flagged = false;
  // Flagged, but the Richardson extrapolation of the two differences agrees
  // with the analytic value: curvature rather than an implementation error.
  bool truncation_suspect = false;
};

struct FdReport {
  std::vector<FdEntry> entries;
  double max_rel_error = 0.0;
  double step = 0.0;
  double tolerance = 1e-4;
  OraclePrecision precision = OraclePrecision::quad;

  bool passed() const {
    return std::none_of(entries.begin(), entries.end(), [](const FdEntry& e) { return e.flagged; });
  }
  std::size_t flagged_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const FdEntry& e) { return e.flagged; }));
  }
};

/// The closed-form side of the comparison. Tests substitute broken versions
/// to confirm the report catches them.
struct AnalyticHypergrads {
  std::function<std::vector<double>(const LbiState&, const ModelParams&, const ModelParams&,
                                    const DatasetBundle&, const LbiConfig&)>
      a = [](const LbiState& s, const ModelParams& pn, const ModelParams& fn, const DatasetBundle& b,
             const LbiConfig& c) { return hypergrad_A(s, pn, fn, b, c); };
  std::function<std::vector<double>(const LbiState&, const ModelParams&, const DatasetBundle&,
                                    const LbiConfig&)>
      b = [](const LbiState& s, const ModelParams& fn, const DatasetBundle& bd, const LbiConfig& c) {
        return hypergrad_B(s, fn, bd, c);
      };
};

inline FdReport verify_hypergrads(const LbiState& state, const DatasetBundle& bundle, const LbiConfig& cfg,
                                  double step = 1e-4, const AnalyticHypergrads& analytic = {},
                                  double tolerance = 1e-4,
                                  OraclePrecision precision = OraclePrecision::quad) {
  detail::require(bundle.M() <= 16, "verify_hypergrads is meant for desk-scale instances (M <= 16)");
  const ModelParams pre_next = pretrain_step(state, bundle, cfg);
  const ModelParams fine_next = finetune_step(state, pre_next, bundle, cfg);

  FdReport report;
  report.step = step;
  report.tolerance = tolerance;
  report.precision = precision;
  auto compare = [&](IgnoreWhich which, const std::vector<double>& values) {
    detail::require(values.size() == bundle.M(), "analytic hypergradient has wrong length");
    for (std::size_t i = 0; i < values.size(); ++i) {
      FdEntry e;
      e.which = which;
      e.index = i;
      e.analytic = values[i];
      e.numeric = fd_val_loss_wrt_ignore(state, bundle, cfg, which, i, step, precision);
      e.numeric_coarse = fd_val_loss_wrt_ignore(state, bundle, cfg, which, i, 10.0 * step, precision);
      e.abs_error = std::abs(e.analytic - e.numeric);
      e.rel_error = relative_error(e.analytic, e.numeric);
      e.flagged = e.rel_error >= tolerance;
      if (e.flagged) {
        const double extrapolated = (100.0 * e.numeric - e.numeric_coarse) / 99.0;
        e.truncation_suspect = relative_error(e.analytic, extrapolated) < tolerance;
      }
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(e);
    }
  };
  compare(IgnoreWhich::A, analytic.a(state, pre_next, fine_next, bundle, cfg));
  if (cfg.mode == Mode::extended) compare(IgnoreWhich::B, analytic.b(state, fine_next, bundle, cfg));
  return report;
}

inline std::string to_text(const FdReport& r) {
  std::string out;
  char line[192];
  std::snprintf(line, sizeof line, "%-3s %5s %12s %12s %12s %12s  %s\n", "set", "index", "analytic", "numeric",
                "abs_err", "rel_err", "status");
  out += line;
  for (const FdEntry& e : r.entries) {
    const char* status = !e.flagged ? "ok" : (e.truncation_suspect ? "FLAG (truncation?)" : "FLAG");
    std::snprintf(line, sizeof line, "%-3c %5zu %12.4g %12.4g %12.4g %12.4g  %s\n", to_char(e.which), e.index,
                  e.analytic, e.numeric, e.abs_error, e.rel_error, status);
    out += line;
  }
  std::snprintf(line, sizeof line, "step %.4g  tolerance %.4g  oracle %s  max rel err %.4g  flagged %zu/%zu\n",
                r.step, r.tolerance, std::string(to_string(r.precision)).c_str(), r.max_rel_error, r.flagged_count(),
                r.entries.size());
  out += line;
  return out;
}

inline nlohmann::json to_json(const FdReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const FdEntry& e : r.entries) {
    entries.push_back({{"set", std::string(1, to_char(e.which))},
                       {"index", e.index},
                       {"analytic", e.analytic},
                       {"numeric", e.numeric},
                       {"numeric_coarse", e.numeric_coarse},
                       {"abs_error", e.abs_error},
                       {"rel_error", e.rel_error},
                       {"flagged", e.flagged},
                       {"truncation_suspect", e.truncation_suspect}});
  }
  return {{"step", r.step},
          {"tolerance", r.tolerance},
          {"oracle_precision", std::string(to_string(r.precision))},
          {"max_rel_error", r.max_rel_error},
          {"passed", r.passed()},
          {"entries", entries}};
}

// ---------------------------------------------------------------------------
// Random desk-scale instances for verification.

struct VerifyInstanceSpec {
  std::size_t D = 4;
  std::size_t C = 3;
  std::size_t M = 6;
  std::size_t N = 4;
  std::size_t O = 3;
  std::uint64_t seed = 0;
  double param_scale = 0.5;
};

struct VerifyInstance {
  DatasetBundle bundle;
  LbiState state;
};

/// Random data and parameters, with raw ignore scores strictly inside the
/// clamp box (or spread over [-2, 2] for sigmoid) so every finite
/// difference sees a smooth map.
inline VerifyInstance make_verify_instance(const VerifyInstanceSpec& spec, const LbiConfig& cfg) {
  SynthSpec data;
  data.D = spec.D;
  data.C = spec.C;
  data.M = spec.M;
  data.N = spec.N;
  data.O = spec.O;
  data.test = 1;
  data.class_sep = 1.0;
  data.shift = 0.5;
  data.corrupt_frac = 0.25;
  data.seed = spec.seed;
  VerifyInstance inst;
  inst.bundle = generate(data);

  const Arch arch{spec.D, cfg.hidden, spec.C};
  Rng rng = Rng(spec.seed).split("verify.instance");
  inst.state.pre = init_params(arch, rng, spec.param_scale);
  inst.state.fine = init_params(arch, rng, spec.param_scale);
  auto scores = [&](IgnoreMode mode) {
    IgnoreSet s = IgnoreSet::all_ones(spec.M, mode);
    for (double& r : s.raw) r = mode == IgnoreMode::clamp ? rng.uniform(0.1, 0.9) : rng.uniform(-2.0, 2.0);
    return s;
  };
  inst.state.A = scores(cfg.ignore_mode);
  inst.state.B = scores(cfg.ignore_mode);
  return inst;
}

}  // namespace lbi
