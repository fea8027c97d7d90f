#pragma once

// Three-level learning-by-ignoring optimizer.
//
// Each iteration takes one gradient step per level and differentiates the
// validation loss through those steps:
//
//   V' = V - xi_V * grad_V  sum_i a_i L(V, J, pre_i)
//   J  = J - xi_J * grad_J  sum_i a_i L(V, J, pre_i)
//   W' = W - xi_W * grad_W [ sum_n L(W, H, tr_n) + lambda ||W - V'||^2
//                            + gamma sum_i b_i L(W, H, pre_i) ]
//   H' = H - xi_H * grad_H [ same objective ]
//   A  = A - xi_A * d/dA  sum_o L(W', H', val_o)
//   B  = B - xi_B * d/dB  sum_o L(W', H', val_o)      (extended mode)
//
// Both ignore vectors enter their objectives linearly, so the mixed second
// derivatives collapse to per-example first-order gradients:
//
//   dL_val/da_i = -2 xi_V xi_W lambda <grad_V L(V,J,pre_i), grad_W' L_val>
//   dL_val/db_i = -gamma ( xi_W <grad_W L(W,H,pre_i), grad_W' L_val>
//                        + xi_H <grad_H L(W,H,pre_i), grad_H' L_val> )
//
// times d effective / d raw for the active squashing. H' does not depend on
// V', so A reaches the validation loss through W' only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lbi/config.hpp"
#include "lbi/datasets.hpp"
#include "lbi/errors.hpp"
#include "lbi/model.hpp"
#include "lbi/rng.hpp"

namespace lbi {

/// Per-pretraining-example ignore weights, stored as raw scores.
struct IgnoreSet {
  std::vector<double> raw;
  IgnoreMode mode = IgnoreMode::clamp;
  // Frozen sets read as exactly 1 everywhere and never move.
  bool frozen = false;

  static constexpr double sigmoid_init = 4.0;

  /// Effective value 1 for every example (sigmoid: raw = +4, about 0.982).
  static IgnoreSet all_ones(std::size_t M, IgnoreMode mode, bool frozen = false) {
    IgnoreSet s;
    s.mode = mode;
    s.frozen = frozen;
    s.raw.assign(M, mode == IgnoreMode::clamp ? 1.0 : sigmoid_init);
    return s;
  }

  std::size_t size() const noexcept { return raw.size(); }

  double effective(std::size_t i) const {
    if (frozen) return 1.0;
    const double r = raw[i];
    if (mode == IgnoreMode::clamp) return std::min(std::max(r, 0.0), 1.0);
    return 1.0 / (1.0 + std::exp(-r));
  }

  std::vector<double> effective() const {
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = effective(i);
    return out;
  }

  /// d effective / d raw. Clamp mode treats the map as the identity (the
  /// projection lives in the update, not the objective).
  double chain(std::size_t i) const {
    if (frozen) return 0.0;
    if (mode == IgnoreMode::clamp) return 1.0;
    const double s = 1.0 / (1.0 + std::exp(-raw[i]));
    return s * (1.0 - s);
  }

  friend bool operator==(const IgnoreSet&, const IgnoreSet&) = default;
};

struct FrozenMask {
  bool a = false;
  bool b = false;

  friend bool operator==(const FrozenMask&, const FrozenMask&) = default;
};

struct TraceRow {
  std::size_t iteration = 0;
  double pretrain_loss = 0.0;  // sum_i a_i L(V, J, pre_i) at the incoming state
  double train_loss = 0.0;     // sum_n L(W, H, tr_n) at the incoming state
  double val_loss = 0.0;       // sum_o L(W', H', val_o) after this iteration's steps
  double hypergrad_a_norm = 0.0;
  double hypergrad_b_norm = 0.0;

  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct LbiState {
  ModelParams pre;   // encoder V, head J
  ModelParams fine;  // encoder W, head H
  IgnoreSet A;
  IgnoreSet B;
  std::size_t iteration = 0;
  std::vector<TraceRow> trace;

  friend bool operator==(const LbiState&, const LbiState&) = default;
};

inline Arch arch_for(const DatasetBundle& b, const LbiConfig& cfg) { return Arch{b.D, cfg.hidden, b.C}; }

/// V, J, W, H drawn i.i.d. U[-0.1, 0.1] from independent streams of cfg.seed;
/// A and B start at effective value 1.
inline LbiState init_state(const DatasetBundle& bundle, const LbiConfig& cfg, FrozenMask frozen = {}) {
  const Arch arch = arch_for(bundle, cfg);
  const Rng root(cfg.seed);
  Rng rv = root.split("init.V"), rj = root.split("init.J");
  Rng rw = root.split("init.W"), rh = root.split("init.H");
  LbiState s;
  s.pre = ModelParams(arch);
  s.fine = ModelParams(arch);
  for (double& x : s.pre.encoder) x = rv.uniform(-0.1, 0.1);
  for (double& x : s.pre.head) x = rj.uniform(-0.1, 0.1);
  for (double& x : s.fine.encoder) x = rw.uniform(-0.1, 0.1);
  for (double& x : s.fine.head) x = rh.uniform(-0.1, 0.1);
  s.A = IgnoreSet::all_ones(bundle.M(), cfg.ignore_mode, frozen.a);
  s.B = IgnoreSet::all_ones(bundle.M(), cfg.ignore_mode, frozen.b);
  return s;
}

/// Learning rates in force at a given iteration (step decay applied).
inline LearningRates rates_at(const LbiConfig& cfg, std::size_t iteration) {
  LearningRates r = cfg.lr;
  if (cfg.step_decay && iteration >= (cfg.iterations * 4) / 5) {
    r.V *= 0.1;
    r.J *= 0.1;
    r.W *= 0.1;
    r.H *= 0.1;
  }
  return r;
}

namespace detail {

inline void check_state(const LbiState& s, const DatasetBundle& b) {
  require(s.pre.shape_ok() && s.fine.shape_ok(), "state parameter blocks malformed");
  require(s.pre.arch == s.fine.arch, "pretraining and finetuning models differ in shape");
  require(s.A.size() == b.M() && s.B.size() == b.M(), "ignore sets must have one entry per pretraining example");
}

template <typename T>
void check_finite(const BasicGrad<T>& g, std::size_t iteration, const char* what) {
  if (!all_finite(g)) throw NumericFailure(std::string("non-finite gradient in ") + what, iteration);
}

/// p - lr * g, with the optional decoupled decay term.
template <typename T>
void descend(std::vector<T>& p, const std::vector<T>& g, double lr, double wd) {
  const T l = static_cast<T>(lr);
  if (wd == 0.0) {
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = p[k] - l * g[k];
  } else {
    const T w = static_cast<T>(wd);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = p[k] - l * g[k] - l * w * p[k];
  }
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// The two parameter updates on explicit inputs. The public step functions
// below wrap them for LbiState; the finite-difference oracle replays them in
// extended precision.

template <typename T>
BasicParams<T> pretrain_update(const BasicParams<T>& pre, std::span<const double> a, const DatasetBundle& bundle,
                               const LbiConfig& cfg, std::size_t iteration) {
  const LearningRates r = rates_at(cfg, iteration);
  const BasicGrad<T> g = grad(pre, bundle.pretrain, a);
  check_finite(g, iteration, "pretraining step");
  BasicParams<T> next = pre;
  descend(next.encoder, g.d_encoder, r.V, cfg.weight_decay);
  descend(next.head, g.d_head, r.J, cfg.weight_decay);
  return next;
}

/// `pretrain_weight` scales the b-weighted pretraining term (0 skips it).
template <typename T>
BasicParams<T> finetune_update(const BasicParams<T>& fine, const BasicParams<T>& pre_next,
                               std::span<const double> b, const DatasetBundle& bundle, const LbiConfig& cfg,
                               std::size_t iteration, double pretrain_weight) {
  require(pre_next.encoder.size() == fine.encoder.size(), "V' and W encoders differ in shape");
  const LearningRates r = rates_at(cfg, iteration);

  BasicGrad<T> g = grad(fine, bundle.train);
  if (cfg.lambda != 0.0) {
    const auto prox = proximity_grad(fine.encoder, pre_next.encoder, cfg.lambda);
    for (std::size_t k = 0; k < prox.size(); ++k) g.d_encoder[k] += prox[k];
  }
  if (pretrain_weight != 0.0 && bundle.M() > 0) {
    const BasicGrad<T> gp = grad(fine, bundle.pretrain, b);
    const T pw = static_cast<T>(pretrain_weight);
    for (std::size_t k = 0; k < g.d_encoder.size(); ++k) g.d_encoder[k] += pw * gp.d_encoder[k];
    for (std::size_t k = 0; k < g.d_head.size(); ++k) g.d_head[k] += pw * gp.d_head[k];
  }
  check_finite(g, iteration, "finetuning step");
  BasicParams<T> next = fine;
  descend(next.encoder, g.d_encoder, r.W, cfg.weight_decay);
  descend(next.head, g.d_head, r.H, cfg.weight_decay);
  return next;
}

}  // namespace detail

/// One weighted pretraining step from (V, J). A is read, never written.
inline ModelParams pretrain_step(const LbiState& state, const DatasetBundle& bundle, const LbiConfig& cfg) {
  detail::check_state(state, bundle);
  return detail::pretrain_update(state.pre, state.A.effective(), bundle, cfg, state.iteration);
}

namespace detail {

inline ModelParams finetune_step_impl(const LbiState& state, const ModelParams& pre_next,
                                      const DatasetBundle& bundle, const LbiConfig& cfg,
                                      double pretrain_weight) {
  check_state(state, bundle);
  return finetune_update(state.fine, pre_next, state.B.effective(), bundle, cfg, state.iteration, pretrain_weight);
}

}  // namespace detail

/// Train loss plus lambda-proximity to V'.
inline ModelParams finetune_step_basic(const LbiState& state, const ModelParams& pre_next,
                                       const DatasetBundle& bundle, const LbiConfig& cfg) {
  return detail::finetune_step_impl(state, pre_next, bundle, cfg, 0.0);
}

/// Basic step plus gamma * sum_i b_i L(W, H, pre_i).
inline ModelParams finetune_step_extended(const LbiState& state, const ModelParams& pre_next,
                                          const DatasetBundle& bundle, const LbiConfig& cfg) {
  detail::require(cfg.mode == Mode::extended, "finetune_step_extended requires extended mode");
  return detail::finetune_step_impl(state, pre_next, bundle, cfg, cfg.gamma);
}

inline ModelParams finetune_step(const LbiState& state, const ModelParams& pre_next,
                                 const DatasetBundle& bundle, const LbiConfig& cfg) {
  return cfg.mode == Mode::extended ? finetune_step_extended(state, pre_next, bundle, cfg)
                                    : finetune_step_basic(state, pre_next, bundle, cfg);
}

/// d sum_o L(W', H', val_o) / d rawA_i, closed form.
inline std::vector<double> hypergrad_A(const LbiState& state, const ModelParams& pre_next,
                                       const ModelParams& fine_next, const DatasetBundle& bundle,
                                       const LbiConfig& cfg) {
  detail::check_state(state, bundle);
  detail::require(pre_next.encoder.size() == fine_next.encoder.size(), "V' and W' encoders differ in shape");
  std::vector<double> out(bundle.M(), 0.0);
  if (cfg.lambda == 0.0 || state.A.frozen) return out;
  const LearningRates r = rates_at(cfg, state.iteration);
  const GradBlock val = grad(fine_next, bundle.val);
  detail::check_finite(val, state.iteration, "validation gradient");
  const auto rows = per_example_grads(state.pre, bundle.pretrain);
  const double coef = -2.0 * r.V * r.W * cfg.lambda;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = coef * dot(rows[i].d_encoder, val.d_encoder) * state.A.chain(i);
  return out;
}

/// d sum_o L(W', H', val_o) / d rawB_i, closed form. Extended mode only.
inline std::vector<double> hypergrad_B(const LbiState& state, const ModelParams& fine_next,
                                       const DatasetBundle& bundle, const LbiConfig& cfg) {
  detail::require(cfg.mode == Mode::extended, "hypergrad_B requires extended mode");
  detail::check_state(state, bundle);
  std::vector<double> out(bundle.M(), 0.0);
  if (cfg.gamma == 0.0 || state.B.frozen) return out;
  const LearningRates r = rates_at(cfg, state.iteration);
  const GradBlock val = grad(fine_next, bundle.val);
  detail::check_finite(val, state.iteration, "validation gradient");
  const auto rows = per_example_grads(state.fine, bundle.pretrain);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double inner = r.W * dot(rows[i].d_encoder, val.d_encoder) + r.H * dot(rows[i].d_head, val.d_head);
    out[i] = -cfg.gamma * inner * state.B.chain(i);
  }
  return out;
}

/// Descent step on raw scores. Clamp mode projects onto [0,1].
inline IgnoreSet apply_ignore_update(IgnoreSet ignore, std::span<const double> g, double xi,
                                     std::size_t iteration = 0) {
  detail::require(g.size() == ignore.size(), "hypergradient length differs from ignore set");
  if (!all_finite(g)) throw NumericFailure("non-finite hypergradient", iteration);
  if (ignore.frozen) return ignore;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double r = ignore.raw[i] - xi * g[i];
    ignore.raw[i] = ignore.mode == IgnoreMode::clamp ? std::clamp(r, 0.0, 1.0) : r;
  }
  return ignore;
}

namespace detail {

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (k >= n) return idx;
  shuffle(idx, rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// The five updates on whatever (sub)bundle is given. Returns the next
/// state without the trace row appended and fills `row`.
inline LbiState iterate_on(const LbiState& state, const DatasetBundle& bundle, const LbiConfig& cfg,
                           TraceRow& row) {
  const ModelParams pre_next = pretrain_step(state, bundle, cfg);
  const ModelParams fine_next = finetune_step(state, pre_next, bundle, cfg);
  const auto ha = hypergrad_A(state, pre_next, fine_next, bundle, cfg);
  std::vector<double> hb(bundle.M(), 0.0);
  if (cfg.mode == Mode::extended) hb = hypergrad_B(state, fine_next, bundle, cfg);

  row.iteration = state.iteration;
  row.pretrain_loss = weighted_batch_loss(state.pre, bundle.pretrain, state.A.effective());
  row.train_loss = batch_loss(state.fine, bundle.train);
  row.val_loss = batch_loss(fine_next, bundle.val);
  row.hypergrad_a_norm = l2_norm(ha);
  row.hypergrad_b_norm = l2_norm(hb);

  LbiState next;
  next.pre = pre_next;
  next.fine = fine_next;
  next.A = apply_ignore_update(state.A, ha, cfg.lr.A, state.iteration);
  next.B = cfg.mode == Mode::extended ? apply_ignore_update(state.B, hb, cfg.lr.B, state.iteration) : state.B;
  next.iteration = state.iteration + 1;
  return next;
}

}  // namespace detail

/// One pass of the five updates; commits V', J, W', H', A, B and appends a
/// trace row. With cfg.batch_size > 0, each split is subsampled without
/// replacement and only the sampled ignore scores move.
inline LbiState lbi_iteration(const LbiState& state, const DatasetBundle& bundle, const LbiConfig& cfg) {
  detail::check_state(state, bundle);
  TraceRow row;
  if (cfg.batch_size == 0) {
    LbiState next = detail::iterate_on(state, bundle, cfg, row);
    next.trace = state.trace;
    next.trace.push_back(row);
    return next;
  }

  Rng rng = Rng(cfg.seed).split("batch").split(static_cast<std::uint64_t>(state.iteration));
  const auto pre_idx = detail::sample_indices(bundle.M(), cfg.batch_size, rng);
  const auto tr_idx = detail::sample_indices(bundle.N(), cfg.batch_size, rng);
  const auto val_idx = detail::sample_indices(bundle.O(), cfg.batch_size, rng);

  DatasetBundle batch;
  batch.D = bundle.D;
  batch.C = bundle.C;
  batch.pretrain = detail::gather(bundle.pretrain, pre_idx);
  batch.train = detail::gather(bundle.train, tr_idx);
  batch.val = detail::gather(bundle.val, val_idx);

  LbiState sub;
  sub.pre = state.pre;
  sub.fine = state.fine;
  sub.A = state.A;
  sub.A.raw = detail::gather(state.A.raw, pre_idx);
  sub.B = state.B;
  sub.B.raw = detail::gather(state.B.raw, pre_idx);
  sub.iteration = state.iteration;

  LbiState next_sub = detail::iterate_on(sub, batch, cfg, row);
  LbiState next;
  next.pre = std::move(next_sub.pre);
  next.fine = std::move(next_sub.fine);
  next.A = state.A;
  next.B = state.B;
  for (std::size_t j = 0; j < pre_idx.size(); ++j) {
    next.A.raw[pre_idx[j]] = next_sub.A.raw[j];
    next.B.raw[pre_idx[j]] = next_sub.B.raw[j];
  }
  next.iteration = next_sub.iteration;
  next.trace = state.trace;
  next.trace.push_back(row);
  return next;
}

struct RunOutput {
  LbiState state;
  std::optional<std::string> failure;  // set when a numeric failure aborted the run
  std::optional<std::size_t> failed_iteration;

  bool ok() const noexcept { return !failure.has_value(); }
};

/// Continues `state` until state.iteration reaches cfg.iterations. A numeric
/// failure stops the loop and returns the partial trace.
inline RunOutput run_from(LbiState state, const DatasetBundle& bundle, const LbiConfig& cfg) {
  validate(cfg);
  RunOutput out;
  while (state.iteration < cfg.iterations) {
    try {
      state = lbi_iteration(state, bundle, cfg);
    } catch (const NumericFailure& e) {
      out.failure = e.what();
      out.failed_iteration = e.iteration();
      break;
    }
  }
  out.state = std::move(state);
  return out;
}

inline RunOutput run(const DatasetBundle& bundle, const LbiConfig& cfg, FrozenMask frozen = {}) {
  validate(cfg);
  bundle.validate();
  return run_from(init_state(bundle, cfg, frozen), bundle, cfg);
}

}  // namespace lbi
