#pragma once

// Encoder + head classifiers with exact softmax cross-entropy gradients.
//
// Parameter layout (row-major throughout):
//
//   hidden == 0 (linear softmax)
//     encoder: E[C][D]          logits_c = sum_d E[c][d] x_d + b_c
//     head:    b[C]
//
//   hidden == h > 0 (one tanh hidden layer)
//     encoder: W1[h][D], b1[h]  z = tanh(W1 x + b1)
//     head:    W2[C][h], b2[C]  logits = W2 z + b2
//
// With hidden == 0 the logits are linear in all parameters, so the loss is
// convex along any parameter segment.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lbi/datasets.hpp"
#include "lbi/errors.hpp"
#include "lbi/rng.hpp"

namespace lbi {

struct Arch {
  std::size_t D = 0;
  std::size_t hidden = 0;
  std::size_t C = 0;

  std::size_t encoder_size() const noexcept { return hidden == 0 ? C * D : hidden * D + hidden; }
  std::size_t head_size() const noexcept { return hidden == 0 ? C : C * hidden + C; }

  friend bool operator==(const Arch&, const Arch&) = default;
};

/// Encoder and head blocks. The scalar type is a template parameter so the
/// finite-difference oracle can replay steps in extended precision; the
/// optimizer itself always uses double.
template <typename T>
struct BasicParams {
  Arch arch;
  std::vector<T> encoder;
  std::vector<T> head;

  BasicParams() = default;
  explicit BasicParams(Arch a) : arch(a), encoder(a.encoder_size(), T(0)), head(a.head_size(), T(0)) {}

  bool shape_ok() const noexcept {
    return encoder.size() == arch.encoder_size() && head.size() == arch.head_size();
  }

  friend bool operator==(const BasicParams&, const BasicParams&) = default;
};

/// Gradient with the same block shapes as the parameters it differentiates.
template <typename T>
struct BasicGrad {
  std::vector<T> d_encoder;
  std::vector<T> d_head;

  BasicGrad() = default;
  explicit BasicGrad(const Arch& a) : d_encoder(a.encoder_size(), T(0)), d_head(a.head_size(), T(0)) {}

  friend bool operator==(const BasicGrad&, const BasicGrad&) = default;
};

using ModelParams = BasicParams<double>;
using GradBlock = BasicGrad<double>;

template <typename U, typename T>
BasicParams<U> cast_params(const BasicParams<T>& p) {
  BasicParams<U> out;
  out.arch = p.arch;
  out.encoder.assign(p.encoder.begin(), p.encoder.end());
  out.head.assign(p.head.begin(), p.head.end());
  return out;
}

/// Entries i.i.d. uniform in [-scale, scale].
inline ModelParams init_params(const Arch& arch, Rng& rng, double scale = 0.1) {
  ModelParams p(arch);
  for (double& x : p.encoder) x = rng.uniform(-scale, scale);
  for (double& x : p.head) x = rng.uniform(-scale, scale);
  return p;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), "squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
  using std::isfinite;
  return std::all_of(v.begin(), v.end(), [](const T& x) { return isfinite(x); });
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

template <typename T>
bool all_finite(const BasicGrad<T>& g) {
  return all_finite(g.d_encoder) && all_finite(g.d_head);
}

namespace detail {

template <typename T>
void check_shapes(const BasicParams<T>& p, const Example& ex) {
  require(p.shape_ok(), "parameter blocks do not match their arch");
  require(ex.features.size() == p.arch.D, "example dimension does not match model D");
  require(ex.label < p.arch.C, "example label outside [0, C)");
}

/// Forward pass. Fills `hidden_out` (tanh activations, empty for the linear
/// model) and `logits`.
template <typename T>
void forward(const BasicParams<T>& p, std::span<const double> x, std::vector<T>& hidden_out,
             std::vector<T>& logits) {
  const Arch& a = p.arch;
  logits.assign(a.C, T(0));
  if (a.hidden == 0) {
    hidden_out.clear();
    for (std::size_t c = 0; c < a.C; ++c) {
      T z = p.head[c];
      const T* row = &p.encoder[c * a.D];
      for (std::size_t d = 0; d < a.D; ++d) z += row[d] * static_cast<T>(x[d]);
      logits[c] = z;
    }
    return;
  }
  const std::size_t h = a.hidden;
  hidden_out.resize(h);
  const T* b1 = &p.encoder[h * a.D];
  for (std::size_t j = 0; j < h; ++j) {
    T s = b1[j];
    const T* row = &p.encoder[j * a.D];
    for (std::size_t d = 0; d < a.D; ++d) s += row[d] * static_cast<T>(x[d]);
    using std::tanh;
    hidden_out[j] = tanh(s);
  }
  const T* b2 = &p.head[a.C * h];
  for (std::size_t c = 0; c < a.C; ++c) {
    T z = b2[c];
    const T* row = &p.head[c * h];
    for (std::size_t j = 0; j < h; ++j) z += row[j] * hidden_out[j];
    logits[c] = z;
  }
}

template <typename T>
T log_sum_exp(std::span<const T> z) {
  const T m = *std::max_element(z.begin(), z.end());
  using std::exp, std::log;
  T s = 0;
  for (const T& v : z) s += exp(v - m);
  return m + log(s);
}

/// Writes d loss / d params of one example into `g` (overwriting it) and
/// returns the loss.
template <typename T>
T example_grad(const BasicParams<T>& p, const Example& ex, BasicGrad<T>& g, std::vector<T>& hidden,
               std::vector<T>& logits) {
  const Arch& a = p.arch;
  forward(p, ex.features, hidden, logits);
  const T lse = log_sum_exp(std::span<const T>(logits));
  const T value = lse - logits[ex.label];
  // logits now hold the residual softmax - onehot.
  using std::exp;
  for (std::size_t c = 0; c < a.C; ++c) logits[c] = exp(logits[c] - lse);
  logits[ex.label] -= T(1);
  const auto& x = ex.features;

  if (a.hidden == 0) {
    for (std::size_t c = 0; c < a.C; ++c) {
      T* row = &g.d_encoder[c * a.D];
      for (std::size_t d = 0; d < a.D; ++d) row[d] = logits[c] * static_cast<T>(x[d]);
      g.d_head[c] = logits[c];
    }
    return value;
  }

  const std::size_t h = a.hidden;
  for (std::size_t c = 0; c < a.C; ++c) {
    T* row = &g.d_head[c * h];
    for (std::size_t j = 0; j < h; ++j) row[j] = logits[c] * hidden[j];
    g.d_head[a.C * h + c] = logits[c];
  }
  for (std::size_t j = 0; j < h; ++j) {
    T dz = 0;
    for (std::size_t c = 0; c < a.C; ++c) dz += logits[c] * p.head[c * h + j];
    const T da = dz * (T(1) - hidden[j] * hidden[j]);
    T* row = &g.d_encoder[j * a.D];
    for (std::size_t d = 0; d < a.D; ++d) row[d] = da * static_cast<T>(x[d]);
    g.d_encoder[h * a.D + j] = da;
  }
  return value;
}

}  // namespace detail

template <typename T>
std::vector<T> logits(const BasicParams<T>& p, const Example& ex) {
  detail::check_shapes(p, ex);
  std::vector<T> hidden, out;
  detail::forward(p, ex.features, hidden, out);
  return out;
}

/// Softmax cross-entropy of one example.
template <typename T>
T loss(const BasicParams<T>& p, const Example& ex) {
  const auto z = logits(p, ex);
  return detail::log_sum_exp(std::span<const T>(z)) - z[ex.label];
}

/// sum_i weights_i * loss(p, examples_i)
template <typename T>
T weighted_batch_loss(const BasicParams<T>& p, std::span<const Example> examples, std::span<const double> weights) {
  detail::require(examples.size() == weights.size(), "weights and examples differ in length");
  T s = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) s += static_cast<T>(weights[i]) * loss(p, examples[i]);
  return s;
}

/// Unweighted sum of losses.
template <typename T>
T batch_loss(const BasicParams<T>& p, std::span<const Example> examples) {
  T s = 0;
  for (const Example& e : examples) s += loss(p, e);
  return s;
}

/// Exact gradient of weighted_batch_loss. Accumulates weights_i * g_i in
/// example order.
template <typename T>
BasicGrad<T> grad(const BasicParams<T>& p, std::span<const Example> examples, std::span<const double> weights) {
  detail::require(examples.size() == weights.size(), "weights and examples differ in length");
  BasicGrad<T> total(p.arch), g(p.arch);
  std::vector<T> hidden, scratch;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    detail::check_shapes(p, examples[i]);
    detail::example_grad(p, examples[i], g, hidden, scratch);
    const T w = static_cast<T>(weights[i]);
    for (std::size_t k = 0; k < g.d_encoder.size(); ++k) total.d_encoder[k] += w * g.d_encoder[k];
    for (std::size_t k = 0; k < g.d_head.size(); ++k) total.d_head[k] += w * g.d_head[k];
  }
  return total;
}

/// Gradient of the unweighted loss sum.
template <typename T>
BasicGrad<T> grad(const BasicParams<T>& p, std::span<const Example> examples) {
  const std::vector<double> ones(examples.size(), 1.0);
  return grad(p, examples, ones);
}

/// Element i is the gradient of loss(p, examples_i).
template <typename T>
std::vector<BasicGrad<T>> per_example_grads(const BasicParams<T>& p, std::span<const Example> examples) {
  std::vector<BasicGrad<T>> out;
  out.reserve(examples.size());
  std::vector<T> hidden, scratch;
  for (const Example& e : examples) {
    detail::check_shapes(p, e);
    BasicGrad<T> g(p.arch);
    detail::example_grad(p, e, g, hidden, scratch);
    out.push_back(std::move(g));
  }
  return out;
}

/// Gradient of lambda * ||W - Vstar||^2 with respect to W.
template <typename T>
std::vector<T> proximity_grad(const std::vector<T>& W, const std::vector<T>& Vstar, double lambda) {
  detail::require(W.size() == Vstar.size(), "proximity_grad: encoder shapes differ");
  std::vector<T> out(W.size());
  const T two_lambda = T(2) * static_cast<T>(lambda);
  for (std::size_t k = 0; k < W.size(); ++k) out[k] = two_lambda * (W[k] - Vstar[k]);
  return out;
}

/// Index of the largest logit (lowest index on ties).
template <typename T>
std::size_t predict(const BasicParams<T>& p, const Example& ex) {
  const auto z = logits(p, ex);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

/// Top-1 accuracy; 0 on an empty set.
template <typename T>
double accuracy(const BasicParams<T>& p, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const Example& e : examples) hits += predict(p, e) == e.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

}  // namespace lbi
