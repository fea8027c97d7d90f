#pragma once

// Shared builders and reference computations for the unit tests.

#include <cmath>
#include <cstdint>
#include <vector>

#include "lbi/lbi.hpp"

namespace lbi::test {

/// Neumaier-compensated sum.
inline double compensated_sum(const std::vector<double>& v) {
  double sum = 0.0, c = 0.0;
  for (double x : v) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

inline std::vector<Example> random_examples(std::size_t n, std::size_t D, std::size_t C, Rng& rng,
                                            double scale = 1.0) {
  std::vector<Example> out(n);
  for (Example& e : out) {
    e.features.resize(D);
    for (double& x : e.features) x = scale * rng.normal();
    e.label = static_cast<std::size_t>(rng.below(C));
  }
  return out;
}

/// A small corrupted-source bundle, quick enough for many unit tests.
inline SynthSpec small_spec(std::uint64_t seed = 1) {
  SynthSpec s;
  s.D = 4;
  s.C = 3;
  s.M = 12;
  s.N = 8;
  s.O = 6;
  s.test = 30;
  s.class_sep = 2.0;
  s.shift = 0.5;
  s.corrupt_frac = 0.25;
  s.seed = seed;
  return s;
}

/// The corrupted-source bundle the ablation checks use.
inline SynthSpec corrupted_source_spec() {
  SynthSpec s;
  s.D = 5;
  s.C = 2;
  s.M = 200;
  s.N = 60;
  s.O = 40;
  s.test = 2000;
  s.class_sep = 3.0;
  s.shift = 1.0;
  s.corrupt_frac = 0.3;
  s.corrupt_kind = CorruptKind::label_flip;
  return s;
}

inline LbiConfig short_config(std::size_t iterations = 20) {
  LbiConfig c;
  c.iterations = iterations;
  return c;
}

}  // namespace lbi::test

namespace lbi::test {

/// Central difference of weighted_batch_loss in every parameter coordinate,
/// evaluated in long double so that only truncation error remains.
struct FdGrad {
  std::vector<double> d_encoder;
  std::vector<double> d_head;
};

inline FdGrad fd_grad(const ModelParams& p, std::span<const Example> ex, std::span<const double> w,
                      double step = 1e-5) {
  using LD = long double;
  const BasicParams<LD> base = cast_params<LD>(p);
  auto partial = [&](bool head, std::size_t k) {
    BasicParams<LD> plus = base, minus = base;
    (head ? plus.head : plus.encoder)[k] += step;
    (head ? minus.head : minus.encoder)[k] -= step;
    return static_cast<double>((weighted_batch_loss(plus, ex, w) - weighted_batch_loss(minus, ex, w)) /
                               (LD(2) * LD(step)));
  };
  FdGrad g;
  for (std::size_t k = 0; k < p.encoder.size(); ++k) g.d_encoder.push_back(partial(false, k));
  for (std::size_t k = 0; k < p.head.size(); ++k) g.d_head.push_back(partial(true, k));
  return g;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12});
}

}  // namespace lbi::test
