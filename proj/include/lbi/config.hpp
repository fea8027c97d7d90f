#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"
#include "lbi/errors.hpp"

namespace lbi {

/// basic: pretraining ignore weights A only. extended: A plus finetuning
/// ignore weights B on the pretraining examples, weighted by gamma.
enum class Mode { basic, extended };

/// How raw ignore scores map into [0,1].
enum class IgnoreMode { clamp, sigmoid };

inline std::string_view to_string(Mode m) { return m == Mode::basic ? "basic" : "extended"; }
inline std::string_view to_string(IgnoreMode m) { return m == IgnoreMode::clamp ? "clamp" : "sigmoid"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "basic") return Mode::basic;
  if (s == "extended") return Mode::extended;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

inline IgnoreMode parse_ignore_mode(std::string_view s) {
  if (s == "clamp") return IgnoreMode::clamp;
  if (s == "sigmoid") return IgnoreMode::sigmoid;
  throw ConfigError("unknown ignore_mode '" + std::string(s) + "'");
}

// Losses are summed, not averaged, so the parameter rates are smaller than
// the usual per-batch-mean SGD rates: with a few hundred summed examples a
// rate of 0.01 overshoots the curvature of the finetuning objective.
struct LearningRates {
  double V = 0.002;  // pretraining encoder
  double J = 0.002;  // pretraining head
  double W = 0.002;  // finetuning encoder
  double H = 0.002;  // finetuning head
  double A = 0.05;   // pretraining ignore scores
  double B = 0.05;   // finetuning ignore scores
};

struct LbiConfig {
  double lambda = 3e-3;  // proximity weight on ||W - V'||^2
  double gamma = 1.0;    // weight of the B-weighted pretraining loss in finetuning
  LearningRates lr;
  std::size_t iterations = 300;
  Mode mode = Mode::extended;
  IgnoreMode ignore_mode = IgnoreMode::clamp;
  std::uint64_t seed = 0;
  std::size_t hidden = 0;  // 0 = linear softmax, h > 0 = tanh MLP encoder
  // Optional schedule knobs, off by default.
  double weight_decay = 0.0;  // decoupled: p <- p - lr * (g + wd * p)
  bool step_decay = false;    // x0.1 on all parameter rates after 80% of iterations
  std::size_t batch_size = 0; // 0 = full batch
};

inline void validate(const LbiConfig& c) {
  auto finite_nonneg = [](double x) { return std::isfinite(x) && x >= 0.0; };
  auto finite_pos = [](double x) { return std::isfinite(x) && x > 0.0; };
  if (!finite_nonneg(c.lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (!finite_nonneg(c.gamma)) throw ConfigError("gamma must be finite and >= 0");
  if (!finite_nonneg(c.weight_decay)) throw ConfigError("weight_decay must be finite and >= 0");
  const LearningRates& r = c.lr;
  if (!(finite_pos(r.V) && finite_pos(r.J) && finite_pos(r.W) && finite_pos(r.H) && finite_pos(r.A)))
    throw ConfigError("learning rates must be finite and > 0");
  if (c.mode == Mode::extended && !finite_pos(r.B)) throw ConfigError("lr.B must be finite and > 0");
}

inline nlohmann::json to_json(const LbiConfig& c) {
  return {{"lambda", c.lambda},
          {"gamma", c.gamma},
          {"lr",
           {{"V", c.lr.V}, {"J", c.lr.J}, {"W", c.lr.W}, {"H", c.lr.H}, {"A", c.lr.A}, {"B", c.lr.B}}},
          {"iterations", c.iterations},
          {"mode", std::string(to_string(c.mode))},
          {"ignore_mode", std::string(to_string(c.ignore_mode))},
          {"seed", c.seed},
          {"hidden", c.hidden},
          {"weight_decay", c.weight_decay},
          {"step_decay", c.step_decay},
          {"batch_size", c.batch_size}};
}

}  // namespace lbi
