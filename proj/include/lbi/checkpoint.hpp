#pragma once

// Versioned JSON checkpoint of an LbiState and CSV rendering of its trace.

#include <string>

#include "json.hpp"
#include "lbi/engine.hpp"
#include "lbi/errors.hpp"
#include "lbi/io.hpp"

namespace lbi {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const IgnoreSet& s) {
  return {{"mode", std::string(to_string(s.mode))}, {"frozen", s.frozen}, {"raw", s.raw}};
}

inline nlohmann::json to_json(const LbiState& s) {
  const Arch& a = s.pre.arch;
  return {{"format", "lbi-state"},
          {"version", kCheckpointVersion},
          {"iteration", s.iteration},
          {"arch", {{"D", a.D}, {"hidden", a.hidden}, {"C", a.C}}},
          {"V", s.pre.encoder},
          {"J", s.pre.head},
          {"W", s.fine.encoder},
          {"H", s.fine.head},
          {"A", to_json(s.A)},
          {"B", to_json(s.B)}};
}

/// Inverse of to_json(LbiState). The trace is not stored.
inline LbiState state_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "lbi-state") throw ConfigError("not an lbi-state checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
    const auto& ja = j.at("arch");
    const Arch arch{ja.at("D").get<std::size_t>(), ja.at("hidden").get<std::size_t>(),
                    ja.at("C").get<std::size_t>()};
    LbiState s;
    s.iteration = j.at("iteration").get<std::size_t>();
    s.pre.arch = s.fine.arch = arch;
    s.pre.encoder = j.at("V").get<std::vector<double>>();
    s.pre.head = j.at("J").get<std::vector<double>>();
    s.fine.encoder = j.at("W").get<std::vector<double>>();
    s.fine.head = j.at("H").get<std::vector<double>>();
    if (!s.pre.shape_ok() || !s.fine.shape_ok()) throw ConfigError("checkpoint blocks do not match arch");
    auto ignore = [](const nlohmann::json& ji) {
      IgnoreSet set;
      set.mode = parse_ignore_mode(ji.at("mode").get<std::string>());
      set.frozen = ji.at("frozen").get<bool>();
      set.raw = ji.at("raw").get<std::vector<double>>();
      return set;
    };
    s.A = ignore(j.at("A"));
    s.B = ignore(j.at("B"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::string trace_csv_header() {
  return "iteration,pretrain_loss,train_loss,val_loss,hypergrad_a_norm,hypergrad_b_norm\n";
}

inline std::string to_csv(const std::vector<TraceRow>& trace) {
  std::string out = trace_csv_header();
  for (const TraceRow& r : trace) {
    out += std::to_string(r.iteration);
    for (double v : {r.pretrain_loss, r.train_loss, r.val_loss, r.hypergrad_a_norm, r.hypergrad_b_norm}) {
      out += ',';
      out += io::fmt(v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace lbi
