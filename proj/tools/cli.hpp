#pragma once

// The `lbi` command-line driver. Kept in a header so the test suite can call
// run_cli() in-process.
//
// Exit codes:
//   0  success
//   1  verify: a hypergradient disagreed with the oracle; any command: I/O error
//   2  bad configuration or command line (nothing is written)
//   3  run: numeric failure (partial trace and manifest are still written)
//   4  ablate/sweep: at least one cell failed (tables are still written)

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lbi/lbi.hpp"
#include "lbi/settings.hpp"
#include "manifest.hpp"

namespace lbi::cli {

namespace fs = std::filesystem;

enum Exit : int { ok = 0, failed = 1, config_error = 2, numeric_error = 3, cell_error = 4 };

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

/// A config argument may also be a manifest written by an earlier command;
/// its resolved config document is reused, so reruns start from exactly the
/// same settings.
inline std::string config_text(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  std::string text = io::read_file(path);
  if (fs::path(path).extension() == ".json") {
    try {
      return nlohmann::json::parse(text).at("config_document").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("not a manifest with a config_document: " + std::string(e.what()));
    }
  }
  return text;
}

inline Settings resolve_settings(const CommonArgs& a) {
  std::vector<std::string> overrides = a.overrides;
  if (a.seed) overrides.push_back("seed=" + std::to_string(*a.seed));
  if (a.threads) overrides.push_back("run.threads=" + std::to_string(*a.threads));
  return parse_settings(config_text(a.config), overrides);
}

inline fs::path output_dir(const CommonArgs& a, std::string_view command) {
  if (!a.out.empty()) return a.out;
  const char* root = std::getenv("LBI_OUT_ROOT");
  return fs::path(root && *root ? root : "lbi_out") / std::string(command);
}

/// The bundle a run seed sees. Synthetic data mixes the run seed into the
/// data seed, exactly like the experiment matrix does.
inline BundleSource bundle_source(const Settings& s) {
  if (s.data.kind == DataKind::csv) return fixed_source(load_csv(s.data.path));
  return synthetic_source(s.data.synth);
}

/// Hashes of everything that determines the outputs besides the code.
inline nlohmann::json input_hashes(const Settings& s, const std::string& document) {
  nlohmann::json j;
  std::string combined = "config\n" + document;
  j["config_sha1"] = git_blob_sha1(document);
  if (s.data.kind == DataKind::csv) {
    const std::string data = io::read_file(s.data.path);
    j["data_sha1"] = git_blob_sha1(data);
    combined += "data\n" + data;
    if (const fs::path side = sidecar_path(s.data.path); fs::exists(side)) {
      const std::string sc = io::read_file(side);
      j["sidecar_sha1"] = git_blob_sha1(sc);
      combined += "sidecar\n" + sc;
    }
  }
  j["combined_sha1"] = git_blob_sha1(combined);
  return j;
}

struct ManifestWriter {
  ManifestWriter(std::string cmd, Settings s) : command(std::move(cmd)), settings(std::move(s)) {}

  std::string command;
  Settings settings;
  std::string started = utc_timestamp();
  std::vector<std::string> outputs;
  nlohmann::json extra = nlohmann::json::object();

  void write(const fs::path& dir) const {
    const std::string document = to_document(settings);
    nlohmann::json data;
    if (settings.data.kind == DataKind::csv) data = {{"path", settings.data.path.string()}};
    else data = {{"synth_spec", to_json(settings.data.synth)}};
    nlohmann::json j = {{"artifact", "lbi"},
                        {"version", std::string(kArtifactVersion)},
                        {"command", command},
                        {"config", to_json(settings)},
                        {"config_document", document},
                        {"data", data},
                        {"inputs", input_hashes(settings, document)},
                        {"outputs", outputs},
                        {"started_at", started},
                        {"finished_at", utc_timestamp()}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    io::write_file_atomic(dir / "manifest.json", j.dump(2) + '\n');
  }
};

inline void emit(const fs::path& dir, ManifestWriter& m, const std::string& name, std::string_view content) {
  io::write_file_atomic(dir / name, content);
  m.outputs.push_back(name);
}

// ---------------------------------------------------------------------------

struct RunArgs {
  CommonArgs common;
  std::string resume;
};

inline int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  const Settings s = resolve_settings(args.common);
  const LbiConfig& cfg = s.lbi;
  const DatasetBundle bundle = bundle_source(s)(cfg.seed);
  bundle.validate();

  LbiState start;
  if (!args.resume.empty()) {
    if (!fs::exists(args.resume)) throw ConfigError("checkpoint not found: " + args.resume);
    start = state_from_json(nlohmann::json::parse(io::read_file(args.resume)));
    if (!(start.pre.arch == arch_for(bundle, cfg)) || start.A.raw.size() != bundle.M() ||
        start.B.raw.size() != bundle.M())
      throw ConfigError("checkpoint does not match the configured data and model");
  } else {
    start = init_state(bundle, cfg);
  }

  const fs::path dir = output_dir(args.common, "run");
  ManifestWriter manifest{"run", s};
  if (!args.resume.empty()) manifest.extra["resumed_from"] = args.resume;
  const RunOutput result = run_from(std::move(start), bundle, cfg);

  emit(dir, manifest, "trace.csv", to_csv(result.state.trace));
  emit(dir, manifest, "state.json", to_json(result.state).dump(2) + '\n');
  nlohmann::json status = {{"ok", result.ok()}, {"iterations", result.state.iteration}};
  if (result.ok()) {
    status["train_accuracy"] = accuracy(result.state.fine, bundle.train);
    status["val_accuracy"] = accuracy(result.state.fine, bundle.val);
    status["test_accuracy"] = accuracy(result.state.fine, bundle.test);
    const auto a = result.state.A.effective();
    if (auto auc = corrupted_recovery_auc(a, bundle)) status["auc_a"] = *auc;
  } else {
    status["error"] = *result.failure;
    status["failed_iteration"] = *result.failed_iteration;
  }
  manifest.extra["result"] = status;
  manifest.write(dir);

  if (!result.ok()) {
    err << "numeric failure: " << *result.failure << '\n';
    return numeric_error;
  }
  out << "iterations " << result.state.iteration << "  val acc " << io::fmt(status["val_accuracy"].get<double>(), 4)
      << "  test acc " << io::fmt(status["test_accuracy"].get<double>(), 4);
  if (status.contains("auc_a")) out << "  auc(A) " << io::fmt(status["auc_a"].get<double>(), 4);
  out << "\nwrote " << dir.string() << '\n';
  return ok;
}

inline int cmd_verify(const CommonArgs& args, std::ostream& out) {
  Settings s = resolve_settings(args);
  VerifyInstanceSpec spec = s.verify.instance;
  if (args.seed) spec.seed = *args.seed;
  if (spec.M > 16) throw ConfigError("verify.M must be at most 16");
  const VerifyInstance inst = make_verify_instance(spec, s.lbi);
  const FdReport report =
      verify_hypergrads(inst.state, inst.bundle, s.lbi, s.verify.step, {}, s.verify.tolerance, s.verify.precision);

  const fs::path dir = output_dir(args, "verify");
  ManifestWriter manifest{"verify", s};
  const std::string text = to_text(report);
  emit(dir, manifest, "fd_report.txt", text);
  emit(dir, manifest, "fd_report.json", to_json(report).dump(2) + '\n');
  manifest.extra["result"] = {{"passed", report.passed()}, {"max_rel_error", report.max_rel_error}};
  manifest.write(dir);

  out << text;
  out << (report.passed() ? "PASS" : "FAIL") << '\n';
  return report.passed() ? ok : failed;
}

inline std::string human_table(const MatrixResult& m) {
  std::string outs;
  char line[160];
  std::snprintf(line, sizeof line, "%-5s %4s %6s %10s %8s %10s %8s %8s %8s\n", "id", "runs", "failed", "test_acc",
                "(std)", "val_acc", "(std)", "auc_a", "auc_b");
  outs += line;
  auto cell = [](const Stat& st) { return st.count ? io::fmt(st.mean, 4) : std::string("-"); };
  for (const Aggregate& a : m.aggregates) {
    std::snprintf(line, sizeof line, "%-5s %4zu %6zu %10s %8s %10s %8s %8s %8s\n",
                  std::string(to_string(a.id)).c_str(), a.runs, a.failed, cell(a.test_accuracy).c_str(),
                  io::fmt(a.test_accuracy.stddev, 4).c_str(), cell(a.val_accuracy).c_str(),
                  io::fmt(a.val_accuracy.stddev, 4).c_str(), cell(a.auc_a).c_str(), cell(a.auc_b).c_str());
    outs += line;
  }
  return outs;
}

inline int cmd_ablate(const CommonArgs& args, std::ostream& out) {
  Settings s = resolve_settings(args);
  if (args.seed) s.seeds = {*args.seed};
  const BundleSource source = bundle_source(s);

  const fs::path dir = output_dir(args, "ablate");
  ManifestWriter manifest{"ablate", s};
  const MatrixResult m = run_matrix(source, s.ids, s.seeds, s.lbi, s.threads);

  emit(dir, manifest, "results.csv", results_csv(m));
  emit(dir, manifest, "aggregates.csv", aggregates_csv(m));
  emit(dir, manifest, "summary.json", summary_json(m).dump(2) + '\n');
  std::size_t failures = 0;
  for (const RunResult& r : m.rows) {
    failures += r.ok ? 0 : 1;
    emit(dir, manifest,
         "traces/trace_" + std::string(to_string(r.id)) + "_s" + std::to_string(r.seed) + ".csv", to_csv(r.trace));
  }
  manifest.extra["result"] = {{"rows", m.rows.size()}, {"failed", failures}};
  manifest.write(dir);

  out << human_table(m) << "wrote " << dir.string() << '\n';
  return failures ? cell_error : ok;
}

struct SweepArgs {
  CommonArgs common;
  std::string param;
  std::string grid;
};

inline int cmd_sweep(const SweepArgs& args, std::ostream& out) {
  CommonArgs common = args.common;
  if (!args.param.empty()) common.overrides.push_back("sweep.param=" + args.param);
  if (!args.grid.empty()) common.overrides.push_back("sweep.grid=" + args.grid);
  Settings s = resolve_settings(common);
  if (common.seed) s.seeds = {*common.seed};
  const BundleSource source = bundle_source(s);

  const fs::path dir = output_dir(common, "sweep");
  ManifestWriter manifest{"sweep", s};
  const SweepResult r = sweep(s.sweep_param, s.grid(), source, s.seeds, s.lbi, s.threads);

  emit(dir, manifest, "sweep.csv", sweep_csv(r));
  emit(dir, manifest, "sweep.json", to_json(r).dump(2) + '\n');
  std::size_t failures = 0;
  for (const SweepPoint& p : r.points) failures += p.failed;
  manifest.extra["result"] = {{"points", r.points.size()}, {"failed", failures}};
  manifest.write(dir);

  char line[128];
  std::snprintf(line, sizeof line, "%-10s %10s %10s\n", std::string(to_string(r.param)).c_str(), "val_acc",
                "test_acc");
  out << line;
  for (std::size_t g = 0; g < r.points.size(); ++g) {
    const SweepPoint& p = r.points[g];
    std::snprintf(line, sizeof line, "%-10s %10s %10s%s\n", io::fmt(p.value, 4).c_str(),
                  io::fmt(p.val_accuracy.mean, 4).c_str(), io::fmt(p.test_accuracy.mean, 4).c_str(),
                  g == r.argmax ? "  <- argmax" : "");
    out << line;
  }
  out << "argmax " << (r.argmax_interior() ? "interior" : "at an endpoint") << "\nwrote " << dir.string() << '\n';
  return failures ? cell_error : ok;
}

inline int cmd_gen_data(const CommonArgs& args, std::ostream& out) {
  const Settings s = resolve_settings(args);
  if (s.data.kind != DataKind::synthetic) throw ConfigError("gen-data needs data.source = synthetic");
  SynthSpec spec = s.data.synth;
  spec.seed = derive_seed(spec.seed, s.lbi.seed);
  const DatasetBundle b = generate(spec);

  const fs::path dir = output_dir(args, "gen-data");
  ManifestWriter manifest{"gen-data", s};
  emit(dir, manifest, "data.csv", to_csv(b));
  emit(dir, manifest, "data.csv.json", sidecar_json(b, &spec).dump(2) + '\n');
  manifest.write(dir);
  out << "M " << b.M() << "  N " << b.N() << "  O " << b.O() << "  test " << b.test.size() << "  corrupted "
      << b.corrupted_count() << "\nwrote " << (dir / "data.csv").string() << '\n';
  return ok;
}

struct EvalArgs {
  CommonArgs common;
  std::string state;
};

inline int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const Settings s = resolve_settings(args.common);
  if (!fs::exists(args.state)) throw ConfigError("state file not found: " + args.state);
  const LbiState st = state_from_json(nlohmann::json::parse(io::read_file(args.state)));
  const DatasetBundle bundle = bundle_source(s)(s.lbi.seed);
  if (st.fine.arch.D != bundle.D || st.fine.arch.C != bundle.C || st.A.raw.size() != bundle.M())
    throw ConfigError("state does not match the configured data");

  nlohmann::json r = {{"train_accuracy", accuracy(st.fine, bundle.train)},
                      {"val_accuracy", accuracy(st.fine, bundle.val)},
                      {"test_accuracy", accuracy(st.fine, bundle.test)},
                      {"pretrain_accuracy_of_V_J", accuracy(st.pre, bundle.pretrain)}};
  if (auto auc = corrupted_recovery_auc(st.A.effective(), bundle)) r["auc_a"] = *auc;
  if (auto auc = corrupted_recovery_auc(st.B.effective(), bundle)) r["auc_b"] = *auc;

  const fs::path dir = output_dir(args.common, "eval");
  ManifestWriter manifest{"eval", s};
  manifest.extra["state"] = args.state;
  emit(dir, manifest, "eval.json", r.dump(2) + '\n');
  manifest.write(dir);
  for (auto it = r.begin(); it != r.end(); ++it) out << it.key() << ' ' << io::fmt(it.value().get<double>(), 4) << '\n';
  return ok;
}

// ---------------------------------------------------------------------------

inline void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("-c,--config", a.config, "key/value config document (or a manifest.json)");
  cmd->add_option("--set", a.overrides, "override a setting, key=value (repeatable)")->take_all();
  cmd->add_option("-o,--out", a.out, "output directory (default $LBI_OUT_ROOT/<command>)");
  cmd->add_option("--seed", a.seed, "run seed");
  cmd->add_option("--threads", a.threads, "worker threads for matrix / sweep cells");
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Learning-by-ignoring experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  RunArgs run_args;
  CommonArgs verify_args, ablate_args, gen_args;
  SweepArgs sweep_args;
  EvalArgs eval_args;
  bool list_keys = false;

  auto* run = app.add_subcommand("run", "one optimization run: trace, final state, manifest");
  add_common(run, run_args.common);
  run->add_option("--resume", run_args.resume, "continue from a state.json checkpoint");
  auto* verify = app.add_subcommand("verify", "finite-difference check of the hypergradients");
  add_common(verify, verify_args);
  auto* ablate = app.add_subcommand("ablate", "ablation matrix over ids x seeds");
  add_common(ablate, ablate_args);
  auto* sw = app.add_subcommand("sweep", "lambda or gamma sweep of the full method");
  add_common(sw, sweep_args.common);
  sw->add_option("--param", sweep_args.param, "lambda | gamma");
  sw->add_option("--grid", sweep_args.grid, "comma-separated values");
  auto* gen = app.add_subcommand("gen-data", "write a synthetic bundle as CSV plus sidecar");
  add_common(gen, gen_args);
  auto* eval = app.add_subcommand("eval", "accuracies and recovery AUC of a saved state");
  add_common(eval, eval_args.common);
  eval->add_option("--state", eval_args.state, "state.json from `run`")->required();
  auto* keys = app.add_subcommand("keys", "list every config key with its default");
  keys->callback([&] { list_keys = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return config_error;
  }

  try {
    if (list_keys) {
      out << to_document(Settings{});
      return ok;
    }
    if (run->parsed()) return cmd_run(run_args, out, err);
    if (verify->parsed()) return cmd_verify(verify_args, out);
    if (ablate->parsed()) return cmd_ablate(ablate_args, out);
    if (sw->parsed()) return cmd_sweep(sweep_args, out);
    if (gen->parsed()) return cmd_gen_data(gen_args, out);
    if (eval->parsed()) return cmd_eval(eval_args, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const ParseError& e) {
    err << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << '\n';
    return numeric_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return failed;
  }
  return config_error;
}

}  // namespace lbi::cli
