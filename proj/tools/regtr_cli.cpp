// regtr: data generation, training, evaluation and single-pair registration.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include "regtr/checkpoint.hpp"
#include "regtr/config.hpp"
#include "regtr/dataset.hpp"
#include "regtr/error.hpp"
#include "regtr/eval.hpp"
#include "regtr/gradsuite.hpp"
#include "regtr/log.hpp"
#include "regtr/model.hpp"
#include "regtr/pointcloud_io.hpp"
#include "regtr/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace regtr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

// Options shared by train and evaluate. Unset values leave the config alone.
struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool deterministic = false;
  std::optional<std::string> decoder;
  std::optional<std::size_t> layers;
  std::optional<std::string> loss_ablation;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  cmd->add_flag("--deterministic", o.deterministic, "Single thread, reproducible output");
  cmd->add_option("--decoder", o.decoder, "regress|weighted");
  cmd->add_option("--layers", o.layers, "Transformer layers");
  cmd->add_option("--loss-ablation", o.loss_ablation, "full|no-feat|circle|all-layers");
  cmd->add_option("--set", o.overrides, "Extra key=value config overrides");
}

RunConfig build_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.threads) cfg.train.threads = *o.threads;
  if (o.deterministic) cfg.train.deterministic = true;
  if (o.decoder) cfg.model.decoder = parse_decoder_kind(*o.decoder);
  if (o.layers) cfg.model.layers = *o.layers;
  if (o.loss_ablation) cfg.model.loss_ablation = parse_loss_ablation(*o.loss_ablation);
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

data::Manifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.txt";
  if (!fs::exists(path)) throw InvalidArgument("no manifest.txt in " + dir.string());
  return data::read_manifest(path);
}

std::vector<EvalPair> load_eval_pairs(const fs::path& dir) {
  const data::Manifest manifest = load_manifest(dir);
  std::vector<EvalPair> out;
  for (const auto& entry : manifest.entries) {
    const std::string scene = entry.scene.empty() ? std::string(synth::to_string(entry.kind)) : entry.scene;
    out.push_back({data::generate_pair(entry, manifest), scene});
  }
  return out;
}

std::vector<synth::ShapeKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<synth::ShapeKind> kinds;
  for (const std::string& list : names) {
    std::stringstream ss(list);
    std::string name;
    while (std::getline(ss, name, ',')) {
      if (!name.empty()) kinds.push_back(synth::parse_shape_kind(name));
    }
  }
  if (kinds.empty()) throw InvalidArgument("--kind: no shape kinds given");
  return kinds;
}

double parse_keep_fraction(const std::string& p) {
  if (p == "hi") return 0.7;
  if (p == "lo") return 0.5;
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(p, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != p.size() || !(v > 0 && v <= 1)) throw InvalidArgument("--p: expected hi, lo or a value in (0, 1], got '" + p + "'");
  return v;
}

// Model fields given on the command line or in a config must agree with the
// checkpoint; evaluating a checkpoint under a different architecture is an
// error rather than a silent reinterpretation.
void check_model_match(const ModelConfig& ckpt, const CommonOptions& o) {
  if (!o.config.empty() || !o.overrides.empty()) {
    const RunConfig cfg = build_config(o);
    if (model_config_text(cfg.model) != model_config_text(ckpt)) {
      throw InvalidArgument("model settings in --config/--set do not match the checkpoint");
    }
    return;
  }
  if (o.decoder && parse_decoder_kind(*o.decoder) != ckpt.decoder) {
    throw InvalidArgument("--decoder " + *o.decoder + " does not match the checkpoint (" +
                          std::string(to_string(ckpt.decoder)) + ")");
  }
  if (o.layers && *o.layers != ckpt.layers) {
    throw InvalidArgument("--layers " + std::to_string(*o.layers) + " does not match the checkpoint (" +
                          std::to_string(ckpt.layers) + ")");
  }
}

int cmd_gen_data(const fs::path& out, const std::vector<std::string>& kind_names, std::size_t pairs,
                 const std::string& p, std::size_t count, std::uint64_t seed, std::optional<double> noise) {
  synth::PairOptions options;
  options.resample_count = count;
  if (noise) options.noise_sigma = *noise;
  const data::Manifest manifest =
      data::make_manifest(seed, pairs, parse_kinds(kind_names), parse_keep_fraction(p), count, 1024, options);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  const auto written = data::write_dataset(out, manifest);
  double overlap = 0;
  for (const auto& pair : written) overlap += pair.overlap_fraction;
  std::cout << "pairs = " << written.size() << "\n";
  std::cout << "mean_overlap = " << overlap / static_cast<double>(std::max<std::size_t>(1, written.size())) << "\n";
  std::cout << "manifest = " << (out / "manifest.txt").string() << "\n";
  return kExitOk;
}

int cmd_train(const CommonOptions& o, const std::string& data_dir, const std::string& checkpoint,
              const std::string& curve, std::optional<std::size_t> epochs) {
  RunConfig cfg = build_config(o);
  if (!data_dir.empty()) cfg.train_data = data_dir;
  if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
  if (epochs) cfg.train.epochs = *epochs;
  if (cfg.train_data.empty()) throw InvalidArgument("train: no training data (--data or train_data)");
  if (cfg.checkpoint.empty()) throw InvalidArgument("train: no checkpoint path (--out or checkpoint)");

  const data::Manifest manifest = load_manifest(cfg.train_data);
  std::vector<TrainPair> pairs;
  for (const auto& entry : manifest.entries) pairs.push_back({data::generate_pair(entry, manifest), entry.seed});
  log::info("training on " + std::to_string(pairs.size()) + " pairs for " + std::to_string(cfg.train.epochs) +
            " epochs");

  const TrainResult result = train(pairs, cfg.model, cfg.train);
  const fs::path ckpt(cfg.checkpoint);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, cfg.model, result.params);
  const fs::path curve_path = curve.empty() ? fs::path(ckpt).replace_extension(".loss.csv") : fs::path(curve);
  write_loss_curve(curve_path, result.curve);
  std::cout << "checkpoint = " << ckpt.string() << "\n";
  std::cout << "loss_curve = " << curve_path.string() << "\n";
  if (!result.curve.empty()) std::cout << "final_loss = " << result.curve.back().loss_total << "\n";
  return kExitOk;
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint, const std::string& data_dir,
                 const std::string& out_dir, const std::string& solver, std::optional<double> success_threshold,
                 std::optional<std::size_t> ransac_iterations, std::optional<double> ransac_threshold) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  check_model_match(ckpt.config, o);
  RunConfig cfg = o.config.empty() && o.overrides.empty() ? RunConfig{} : build_config(o);
  std::string data = data_dir.empty() ? cfg.eval_data : data_dir;
  if (data.empty()) throw InvalidArgument("evaluate: no evaluation data (--data or eval_data)");

  BenchmarkOptions bo;
  bo.solver = parse_solver_kind(solver);
  bo.success_threshold = success_threshold.value_or(cfg.success_threshold);
  bo.ransac_iterations = ransac_iterations.value_or(cfg.ransac_iterations);
  bo.ransac_threshold = ransac_threshold.value_or(cfg.ransac_threshold);
  bo.seed = o.seed.value_or(cfg.train.seed);
  bo.threads = o.threads.value_or(cfg.train.threads);
  bo.deterministic = o.deterministic || cfg.train.deterministic;

  const std::vector<EvalPair> pairs = load_eval_pairs(data);
  const BenchmarkReport report = benchmark(pairs, ckpt.config, ckpt.params, bo);

  const fs::path out = out_dir.empty() ? fs::path(cfg.output_dir.empty() ? "." : cfg.output_dir) : fs::path(out_dir);
  fs::create_directories(out);
  write_report_csv(out / "report.csv", report.rows);
  if (!report.direct_rows.empty()) write_report_csv(out / "report_direct.csv", report.direct_rows);
  write_summary(out / "summary.txt", report);

  const auto& s = report.summary;
  std::cout << "solver = " << to_string(report.solver) << "\n";
  std::cout << "registration_recall = " << s.recall << " (" << s.successes << "/" << s.pairs << ")\n";
  std::cout << "rre_deg_median = " << s.rre_median_all << "\n";
  std::cout << "rte_median = " << s.rte_median_all << "\n";
  std::cout << "chamfer_mean = " << s.chamfer_mean << "\n";
  if (!report.direct_rows.empty()) {
    std::cout << "direct.registration_recall = " << report.direct_summary.recall << " ("
              << report.direct_summary.successes << "/" << report.direct_summary.pairs << ")\n";
  }
  std::cout << "report = " << (out / "report.csv").string() << "\n";
  return kExitOk;
}

int cmd_register(const std::string& checkpoint, const std::string& src, const std::string& tgt, const std::string& out,
                 const std::string& solver, std::uint64_t seed) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const PointCloud source = io::read_cloud(src);
  const PointCloud target = io::read_cloud(tgt);
  RegisterOptions ro;
  ro.solver = parse_solver_kind(solver);
  ro.seed = seed;
  const RegisterResult r = register_pair(source, target, ckpt.config, ckpt.params, ro);
  const Mat4 m = r.transform.matrix();
  std::cout << std::setprecision(9);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) std::cout << (j ? " " : "") << m(i, j);
    std::cout << "\n";
  }
  io::write_cloud(out, apply(r.transform, source));
  return kExitOk;
}

int cmd_grad_check(std::uint64_t seed, double tolerance) {
  GradSuiteOptions options;
  options.seed = seed;
  const auto cases = run_grad_suite(options);
  std::size_t failed = 0;
  for (const auto& c : cases) {
    const double err = c.report.max_rel_error();
    const bool ok = c.report.passed(tolerance);
    if (!ok) ++failed;
    std::printf("%s  %-24s max_rel_err=%.3e\n", ok ? "PASS" : "FAIL", c.name.c_str(), err);
    if (ok) continue;
    for (const auto& e : c.report.entries) {
      if (e.max_rel_error < tolerance) continue;
      std::printf("      %-24s max_rel_err=%.3e at [%zu] analytic=%.6e numeric=%.6e\n", e.name.c_str(),
                  e.max_rel_error, e.worst_index, e.analytic, e.numeric);
    }
  }
  std::printf("%zu/%zu checks passed (tolerance %.1e)\n", cases.size() - failed, cases.size(), tolerance);
  return failed == 0 ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer cross-encoder point cloud registration"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug|info|warn|error|off");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic pair dataset");
  std::string gen_out;
  std::vector<std::string> gen_kinds = {"sphere-cap,box"};
  std::size_t gen_pairs = 16, gen_count = 717;
  std::string gen_p = "hi";
  std::uint64_t gen_seed = 1;
  std::optional<double> gen_noise;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--kind", gen_kinds, "Shape kinds (comma separated or repeated)");
  gen->add_option("--pairs", gen_pairs, "Number of pairs");
  gen->add_option("--p", gen_p, "Kept fraction per cloud: hi (0.7), lo (0.5) or a value");
  gen->add_option("--count", gen_count, "Points per cloud");
  gen->add_option("--seed", gen_seed, "Base seed");
  gen->add_option("--noise", gen_noise, "Gaussian noise sigma");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  CommonOptions tr_opts;
  std::string tr_data, tr_out, tr_curve;
  std::optional<std::size_t> tr_epochs;
  add_common(tr, tr_opts);
  tr->add_option("--data", tr_data, "Training dataset directory");
  tr->add_option("--out", tr_out, "Checkpoint path");
  tr->add_option("--curve", tr_curve, "Loss curve CSV (default: next to the checkpoint)");
  tr->add_option("--epochs", tr_epochs, "Epochs");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Benchmark a checkpoint on a dataset");
  CommonOptions ev_opts;
  std::string ev_ckpt, ev_data, ev_out, ev_solver = "direct";
  std::optional<double> ev_thr, ev_rthr;
  std::optional<std::size_t> ev_iters;
  add_common(ev, ev_opts);
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory");
  ev->add_option("--out", ev_out, "Report directory");
  ev->add_option("--solver", ev_solver, "direct|ransac-baseline|regtr+ransac");
  ev->add_option("--success-threshold", ev_thr, "Correspondence RMSE threshold for success");
  ev->add_option("--ransac-iterations", ev_iters, "RANSAC iterations");
  ev->add_option("--ransac-threshold", ev_rthr, "RANSAC inlier threshold (0 = 2 * r_o)");

  // register
  auto* rg = app.add_subcommand("register", "Register one source cloud onto a target");
  std::string rg_ckpt, rg_src, rg_tgt, rg_out = "aligned.ply", rg_solver = "direct";
  std::uint64_t rg_seed = 0;
  rg->add_option("--checkpoint", rg_ckpt, "Checkpoint file")->required();
  rg->add_option("source", rg_src, "Source cloud (.ply or .bin)")->required();
  rg->add_option("target", rg_tgt, "Target cloud (.ply or .bin)")->required();
  rg->add_option("--out", rg_out, "Aligned source output");
  rg->add_option("--solver", rg_solver, "direct|ransac-baseline|regtr+ransac");
  rg->add_option("--seed", rg_seed, "RANSAC seed");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Run the finite-difference gradient suite");
  std::uint64_t gc_seed = 7;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "Input seed");
  gc->add_option("--tolerance", gc_tol, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (log_level == "debug") log::set_level(log::Level::kDebug);
    else if (log_level == "info") log::set_level(log::Level::kInfo);
    else if (log_level == "warn") log::set_level(log::Level::kWarn);
    else if (log_level == "error") log::set_level(log::Level::kError);
    else if (log_level == "off") log::set_level(log::Level::kOff);
    else throw InvalidArgument("--log-level: unknown level '" + log_level + "'");

    if (gen->parsed()) return cmd_gen_data(gen_out, gen_kinds, gen_pairs, gen_p, gen_count, gen_seed, gen_noise);
    if (tr->parsed()) return cmd_train(tr_opts, tr_data, tr_out, tr_curve, tr_epochs);
    if (ev->parsed()) {
      return cmd_evaluate(ev_opts, ev_ckpt, ev_data, ev_out, ev_solver, ev_thr, ev_iters, ev_rthr);
    }
    if (rg->parsed()) return cmd_register(rg_ckpt, rg_src, rg_tgt, rg_out, rg_solver, rg_seed);
    if (gc->parsed()) return cmd_grad_check(gc_seed, gc_tol);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
