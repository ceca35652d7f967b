// mrirest: dataset generation, training, evaluation and comparison front end.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mrirest/dataset.hpp"
#include "mrirest/errors.hpp"
#include "mrirest/metrics.hpp"
#include "mrirest/report.hpp"
#include "mrirest/selftest.hpp"
#include "mrirest/training.hpp"

namespace fs = std::filesystem;
using namespace mrirest;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kIo = 2;

struct GenDataArgs {
  std::string task = "recon";
  std::size_t n_train = 64, n_val = 64, n_test = 0, size = 64;
  std::uint64_t seed = 0;
  std::string out = "data";
  int accel = 4, coils = 1, ellipses = 10;
  double center_frac = 0.08, keep_frac = 0.0625, sigma0 = 0.05, alpha = 3.0, noise_sigma = 0.0;
  bool force = false;
};

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<int> epochs;
  bool resume = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string split = "val";
  std::string out;
  std::optional<std::string> data;
  bool baseline = false;
  std::string task;
  std::size_t slices_per_volume = 8;
  std::uint64_t seed = 0;
};

struct CompareArgs {
  std::vector<std::string> runs;
  std::vector<std::string> names;
  std::string out = "comparison";
  std::string title = "Method comparison";
  std::uint64_t seed = 0;
};

struct SelftestArgs {
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  sim::DatasetParams p;
  p.task = sim::parse_task(a.task);
  p.n_train = a.n_train;
  p.n_val = a.n_val;
  p.n_test = a.n_test;
  p.size = a.size;
  p.seed = a.seed;
  p.ellipses = a.ellipses;
  p.accel = a.accel;
  p.center_frac = a.center_frac;
  p.coils = a.coils;
  p.noise_sigma = a.noise_sigma;
  p.keep_frac = a.keep_frac;
  p.sigma0 = a.sigma0;
  p.alpha = a.alpha;
  sim::generate_dataset(a.out, p, a.force);
  std::cout << (fs::path(a.out) / sim::to_string(p.task)).string() << "\n";
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  if (!fs::exists(a.config)) throw IoError("config file not found: " + a.config);
  train::ExperimentConfig cfg = train::ExperimentConfig::load(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.out) cfg.out_dir = *a.out;
  if (a.data) cfg.data_root = *a.data;
  if (a.epochs) cfg.epochs = *a.epochs;
  train::TrainOptions opts;
  if (a.resume) opts.resume_from = fs::path(cfg.out_dir) / "last.ckpt";

  const train::TrainResult r = train::train(cfg, opts);
  for (const auto& e : r.log) {
    std::printf("epoch %3d  loss %.6f  val_psnr %.3f dB  (%.1f s)\n", e.epoch, e.train_loss, e.val_psnr,
                e.wall_seconds);
  }
  std::printf("input PSNR %.3f dB, best %.3f dB at epoch %d\n", r.input_val_psnr, r.best_val_psnr, r.best_epoch);
  std::cout << r.best_checkpoint.string() << "\n";
  if (r.failed) {
    std::cerr << "run flagged failed: validation PSNR does not exceed the degraded input\n";
    return kValidation;
  }
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  metrics::MetricsReport report;
  if (a.baseline) {
    if (!a.data || a.task.empty()) throw ParameterError("--baseline needs --data and --task");
    report = train::evaluate_baseline(*a.data, sim::parse_task(a.task), a.split, a.slices_per_volume);
  } else {
    if (a.checkpoint.empty()) throw ParameterError("eval needs --checkpoint (or --baseline)");
    if (!fs::exists(a.checkpoint)) throw IoError("checkpoint not found: " + a.checkpoint);
    std::optional<fs::path> root;
    if (a.data) root = *a.data;
    report = train::evaluate(a.checkpoint, a.split, root);
  }
  fs::path out = a.out.empty() ? fs::path("eval_" + a.split + ".csv") : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  metrics::write_report_csv(out, report);
  std::cout << out.string() << "\n";
  return kOk;
}

int cmd_compare(const CompareArgs& a) {
  if (!a.names.empty() && a.names.size() != a.runs.size()) {
    throw ParameterError("--names must give one name per run");
  }
  std::vector<report::NamedReport> runs;
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    std::string name = a.names.empty() ? fs::path(a.runs[i]).stem().string() : a.names[i];
    for (const auto& r : runs)
      if (r.method == name) name += "#" + std::to_string(i + 1);
    runs.push_back({name, metrics::read_report_csv(a.runs[i])});
  }
  report::check_comparable(runs);
  fs::create_directories(a.out);
  const fs::path csv = fs::path(a.out) / "comparison.csv";
  const fs::path svg = fs::path(a.out) / "comparison.svg";
  report::write_merged_csv(csv, runs);
  std::ofstream os(svg);
  if (!os) throw IoError("cannot write " + svg.string());
  os << report::render_svg(runs, a.title);
  std::cout << report::render_table(runs) << csv.string() << "\n" << svg.string() << "\n";
  return kOk;
}

int cmd_selftest(const SelftestArgs& a) {
  const auto results = selftest::run_all(a.seed);
  std::size_t failed = 0;
  std::ostringstream text;
  for (const auto& r : results) {
    text << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "\n";
    failed += r.passed ? 0 : 1;
  }
  text << results.size() - failed << "/" << results.size() << " checks passed\n";
  std::cout << text.str();
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw IoError("cannot write " + a.out);
    os << text.str();
  }
  return failed == 0 ? kOk : kValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic MRI restoration: data generation, training, evaluation and comparison"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--task", gen.task, "recon | sr | denoise")->required();
  g->add_option("--n-train", gen.n_train, "Training samples")->capture_default_str();
  g->add_option("--n-val", gen.n_val, "Validation samples")->capture_default_str();
  g->add_option("--n-test", gen.n_test, "Test samples")->capture_default_str();
  g->add_option("--size", gen.size, "Image side length")->capture_default_str();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--out", gen.out, "Dataset root")->capture_default_str();
  g->add_option("--ellipses", gen.ellipses, "Ellipses per phantom")->capture_default_str();
  g->add_option("--accel", gen.accel, "recon: acceleration factor")->capture_default_str();
  g->add_option("--center-frac", gen.center_frac, "recon: fully sampled center fraction")->capture_default_str();
  g->add_option("--coils", gen.coils, "recon: receiver coils")->capture_default_str();
  g->add_option("--noise-sigma", gen.noise_sigma, "recon: k-space noise std")->capture_default_str();
  g->add_option("--keep-frac", gen.keep_frac, "sr: retained k-space area fraction")->capture_default_str();
  g->add_option("--sigma0", gen.sigma0, "denoise: base noise std")->capture_default_str();
  g->add_option("--alpha", gen.alpha, "denoise: sensitivity-loss noise gain")->capture_default_str();
  g->add_flag("--force", gen.force, "Overwrite an existing dataset");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model from a key=value config");
  t->add_option("--config", tr.config, "Config file")->required();
  t->add_option("--seed", tr.seed, "Override the config seed");
  t->add_option("--out", tr.out, "Override the output directory");
  t->add_option("--data", tr.data, "Override the dataset root");
  t->add_option("--epochs", tr.epochs, "Override the epoch count");
  t->add_flag("--resume", tr.resume, "Continue from <out>/last.ckpt");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or the model-free baseline");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train");
  e->add_option("--split", ev.split, "train | val | test")->capture_default_str();
  e->add_option("--out", ev.out, "Output CSV path");
  e->add_option("--data", ev.data, "Dataset root (defaults to the one in the checkpoint)");
  e->add_flag("--baseline", ev.baseline, "Evaluate zero-filled / degraded inputs instead of a model");
  e->add_option("--task", ev.task, "Task for --baseline");
  e->add_option("--slices-per-volume", ev.slices_per_volume, "Slices per volume for --baseline")
      ->capture_default_str();
  e->add_option("--seed", ev.seed, "Unused; accepted for uniformity");

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Merge eval CSVs into a table and an SVG chart");
  c->add_option("--runs", cmp.runs, "Eval CSVs")->required()->expected(2, -1);
  c->add_option("--names", cmp.names, "Method names, one per run");
  c->add_option("--out", cmp.out, "Output directory")->capture_default_str();
  c->add_option("--title", cmp.title, "Chart title")->capture_default_str();
  c->add_option("--seed", cmp.seed, "Unused; accepted for uniformity");

  SelftestArgs st;
  auto* s = app.add_subcommand("selftest", "Run the built-in invariant checks");
  s->add_option("--seed", st.seed, "Seed for random trials")->capture_default_str();
  s->add_option("--out", st.out, "Also write the report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kValidation;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (c->parsed()) return cmd_compare(cmp);
    if (s->parsed()) return cmd_selftest(st);
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kValidation;
  }
  return kValidation;
}
