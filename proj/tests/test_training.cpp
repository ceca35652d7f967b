#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "mrirest/training.hpp"
#include "oracles.hpp"

using namespace mrirest;
using namespace mrirest::train;
using oracle::TensorD;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig tiny_config(const fs::path& root, const std::string& run) {
  ExperimentConfig c;
  c.task = sim::Task::denoise;
  c.width = 4;
  c.enc_blocks = {1};
  c.dec_blocks = {1};
  c.groups = 2;
  c.data_root = root.string();
  c.out_dir = (root / run).string();
  c.epochs = 3;
  c.batch_size = 2;
  c.slices_per_volume = 2;
  c.seed = 5;
  c.lr = 2e-3;
  return c;
}

void make_tiny_dataset(const fs::path& root) {
  sim::DatasetParams p;
  p.task = sim::Task::denoise;
  p.n_train = 6;
  p.n_val = 4;
  p.size = 16;
  p.seed = 3;
  p.sigma0 = 0.08;
  sim::generate_dataset(root, p, true);
}

ParameterStore<double> params_of(const fs::path& ckpt) { return nn::load_checkpoint(ckpt).params; }

}  // namespace

TEST_CASE("L1 loss") {
  Tape<double> tape;
  TensorD p({4}), t({4});
  for (std::size_t i = 0; i < 4; ++i) {
    p[i] = static_cast<double>(i);
    t[i] = 1.5;
  }
  CHECK(loss_l1(tape.constant(p), tape.constant(t)).value()[0] == doctest::Approx(1.0));
  CHECK(loss_l1(tape.constant(p), tape.constant(p)).value()[0] == 0.0);
}

TEST_CASE("single Adam step by hand") {
  ParameterStore<double> st;
  TensorD w({2});
  w[0] = 1.0;
  w[1] = -2.0;
  st.add("w", w);
  GradientMap<double> g;
  TensorD gw({2});
  gw[0] = 0.5;
  gw[1] = -3.0;
  g["w"] = gw;
  OptimizerState<double> opt;
  opt.lr = 0.1;
  optimizer_step(st, g, opt);
  CHECK(opt.step == 1);
  for (std::size_t i = 0; i < 2; ++i) {
    const double m = 0.1 * gw[i] / (1 - 0.9), v = 0.001 * gw[i] * gw[i] / (1 - 0.999);
    CHECK(st.get("w")[i] == doctest::Approx(w[i] - 0.1 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-12));
  }
  // First step moves every coordinate by about lr regardless of gradient scale.
  CHECK(st.get("w")[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  ParameterStore<double> st;
  st.add("a", TensorD({3}, 1.5));
  GradientMap<double> g;
  g["a"] = TensorD({3});
  OptimizerState<double> opt;
  optimizer_step(st, g, opt);
  optimizer_step(st, g, opt);
  CHECK(opt.step == 2);
  CHECK(st.get("a") == TensorD({3}, 1.5));
}

TEST_CASE("non-finite gradients abort before any update") {
  ParameterStore<double> st;
  st.add("a", TensorD({2}, 1.0));
  st.add("b", TensorD({2}, 1.0));
  GradientMap<double> g;
  g["a"] = TensorD({2}, 0.5);
  g["b"] = TensorD({2}, 0.5);
  g["b"][1] = std::numeric_limits<double>::infinity();
  OptimizerState<double> opt;
  try {
    optimizer_step(st, g, opt);
    FAIL("expected NonFiniteGradientError");
  } catch (const NonFiniteGradientError& e) {
    CHECK(e.parameter() == "b");
  }
  CHECK(st.get("a") == TensorD({2}, 1.0));
  CHECK(opt.step == 0);
}

TEST_CASE("gradient clipping") {
  oracle::Rng rng(1);
  for (double max_norm : {0.1, 1.0, 100.0}) {
    GradientMap<double> g{{"x", oracle::randn({5}, rng)}, {"y", oracle::randn({2, 3}, rng)}};
    const double before = std::sqrt(oracle::inner(g["x"], g["x"]) + oracle::inner(g["y"], g["y"]));
    const double reported = clip_grad_norm(g, max_norm);
    const double after = std::sqrt(oracle::inner(g["x"], g["x"]) + oracle::inner(g["y"], g["y"]));
    CHECK(reported == doctest::Approx(before));
    CHECK(after <= before * (1 + 1e-12));
    CHECK(after == doctest::Approx(std::min(before, max_norm)));
  }
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(1e-3, 1e-5, 0, 100) == doctest::Approx(1e-3));
  CHECK(cosine_lr(1e-3, 1e-5, 100, 100) == doctest::Approx(1e-5));
  CHECK(cosine_lr(1e-3, 1e-5, 50, 100) == doctest::Approx(0.5 * (1e-3 + 1e-5)));
  CHECK(cosine_lr(1e-3, 1e-5, 30, 100) > cosine_lr(1e-3, 1e-5, 31, 100));
}

TEST_CASE("experiment config text") {
  ExperimentConfig c;
  c.task = sim::Task::sr;
  c.model = "lsg";
  c.enc_blocks = {2, 1, 1};
  c.dec_blocks = {1, 1, 2};
  c.lr = 3.3e-4;
  const ExperimentConfig back = ExperimentConfig::parse("# comment\n" + c.to_text());
  CHECK(back.to_map() == c.to_map());
  CHECK(back.lr == c.lr);

  CHECK_THROWS_AS(ExperimentConfig::parse("task=sr\nwidht=16\n"), ParameterError);
  CHECK_THROWS_AS(ExperimentConfig::parse("task=deblur\n"), ParameterError);
  CHECK_THROWS_AS(ExperimentConfig::parse("width=abc\n"), ParameterError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model=transformer\n").validate(), ParameterError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.txt"), IoError);
}

TEST_CASE("a small model overfits one sample") {
  TempDir dir("mrirest_overfit");
  make_tiny_dataset(dir.path);
  const auto samples = sim::load_split(dir.path, sim::Task::denoise, "train");
  REQUIRE(!samples.empty());
  ExperimentConfig cfg = tiny_config(dir.path, "run");
  cfg.width = 8;
  TaskModel<double> model(cfg);
  ParameterStore<double> params;
  model.declare(params);
  OptimizerState<double> opt;
  opt.lr = 3e-3;
  const TensorD target = target_magnitude(samples[0]);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    Tape<double> tape;
    ParamScope<double> scope(tape, params);
    Var<double> loss = loss_l1(model.predict(scope, samples[0]), tape.constant(target));
    tape.backward(loss);
    auto g = tape.gradients(params);
    clip_grad_norm(g, 1.0);
    optimizer_step(params, g, opt);
    (step == 0 ? first : last) = loss.value()[0];
  }
  MESSAGE("overfit loss " << first << " -> " << last);
  CHECK(last <= 0.1 * first);
}

TEST_CASE("training is repeatable and resumable") {
  TempDir dir("mrirest_train_repeat");
  make_tiny_dataset(dir.path);

  const TrainResult a = train::train(tiny_config(dir.path, "a"));
  const TrainResult b = train::train(tiny_config(dir.path, "b"));
  REQUIRE(a.log.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.log[e].train_loss == b.log[e].train_loss);
    CHECK(a.log[e].val_psnr == b.log[e].val_psnr);
  }
  const auto pa = params_of(a.last_checkpoint), pb = params_of(b.last_checkpoint);
  for (const auto& [name, t] : pa) CHECK(pb.get(name) == t);
  CHECK(fs::exists(dir.path / "a" / "config.txt"));
  CHECK(fs::exists(a.best_checkpoint));
  CHECK(a.input_val_psnr > 0.0);

  TrainOptions stop;
  stop.stop_after_epoch = 1;
  const TrainResult c1 = train::train(tiny_config(dir.path, "c"), stop);
  CHECK(c1.log.size() == 1);
  TrainOptions resume;
  resume.resume_from = c1.last_checkpoint;
  const TrainResult c2 = train::train(tiny_config(dir.path, "c"), resume);
  REQUIRE(c2.log.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) CHECK(c2.log[e].train_loss == a.log[e].train_loss);
  const auto pc = params_of(c2.last_checkpoint);
  for (const auto& [name, t] : pa) CHECK(pc.get(name) == t);
  CHECK(c2.best_val_psnr == a.best_val_psnr);

  SUBCASE("evaluation") {
    const metrics::MetricsReport r = evaluate(a.best_checkpoint, "val");
    CHECK(r.volumes.size() == 2);
    CHECK(r.average.psnr == doctest::Approx(a.best_val_psnr).epsilon(1e-9));
    const metrics::MetricsReport base = evaluate_baseline(dir.path, sim::Task::denoise, "val", 2);
    CHECK(base.average.psnr == doctest::Approx(a.input_val_psnr).epsilon(1e-9));

    const auto samples = sim::load_split(dir.path, sim::Task::denoise, "val");
    std::vector<TensorD> perfect;
    for (const auto& s : samples) perfect.push_back(target_magnitude(s));
    const auto ideal = evaluate_estimates(samples, perfect, 2);
    CHECK(ideal.average.psnr == metrics::kInfinitePsnr);
    CHECK(ideal.average.ssim_slice == doctest::Approx(1.0));
    CHECK(ideal.average.nmse == 0.0);
  }

  SUBCASE("incompatible checkpoints") {
    ExperimentConfig wider = tiny_config(dir.path, "a");
    wider.width = 8;
    TrainOptions bad;
    bad.resume_from = a.last_checkpoint;
    CHECK_THROWS_AS(train::train(wider, bad), VersionError);

    auto ck = nn::load_checkpoint(a.best_checkpoint);
    ck.header["format_version"] = "99";
    const fs::path future = dir.path / "future.ckpt";
    nn::save_checkpoint(future, ck.header, ck.params);
    CHECK_THROWS_AS(evaluate(future, "val"), VersionError);
  }

  SUBCASE("missing dataset names the file") {
    fs::remove(dir.path / "denoise" / "val" / "1.deg.mrt");
    try {
      evaluate(a.best_checkpoint, "val");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("1.deg.mrt") != std::string::npos);
    }
  }
}
