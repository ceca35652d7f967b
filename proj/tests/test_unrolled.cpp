#include <doctest.h>

#include <limits>

#include "mrirest/unrolled.hpp"
#include "oracles.hpp"

using namespace mrirest;
using oracle::TensorD;

namespace {

recon::UnrolledConfig small_config(int iterations) {
  recon::UnrolledConfig cfg;
  cfg.iterations = iterations;
  cfg.backbone.width = 4;
  cfg.backbone.enc_blocks = {1};
  cfg.backbone.dec_blocks = {1};
  return cfg;
}

ParameterStore<double> declared(const recon::UnrolledConfig& cfg, std::uint64_t seed = 1) {
  ParameterStore<double> st;
  nn::Rng rng(seed);
  recon::declare_unrolled(st, cfg, rng);
  return st;
}

TensorD run(const TensorD& k_meas, const mri::SamplingMask& m, const mri::CoilSensitivities& s,
            const recon::UnrolledConfig& cfg, const ParameterStore<double>& st) {
  Tape<double> tape;
  ParamScope<double> scope(tape, st);
  return recon::unroll_forward(tape.constant(k_meas), m, s, cfg, scope).image.value();
}

TensorD zero_filled(const TensorD& k_meas, const mri::SamplingMask& m, const mri::CoilSensitivities& s) {
  return mri::reduce(mri::ifft2c(mri::apply_mask(k_meas, m)), s);
}

}  // namespace

TEST_CASE("data-consistency step") {
  Tape<double> tape;
  mri::SamplingMask m;
  m.width = 2;
  m.kept = {true, false};
  auto k = tape.constant(TensorD({1, 1, 2, 2}, 4.0));
  auto km = tape.constant(TensorD({1, 1, 2, 2}, 2.0));
  auto mu = [&](double v) { return tape.constant(TensorD({1}, v)); };

  const TensorD half = recon::dc_step(k, km, m, mu(0.5)).value();
  CHECK(half.at(0, 0, 0, 0) == 3.0);
  CHECK(half.at(0, 0, 1, 1) == 4.0);
  CHECK(recon::dc_step(k, km, m, mu(0.0)).value() == k.value());

  oracle::Rng rng(1);
  const TensorD a = oracle::randn({3, 6, 8, 2}, rng), b = oracle::randn({3, 6, 8, 2}, rng);
  const auto mask = mri::generate_mask(8, 2, 0.25, 3);
  const TensorD one = recon::dc_step(tape.constant(a), tape.constant(b), mask, mu(1.0)).value();
  CHECK(mri::apply_mask(one, mask) == mri::apply_mask(b, mask));
  CHECK(mri::apply_mask(one, mri::SamplingMask::full(8)) == one);
  for (std::size_t j = 0; j < 8; ++j)
    if (!mask.is_kept(j)) CHECK(one.at(2, 5, j, 0) == a.at(2, 5, j, 0));

  CHECK_THROWS_AS(recon::dc_step(tape.constant(a), tape.constant(TensorD({3, 6, 7, 2})), mask, mu(1.0)), ShapeError);
  CHECK_THROWS_AS(recon::dc_step(tape.constant(a), tape.constant(b), mask, tape.constant(TensorD({2}))), ShapeError);
}

TEST_CASE("zero-correction cascade reproduces the zero-filled image") {
  oracle::Rng rng(2);
  const auto s = mri::make_coil_maps(3, 8, 8, 4);
  const auto m = mri::generate_mask(8, 4, 0.25, 5);
  const TensorD k_meas = mri::apply_mask(oracle::randn({3, 8, 8, 2}, rng), m);
  for (int T : {1, 3}) {
    const auto cfg = small_config(T);
    CHECK(max_abs_diff(run(k_meas, m, s, cfg, declared(cfg)), zero_filled(k_meas, m, s)) < 1e-12);
  }
}

TEST_CASE("fully sampled data is returned unchanged") {
  oracle::Rng rng(3);
  const TensorD x = oracle::randn({8, 8, 2}, rng);
  const auto m = mri::SamplingMask::full(8);
  for (std::size_t C : {1, 4}) {
    const auto s = C == 1 ? mri::CoilSensitivities::unit(8, 8) : mri::make_coil_maps(C, 8, 8, 6);
    const TensorD k_meas = mri::fft2c(mri::expand(x, s));
    const auto cfg = small_config(4);
    CHECK(max_abs_diff(run(k_meas, m, s, cfg, declared(cfg)), x) < 1e-6);
  }
}

TEST_CASE("one hand-computed step with an identity regularizer") {
  // Single unit coil and a zero-initialised backbone that keeps its global
  // residual: the regularizer returns k itself, so k1 = 2 k0 - mu M (k0 - k_meas).
  auto cfg = small_config(1);
  cfg.backbone.enc_blocks = {};
  cfg.backbone.dec_blocks = {};
  cfg.regularizer_residual = true;
  cfg.mu_init = 0.5;
  const auto st = declared(cfg);
  const auto s = mri::CoilSensitivities::unit(2, 2);
  mri::SamplingMask m;
  m.width = 2;
  m.kept = {false, true};

  oracle::Rng rng(4);
  const TensorD k0 = oracle::randn({1, 2, 2, 2}, rng), km = oracle::randn({1, 2, 2, 2}, rng);
  Tape<double> tape;
  ParamScope<double> scope(tape, st);
  const auto out = recon::unroll_forward<double>(tape.constant(km), m, s, cfg, scope, tape.constant(k0));
  const TensorD k1 = out.states.at(1).k.value();

  // Regularizer term through the reference DFT: F(F^{-1} k0).
  const TensorD reg = oracle::dft2c(oracle::dft2c(k0.reshaped({2, 2, 2}), true));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t c = 0; c < 2; ++c) {
        const double dc = k0.at(0, i, j, c) - (m.is_kept(j) ? 0.5 * (k0.at(0, i, j, c) - km.at(0, i, j, c)) : 0.0);
        CHECK(k1.at(0, i, j, c) == doctest::Approx(dc + reg.at(i, j, c)).epsilon(1e-12));
      }
  CHECK(max_abs_diff(out.image.value(), oracle::dft2c(k1.reshaped({2, 2, 2}), true)) < 1e-12);
}

TEST_CASE("shorter runs are prefixes of longer ones") {
  oracle::Rng rng(5);
  const auto cfg = small_config(4);
  auto st = declared(cfg, 7);
  oracle::jitter(st, rng, 0.05);
  const auto s = mri::make_coil_maps(2, 8, 8, 3);
  const auto m = mri::generate_mask(8, 2, 0.25, 1);
  const TensorD km = mri::apply_mask(oracle::randn({2, 8, 8, 2}, rng), m);

  Tape<double> tape;
  ParamScope<double> scope(tape, st);
  const auto full = recon::unroll_forward(tape.constant(km), m, s, cfg, scope);
  REQUIRE(full.states.size() == 5);
  for (int t = 0; t <= 4; ++t) {
    Tape<double> t2;
    ParamScope<double> sc(t2, st);
    const auto part = recon::unroll_forward<double>(t2.constant(km), m, s, cfg, sc, std::nullopt, t);
    CHECK(part.states.back().k.value() == full.states.at(static_cast<std::size_t>(t)).k.value());
  }
  CHECK_THROWS_AS(recon::unroll_forward<double>(tape.constant(km), m, s, cfg, scope, std::nullopt, 5), ParameterError);
}

TEST_CASE("error grows as sampled columns are removed") {
  oracle::Rng rng(6);
  const TensorD x = oracle::randn({8, 8, 2}, rng);
  const auto s = mri::make_coil_maps(2, 8, 8, 2);
  const TensorD k = mri::fft2c(mri::expand(x, s));
  const auto cfg = small_config(2);
  const auto st = declared(cfg);
  mri::SamplingMask m = mri::SamplingMask::full(8);
  double previous = -1.0;
  for (std::size_t j : {0, 7, 1, 6, 2, 5}) {
    m.kept[j] = false;
    TensorD diff = run(mri::apply_mask(k, m), m, s, cfg, st);
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= x[i];
    const double err = oracle::norm(diff);
    CHECK(err >= previous);
    previous = err;
  }
  CHECK(previous > 0.0);
}

TEST_CASE("a non-finite state raises DivergenceError with the iteration") {
  auto cfg = small_config(3);
  auto st = declared(cfg);
  st.get("dtheta.1.ending.bias")[0] = std::numeric_limits<double>::quiet_NaN();
  const auto s = mri::CoilSensitivities::unit(8, 8);
  oracle::Rng rng(7);
  Tape<double> tape;
  ParamScope<double> scope(tape, st);
  try {
    recon::unroll_forward(tape.constant(oracle::randn({1, 8, 8, 2}, rng)), mri::SamplingMask::full(8), s, cfg, scope);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() == 2);
  }
}

TEST_CASE("shared weights and fixed mu") {
  auto cfg = small_config(3);
  cfg.share_weights = true;
  cfg.learn_mu = false;
  const auto st = declared(cfg);
  CHECK(st.contains("dtheta.intro.weight"));
  CHECK_FALSE(st.contains("mu.0"));
  CHECK_FALSE(st.contains("dtheta.0.intro.weight"));
  cfg.backbone.in_channels = 1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("two-step cascade gradients match finite differences") {
  oracle::Rng rng(8);
  auto cfg = small_config(2);
  auto st = declared(cfg, 3);
  oracle::jitter(st, rng, 0.05);
  for (auto& [name, t] : st)
    if (name.rfind("mu.", 0) == 0) t[0] = 0.7;
  const auto s = mri::make_coil_maps(2, 8, 8, 5);
  const auto m = mri::generate_mask(8, 2, 0.25, 2);
  st.add("k", mri::apply_mask(oracle::randn({2, 8, 8, 2}, rng), m));
  const double err = oracle::gradient_check(
      st,
      [&](const ParamScope<double>& p) {
        Var<double> k = p["k"];
        return recon::unroll_forward<double>(k, m, s, cfg, p).image;
      },
      rng, 1e-4, 8);
  CHECK(err < 1e-3);
}
