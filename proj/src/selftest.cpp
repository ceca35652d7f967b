#include "mrirest/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "mrirest/blocks.hpp"
#include "mrirest/degradation.hpp"
#include "mrirest/metrics.hpp"
#include "mrirest/mri.hpp"
#include "mrirest/unrolled.hpp"

namespace mrirest::selftest {

namespace {

using Rng = std::mt19937_64;
using TensorD = Tensor<double>;

TensorD random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  TensorD t(shape);
  for (double& v : t.values()) v = n(rng);
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

CheckResult tolerance_result(std::string name, double err, double tol) {
  return {std::move(name), err < tol, fmt("max err %.3e", err) + fmt(" (tol %.0e)", tol)};
}

mri::SamplingMask random_mask(std::size_t w, Rng& rng) {
  mri::SamplingMask m;
  m.width = w;
  m.kept.resize(w);
  std::bernoulli_distribution keep(0.4);
  for (auto& k : m.kept) k = keep(rng) ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Gradient checking

using Build = std::function<Var<double>(const ParamScope<double>&)>;

double gradient_error(ParameterStore<double> store, const Build& build, Rng& rng, std::size_t max_entries = 12) {
  TensorD probe;
  auto loss = [&](Tape<double>& tape, const ParameterStore<double>& s) {
    ParamScope<double> scope(tape, s);
    Var<double> out = build(scope);
    if (probe.empty()) probe = random_tensor(out.shape(), rng);
    return ad::sum(ad::mul(out, tape.constant(probe)));
  };
  Tape<double> tape;
  tape.backward(loss(tape, store));
  const GradientMap<double> grads = tape.gradients(store);

  const double h = 1e-4;
  double worst = 0.0;
  for (auto& [name, tensor] : store) {
    std::vector<std::size_t> idx(tensor.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i : idx) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      Tape<double> tp;
      const double lp = loss(tp, store).value()[0];
      tensor[i] = orig - h;
      Tape<double> tm;
      const double lm = loss(tm, store).value()[0];
      tensor[i] = orig;
      const double numeric = (lp - lm) / (2 * h);
      const double analytic = grads.at(name)[i];
      diff += (numeric - analytic) * (numeric - analytic);
      na += analytic * analytic;
      nn += numeric * numeric;
    }
    const double denom = std::sqrt(std::max(na, nn));
    worst = std::max(worst, denom > 1e-7 ? std::sqrt(diff) / denom : std::sqrt(diff));
  }
  return worst;
}

// Replaces every declared parameter by a perturbed copy so that zero-initialized
// projections do not hide gradient paths.
void perturb(ParameterStore<double>& store, Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [_, t] : store)
    for (double& v : t.values()) v += n(rng);
}

TensorD away_from_zero(TensorD t) {
  for (double& v : t.values()) v += v >= 0 ? 0.3 : -0.3;
  return t;
}

}  // namespace

std::vector<CheckResult> adjoint_checks(std::uint64_t seed, int trials) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> side(4, 16), ncoil(1, 4);
  double e_fft = 0, e_ifft = 0, e_mask = 0, e_coil = 0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); };
  for (int t = 0; t < trials; ++t) {
    const std::size_t H = side(rng), W = side(rng), C = ncoil(rng);
    const TensorD x = random_tensor({H, W, 2}, rng), y = random_tensor({H, W, 2}, rng);
    e_fft = std::max(e_fft, rel(dot(mri::fft2c(x), y), dot(x, mri::ifft2c(y))));
    e_ifft = std::max(e_ifft, rel(dot(mri::ifft2c(x), y), dot(x, mri::fft2c(y))));
    const auto mask = random_mask(W, rng);
    const TensorD kx = random_tensor({C, H, W, 2}, rng), ky = random_tensor({C, H, W, 2}, rng);
    e_mask = std::max(e_mask, rel(dot(mri::apply_mask(kx, mask), ky), dot(kx, mri::apply_mask(ky, mask))));
    mri::CoilSensitivities s{random_tensor({C, H, W, 2}, rng)};
    e_coil = std::max(e_coil, rel(dot(mri::expand(x, s), ky), dot(x, mri::reduce(ky, s))));
  }
  const std::string n = " (" + std::to_string(trials) + " trials)";
  return {tolerance_result("adjoint fft2c" + n, e_fft, 1e-5), tolerance_result("adjoint ifft2c" + n, e_ifft, 1e-5),
          tolerance_result("adjoint apply_mask" + n, e_mask, 1e-5),
          tolerance_result("adjoint expand/reduce" + n, e_coil, 1e-5)};
}

std::vector<CheckResult> gradient_checks(std::uint64_t seed) {
  Rng rng(seed);
  const double tol = 1e-3;
  std::vector<CheckResult> out;
  auto check = [&](const std::string& name, ParameterStore<double> store, const Build& b) {
    out.push_back(tolerance_result("grad " + name, gradient_error(std::move(store), b, rng), tol));
  };
  auto store_of = [&](std::initializer_list<std::pair<const char*, Shape>> items) {
    ParameterStore<double> s;
    for (const auto& [name, shape] : items) s.add(name, random_tensor(shape, rng));
    return s;
  };

  check("add/sub/mul broadcast", store_of({{"a", {2, 3, 4}}, {"b", {3, 1}}}), [](const ParamScope<double>& s) {
    return ad::mul(ad::add(s["a"], s["b"]), ad::sub(s["b"], s["a"]));
  });
  check("scale/sum/mean", store_of({{"a", {3, 4}}}), [](const ParamScope<double>& s) {
    return ad::add(ad::mean(ad::scale(s["a"], 1.7)), ad::sum(ad::mul(s["a"], s["a"])));
  });
  {
    ParameterStore<double> st;
    st.add("a", away_from_zero(random_tensor({3, 5}, rng)));
    check("abs/reshape", std::move(st), [](const ParamScope<double>& s) { return ad::reshape(ad::abs(s["a"]), {5, 3}); });
  }
  check("conv2d 3x3 bias", store_of({{"x", {2, 3, 5, 6}}, {"w", {4, 3, 3, 3}}, {"b", {4}}}),
        [](const ParamScope<double>& s) {
          Var<double> b = s["b"];
          return ad::conv2d(s["x"], s["w"], &b);
        });
  check("conv2d grouped 5x5", store_of({{"x", {1, 4, 6, 5}}, {"w", {6, 2, 5, 5}}}),
        [](const ParamScope<double>& s) { return ad::conv2d<double>(s["x"], s["w"], nullptr, 2); });
  check("conv2d 1x1", store_of({{"x", {1, 3, 4, 4}}, {"w", {5, 3, 1, 1}}, {"b", {5}}}), [](const ParamScope<double>& s) {
    Var<double> b = s["b"];
    return ad::conv2d(s["x"], s["w"], &b);
  });
  check("layer_norm", store_of({{"x", {2, 4, 3, 3}}, {"g", {4}}, {"b", {4}}}),
        [](const ParamScope<double>& s) { return ad::layer_norm(s["x"], s["g"], s["b"]); });
  check("split/concat", store_of({{"x", {1, 4, 3, 3}}}), [](const ParamScope<double>& s) {
    auto [a, b] = ad::split_channels(s["x"]);
    return ad::concat_channels(ad::mul(b, b), a);
  });
  check("pixel_shuffle", store_of({{"x", {1, 8, 2, 3}}}),
        [](const ParamScope<double>& s) { return ad::pixel_shuffle(s["x"], 2); });
  check("pixel_unshuffle", store_of({{"y", {1, 2, 4, 6}}}),
        [](const ParamScope<double>& s) { return ad::pixel_unshuffle(s["y"], 2); });
  check("softmax_taps", store_of({{"w", {1, 2 * 9, 3, 3}}}),
        [](const ParamScope<double>& s) { return ad::softmax_taps(s["w"], 2, 9); });
  check("dynamic_aggregate", store_of({{"x", {1, 4, 5, 5}}, {"w", {1, 2 * 9, 5, 5}}}),
        [](const ParamScope<double>& s) { return ad::dynamic_aggregate(s["x"], s["w"], 2, 3); });
  check("complex layout", store_of({{"z", {4, 3, 2}}}), [](const ParamScope<double>& s) {
    Var<double> c = ad::complex_to_channels(s["z"]);
    return ad::channels_to_complex(ad::mul(c, c));
  });
  {
    ParameterStore<double> st;
    st.add("z", away_from_zero(random_tensor({4, 3, 2}, rng)));
    check("complex_abs", std::move(st), [](const ParamScope<double>& s) { return ad::complex_abs(s["z"]); });
  }
  {
    ParameterStore<double> st;
    st.add("p", random_tensor({3, 4}, rng));
    TensorD target = st.get("p");
    for (double& v : target.values()) v += 0.5;
    check("l1_loss", std::move(st), [target](const ParamScope<double>& s) {
      return ad::l1_loss(s["p"], s.tape().constant(target));
    });
  }
  const mri::SamplingMask mask = random_mask(6, rng);
  mri::CoilSensitivities coils{random_tensor({3, 5, 6, 2}, rng)};
  check("fft2c/ifft2c", store_of({{"x", {5, 6, 2}}}), [](const ParamScope<double>& s) {
    Var<double> k = mri::fft2c(s["x"]);
    return mri::ifft2c(ad::mul(k, k));
  });
  check("apply_mask", store_of({{"k", {2, 5, 6, 2}}}),
        [mask](const ParamScope<double>& s) { return mri::apply_mask(s["k"], mask); });
  check("expand/reduce", store_of({{"x", {5, 6, 2}}}), [coils](const ParamScope<double>& s) {
    Var<double> y = mri::expand(s["x"], coils);
    return mri::reduce(ad::mul(y, y), coils);
  });
  check("dc_step", store_of({{"k", {3, 5, 6, 2}}, {"m", {3, 5, 6, 2}}, {"mu", {1}}}),
        [mask](const ParamScope<double>& s) { return recon::dc_step(s["k"], s["m"], mask, s["mu"]); });
  check("simple_gate", store_of({{"z", {1, 6, 3, 3}}}),
        [](const ParamScope<double>& s) { return nn::simple_gate(s["z"]); });

  for (bool normalize : {false, true}) {
    nn::LsConvConfig lc{5, 3, 2, normalize};
    ParameterStore<double> st;
    nn::Rng init(seed + 1);
    nn::declare_lsconv(st, "ls.", 4, lc, init);
    perturb(st, rng, 0.1);
    st.add("x", random_tensor({1, 4, 6, 6}, rng));
    check(std::string("lsconv") + (normalize ? " (softmax)" : ""), std::move(st),
          [lc](const ParamScope<double>& s) { return nn::lsconv(s["x"], lc, s.sub("ls")); });
  }
  for (auto mixer : {nn::Mixer::local_dw3, nn::Mixer::lsconv}) {
    nn::BlockConfig bc;
    bc.channels = 4;
    bc.mixer = mixer;
    bc.lsconv = {5, 3, 2, false};
    ParameterStore<double> st;
    nn::Rng init(seed + 2);
    nn::declare_block(st, "blk.", bc, init);
    perturb(st, rng, 0.1);
    st.add("x", random_tensor({1, 4, 6, 6}, rng));
    const bool lsg = mixer == nn::Mixer::lsconv;
    check(lsg ? "lsg_block" : "naf_block", std::move(st), [bc, lsg](const ParamScope<double>& s) {
      return lsg ? nn::lsg_block(s["x"], bc, s.sub("blk")) : nn::naf_block(s["x"], bc, s.sub("blk"));
    });
  }
  {
    recon::UnrolledConfig uc;
    uc.iterations = 2;
    uc.backbone.width = 4;
    uc.backbone.enc_blocks = {1};
    uc.backbone.dec_blocks = {1};
    ParameterStore<double> st;
    nn::Rng init(seed + 3);
    recon::declare_unrolled(st, uc, init);
    perturb(st, rng, 0.05);
    const std::size_t H = 8, W = 8;
    mri::CoilSensitivities c2{random_tensor({2, H, W, 2}, rng, 0.7)};
    const mri::SamplingMask m8 = random_mask(W, rng);
    st.add("kmeas", random_tensor({2, H, W, 2}, rng));
    check("unrolled cascade T=2", std::move(st), [uc, c2, m8](const ParamScope<double>& s) {
      return recon::unroll_forward(s["kmeas"], m8, c2, uc, s).image;
    });
  }
  return out;
}

std::vector<CheckResult> identity_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  {
    Tape<double> tape;
    const TensorD z = random_tensor({2, 6, 3, 4}, rng);
    const TensorD y = nn::simple_gate(tape.constant(z)).value();
    double err = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 4; ++j)
            err = std::max(err, std::abs(y.at(n, c, i, j) - z.at(n, c, i, j) * z.at(n, c + 3, i, j)));
    out.push_back(tolerance_result("simple_gate = Z1 * Z2", err, 1e-15));
  }

  double loop_err = 0.0;
  for (std::size_t N : {1, 2})
    for (std::size_t C : {4, 8})
      for (std::size_t S : {5, 6})
        for (int G : {1, 2, 4})
          for (bool normalize : {false, true}) {
            const nn::LsConvConfig cfg{7, 3, G, normalize};
            const std::size_t K = 3, taps = 9, per = C / G;
            Tape<double> tape;
            const TensorD x = random_tensor({N, C, S, S}, rng), w = random_tensor({N, G * taps, S, S}, rng);
            const TensorD y = nn::lsconv_aggregate(tape.constant(x), tape.constant(w), cfg).value();
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < S; ++i)
                  for (std::size_t j = 0; j < S; ++j) {
                    const std::size_t g = c / per;
                    double zsum = 0.0, mx = -1e300;
                    for (std::size_t t = 0; t < taps; ++t) mx = std::max(mx, w.at(n, g * taps + t, i, j));
                    for (std::size_t t = 0; t < taps; ++t) zsum += std::exp(w.at(n, g * taps + t, i, j) - mx);
                    double acc = 0.0;
                    for (std::size_t u = 0; u < K; ++u)
                      for (std::size_t v = 0; v < K; ++v) {
                        const long ii = static_cast<long>(i + u) - 1, jj = static_cast<long>(j + v) - 1;
                        if (ii < 0 || jj < 0 || ii >= static_cast<long>(S) || jj >= static_cast<long>(S)) continue;
                        double kw = w.at(n, g * taps + u * K + v, i, j);
                        if (normalize) kw = std::exp(kw - mx) / zsum;
                        acc += kw * x.at(n, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
                      }
                    loop_err = std::max(loop_err, std::abs(acc - y.at(n, c, i, j)));
                  }
          }
  out.push_back(tolerance_result("lsconv_aggregate = loop", loop_err, 1e-6));

  {
    const std::size_t N = 2, C = 8, S = 6, G = 4;
    Tape<double> tape;
    const TensorD x = random_tensor({N, C, S, S}, rng);
    TensorD w({N, G * 9, S, S});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t g = 0; g < G; ++g)
        for (std::size_t i = 0; i < S; ++i)
          for (std::size_t j = 0; j < S; ++j) w.at(n, g * 9 + 4, i, j) = 1.0;
    const TensorD y = nn::lsconv_aggregate(tape.constant(x), tape.constant(w), nn::LsConvConfig{7, 3, 4, false}).value();
    out.push_back({"lsconv delta kernel = identity", y == x, y == x ? "exact" : "mismatch"});
  }
  return out;
}

std::vector<CheckResult> data_consistency_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  const std::size_t H = 16, W = 16;
  recon::UnrolledConfig uc;
  uc.iterations = 1;
  uc.learn_mu = true;
  uc.mu_init = 1.0;
  uc.backbone.width = 4;
  ParameterStore<double> store;
  nn::Rng init(seed);
  recon::declare_unrolled(store, uc, init);  // final projection is zero: no correction

  const auto coils = mri::make_coil_maps(3, H, W, seed);
  const TensorD x = sim::to_complex(sim::make_phantom({H, W, 4, seed}));
  {
    const auto mask = mri::generate_mask(W, 4, 0.08, seed);
    const TensorD kmeas = mri::apply_mask(mri::fft2c(mri::expand(x, coils)), mask);
    Tape<double> tape;
    ParamScope<double> scope(tape, store);
    Var<double> k0 = tape.constant(random_tensor(kmeas.shape(), rng));
    auto res = recon::unroll_forward<double>(tape.constant(kmeas), mask, coils, uc, scope, k0);
    const TensorD& k1 = res.states.back().k.value();
    bool exact = true;
    for (std::size_t i = 0; i < k1.size(); ++i) {
      const std::size_t col = (i / 2) % W;
      if (mask.is_kept(col) && k1[i] != kmeas[i]) exact = false;
    }
    out.push_back({"DC step restores sampled columns", exact, exact ? "bit-exact" : "mismatch"});
  }
  {
    const auto mask = mri::SamplingMask::full(W);
    const TensorD kmeas = mri::fft2c(mri::expand(x, coils));
    Tape<double> tape;
    ParamScope<double> scope(tape, store);
    auto res = recon::unroll_forward(tape.constant(kmeas), mask, coils, uc, scope);
    out.push_back(tolerance_result("full mask reproduces image", max_abs_diff(res.image.value(), x), 1e-6));
  }
  return out;
}

std::vector<CheckResult> sr_checks(std::uint64_t seed) {
  Rng rng(seed);
  const TensorD x = random_tensor({32, 32, 2}, rng), y = random_tensor({32, 32, 2}, rng);
  const double f = 0.0625;
  const TensorD dx = sim::degrade_sr(x, f);
  TensorD comb(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) comb[i] = 2.5 * x[i] - 0.7 * y[i];
  const TensorD dcomb = sim::degrade_sr(comb, f), dy = sim::degrade_sr(y, f);
  double lin = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) lin = std::max(lin, std::abs(dcomb[i] - (2.5 * dx[i] - 0.7 * dy[i])));
  const auto block = sim::sr_retained_block(320, 320, f);
  const bool b80 = block.rows == 80 && block.cols == 80 && block.row0 == 120 && block.col0 == 120;
  return {tolerance_result("degrade_sr idempotent", max_abs_diff(sim::degrade_sr(dx, f), dx), 1e-6),
          tolerance_result("degrade_sr linear", lin, 1e-6),
          {"keep 0.0625 of 320x320 = central 80x80", b80,
           std::to_string(block.rows) + "x" + std::to_string(block.cols) + " at (" + std::to_string(block.row0) + "," +
               std::to_string(block.col0) + ")"}};
}

namespace {

// Mean SSIM over all 7x7 windows of one slice, straight from the definition.
double ssim_loop(const TensorD& a, const TensorD& b, std::size_t s, double range, double& count) {
  const std::size_t H = a.dim(1), W = a.dim(2), K = 7;
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
  const double n = K * K;
  double total = 0.0;
  for (std::size_t i = 0; i + K <= H; ++i)
    for (std::size_t j = 0; j + K <= W; ++j) {
      double ma = 0, mb = 0;
      for (std::size_t u = 0; u < K; ++u)
        for (std::size_t v = 0; v < K; ++v) {
          ma += a.at(s, i + u, j + v);
          mb += b.at(s, i + u, j + v);
        }
      ma /= n;
      mb /= n;
      double va = 0, vb = 0, cov = 0;
      for (std::size_t u = 0; u < K; ++u)
        for (std::size_t v = 0; v < K; ++v) {
          const double da = a.at(s, i + u, j + v) - ma, db = b.at(s, i + u, j + v) - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= n - 1;
      vb /= n - 1;
      cov /= n - 1;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      count += 1;
    }
  return total;
}

}  // namespace

std::vector<CheckResult> ssim_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t H = 16, W = 16;
  metrics::VolumePair v{TensorD({2, H, W}), TensorD({2, H, W}), "vol"};
  const double maxima[2] = {0.5, 1.0};
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double r = maxima[s] * u(rng);
        v.reference.at(s, i, j) = r;
        v.estimate.at(s, i, j) = std::clamp(r + 0.08 * maxima[s] * (u(rng) - 0.5), 0.0, 1.0);
      }
  v.reference.at(0, 3, 3) = 0.5;
  v.reference.at(1, 3, 3) = 1.0;

  double slice_oracle = 0.0, vol_sum = 0.0, vol_count = 0.0;
  for (std::size_t s = 0; s < 2; ++s) {
    double count = 0.0;
    slice_oracle += ssim_loop(v.reference, v.estimate, s, maxima[s], count) / count / 2.0;
    vol_sum += ssim_loop(v.reference, v.estimate, s, 1.0, vol_count);
  }
  const double vol_oracle = vol_sum / vol_count;
  const double slice = metrics::ssim_slice_wise(v).value;
  const double vol = metrics::ssim_volumetric(v);
  const bool differ = std::abs(slice - vol) > 1e-6;
  return {tolerance_result("slice-wise SSIM = window loop", std::abs(slice - slice_oracle), 1e-9),
          tolerance_result("volumetric SSIM = window loop", std::abs(vol - vol_oracle), 1e-9),
          {"slice-wise and volumetric SSIM differ", differ, fmt("%.6f vs ", slice) + fmt("%.6f", vol)}};
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
  std::vector<CheckResult> all;
  for (auto part : {adjoint_checks(seed, 100), gradient_checks(seed), identity_checks(seed),
                    data_consistency_checks(seed), sr_checks(seed), ssim_checks(seed)}) {
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

}  // namespace mrirest::selftest
