#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mrirest/metrics.hpp"
#include "oracles.hpp"

using namespace mrirest;
using namespace mrirest::metrics;
using oracle::TensorD;

namespace {

TensorD constant(const Shape& s, double v) { return TensorD(s, v); }

VolumePair noisy_pair(oracle::Rng& rng, std::size_t S, std::size_t H, std::size_t W, double noise) {
  VolumePair v;
  v.reference = oracle::randu({S, H, W}, rng);
  v.estimate = v.reference;
  std::normal_distribution<double> n(0.0, noise);
  for (double& x : v.estimate.values()) x += n(rng);
  v.id = "v";
  return v;
}

TensorD slice(const TensorD& v, std::size_t s) {
  const std::size_t H = v.dim(1), W = v.dim(2);
  TensorD out({H, W});
  for (std::size_t i = 0; i < H * W; ++i) out[i] = v[s * H * W + i];
  return out;
}

}  // namespace

TEST_CASE("psnr") {
  const TensorD ref = constant({4, 4}, 1.0);
  CHECK(psnr(constant({4, 4}, 0.9), ref, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(constant({4, 4}, 0.95), ref, 1.0) - psnr(constant({4, 4}, 0.9), ref, 1.0) ==
        doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(psnr(ref, ref, 1.0) == kInfinitePsnr);
  CHECK_THROWS_AS(psnr(ref, ref, 0.0), ParameterError);
  CHECK_THROWS_AS(psnr(constant({4, 3}, 1.0), ref, 1.0), ShapeError);
  CHECK(rmse(constant({4, 4}, 0.9), ref) == doctest::Approx(0.1));
}

TEST_CASE("nmse") {
  TensorD ref({2}), est({2});
  ref[0] = 3.0;
  ref[1] = 4.0;
  est[0] = 3.0;
  est[1] = 3.0;
  CHECK(nmse(est, ref) == doctest::Approx(1.0 / 25.0));
  CHECK(nmse(ref, ref) == 0.0);
  CHECK(nmse(TensorD({2}), ref) == doctest::Approx(1.0));
  CHECK_THROWS_AS(nmse(ref, TensorD({2})), UndefinedError);
}

TEST_CASE("ssim closed forms") {
  // Constant images have zero variance, so only the luminance term survives.
  const double range = 1.0, c1 = 1e-4;
  const double a = 0.3, b = 0.6;
  CHECK(ssim_map(constant({9, 9}, a), constant({9, 9}, b), range) ==
        doctest::Approx((2 * a * b + c1) / (a * a + b * b + c1)).epsilon(1e-12));

  oracle::Rng rng(1);
  const TensorD x = oracle::randu({12, 10}, rng), y = oracle::randu({12, 10}, rng);
  CHECK(ssim_map(x, x, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim_map(x, y, 1.0) == doctest::Approx(ssim_map(y, x, 1.0)).epsilon(1e-14));
  CHECK(ssim_map(x, y, 1.0) < 0.5);

  TensorD x3 = x, y3 = y;
  for (double& v : x3.values()) v *= 3.0;
  for (double& v : y3.values()) v *= 3.0;
  CHECK(ssim_map(x3, y3, 3.0) == doctest::Approx(ssim_map(x, y, 1.0)).epsilon(1e-12));

  CHECK_THROWS_AS(ssim_map(constant({6, 9}, 1.0), constant({6, 9}, 1.0), 1.0), ParameterError);
  CHECK_THROWS_AS(ssim_map(x, x, 0.0), ParameterError);
}

TEST_CASE("ssim matches a naive window loop") {
  oracle::Rng rng(2);
  const VolumePair v = noisy_pair(rng, 1, 9, 9, 0.1);
  const auto w = oracle::ssim_windows(v.reference, v.estimate, 0, 1.0);
  CHECK(w.count == 9);
  CHECK(std::abs(ssim_map(slice(v.estimate, 0), slice(v.reference, 0), 1.0) - w.sum / 9.0) < 1e-9);
}

TEST_CASE("slice-wise and volumetric protocols differ as specified") {
  oracle::Rng rng(3);
  VolumePair v = noisy_pair(rng, 2, 16, 16, 0.2);
  // Slice maxima 0.5 and 1.0.
  for (std::size_t i = 0; i < 256; ++i) {
    v.reference[i] *= 0.5;
    v.estimate[i] *= 0.5;
  }
  v.reference[0] = 0.5;
  v.reference[256] = 1.0;

  const auto s0 = oracle::ssim_windows(v.reference, v.estimate, 0, 0.5);
  const auto s1 = oracle::ssim_windows(v.reference, v.estimate, 1, 1.0);
  const double slice_wise = 0.5 * (s0.sum / s0.count + s1.sum / s1.count);
  const auto g0 = oracle::ssim_windows(v.reference, v.estimate, 0, 1.0);
  const double volumetric = (g0.sum + s1.sum) / static_cast<double>(g0.count + s1.count);

  const auto sw = ssim_slice_wise(v);
  CHECK(std::abs(sw.value - slice_wise) < 1e-9);
  CHECK(sw.skipped_slices == 0);
  CHECK(std::abs(ssim_volumetric(v) - volumetric) < 1e-9);
  CHECK(std::abs(slice_wise - volumetric) > 1e-4);
}

TEST_CASE("all-zero reference slices are skipped") {
  oracle::Rng rng(4);
  VolumePair v = noisy_pair(rng, 3, 8, 8, 0.05);
  for (std::size_t i = 64; i < 128; ++i) v.reference[i] = 0.0;
  const auto sw = ssim_slice_wise(v);
  CHECK(sw.skipped_slices == 1);
  const auto a = oracle::ssim_windows(v.reference, v.estimate, 0, max_value(slice(v.reference, 0)));
  const auto c = oracle::ssim_windows(v.reference, v.estimate, 2, max_value(slice(v.reference, 2)));
  CHECK(std::abs(sw.value - 0.5 * (a.sum / a.count + c.sum / c.count)) < 1e-9);

  VolumePair zero{TensorD({1, 8, 8}), TensorD({1, 8, 8}), "z"};
  CHECK_THROWS_AS(ssim_slice_wise(zero), UndefinedError);
  CHECK_THROWS_AS(ssim_volumetric(zero), UndefinedError);
}

TEST_CASE("cubic volumetric window") {
  oracle::Rng rng(5);
  const VolumePair v = noisy_pair(rng, 8, 8, 8, 0.1);
  // 2x2x2 window positions, each summed directly over 7x7x7 voxels.
  const double range = max_value(v.reference), n = 343.0;
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double want = 0.0;
  for (std::size_t z0 = 0; z0 < 2; ++z0)
    for (std::size_t y0 = 0; y0 < 2; ++y0)
      for (std::size_t x0 = 0; x0 < 2; ++x0) {
        double ma = 0, mb = 0;
        for (std::size_t z = z0; z < z0 + 7; ++z)
          for (std::size_t y = y0; y < y0 + 7; ++y)
            for (std::size_t x = x0; x < x0 + 7; ++x) {
              ma += v.reference.at(z, y, x) / n;
              mb += v.estimate.at(z, y, x) / n;
            }
        double va = 0, vb = 0, cab = 0;
        for (std::size_t z = z0; z < z0 + 7; ++z)
          for (std::size_t y = y0; y < y0 + 7; ++y)
            for (std::size_t x = x0; x < x0 + 7; ++x) {
              const double da = v.reference.at(z, y, x) - ma, db = v.estimate.at(z, y, x) - mb;
              va += da * da / (n - 1);
              vb += db * db / (n - 1);
              cab += da * db / (n - 1);
            }
        want += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)) / 8.0;
      }
  CHECK(std::abs(ssim_volumetric(v, {}, VolumeWindow::cubic) - want) < 1e-9);

  const VolumePair thin = noisy_pair(rng, 3, 8, 8, 0.1);
  CHECK_THROWS_AS(ssim_volumetric(thin, {}, VolumeWindow::cubic), ParameterError);
}

TEST_CASE("volume metrics and scaling") {
  oracle::Rng rng(6);
  const VolumePair v = noisy_pair(rng, 2, 10, 10, 0.05);
  const VolumeMetrics m = evaluate_volume(v);
  CHECK(m.psnr == doctest::Approx(psnr(v.estimate, v.reference, max_value(v.reference))));
  VolumePair scaled = v;
  for (double& x : scaled.reference.values()) x *= 7.0;
  for (double& x : scaled.estimate.values()) x *= 7.0;
  const VolumeMetrics ms = evaluate_volume(scaled);
  CHECK(ms.psnr == doctest::Approx(m.psnr).epsilon(1e-10));
  CHECK(ms.ssim_slice == doctest::Approx(m.ssim_slice).epsilon(1e-10));
  CHECK(ms.ssim_vol == doctest::Approx(m.ssim_vol).epsilon(1e-10));
  CHECK(ms.nmse == doctest::Approx(m.nmse).epsilon(1e-10));
  CHECK(ms.rmse == doctest::Approx(7.0 * m.rmse).epsilon(1e-10));

  const VolumeMetrics ideal = evaluate_volume({v.reference, v.reference, "same"});
  CHECK(ideal.psnr == kInfinitePsnr);
  CHECK(ideal.ssim_slice == doctest::Approx(1.0));
  CHECK(ideal.ssim_vol == doctest::Approx(1.0));
  CHECK(ideal.nmse == 0.0);
}

TEST_CASE("report averaging and CSV round trip") {
  VolumeMetrics a{"vol000", 30.0, 0.8, 0.82, 0.02, 0.1, 0};
  VolumeMetrics b{"vol001", kInfinitePsnr, 1.0, 1.0, 0.0, 0.0, 1};
  VolumeMetrics c{"vol002", 20.0, 0.6, 0.61, 0.04, 0.3, 0};
  MetricsReport r = make_report({a, c}, VolumeWindow::cubic);
  CHECK(r.average.psnr == doctest::Approx(25.0));
  CHECK(r.average.ssim_slice == doctest::Approx(0.7));
  CHECK(r.average.rmse == doctest::Approx(0.2));
  CHECK(make_report({a, b}).average.psnr == kInfinitePsnr);

  r.volumes.push_back(b);
  const auto path = std::filesystem::temp_directory_path() / "mrirest_metrics_test.csv";
  write_report_csv(path, r);
  const MetricsReport back = read_report_csv(path);
  CHECK(back.window == VolumeWindow::cubic);
  REQUIRE(back.volumes.size() == 3);
  CHECK(back.volumes[2].psnr == kInfinitePsnr);
  CHECK(back.volumes[0].ssim_vol == doctest::Approx(0.82).epsilon(1e-9));
  CHECK(back.average.nmse == doctest::Approx(r.average.nmse).epsilon(1e-9));

  std::ofstream(path) << "volume,psnr\n";
  CHECK_THROWS_AS(read_report_csv(path), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_report_csv(path), IoError);
}
