#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mrirest/tensor.hpp"

namespace mrirest::metrics {

// Returned by psnr() when the two inputs are identical.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

double mse(const Tensor<double>& estimate, const Tensor<double>& reference);
double rmse(const Tensor<double>& estimate, const Tensor<double>& reference);
// 10 log10(peak^2 / MSE).
double psnr(const Tensor<double>& estimate, const Tensor<double>& reference, double peak);
// ||estimate - reference||^2 / ||reference||^2
double nmse(const Tensor<double>& estimate, const Tensor<double>& reference);

struct SsimOptions {
  int window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean SSIM over all fully contained window x window uniform windows, with
// sample covariance normalization.
double ssim_map(const Tensor<double>& a, const Tensor<double>& b, double data_range, const SsimOptions& opts = {});

enum class VolumeWindow { planar, cubic };

struct VolumePair {
  Tensor<double> reference;  // [S,H,W]
  Tensor<double> estimate;   // [S,H,W]
  std::string id;
};

struct SliceWiseSsim {
  double value = 0.0;
  std::size_t skipped_slices = 0;  // slices whose reference max is zero
};

// Per-slice SSIM with that slice's reference max as data range, averaged over slices.
SliceWiseSsim ssim_slice_wise(const VolumePair& v, const SsimOptions& opts = {});

// One data range (the reference volume max) shared by all windows. Planar
// windows run per slice and are averaged over every window of every slice;
// cubic windows extend `window` slices deep.
double ssim_volumetric(const VolumePair& v, const SsimOptions& opts = {},
                       VolumeWindow window = VolumeWindow::planar);

struct VolumeMetrics {
  std::string id;
  double psnr = 0.0;
  double ssim_slice = 0.0;
  double ssim_vol = 0.0;
  double nmse = 0.0;
  double rmse = 0.0;
  std::size_t skipped_slices = 0;
};

struct MetricsReport {
  std::vector<VolumeMetrics> volumes;
  VolumeMetrics average;  // arithmetic mean of the per-volume values
  VolumeWindow window = VolumeWindow::planar;
};

// PSNR peak defaults to the reference volume max.
VolumeMetrics evaluate_volume(const VolumePair& v, const SsimOptions& opts = {},
                              VolumeWindow window = VolumeWindow::planar);
MetricsReport make_report(std::vector<VolumeMetrics> volumes, VolumeWindow window = VolumeWindow::planar);

// CSV: volume,psnr,ssim_slice,ssim_vol,nmse,rmse with a final AVERAGE row and a
// "# ssim_vol_window=planar|cubic" trailer naming the volumetric window.
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_report_csv(const std::filesystem::path& path);

}  // namespace mrirest::metrics
