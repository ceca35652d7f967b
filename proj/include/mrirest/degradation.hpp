#pragma once

#include <cstddef>
#include <cstdint>

#include "mrirest/mri.hpp"
#include "mrirest/tensor.hpp"

namespace mrirest::sim {

struct PhantomSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  int n_ellipses = 10;
  std::uint64_t seed = 0;
};

// Random ellipses on a dark background, clipped to [0,1] and 3x3 box smoothed.
Tensor<double> make_phantom(const PhantomSpec& spec);

// [H,W] real -> [H,W,2] with zero imaginary part.
Tensor<double> to_complex(const Tensor<double>& image);
// |z| of an interleaved [...,2] tensor.
Tensor<double> magnitude(const Tensor<double>& z);

// k = M F(S x) + n; complex Gaussian noise (std noise_sigma per component) on kept columns only.
Tensor<double> degrade_recon(const Tensor<double>& x, const mri::CoilSensitivities& coils,
                             const mri::SamplingMask& mask, double noise_sigma, std::uint64_t seed);

// Zero-filled reconstruction R F^{-1}(k).
Tensor<double> zero_filled(const Tensor<double>& kspace, const mri::CoilSensitivities& coils);

// Centered k-space rectangle kept by the SR degradation.
struct KSpaceBlock {
  std::size_t row0 = 0, rows = 0, col0 = 0, cols = 0;
};

// Side fraction sqrt(keep_fraction) per axis, rounded half-up, centered on DC.
KSpaceBlock sr_retained_block(std::size_t h, std::size_t w, double keep_fraction);
// Binary [H,W] indicator of the retained block.
Tensor<double> sr_kspace_mask(std::size_t h, std::size_t w, double keep_fraction);

// y = F^{-1} M F x for the centered block M; x is [H,W,2].
Tensor<double> degrade_sr(const Tensor<double>& x, double keep_fraction);

struct SensitivityLossField {
  Tensor<double> g;  // [H,W], values in (0,1]
  double sigma0 = 0.05;
  double alpha = 3.0;
  std::size_t anchor_row = 0;
  std::size_t anchor_col = 0;

  // sigma(r) = sigma0 * (1 + alpha * (1 - g(r)))
  double noise_scale(std::size_t i) const { return sigma0 * (1.0 + alpha * (1.0 - g[i])); }
  Tensor<double> noise_scales() const;
};

struct GFieldOptions {
  double g_min = 0.3;
  double tau_fraction = 0.4;  // tau = tau_fraction * min(H,W)
  double sigma0 = 0.05;
  double alpha = 3.0;
};

// g(r) = g_min + (1 - g_min) exp(-d(r)^2 / (2 tau^2)), d measured from a
// random anchor placed near the image border.
SensitivityLossField make_g_field(std::size_t h, std::size_t w, std::uint64_t seed, const GFieldOptions& opts = {});

// y(r) = g(r) x(r) + sigma(r) n(r), n ~ N(0,1) i.i.d.
Tensor<double> degrade_denoise(const Tensor<double>& x, const SensitivityLossField& field, std::uint64_t seed);

}  // namespace mrirest::sim
