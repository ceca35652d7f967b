#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mrirest/autodiff.hpp"
#include "mrirest/tensor.hpp"

// Complex data is stored as real tensors with a trailing extent of 2
// (interleaved re/im). Images are [H,W,2]; multi-coil data is [C,H,W,2].
namespace mrirest::mri {

// Centered orthonormal 2D DFT over the two axes preceding the complex pair:
// ifftshift, DFT, fftshift, scaled by 1/sqrt(H*W). DC lands at (H/2, W/2).
template <typename T>
Tensor<T> fft2c(const Tensor<T>& x);
template <typename T>
Tensor<T> ifft2c(const Tensor<T>& k);

// Binary column mask for 1D Cartesian undersampling along the last spatial axis.
struct SamplingMask {
  std::size_t width = 0;
  std::vector<std::uint8_t> kept;
  int acceleration = 1;
  double center_fraction = 0.0;

  static SamplingMask full(std::size_t width);
  std::size_t kept_count() const;
  bool is_kept(std::size_t column) const { return kept.at(column) != 0; }
  Tensor<double> to_tensor() const;
  static SamplingMask from_tensor(const Tensor<double>& t, int acceleration = 1, double center_fraction = 0.0);
};

// round-half-up(center_fraction * width)
std::size_t center_column_count(std::size_t width, double center_fraction);

// Keeps the central band, then each remaining column independently with
// probability (width/acceleration - n_center) / (width - n_center), clamped to [0,1].
SamplingMask generate_mask(std::size_t width, int acceleration, double center_fraction, std::uint64_t seed);

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& k, const SamplingMask& mask);

struct CoilSensitivities {
  Tensor<double> maps;  // [C,H,W,2]

  std::size_t coils() const { return maps.dim(0); }
  std::size_t height() const { return maps.dim(1); }
  std::size_t width() const { return maps.dim(2); }
  // S = 1 for a single uniform coil.
  static CoilSensitivities unit(std::size_t h, std::size_t w);
};

// Gaussian lobes on a circle of radius 0.6*min(H,W)/2 with smooth random
// phase, normalized so that sum_c |S_c|^2 = 1 at every pixel.
CoilSensitivities make_coil_maps(std::size_t coils, std::size_t h, std::size_t w, std::uint64_t seed);

// E: [H,W,2] -> [C,H,W,2], S_c * x.
template <typename T>
Tensor<T> expand(const Tensor<T>& x, const CoilSensitivities& s);
// R = E^H: [C,H,W,2] -> [H,W,2], sum_c conj(S_c) * y_c.
template <typename T>
Tensor<T> reduce(const Tensor<T>& y, const CoilSensitivities& s);

// Differentiable versions; each records its adjoint as the backward rule.
template <typename T>
Var<T> fft2c(const Var<T>& x);
template <typename T>
Var<T> ifft2c(const Var<T>& k);
template <typename T>
Var<T> apply_mask(const Var<T>& k, const SamplingMask& mask);
template <typename T>
Var<T> expand(const Var<T>& x, const CoilSensitivities& s);
template <typename T>
Var<T> reduce(const Var<T>& y, const CoilSensitivities& s);

}  // namespace mrirest::mri
