#pragma once

#include <optional>
#include <vector>

#include "mrirest/autodiff.hpp"
#include "mrirest/blocks.hpp"
#include "mrirest/mri.hpp"

namespace mrirest::recon {

struct UnrolledConfig {
  int iterations = 8;  // T
  double mu_init = 1.0;
  bool learn_mu = true;
  bool share_weights = false;
  // Keep the backbone's input->output identity path inside the regularizer
  // term. Off by default: the term then carries only the learned correction.
  bool regularizer_residual = false;
  nn::BackboneConfig backbone = default_backbone();

  static nn::BackboneConfig default_backbone() {
    nn::BackboneConfig b;
    b.in_channels = 2;
    b.out_channels = 2;
    return b;
  }
  void validate() const;
};

// Parameters: "mu.<t>" (shape [1], when learn_mu) and "dtheta.<t>.*"
// (or "dtheta.*" with shared weights).
template <typename T>
void declare_unrolled(ParameterStore<T>& store, const UnrolledConfig& cfg, nn::Rng& rng);

template <typename T>
struct CascadeState {
  Var<T> k;  // [C,H,W,2]
  int iteration = 0;
};

template <typename T>
struct UnrolledOutput {
  Var<T> image;                          // x_hat = R F^{-1}(k^T), [H,W,2]
  std::vector<CascadeState<T>> states;   // k^0 .. k^T
};

// k - mu * M (k - k_meas). `mu` is a one-element tensor.
template <typename T>
Var<T> dc_step(const Var<T>& k, const Var<T>& k_meas, const mri::SamplingMask& mask, const Var<T>& mu);

// F E D(R F^{-1} k): reduce to image, run the backbone on re/im channels,
// expand back to coils and transform.
template <typename T>
Var<T> reg_step(const Var<T>& k, const mri::CoilSensitivities& coils, const nn::BackboneConfig& backbone,
                const ParamScope<T>& scope, bool residual);

// Runs k^{t+1} = k^t - mu_t M(k^t - k_meas) + F E D_t(R F^{-1} k^t) for
// `iterations` steps (cfg.iterations when unset), starting from k0 (k_meas
// when unset). Throws DivergenceError on a non-finite state.
template <typename T>
UnrolledOutput<T> unroll_forward(const Var<T>& k_meas, const mri::SamplingMask& mask,
                                 const mri::CoilSensitivities& coils, const UnrolledConfig& cfg,
                                 const ParamScope<T>& scope, std::optional<Var<T>> k0 = std::nullopt,
                                 std::optional<int> iterations = std::nullopt);

}  // namespace mrirest::recon
