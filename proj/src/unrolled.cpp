#include "mrirest/unrolled.hpp"

#include <string>

namespace mrirest::recon {

void UnrolledConfig::validate() const {
  if (iterations < 1) throw ParameterError("unrolled iterations must be >= 1");
  if (backbone.in_channels != 2 || backbone.out_channels != 2) {
    throw ParameterError("the recon regularizer maps 2 (re/im) channels to 2");
  }
  backbone.validate();
}

namespace {

std::string backbone_prefix(const UnrolledConfig& cfg, int t) {
  return cfg.share_weights ? std::string("dtheta") : "dtheta." + std::to_string(t);
}

}  // namespace

template <typename T>
void declare_unrolled(ParameterStore<T>& store, const UnrolledConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  for (int t = 0; t < cfg.iterations; ++t) {
    if (cfg.learn_mu) store.add("mu." + std::to_string(t), Tensor<T>(Shape{1}, static_cast<T>(cfg.mu_init)));
    if (!cfg.share_weights || t == 0) {
      nn::declare_backbone(store, backbone_prefix(cfg, t) + ".", cfg.backbone, rng, true);
    }
  }
}

template <typename T>
Var<T> dc_step(const Var<T>& k, const Var<T>& k_meas, const mri::SamplingMask& mask, const Var<T>& mu) {
  if (k.shape() != k_meas.shape()) {
    throw ShapeError("dc_step: k " + to_string(k.shape()) + " vs measurements " + to_string(k_meas.shape()));
  }
  if (mu.value().size() != 1) throw ShapeError("dc_step: mu must be a scalar");
  // Written as (1 - M)k + (1 - mu) Mk + mu Mk_meas, which equals
  // k - mu M(k - k_meas) but reproduces k_meas bit-exactly when mu = 1.
  Var<T> kept = mri::apply_mask(k, mask);
  Var<T> one = k.tape().constant(Tensor<T>(Shape{1}, T{1}));
  Var<T> out = ad::add(ad::sub(k, kept), ad::mul(kept, ad::sub(one, mu)));
  return ad::add(out, ad::mul(mri::apply_mask(k_meas, mask), mu));
}

template <typename T>
Var<T> reg_step(const Var<T>& k, const mri::CoilSensitivities& coils, const nn::BackboneConfig& backbone,
                const ParamScope<T>& scope, bool residual) {
  Var<T> image = mri::reduce(mri::ifft2c(k), coils);
  Var<T> refined = ad::channels_to_complex(nn::backbone_forward(ad::complex_to_channels(image), backbone, scope, residual));
  return mri::fft2c(mri::expand(refined, coils));
}

template <typename T>
UnrolledOutput<T> unroll_forward(const Var<T>& k_meas, const mri::SamplingMask& mask,
                                 const mri::CoilSensitivities& coils, const UnrolledConfig& cfg,
                                 const ParamScope<T>& scope, std::optional<Var<T>> k0,
                                 std::optional<int> iterations) {
  cfg.validate();
  const int steps = iterations.value_or(cfg.iterations);
  if (steps < 0 || steps > cfg.iterations) throw ParameterError("iteration count outside [0, T]");
  Tape<T>& tape = k_meas.tape();
  UnrolledOutput<T> out;
  Var<T> k = k0.value_or(k_meas);
  out.states.push_back({k, 0});
  for (int t = 0; t < steps; ++t) {
    Var<T> mu = cfg.learn_mu ? scope["mu." + std::to_string(t)]
                             : tape.constant(Tensor<T>(Shape{1}, static_cast<T>(cfg.mu_init)));
    Var<T> correction = reg_step(k, coils, cfg.backbone, scope.sub(backbone_prefix(cfg, t)), cfg.regularizer_residual);
    k = ad::add(dc_step(k, k_meas, mask, mu), correction);
    if (!all_finite(k.value())) throw DivergenceError(t + 1);
    out.states.push_back({k, t + 1});
  }
  out.image = mri::reduce(mri::ifft2c(k), coils);
  return out;
}

#define MRIREST_INSTANTIATE(T)                                                                                  \
  template void declare_unrolled<T>(ParameterStore<T>&, const UnrolledConfig&, nn::Rng&);                      \
  template Var<T> dc_step<T>(const Var<T>&, const Var<T>&, const mri::SamplingMask&, const Var<T>&);            \
  template Var<T> reg_step<T>(const Var<T>&, const mri::CoilSensitivities&, const nn::BackboneConfig&,          \
                              const ParamScope<T>&, bool);                                                      \
  template UnrolledOutput<T> unroll_forward<T>(const Var<T>&, const mri::SamplingMask&,                        \
                                               const mri::CoilSensitivities&, const UnrolledConfig&,            \
                                               const ParamScope<T>&, std::optional<Var<T>>, std::optional<int>);

MRIREST_INSTANTIATE(float)
MRIREST_INSTANTIATE(double)

#undef MRIREST_INSTANTIATE

}  // namespace mrirest::recon
