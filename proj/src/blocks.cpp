#include "mrirest/blocks.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mrirest/mrt_io.hpp"

namespace mrirest::nn {

std::string to_string(Mixer m) { return m == Mixer::lsconv ? "lsconv" : "local_dw3"; }

Mixer parse_mixer(const std::string& name) {
  if (name == "local_dw3") return Mixer::local_dw3;
  if (name == "lsconv") return Mixer::lsconv;
  throw ParameterError("unknown mixer '" + name + "'");
}

void LsConvConfig::validate(std::size_t channels) const {
  if (large_kernel < 1 || large_kernel % 2 == 0) throw ParameterError("LSConv large kernel must be odd");
  if (small_kernel < 1 || small_kernel % 2 == 0) throw ParameterError("LSConv small kernel must be odd");
  if (groups < 1 || channels % static_cast<std::size_t>(groups) != 0) {
    throw ParameterError("LSConv groups=" + std::to_string(groups) + " must divide channels=" + std::to_string(channels));
  }
}

void BlockConfig::validate() const {
  if (channels == 0 || channels % 2 != 0) throw ParameterError("block channels must be even and positive");
  if (dw_kernel < 1 || dw_kernel % 2 == 0) throw ParameterError("dw_kernel must be odd");
  if (expansion < 1 || mixer_channels() % 2 != 0) throw ParameterError("expanded channel count must be even");
  if (mixer == Mixer::lsconv) lsconv.validate(mixer_channels());
}

void BackboneConfig::validate() const {
  if (width == 0 || width % 2 != 0) throw ParameterError("backbone width must be even and positive");
  if (enc_blocks.size() != dec_blocks.size()) throw ParameterError("encoder and decoder level counts differ");
  if (in_channels == 0 || out_channels == 0) throw ParameterError("backbone channel counts must be positive");
  for (std::size_t l = 0; l <= levels(); ++l) block(width << l).validate();
}

BlockConfig BackboneConfig::block(std::size_t channels) const {
  BlockConfig b;
  b.channels = channels;
  b.mixer = mixer;
  b.dw_kernel = dw_kernel;
  b.expansion = expansion;
  b.lsconv = lsconv;
  return b;
}

template <typename T>
void declare_conv(ParameterStore<T>& store, const std::string& prefix, std::size_t cout, std::size_t cin_per_group,
                  int kernel, Rng& rng, bool bias) {
  const std::size_t k = static_cast<std::size_t>(kernel);
  const double bound = std::sqrt(1.0 / static_cast<double>(cin_per_group * k * k));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> w(Shape{cout, cin_per_group, k, k});
  for (T& v : w.values()) v = static_cast<T>(u(rng));
  store.add(prefix + "weight", std::move(w));
  if (bias) store.add(prefix + "bias", Tensor<T>(Shape{cout}));
}

template <typename T>
void declare_layer_norm(ParameterStore<T>& store, const std::string& prefix, std::size_t channels) {
  store.add(prefix + "weight", Tensor<T>(Shape{channels}, T{1}));
  store.add(prefix + "bias", Tensor<T>(Shape{channels}));
}

template <typename T>
void declare_lsconv(ParameterStore<T>& store, const std::string& prefix, std::size_t channels,
                    const LsConvConfig& cfg, Rng& rng) {
  cfg.validate(channels);
  const std::size_t taps = static_cast<std::size_t>(cfg.small_kernel * cfg.small_kernel);
  declare_conv(store, prefix + "pw_in.", channels, channels, 1, rng);
  declare_conv(store, prefix + "dw.", channels, 1, cfg.large_kernel, rng);
  declare_conv(store, prefix + "pw_out.", static_cast<std::size_t>(cfg.groups) * taps, channels, 1, rng);
}

template <typename T>
void declare_block(ParameterStore<T>& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels, mid = cfg.mixer_channels();
  declare_layer_norm(store, prefix + "norm1.", c);
  declare_conv(store, prefix + "pw1.", mid, c, 1, rng);
  if (cfg.mixer == Mixer::lsconv) {
    declare_lsconv(store, prefix + "lsconv.", mid, cfg.lsconv, rng);
  } else {
    declare_conv(store, prefix + "dw.", mid, 1, cfg.dw_kernel, rng);
  }
  declare_conv(store, prefix + "pw2.", c, mid / 2, 1, rng);
  declare_layer_norm(store, prefix + "norm2.", c);
  declare_conv(store, prefix + "pw3.", mid, c, 1, rng);
  declare_conv(store, prefix + "pw4.", c, mid / 2, 1, rng);
}

template <typename T>
void declare_backbone(ParameterStore<T>& store, const std::string& prefix, const BackboneConfig& cfg, Rng& rng,
                      bool zero_final) {
  cfg.validate();
  declare_conv(store, prefix + "intro.", cfg.width, cfg.in_channels, 3, rng);
  std::size_t c = cfg.width;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    for (int b = 0; b < cfg.enc_blocks[l]; ++b) {
      declare_block(store, prefix + "enc" + std::to_string(l) + ".block" + std::to_string(b) + ".", cfg.block(c), rng);
    }
    declare_conv(store, prefix + "down" + std::to_string(l) + ".", 2 * c, 4 * c, 1, rng);
    c *= 2;
  }
  for (int b = 0; b < cfg.middle_blocks; ++b) {
    declare_block(store, prefix + "middle.block" + std::to_string(b) + ".", cfg.block(c), rng);
  }
  for (std::size_t l = cfg.levels(); l-- > 0;) {
    declare_conv(store, prefix + "up" + std::to_string(l) + ".", 2 * c, c, 1, rng, false);
    c /= 2;
    for (int b = 0; b < cfg.dec_blocks[l]; ++b) {
      declare_block(store, prefix + "dec" + std::to_string(l) + ".block" + std::to_string(b) + ".", cfg.block(c), rng);
    }
  }
  declare_conv(store, prefix + "ending.", cfg.out_channels, cfg.width, 3, rng);
  if (zero_final) store.get(prefix + "ending.weight").fill(T{0});
}

std::size_t lsconv_parameter_count(std::size_t channels, const LsConvConfig& cfg) {
  const std::size_t kl = static_cast<std::size_t>(cfg.large_kernel);
  const std::size_t out = static_cast<std::size_t>(cfg.groups * cfg.small_kernel * cfg.small_kernel);
  return (channels * channels + channels) + (channels * kl * kl + channels) + (channels * out + out);
}

std::size_t block_parameter_count(const BlockConfig& cfg) {
  const std::size_t c = cfg.channels, mid = cfg.mixer_channels();
  const std::size_t k = static_cast<std::size_t>(cfg.dw_kernel);
  const std::size_t mixer = cfg.mixer == Mixer::lsconv ? lsconv_parameter_count(mid, cfg.lsconv) : mid * k * k + mid;
  const std::size_t norms = 4 * c;
  const std::size_t pointwise = 2 * (c * mid + mid) + 2 * (mid / 2 * c + c);
  return norms + pointwise + mixer;
}

namespace {

template <typename T>
Var<T> conv(const Var<T>& x, const ParamScope<T>& s, int groups = 1) {
  if (s.has("bias")) {
    Var<T> b = s["bias"];
    return ad::conv2d(x, s["weight"], &b, groups);
  }
  return ad::conv2d(x, s["weight"], static_cast<const Var<T>*>(nullptr), groups);
}

template <typename T>
Var<T> norm(const Var<T>& x, const ParamScope<T>& s) {
  return ad::layer_norm(x, s["weight"], s["bias"], T(1e-6));
}

}  // namespace

template <typename T>
Var<T> simple_gate(const Var<T>& z) {
  auto [z1, z2] = ad::split_channels(z);
  return ad::mul(z1, z2);
}

template <typename T>
Var<T> lsconv_weights(const Var<T>& x, const LsConvConfig& cfg, const ParamScope<T>& scope) {
  const std::size_t c = x.shape().at(1);
  cfg.validate(c);
  Var<T> h = conv(x, scope.sub("pw_in"));
  h = conv(h, scope.sub("dw"), static_cast<int>(c));
  return conv(h, scope.sub("pw_out"));
}

template <typename T>
Var<T> lsconv_aggregate(const Var<T>& x, const Var<T>& w, const LsConvConfig& cfg) {
  cfg.validate(x.shape().at(1));
  const int taps = cfg.small_kernel * cfg.small_kernel;
  Var<T> kernels = cfg.normalize_kernels ? ad::softmax_taps(w, cfg.groups, taps) : w;
  return ad::dynamic_aggregate(x, kernels, cfg.groups, cfg.small_kernel);
}

template <typename T>
Var<T> lsconv(const Var<T>& x, const LsConvConfig& cfg, const ParamScope<T>& scope) {
  return lsconv_aggregate(x, lsconv_weights(x, cfg, scope), cfg);
}

template <typename T>
Var<T> naf_block(const Var<T>& x, const BlockConfig& cfg, const ParamScope<T>& scope) {
  cfg.validate();
  if (x.shape().size() != 4 || x.shape()[1] != cfg.channels) {
    throw ShapeError("block expects [N," + std::to_string(cfg.channels) + ",H,W], got " + mrirest::to_string(x.shape()));
  }
  Var<T> y = norm(x, scope.sub("norm1"));
  y = conv(y, scope.sub("pw1"));
  if (cfg.mixer == Mixer::lsconv) {
    y = lsconv(y, cfg.lsconv, scope.sub("lsconv"));
  } else {
    y = conv(y, scope.sub("dw"), static_cast<int>(cfg.mixer_channels()));
  }
  y = simple_gate(y);
  y = conv(y, scope.sub("pw2"));
  Var<T> mid = ad::add(x, y);

  y = norm(mid, scope.sub("norm2"));
  y = conv(y, scope.sub("pw3"));
  y = simple_gate(y);
  y = conv(y, scope.sub("pw4"));
  return ad::add(mid, y);
}

template <typename T>
Var<T> lsg_block(const Var<T>& x, BlockConfig cfg, const ParamScope<T>& scope) {
  cfg.mixer = Mixer::lsconv;
  return naf_block(x, cfg, scope);
}

template <typename T>
Var<T> backbone_forward(const Var<T>& x, const BackboneConfig& cfg, const ParamScope<T>& scope,
                        bool global_residual) {
  cfg.validate();
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg.in_channels) {
    throw ShapeError("backbone expects [N," + std::to_string(cfg.in_channels) + ",H,W], got " + mrirest::to_string(s));
  }
  const std::size_t factor = std::size_t{1} << cfg.levels();
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw ShapeError("backbone input " + mrirest::to_string(s) + " not divisible by 2^" + std::to_string(cfg.levels()));
  }
  if (global_residual && cfg.in_channels != cfg.out_channels) {
    throw ShapeError("global residual needs in_channels == out_channels");
  }

  Var<T> h = conv(x, scope.sub("intro"));
  std::vector<Var<T>> skips;
  std::size_t c = cfg.width;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    for (int b = 0; b < cfg.enc_blocks[l]; ++b) {
      h = naf_block(h, cfg.block(c), scope.sub("enc" + std::to_string(l)).sub("block" + std::to_string(b)));
    }
    skips.push_back(h);
    h = conv(ad::pixel_unshuffle(h, 2), scope.sub("down" + std::to_string(l)));
    c *= 2;
  }
  for (int b = 0; b < cfg.middle_blocks; ++b) {
    h = naf_block(h, cfg.block(c), scope.sub("middle").sub("block" + std::to_string(b)));
  }
  for (std::size_t l = cfg.levels(); l-- > 0;) {
    h = ad::pixel_shuffle(conv(h, scope.sub("up" + std::to_string(l))), 2);
    c /= 2;
    h = ad::add(h, skips[l]);
    for (int b = 0; b < cfg.dec_blocks[l]; ++b) {
      h = naf_block(h, cfg.block(c), scope.sub("dec" + std::to_string(l)).sub("block" + std::to_string(b)));
    }
  }
  Var<T> out = conv(h, scope.sub("ending"));
  return global_residual ? ad::add(out, x) : out;
}

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, std::string>& header,
                     const ParameterStore<double>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : header) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw ParameterError("checkpoint header entries must be single-line key=value pairs");
    }
    os << k << "=" << v << "\n";
  }
  os << "---\n";
  for (const auto& [name, t] : params) {
    os << name << "\n";
    write_mrt(os, t, DType::real64);
  }
  if (!os) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Checkpoint ck;
  std::string line;
  bool separator = false;
  while (std::getline(is, line)) {
    if (line == "---") {
      separator = true;
      break;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint header line in " + path.string());
    ck.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!separator) throw IoError("checkpoint " + path.string() + " has no parameter section");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      ck.params.add(line, read_mrt(is).tensor);
    } catch (const IoError& e) {
      throw IoError(path.string() + ": parameter '" + line + "': " + e.what());
    }
  }
  return ck;
}

#define MRIREST_INSTANTIATE(T)                                                                                   \
  template void declare_conv<T>(ParameterStore<T>&, const std::string&, std::size_t, std::size_t, int, Rng&, bool); \
  template void declare_layer_norm<T>(ParameterStore<T>&, const std::string&, std::size_t);                      \
  template void declare_lsconv<T>(ParameterStore<T>&, const std::string&, std::size_t, const LsConvConfig&, Rng&); \
  template void declare_block<T>(ParameterStore<T>&, const std::string&, const BlockConfig&, Rng&);               \
  template void declare_backbone<T>(ParameterStore<T>&, const std::string&, const BackboneConfig&, Rng&, bool);   \
  template Var<T> simple_gate<T>(const Var<T>&);                                                                 \
  template Var<T> lsconv_weights<T>(const Var<T>&, const LsConvConfig&, const ParamScope<T>&);                   \
  template Var<T> lsconv_aggregate<T>(const Var<T>&, const Var<T>&, const LsConvConfig&);                        \
  template Var<T> lsconv<T>(const Var<T>&, const LsConvConfig&, const ParamScope<T>&);                           \
  template Var<T> naf_block<T>(const Var<T>&, const BlockConfig&, const ParamScope<T>&);                         \
  template Var<T> lsg_block<T>(const Var<T>&, BlockConfig, const ParamScope<T>&);                                \
  template Var<T> backbone_forward<T>(const Var<T>&, const BackboneConfig&, const ParamScope<T>&, bool);

MRIREST_INSTANTIATE(float)
MRIREST_INSTANTIATE(double)

#undef MRIREST_INSTANTIATE

}  // namespace mrirest::nn
