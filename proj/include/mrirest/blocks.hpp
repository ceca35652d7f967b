#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mrirest/autodiff.hpp"

namespace mrirest::nn {

enum class Mixer { local_dw3, lsconv };

std::string to_string(Mixer m);
Mixer parse_mixer(const std::string& name);

// Large-kernel perception predicting small-kernel, per-position aggregation weights.
struct LsConvConfig {
  int large_kernel = 7;  // K_L
  int small_kernel = 3;  // K_S
  int groups = 8;        // G
  bool normalize_kernels = false;

  void validate(std::size_t channels) const;
};

struct BlockConfig {
  std::size_t channels = 16;
  Mixer mixer = Mixer::local_dw3;
  int dw_kernel = 3;
  int expansion = 2;
  LsConvConfig lsconv;

  void validate() const;
  // Channel count seen by the spatial mixer (after the expanding pointwise conv).
  std::size_t mixer_channels() const { return channels * static_cast<std::size_t>(expansion); }
};

struct BackboneConfig {
  std::size_t width = 16;
  std::vector<int> enc_blocks{1, 1};
  int middle_blocks = 1;
  std::vector<int> dec_blocks{1, 1};
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Mixer mixer = Mixer::local_dw3;
  int dw_kernel = 3;
  int expansion = 2;
  LsConvConfig lsconv;

  void validate() const;
  std::size_t levels() const { return enc_blocks.size(); }
  BlockConfig block(std::size_t channels) const;
};

using Rng = std::mt19937_64;

// Parameter declaration. Conv weights are uniform in +-sqrt(1/fan_in), biases zero,
// LayerNorm gamma one and beta zero.
template <typename T>
void declare_conv(ParameterStore<T>& store, const std::string& prefix, std::size_t cout, std::size_t cin_per_group,
                  int kernel, Rng& rng, bool bias = true);
template <typename T>
void declare_layer_norm(ParameterStore<T>& store, const std::string& prefix, std::size_t channels);
template <typename T>
void declare_lsconv(ParameterStore<T>& store, const std::string& prefix, std::size_t channels,
                    const LsConvConfig& cfg, Rng& rng);
template <typename T>
void declare_block(ParameterStore<T>& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
// `zero_final` zero-initializes the last projection so the backbone starts as
// the identity (global residual) or the zero map (no residual).
template <typename T>
void declare_backbone(ParameterStore<T>& store, const std::string& prefix, const BackboneConfig& cfg, Rng& rng,
                      bool zero_final = true);

std::size_t lsconv_parameter_count(std::size_t channels, const LsConvConfig& cfg);
std::size_t block_parameter_count(const BlockConfig& cfg);

// SG(Z) = Z1 * Z2 over the two channel halves.
template <typename T>
Var<T> simple_gate(const Var<T>& z);

// W = PW_out(DW_{K_L}(PW_in(x))): [N,C,H,W] -> [N, G*K_S^2, H, W].
template <typename T>
Var<T> lsconv_weights(const Var<T>& x, const LsConvConfig& cfg, const ParamScope<T>& scope);

// y[i,c] = sum_{(u,v)} K_i(g(c),u,v) x[i+(u,v),c], zero padded.
template <typename T>
Var<T> lsconv_aggregate(const Var<T>& x, const Var<T>& w, const LsConvConfig& cfg);

template <typename T>
Var<T> lsconv(const Var<T>& x, const LsConvConfig& cfg, const ParamScope<T>& scope);

// Minimal gated block:
//   x + PW(SG(mixer(PW_expand(LN(x)))))  then  x + PW(SG(PW_expand(LN(x))))
template <typename T>
Var<T> naf_block(const Var<T>& x, const BlockConfig& cfg, const ParamScope<T>& scope);

// naf_block with the spatial mixer swapped for LSConv.
template <typename T>
Var<T> lsg_block(const Var<T>& x, BlockConfig cfg, const ParamScope<T>& scope);

// U-shaped encoder/decoder. With `global_residual` the output is x + correction.
template <typename T>
Var<T> backbone_forward(const Var<T>& x, const BackboneConfig& cfg, const ParamScope<T>& scope,
                        bool global_residual = true);

// Checkpoint: "key=value" header lines, a "---" separator, then for each
// parameter (lexicographic) a "<name>\n" line followed by an MRT1 tensor.
void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, std::string>& header,
                     const ParameterStore<double>& params);
struct Checkpoint {
  std::map<std::string, std::string> header;
  ParameterStore<double> params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mrirest::nn
