#pragma once

// One finite-difference case per differentiable op, shared by the unit tests
// and the acceptance run.

#include <string>
#include <vector>

#include "mrirest/blocks.hpp"
#include "mrirest/mri.hpp"
#include "oracles.hpp"

namespace oracle {

struct OpCase {
  std::string name;
  mrirest::ParameterStore<double> params;
  Builder f;
};

inline std::vector<OpCase> op_cases(Rng& rng) {
  using namespace mrirest;
  using S = const ParamScope<double>&;
  auto store = [&](std::initializer_list<std::pair<const char*, Shape>> items) {
    ParameterStore<double> s;
    for (const auto& [n, sh] : items) s.add(n, randn(sh, rng));
    return s;
  };
  // Keeps values away from the kink of |x|.
  auto shifted = [&](const char* name, Shape sh) {
    ParameterStore<double> s;
    TensorD t = randn(sh, rng);
    for (double& v : t.values()) v += v < 0 ? -0.25 : 0.25;
    s.add(name, t);
    return s;
  };

  std::vector<OpCase> cases;
  cases.push_back({"add", store({{"a", {2, 3, 4}}, {"b", {4}}}), [](S s) { return ad::add(s["a"], s["b"]); }});
  cases.push_back({"sub", store({{"a", {3, 1}}, {"b", {2, 3, 4}}}), [](S s) { return ad::sub(s["a"], s["b"]); }});
  cases.push_back({"mul", store({{"a", {1, 3, 1, 1}}, {"b", {2, 3, 2, 2}}}), [](S s) { return ad::mul(s["a"], s["b"]); }});
  cases.push_back({"scale", store({{"a", {5}}}), [](S s) { return ad::scale(s["a"], -0.3); }});
  cases.push_back({"sum", store({{"a", {2, 5}}}), [](S s) { return ad::sum(s["a"]); }});
  cases.push_back({"mean", store({{"a", {3, 3}}}), [](S s) { return ad::mean(s["a"]); }});
  cases.push_back({"abs", shifted("a", {4, 3}), [](S s) { return ad::abs(s["a"]); }});
  cases.push_back({"reshape", store({{"a", {2, 6}}}), [](S s) { return ad::reshape(s["a"], {3, 4}); }});
  cases.push_back({"conv2d", store({{"x", {2, 4, 6, 6}}, {"w", {4, 2, 3, 3}}, {"b", {4}}}), [](S s) {
                     Var<double> b = s["b"];
                     return ad::conv2d(s["x"], s["w"], &b, 2);
                   }});
  cases.push_back({"layer_norm", store({{"x", {2, 4, 3, 3}}, {"g", {4}}, {"b", {4}}}),
                   [](S s) { return ad::layer_norm(s["x"], s["g"], s["b"]); }});
  cases.push_back({"split_channels", store({{"x", {1, 4, 2, 2}}}), [](S s) {
                     auto [a, b] = ad::split_channels(s["x"]);
                     return ad::sub(ad::scale(a, 2.0), b);
                   }});
  cases.push_back({"concat_channels", store({{"a", {1, 2, 3, 3}}, {"b", {1, 3, 3, 3}}}),
                   [](S s) { return ad::concat_channels(s["a"], s["b"]); }});
  cases.push_back({"pixel_shuffle", store({{"x", {1, 8, 3, 2}}}), [](S s) { return ad::pixel_shuffle(s["x"], 2); }});
  cases.push_back({"pixel_unshuffle", store({{"x", {2, 2, 4, 4}}}), [](S s) { return ad::pixel_unshuffle(s["x"], 2); }});
  cases.push_back({"softmax_taps", store({{"w", {1, 18, 3, 3}}}), [](S s) { return ad::softmax_taps(s["w"], 2, 9); }});
  cases.push_back({"dynamic_aggregate", store({{"x", {2, 4, 5, 5}}, {"w", {2, 18, 5, 5}}}),
                   [](S s) { return ad::dynamic_aggregate(s["x"], s["w"], 2, 3); }});
  cases.push_back({"complex_to_channels", store({{"z", {3, 4, 2}}}), [](S s) { return ad::complex_to_channels(s["z"]); }});
  cases.push_back({"channels_to_complex", store({{"x", {1, 2, 3, 4}}}), [](S s) { return ad::channels_to_complex(s["x"]); }});
  cases.push_back({"complex_abs", shifted("z", {3, 4, 2}), [](S s) { return ad::complex_abs(s["z"]); }});
  {
    ParameterStore<double> p = store({{"p", {4, 4}}});
    TensorD target = p.get("p");
    for (double& v : target.values()) v -= 0.4;
    cases.push_back({"l1_loss", std::move(p), [target](S s) { return ad::l1_loss(s["p"], s.tape().constant(target)); }});
  }
  cases.push_back({"simple_gate", store({{"x", {2, 4, 3, 3}}}), [](S s) { return nn::simple_gate(s["x"]); }});
  cases.push_back({"lsconv_aggregate", store({{"x", {1, 4, 5, 5}}, {"w", {1, 18, 5, 5}}}), [](S s) {
                     return nn::lsconv_aggregate(s["x"], s["w"], nn::LsConvConfig{5, 3, 2, true});
                   }});

  const auto mask = mri::generate_mask(6, 2, 0.2, 4);
  const auto coils = mri::make_coil_maps(3, 5, 6, 8);
  cases.push_back({"fft2c", store({{"x", {5, 6, 2}}}), [](S s) { return mri::fft2c(s["x"]); }});
  cases.push_back({"ifft2c", store({{"k", {3, 5, 6, 2}}}), [](S s) { return mri::ifft2c(s["k"]); }});
  cases.push_back({"apply_mask", store({{"k", {3, 5, 6, 2}}}), [mask](S s) { return mri::apply_mask(s["k"], mask); }});
  cases.push_back({"expand", store({{"x", {5, 6, 2}}}), [coils](S s) { return mri::expand(s["x"], coils); }});
  cases.push_back({"reduce", store({{"k", {3, 5, 6, 2}}}), [coils](S s) { return mri::reduce(s["k"], coils); }});
  return cases;
}

}  // namespace oracle
