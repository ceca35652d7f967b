#pragma once

// Reference implementations used only by the tests. Each one is written from
// the textbook definition with plain loops and shares no code with the
// library's fast paths.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "mrirest/autodiff.hpp"
#include "mrirest/mri.hpp"

namespace oracle {

using mrirest::Shape;
using TensorD = mrirest::Tensor<double>;
using Rng = std::mt19937_64;

inline TensorD randn(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  TensorD t(shape);
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline TensorD randu(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline double inner(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const TensorD& a) { return std::sqrt(inner(a, a)); }

// Centered orthonormal DFT of an [H,W,2] image by direct summation. With
// c = floor(N/2), sample n sits at position n - c and bin k at frequency k - c.
inline TensorD dft2c(const TensorD& x, bool inverse = false) {
  const std::size_t H = x.dim(0), W = x.dim(1);
  const long ch = static_cast<long>(H / 2), cw = static_cast<long>(W / 2);
  const double sign = inverse ? 1.0 : -1.0;
  TensorD out(x.shape());
  for (std::size_t k1 = 0; k1 < H; ++k1)
    for (std::size_t k2 = 0; k2 < W; ++k2) {
      std::complex<double> acc = 0.0;
      for (std::size_t n1 = 0; n1 < H; ++n1)
        for (std::size_t n2 = 0; n2 < W; ++n2) {
          const double phase = sign * 2.0 * std::numbers::pi *
                               (static_cast<double>((static_cast<long>(k1) - ch) * (static_cast<long>(n1) - ch)) / H +
                                static_cast<double>((static_cast<long>(k2) - cw) * (static_cast<long>(n2) - cw)) / W);
          acc += std::complex<double>(x.at(n1, n2, 0), x.at(n1, n2, 1)) * std::polar(1.0, phase);
        }
      acc /= std::sqrt(static_cast<double>(H * W));
      out.at(k1, k2, 0) = acc.real();
      out.at(k1, k2, 1) = acc.imag();
    }
  return out;
}

// Zero-padded "same" cross-correlation, one output value at a time.
inline TensorD conv2d(const TensorD& x, const TensorD& w, const TensorD* bias, int groups) {
  const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), cpg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::size_t opg = Cout / static_cast<std::size_t>(groups);
  (void)Cin;
  TensorD y({N, Cout, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Cout; ++o) {
      const std::size_t g = o / opg;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < cpg; ++c)
            for (std::size_t u = 0; u < KH; ++u)
              for (std::size_t v = 0; v < KW; ++v) {
                const long ii = static_cast<long>(i + u) - static_cast<long>(KH / 2);
                const long jj = static_cast<long>(j + v) - static_cast<long>(KW / 2);
                if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) || jj >= static_cast<long>(W)) continue;
                acc += w.at(o, c, u, v) * x.at(n, g * cpg + c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
              }
          y.at(n, o, i, j) = acc;
        }
    }
  return y;
}

// y[n,c,i,j] = sum_{u,v} K[n,g(c),u,v,i,j] x[n,c,i+u-r,j+v-r]
inline TensorD dynamic_aggregate(const TensorD& x, const TensorD& w, std::size_t G, std::size_t K, bool softmax) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), per = C / G, r = K / 2;
  TensorD y(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t g = c / per;
          std::vector<double> k(K * K);
          for (std::size_t t = 0; t < K * K; ++t) k[t] = w.at(n, g * K * K + t, i, j);
          if (softmax) {
            double z = 0.0;
            for (double& v : k) z += (v = std::exp(v));
            for (double& v : k) v /= z;
          }
          double acc = 0.0;
          for (std::size_t u = 0; u < K; ++u)
            for (std::size_t v = 0; v < K; ++v) {
              const long ii = static_cast<long>(i + u) - static_cast<long>(r);
              const long jj = static_cast<long>(j + v) - static_cast<long>(r);
              if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) || jj >= static_cast<long>(W)) continue;
              acc += k[u * K + v] * x.at(n, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
            }
          y.at(n, c, i, j) = acc;
        }
  return y;
}

struct WindowStats {
  double sum = 0.0;
  std::size_t count = 0;
};

// Sum of SSIM over every valid window x window patch of slice s of two
// [S,H,W] volumes (sample covariance, as in the common reference code).
inline WindowStats ssim_windows(const TensorD& a, const TensorD& b, std::size_t s, double range,
                                std::size_t window = 7, double k1 = 0.01, double k2 = 0.03) {
  const std::size_t H = a.dim(1), W = a.dim(2);
  const double c1 = std::pow(k1 * range, 2), c2 = std::pow(k2 * range, 2);
  const double np = static_cast<double>(window * window);
  WindowStats st;
  for (std::size_t i = 0; i + window <= H; ++i)
    for (std::size_t j = 0; j + window <= W; ++j) {
      std::vector<double> pa, pb;
      for (std::size_t u = 0; u < window; ++u)
        for (std::size_t v = 0; v < window; ++v) {
          pa.push_back(a.at(s, i + u, j + v));
          pb.push_back(b.at(s, i + u, j + v));
        }
      double ma = 0, mb = 0;
      for (std::size_t t = 0; t < pa.size(); ++t) {
        ma += pa[t] / np;
        mb += pb[t] / np;
      }
      double va = 0, vb = 0, cab = 0;
      for (std::size_t t = 0; t < pa.size(); ++t) {
        va += (pa[t] - ma) * (pa[t] - ma) / (np - 1);
        vb += (pb[t] - mb) * (pb[t] - mb) / (np - 1);
        cab += (pa[t] - ma) * (pb[t] - mb) / (np - 1);
      }
      st.sum += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++st.count;
    }
  return st;
}

// Central-difference gradient check. `build` maps a parameter scope to any
// tensor; the scalar objective is <build(...), P> for a fixed random P.
// Returns the largest per-parameter relative error ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||).
using Builder = std::function<mrirest::Var<double>(const mrirest::ParamScope<double>&)>;

inline double gradient_check(mrirest::ParameterStore<double> store, const Builder& build, Rng& rng,
                             double h = 1e-4, std::size_t max_entries = 16) {
  using namespace mrirest;
  TensorD projection;
  auto objective = [&](Tape<double>& tape) {
    ParamScope<double> scope(tape, store);
    Var<double> y = build(scope);
    if (projection.empty()) projection = randn(y.shape(), rng);
    return ad::sum(ad::mul(y, tape.constant(projection)));
  };
  Tape<double> tape;
  tape.backward(objective(tape));
  const auto grads = tape.gradients(store);

  double worst = 0.0;
  for (auto& [name, p] : store) {
    std::vector<std::size_t> pick;
    if (p.size() <= max_entries) {
      for (std::size_t i = 0; i < p.size(); ++i) pick.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> any(0, p.size() - 1);
      for (std::size_t i = 0; i < max_entries; ++i) pick.push_back(any(rng));
    }
    double num = 0, da = 0, dn = 0;
    for (std::size_t i : pick) {
      const double keep = p[i];
      p[i] = keep + h;
      Tape<double> t1;
      const double f1 = objective(t1).value()[0];
      p[i] = keep - h;
      Tape<double> t2;
      const double f2 = objective(t2).value()[0];
      p[i] = keep;
      const double fd = (f1 - f2) / (2 * h), an = grads.at(name)[i];
      num += (fd - an) * (fd - an);
      da += an * an;
      dn += fd * fd;
    }
    const double scale = std::sqrt(std::max(da, dn));
    worst = std::max(worst, scale > 1e-8 ? std::sqrt(num) / scale : std::sqrt(num));
  }
  return worst;
}

inline void jitter(mrirest::ParameterStore<double>& store, Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [_, t] : store)
    for (double& v : t.values()) v += n(rng);
}

}  // namespace oracle
