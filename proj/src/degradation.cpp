#include "mrirest/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace mrirest::sim {

Tensor<double> make_phantom(const PhantomSpec& spec) {
  const std::size_t H = spec.height, W = spec.width;
  if (H < 16 || W < 16) throw ParameterError("phantom extents must be >= 16");
  if (spec.n_ellipses < 0) throw ParameterError("n_ellipses must be non-negative");
  Tensor<double> raw(Shape{H, W});
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  for (int e = 0; e < spec.n_ellipses; ++e) {
    // The first ellipse is a large "body"; the rest are smaller structures
    // that may add or subtract intensity.
    const bool body = e == 0;
    const double cy = body ? in(-0.1, 0.1) : in(-0.6, 0.6);
    const double cx = body ? in(-0.1, 0.1) : in(-0.6, 0.6);
    const double ay = body ? in(0.6, 0.9) : in(0.06, 0.45);
    const double ax = body ? in(0.6, 0.9) : in(0.06, 0.45);
    const double theta = in(0.0, std::numbers::pi);
    const double value = body ? in(0.3, 0.6) : in(-0.3, 0.6);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t y = 0; y < H; ++y) {
      const double v = (static_cast<double>(y) - 0.5 * (H - 1)) / (0.5 * H) - cy;
      for (std::size_t x = 0; x < W; ++x) {
        const double uu = (static_cast<double>(x) - 0.5 * (W - 1)) / (0.5 * W) - cx;
        const double ru = ct * uu + st * v;
        const double rv = -st * uu + ct * v;
        if ((ru * ru) / (ax * ax) + (rv * rv) / (ay * ay) <= 1.0) raw.at(y, x) += value;
      }
    }
  }
  for (double& v : raw.values()) v = std::clamp(v, 0.0, 1.0);

  Tensor<double> out(Shape{H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W)) continue;
          acc += raw.at(yy, xx);
        }
      }
      out.at(y, x) = std::clamp(acc / 9.0, 0.0, 1.0);
    }
  }
  return out;
}

Tensor<double> to_complex(const Tensor<double>& image) {
  Shape s = image.shape();
  s.push_back(2);
  Tensor<double> out(s);
  for (std::size_t i = 0; i < image.size(); ++i) out[2 * i] = image[i];
  return out;
}

Tensor<double> magnitude(const Tensor<double>& z) {
  const Shape& s = z.shape();
  if (s.empty() || s.back() != 2) throw ShapeError("magnitude expects a trailing extent of 2");
  Tensor<double> out(Shape(s.begin(), s.end() - 1));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(z[2 * i], z[2 * i + 1]);
  return out;
}

Tensor<double> degrade_recon(const Tensor<double>& x, const mri::CoilSensitivities& coils,
                             const mri::SamplingMask& mask, double noise_sigma, std::uint64_t seed) {
  if (noise_sigma < 0.0) throw ParameterError("noise_sigma must be non-negative");
  Tensor<double> k = mri::apply_mask(mri::fft2c(mri::expand(x, coils)), mask);
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, noise_sigma);
    const std::size_t W = mask.width;
    const std::size_t rows = k.size() / (2 * W);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        const double nr = normal(rng), ni = normal(rng);
        if (!mask.kept[c]) continue;
        k[2 * (r * W + c)] += nr;
        k[2 * (r * W + c) + 1] += ni;
      }
    }
  }
  return k;
}

Tensor<double> zero_filled(const Tensor<double>& kspace, const mri::CoilSensitivities& coils) {
  return mri::reduce(mri::ifft2c(kspace), coils);
}

KSpaceBlock sr_retained_block(std::size_t h, std::size_t w, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ParameterError("keep_fraction must lie in (0,1]");
  const double side = std::sqrt(keep_fraction);
  KSpaceBlock b;
  b.rows = static_cast<std::size_t>(std::floor(side * static_cast<double>(h) + 0.5));
  b.cols = static_cast<std::size_t>(std::floor(side * static_cast<double>(w) + 0.5));
  if (b.rows == 0 || b.cols == 0) throw ParameterError("keep_fraction retains an empty k-space block");
  b.rows = std::min(b.rows, h);
  b.cols = std::min(b.cols, w);
  b.row0 = h / 2 - b.rows / 2;
  b.col0 = w / 2 - b.cols / 2;
  return b;
}

Tensor<double> sr_kspace_mask(std::size_t h, std::size_t w, double keep_fraction) {
  const KSpaceBlock b = sr_retained_block(h, w, keep_fraction);
  Tensor<double> m(Shape{h, w});
  for (std::size_t y = b.row0; y < b.row0 + b.rows; ++y)
    for (std::size_t x = b.col0; x < b.col0 + b.cols; ++x) m.at(y, x) = 1.0;
  return m;
}

Tensor<double> degrade_sr(const Tensor<double>& x, double keep_fraction) {
  if (x.ndim() != 3 || x.dim(2) != 2) throw ShapeError("degrade_sr expects [H,W,2], got " + to_string(x.shape()));
  const std::size_t H = x.dim(0), W = x.dim(1);
  const Tensor<double> m = sr_kspace_mask(H, W, keep_fraction);
  Tensor<double> k = mri::fft2c(x);
  for (std::size_t i = 0; i < H * W; ++i) {
    k[2 * i] *= m[i];
    k[2 * i + 1] *= m[i];
  }
  return mri::ifft2c(k);
}

Tensor<double> SensitivityLossField::noise_scales() const {
  Tensor<double> s(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) s[i] = noise_scale(i);
  return s;
}

SensitivityLossField make_g_field(std::size_t h, std::size_t w, std::uint64_t seed, const GFieldOptions& opts) {
  if (h == 0 || w == 0) throw ParameterError("g-field extents must be positive");
  if (!(opts.g_min > 0.0 && opts.g_min <= 1.0)) throw ParameterError("g_min must lie in (0,1]");
  if (opts.sigma0 < 0.0 || opts.alpha < 0.0) throw ParameterError("sigma0 and alpha must be non-negative");
  std::mt19937_64 rng(seed);
  const std::size_t inset_max = std::max<std::size_t>(1, std::min(h, w) / 10);
  const int side = static_cast<int>(rng() % 4);
  const std::size_t inset = rng() % inset_max;
  const std::size_t along_h = rng() % h, along_w = rng() % w;
  SensitivityLossField f;
  f.sigma0 = opts.sigma0;
  f.alpha = opts.alpha;
  switch (side) {
    case 0: f.anchor_row = inset; f.anchor_col = along_w; break;
    case 1: f.anchor_row = h - 1 - inset; f.anchor_col = along_w; break;
    case 2: f.anchor_row = along_h; f.anchor_col = inset; break;
    default: f.anchor_row = along_h; f.anchor_col = w - 1 - inset; break;
  }
  const double tau = opts.tau_fraction * static_cast<double>(std::min(h, w));
  f.g = Tensor<double>(Shape{h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - static_cast<double>(f.anchor_row);
      const double dx = static_cast<double>(x) - static_cast<double>(f.anchor_col);
      f.g.at(y, x) = opts.g_min + (1.0 - opts.g_min) * std::exp(-(dy * dy + dx * dx) / (2.0 * tau * tau));
    }
  }
  return f;
}

Tensor<double> degrade_denoise(const Tensor<double>& x, const SensitivityLossField& field, std::uint64_t seed) {
  if (x.shape() != field.g.shape()) throw ShapeError("degrade_denoise: image and g-field shapes differ");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = field.g[i] * x[i] + field.noise_scale(i) * normal(rng);
  return y;
}

}  // namespace mrirest::sim
