#include "mrirest/mri.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <tuple>

namespace mrirest::mri {
namespace {

// FFTW plan with its own aligned work buffer; one cache per thread since
// plan execution on a shared buffer is not reentrant.
class FftPlan {
 public:
  FftPlan(std::size_t h, std::size_t w, int sign) : h_(h), w_(w) {
    buf_ = fftw_alloc_complex(h * w);
    static std::mutex planner_mutex;
    std::lock_guard lock(planner_mutex);
    plan_ = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf_, buf_, sign, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    fftw_destroy_plan(plan_);
    fftw_free(buf_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  fftw_complex* buffer() { return buf_; }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t h_, w_;
  fftw_complex* buf_ = nullptr;
  fftw_plan plan_ = nullptr;
};

FftPlan& plan_for(std::size_t h, std::size_t w, int sign) {
  thread_local std::map<std::tuple<std::size_t, std::size_t, int>, std::unique_ptr<FftPlan>> cache;
  auto& slot = cache[{h, w, sign}];
  if (!slot) slot = std::make_unique<FftPlan>(h, w, sign);
  return *slot;
}

void require_complex_image_stack(const Shape& s, const char* what) {
  if (s.size() < 3 || s.back() != 2) {
    throw ShapeError(std::string(what) + " expects [...,H,W,2], got " + to_string(s));
  }
}

template <typename T>
Tensor<T> centered_transform(const Tensor<T>& x, int sign) {
  const Shape& s = x.shape();
  require_complex_image_stack(s, sign == FFTW_FORWARD ? "fft2c" : "ifft2c");
  const std::size_t H = s[s.size() - 3], W = s[s.size() - 2];
  const std::size_t plane = H * W;
  const std::size_t batch = x.size() / (2 * plane);
  const double norm = 1.0 / std::sqrt(static_cast<double>(plane));
  FftPlan& plan = plan_for(H, W, sign);
  fftw_complex* buf = plan.buffer();
  Tensor<T> out(s);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.data() + b * plane * 2;
    // ifftshift on the way in: buf[i] = x[(i + n/2) mod n]
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t sy = (y + H / 2) % H;
      for (std::size_t xx = 0; xx < W; ++xx) {
        const std::size_t sx = (xx + W / 2) % W;
        buf[y * W + xx][0] = static_cast<double>(src[2 * (sy * W + sx)]);
        buf[y * W + xx][1] = static_cast<double>(src[2 * (sy * W + sx) + 1]);
      }
    }
    plan.execute();
    // fftshift on the way out: out[i] = buf[(i + n - n/2) mod n]
    T* dst = out.data() + b * plane * 2;
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t sy = (y + H - H / 2) % H;
      for (std::size_t xx = 0; xx < W; ++xx) {
        const std::size_t sx = (xx + W - W / 2) % W;
        dst[2 * (y * W + xx)] = static_cast<T>(buf[sy * W + sx][0] * norm);
        dst[2 * (y * W + xx) + 1] = static_cast<T>(buf[sy * W + sx][1] * norm);
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> fft2c(const Tensor<T>& x) {
  return centered_transform(x, FFTW_FORWARD);
}

template <typename T>
Tensor<T> ifft2c(const Tensor<T>& k) {
  return centered_transform(k, FFTW_BACKWARD);
}

SamplingMask SamplingMask::full(std::size_t width) {
  SamplingMask m;
  m.width = width;
  m.kept.assign(width, 1);
  m.acceleration = 1;
  m.center_fraction = 1.0;
  return m;
}

std::size_t SamplingMask::kept_count() const {
  std::size_t n = 0;
  for (auto k : kept) n += k != 0;
  return n;
}

Tensor<double> SamplingMask::to_tensor() const {
  Tensor<double> t(Shape{width});
  for (std::size_t i = 0; i < width; ++i) t[i] = kept[i] ? 1.0 : 0.0;
  return t;
}

SamplingMask SamplingMask::from_tensor(const Tensor<double>& t, int acceleration, double center_fraction) {
  if (t.ndim() != 1) throw ShapeError("sampling mask tensor must be one-dimensional");
  SamplingMask m;
  m.width = t.size();
  m.kept.resize(m.width);
  for (std::size_t i = 0; i < m.width; ++i) m.kept[i] = t[i] != 0.0;
  m.acceleration = acceleration;
  m.center_fraction = center_fraction;
  return m;
}

std::size_t center_column_count(std::size_t width, double center_fraction) {
  return static_cast<std::size_t>(std::floor(center_fraction * static_cast<double>(width) + 0.5));
}

SamplingMask generate_mask(std::size_t width, int acceleration, double center_fraction, std::uint64_t seed) {
  if (acceleration < 1) throw ParameterError("acceleration must be >= 1");
  if (!(center_fraction > 0.0 && center_fraction < 1.0)) throw ParameterError("center_fraction must lie in (0,1)");
  if (width == 0) throw ParameterError("mask width must be positive");
  SamplingMask m;
  m.width = width;
  m.kept.assign(width, 0);
  m.acceleration = acceleration;
  m.center_fraction = center_fraction;

  const std::size_t n_center = std::min(width, center_column_count(width, center_fraction));
  const std::size_t start = (width - n_center + 1) / 2;
  for (std::size_t i = start; i < start + n_center; ++i) m.kept[i] = 1;

  double p = 1.0;
  if (width > n_center) {
    p = (static_cast<double>(width) / acceleration - static_cast<double>(n_center)) /
        static_cast<double>(width - n_center);
  }
  p = std::clamp(p, 0.0, 1.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t i = 0; i < width; ++i) {
    const double u = uniform(rng);  // drawn for every column so the stream is width-aligned
    if (!m.kept[i] && u < p) m.kept[i] = 1;
  }
  return m;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& k, const SamplingMask& mask) {
  const Shape& s = k.shape();
  require_complex_image_stack(s, "apply_mask");
  const std::size_t W = s[s.size() - 2];
  if (mask.width != W) {
    throw ShapeError("mask width " + std::to_string(mask.width) + " does not match k-space width " + std::to_string(W));
  }
  Tensor<T> out = k;
  const std::size_t rows = k.size() / (2 * W);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      if (!mask.kept[c]) {
        out[2 * (r * W + c)] = T{0};
        out[2 * (r * W + c) + 1] = T{0};
      }
    }
  }
  return out;
}

CoilSensitivities CoilSensitivities::unit(std::size_t h, std::size_t w) {
  Tensor<double> maps(Shape{1, h, w, 2});
  for (std::size_t i = 0; i < h * w; ++i) maps[2 * i] = 1.0;
  return CoilSensitivities{std::move(maps)};
}

CoilSensitivities make_coil_maps(std::size_t coils, std::size_t h, std::size_t w, std::uint64_t seed) {
  if (coils < 1) throw ParameterError("coil count must be >= 1");
  if (h == 0 || w == 0) throw ParameterError("coil map extents must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double cx = 0.5 * static_cast<double>(w - 1);
  const double minhw = static_cast<double>(std::min(h, w));
  const double radius = 0.6 * minhw / 2.0;
  const double sigma = 0.4 * minhw;

  Tensor<double> maps(Shape{coils, h, w, 2});
  for (std::size_t c = 0; c < coils; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(coils);
    const double ay = cy + radius * std::sin(angle);
    const double ax = cx + radius * std::cos(angle);
    // Smooth phase: random offset plus a gentle linear ramp.
    const double p0 = std::numbers::pi * uniform(rng);
    const double py = 0.5 * std::numbers::pi * uniform(rng);
    const double px = 0.5 * std::numbers::pi * uniform(rng);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) - ay, dx = static_cast<double>(x) - ax;
        const double mag = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        const double phase = p0 + py * (static_cast<double>(y) / h - 0.5) + px * (static_cast<double>(x) / w - 0.5);
        maps.at(c, y, x, 0) = mag * std::cos(phase);
        maps.at(c, y, x, 1) = mag * std::sin(phase);
      }
    }
  }
  for (std::size_t i = 0; i < h * w; ++i) {
    double ss = 0.0;
    for (std::size_t c = 0; c < coils; ++c) {
      const double re = maps[2 * (c * h * w + i)], im = maps[2 * (c * h * w + i) + 1];
      ss += re * re + im * im;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t c = 0; c < coils; ++c) {
      maps[2 * (c * h * w + i)] *= inv;
      maps[2 * (c * h * w + i) + 1] *= inv;
    }
  }
  return CoilSensitivities{std::move(maps)};
}

template <typename T>
Tensor<T> expand(const Tensor<T>& x, const CoilSensitivities& s) {
  const std::size_t C = s.coils(), H = s.height(), W = s.width(), plane = H * W;
  if (x.shape() != Shape{H, W, 2}) {
    throw ShapeError("expand: image " + to_string(x.shape()) + " incompatible with maps " + to_string(s.maps.shape()));
  }
  Tensor<T> out(Shape{C, H, W, 2});
  const double* m = s.maps.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const T sr = static_cast<T>(m[2 * (c * plane + i)]), si = static_cast<T>(m[2 * (c * plane + i) + 1]);
      const T xr = x[2 * i], xi = x[2 * i + 1];
      out[2 * (c * plane + i)] = sr * xr - si * xi;
      out[2 * (c * plane + i) + 1] = sr * xi + si * xr;
    }
  }
  return out;
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& y, const CoilSensitivities& s) {
  const std::size_t C = s.coils(), H = s.height(), W = s.width(), plane = H * W;
  if (y.shape() != s.maps.shape()) {
    throw ShapeError("reduce: coil data " + to_string(y.shape()) + " incompatible with maps " + to_string(s.maps.shape()));
  }
  Tensor<T> out(Shape{H, W, 2});
  const double* m = s.maps.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const T sr = static_cast<T>(m[2 * (c * plane + i)]), si = static_cast<T>(m[2 * (c * plane + i) + 1]);
      const T yr = y[2 * (c * plane + i)], yi = y[2 * (c * plane + i) + 1];
      out[2 * i] += sr * yr + si * yi;
      out[2 * i + 1] += sr * yi - si * yr;
    }
  }
  return out;
}

namespace {

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Var<T> fft2c(const Var<T>& x) {
  return x.tape().record(fft2c(x.value()), {x},
                         [](const BackwardContext<T>& c) { accumulate(*c.grad_in[0], ifft2c(c.grad_out)); });
}

template <typename T>
Var<T> ifft2c(const Var<T>& k) {
  return k.tape().record(ifft2c(k.value()), {k},
                         [](const BackwardContext<T>& c) { accumulate(*c.grad_in[0], fft2c(c.grad_out)); });
}

template <typename T>
Var<T> apply_mask(const Var<T>& k, const SamplingMask& mask) {
  return k.tape().record(apply_mask(k.value(), mask), {k}, [mask](const BackwardContext<T>& c) {
    accumulate(*c.grad_in[0], apply_mask(c.grad_out, mask));
  });
}

template <typename T>
Var<T> expand(const Var<T>& x, const CoilSensitivities& s) {
  return x.tape().record(expand(x.value(), s), {x},
                         [s](const BackwardContext<T>& c) { accumulate(*c.grad_in[0], reduce(c.grad_out, s)); });
}

template <typename T>
Var<T> reduce(const Var<T>& y, const CoilSensitivities& s) {
  return y.tape().record(reduce(y.value(), s), {y},
                         [s](const BackwardContext<T>& c) { accumulate(*c.grad_in[0], expand(c.grad_out, s)); });
}

#define MRIREST_INSTANTIATE(T)                                                  \
  template Tensor<T> fft2c<T>(const Tensor<T>&);                               \
  template Tensor<T> ifft2c<T>(const Tensor<T>&);                              \
  template Tensor<T> apply_mask<T>(const Tensor<T>&, const SamplingMask&);     \
  template Tensor<T> expand<T>(const Tensor<T>&, const CoilSensitivities&);    \
  template Tensor<T> reduce<T>(const Tensor<T>&, const CoilSensitivities&);    \
  template Var<T> fft2c<T>(const Var<T>&);                                      \
  template Var<T> ifft2c<T>(const Var<T>&);                                     \
  template Var<T> apply_mask<T>(const Var<T>&, const SamplingMask&);            \
  template Var<T> expand<T>(const Var<T>&, const CoilSensitivities&);           \
  template Var<T> reduce<T>(const Var<T>&, const CoilSensitivities&);

MRIREST_INSTANTIATE(float)
MRIREST_INSTANTIATE(double)

#undef MRIREST_INSTANTIATE

}  // namespace mrirest::mri
