#include <algorithm>
#include <cmath>
#include <string>

#include "mrirest/autodiff.hpp"

namespace mrirest::ad {
namespace {

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t lead = out.size() - in.size();
  for (std::size_t k = in.size(); k-- > 0;) {
    strides[lead + k] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of the broadcast result.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t n = numel(out);
  if (a == b) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t k = out.size(); k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < out[k]) break;
      ia -= sa[k] * out[k];
      ib -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

void require_nchw(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + " expects an [N,C,H,W] tensor, got " + to_string(s));
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t k = 0; k < nd; ++k) {
    const std::size_t da = k + a.size() >= nd ? a[k + a.size() - nd] : 1;
    const std::size_t db = k + b.size() >= nd ? b[k + b.size() - nd] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[k] = std::max(da, db);
  }
  return out;
}

template <typename T>
Var<T> elementwise_binary(const Var<T>& a, const Var<T>& b, BinaryOp op) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Shape shape = broadcast_shape(av.shape(), bv.shape());
  Tensor<T> out(shape);
  T* o = out.data();
  const T* pa = av.data();
  const T* pb = bv.data();
  switch (op) {
    case BinaryOp::add:
      for_each_broadcast(shape, av.shape(), bv.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = pa[ia] + pb[ib]; });
      break;
    case BinaryOp::sub:
      for_each_broadcast(shape, av.shape(), bv.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = pa[ia] - pb[ib]; });
      break;
    case BinaryOp::mul:
      for_each_broadcast(shape, av.shape(), bv.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = pa[ia] * pb[ib]; });
      break;
  }
  return a.tape().record(std::move(out), {a, b}, [op](const BackwardContext<T>& c) {
    const Shape& sa = c.in[0]->shape();
    const Shape& sb = c.in[1]->shape();
    const T* g = c.grad_out.data();
    const T* va = c.in[0]->data();
    const T* vb = c.in[1]->data();
    T* ga = c.grad_in[0] ? c.grad_in[0]->data() : nullptr;
    T* gb = c.grad_in[1] ? c.grad_in[1]->data() : nullptr;
    for_each_broadcast(c.grad_out.shape(), sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      switch (op) {
        case BinaryOp::add:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] += g[i];
          break;
        case BinaryOp::sub:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] -= g[i];
          break;
        case BinaryOp::mul:
          if (ga) ga[ia] += g[i] * vb[ib];
          if (gb) gb[ib] += g[i] * va[ia];
          break;
      }
    });
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (T& v : out.values()) v *= factor;
  return a.tape().record(std::move(out), {a}, [factor](const BackwardContext<T>& c) {
    T* g = c.grad_in[0]->data();
    for (std::size_t i = 0; i < c.grad_out.size(); ++i) g[i] += factor * c.grad_out[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out(Shape{}, mrirest::sum(a.value()));
  return a.tape().record(std::move(out), {a}, [](const BackwardContext<T>& c) {
    const T g = c.grad_out[0];
    for (T& v : c.grad_in[0]->values()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  Tensor<T> out(Shape{}, mrirest::sum(a.value()) / n);
  return a.tape().record(std::move(out), {a}, [n](const BackwardContext<T>& c) {
    const T g = c.grad_out[0] / n;
    for (T& v : c.grad_in[0]->values()) v += g;
  });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (T& v : out.values()) v = std::abs(v);
  return a.tape().record(std::move(out), {a}, [](const BackwardContext<T>& c) {
    const T* x = c.in[0]->data();
    T* g = c.grad_in[0]->data();
    for (std::size_t i = 0; i < c.grad_out.size(); ++i) {
      g[i] += x[i] > 0 ? c.grad_out[i] : (x[i] < 0 ? -c.grad_out[i] : T{0});
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [](const BackwardContext<T>& c) {
    T* g = c.grad_in[0]->data();
    for (std::size_t i = 0; i < c.grad_out.size(); ++i) g[i] += c.grad_out[i];
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw;
  std::size_t groups, cin_g, cout_g;
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, int groups) {
  require_nchw(xs, "conv2d");
  if (ws.size() != 4) throw ShapeError("conv2d weight must be [Cout,Cin/groups,kH,kW], got " + to_string(ws));
  if (groups < 1) throw ShapeError("conv2d groups must be positive");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], static_cast<std::size_t>(groups), 0, 0};
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw UnsupportedError("conv2d supports odd kernel sizes only");
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ShapeError("conv2d groups=" + std::to_string(groups) + " must divide Cin=" + std::to_string(g.cin) +
                     " and Cout=" + std::to_string(g.cout));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (ws[1] != g.cin_g) {
    throw ShapeError("conv2d weight expects " + std::to_string(ws[1]) + " input channels per group, input has " +
                     std::to_string(g.cin_g));
  }
  return g;
}

// out[y, x] += wv * in[y + dy, x + dx] over the valid region of an h x w plane.
template <typename T>
inline void shifted_axpy(T* out, const T* in, T wv, std::ptrdiff_t dy, std::ptrdiff_t dx, std::size_t h,
                         std::size_t w) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    T* orow = out + y * W;
    const T* irow = in + (y + dy) * W + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
  }
}

// Scatter form of shifted_axpy: out[y + dy, x + dx] += wv * in[y, x].
template <typename T>
inline void shifted_scatter(T* out, const T* in, T wv, std::ptrdiff_t dy, std::ptrdiff_t dx, std::size_t h,
                            std::size_t w) {
  shifted_axpy(out, in, wv, -dy, -dx, h, w);
}

// sum over valid (y, x) of a[y, x] * b[y + dy, x + dx].
template <typename T>
inline T shifted_dot(const T* a, const T* b, std::ptrdiff_t dy, std::ptrdiff_t dx, std::size_t h, std::size_t w) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
  T acc{0};
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    const T* arow = a + y * W;
    const T* brow = b + (y + dy) * W + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) acc += arow[x] * brow[x];
  }
  return acc;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, int groups) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), groups);
  if (bias && bias->value().size() != g.cout) throw ShapeError("conv2d bias must have Cout entries");
  const std::size_t plane = g.h * g.w;
  const std::size_t taps = g.kh * g.kw;
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);

  Tensor<T> out(Shape{g.n, g.cout, g.h, g.w});
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      T* o = out.data() + (n * g.cout + co) * plane;
      if (bias) std::fill(o, o + plane, bias->value()[co]);
      const std::size_t grp = co / g.cout_g;
      for (std::size_t cl = 0; cl < g.cin_g; ++cl) {
        const T* in = xv + (n * g.cin + grp * g.cin_g + cl) * plane;
        const T* k = wv + (co * g.cin_g + cl) * taps;
        if (taps == 1) {
          const T kv = k[0];
          for (std::size_t i = 0; i < plane; ++i) o[i] += kv * in[i];
          continue;
        }
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            shifted_axpy(o, in, k[ky * g.kw + kx], static_cast<std::ptrdiff_t>(ky) - ph,
                         static_cast<std::ptrdiff_t>(kx) - pw, g.h, g.w);
          }
        }
      }
    }
  }

  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [g, plane, taps, ph, pw](const BackwardContext<T>& c) {
    const T* xv = c.in[0]->data();
    const T* wv = c.in[1]->data();
    const T* go = c.grad_out.data();
    T* gx = c.grad_in[0] ? c.grad_in[0]->data() : nullptr;
    T* gw = c.grad_in[1] ? c.grad_in[1]->data() : nullptr;
    T* gb = c.grad_in.size() > 2 && c.grad_in[2] ? c.grad_in[2]->data() : nullptr;
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const T* gop = go + (n * g.cout + co) * plane;
        if (gb) {
          T acc{0};
          for (std::size_t i = 0; i < plane; ++i) acc += gop[i];
          gb[co] += acc;
        }
        const std::size_t grp = co / g.cout_g;
        for (std::size_t cl = 0; cl < g.cin_g; ++cl) {
          const std::size_t ci = grp * g.cin_g + cl;
          const T* in = xv + (n * g.cin + ci) * plane;
          const T* k = wv + (co * g.cin_g + cl) * taps;
          T* gk = gw ? gw + (co * g.cin_g + cl) * taps : nullptr;
          T* gin = gx ? gx + (n * g.cin + ci) * plane : nullptr;
          if (taps == 1) {
            if (gin) {
              const T kv = k[0];
              for (std::size_t i = 0; i < plane; ++i) gin[i] += kv * gop[i];
            }
            if (gk) {
              T acc{0};
              for (std::size_t i = 0; i < plane; ++i) acc += gop[i] * in[i];
              gk[0] += acc;
            }
            continue;
          }
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
              if (gin) shifted_scatter(gin, gop, k[ky * g.kw + kx], dy, dx, g.h, g.w);
              if (gk) gk[ky * g.kw + kx] += shifted_dot(gop, in, dy, dx, g.h, g.w);
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require_nchw(x.shape(), "layer_norm");
  if (!(eps > T{0})) throw ParameterError("layer_norm eps must be positive");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], plane = s[2] * s[3];
  if (gamma.value().size() != C || beta.value().size() != C) {
    throw ShapeError("layer_norm gamma/beta must have C=" + std::to_string(C) + " entries");
  }
  Tensor<T> xhat(s);
  Tensor<T> inv_std(Shape{N, plane});
  Tensor<T> out(s);
  const T* xv = x.value().data();
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  std::vector<T> mu(plane), var(plane);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = xv + n * C * plane;
    std::fill(mu.begin(), mu.end(), T{0});
    std::fill(var.begin(), var.end(), T{0});
    for (std::size_t c = 0; c < C; ++c) {
      const T* xc = xn + c * plane;
      for (std::size_t i = 0; i < plane; ++i) mu[i] += xc[i];
    }
    for (std::size_t i = 0; i < plane; ++i) mu[i] /= static_cast<T>(C);
    for (std::size_t c = 0; c < C; ++c) {
      const T* xc = xn + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = xc[i] - mu[i];
        var[i] += d * d;
      }
    }
    T* is = inv_std.data() + n * plane;
    for (std::size_t i = 0; i < plane; ++i) is[i] = T{1} / std::sqrt(var[i] / static_cast<T>(C) + eps);
    for (std::size_t c = 0; c < C; ++c) {
      const T* xc = xn + c * plane;
      T* hc = xhat.data() + (n * C + c) * plane;
      T* oc = out.data() + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        hc[i] = (xc[i] - mu[i]) * is[i];
        oc[i] = hc[i] * gv[c] + bv[c];
      }
    }
  }
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, plane](const BackwardContext<T>& c) {
    const T* go = c.grad_out.data();
    const T* gv = c.in[1]->data();
    T* gx = c.grad_in[0] ? c.grad_in[0]->data() : nullptr;
    T* gg = c.grad_in[1] ? c.grad_in[1]->data() : nullptr;
    T* gb = c.grad_in[2] ? c.grad_in[2]->data() : nullptr;
    std::vector<T> m1(plane), m2(plane);
    for (std::size_t n = 0; n < N; ++n) {
      std::fill(m1.begin(), m1.end(), T{0});
      std::fill(m2.begin(), m2.end(), T{0});
      for (std::size_t ch = 0; ch < C; ++ch) {
        const T* gc = go + (n * C + ch) * plane;
        const T* hc = xhat.data() + (n * C + ch) * plane;
        T ag{0}, ab{0};
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = gc[i] * gv[ch];
          m1[i] += d;
          m2[i] += d * hc[i];
          ag += gc[i] * hc[i];
          ab += gc[i];
        }
        if (gg) gg[ch] += ag;
        if (gb) gb[ch] += ab;
      }
      if (!gx) continue;
      const T* is = inv_std.data() + n * plane;
      for (std::size_t ch = 0; ch < C; ++ch) {
        const T* gc = go + (n * C + ch) * plane;
        const T* hc = xhat.data() + (n * C + ch) * plane;
        T* gxc = gx + (n * C + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = gc[i] * gv[ch];
          gxc[i] += is[i] * (d - m1[i] / static_cast<T>(C) - hc[i] * m2[i] / static_cast<T>(C));
        }
      }
    }
  });
}

template <typename T>
std::pair<Var<T>, Var<T>> split_channels(const Var<T>& x) {
  require_nchw(x.shape(), "split_channels");
  const Shape& s = x.shape();
  if (s[1] % 2 != 0) throw ShapeError("split_channels needs an even channel count, got " + std::to_string(s[1]));
  const std::size_t half = s[1] / 2;
  const std::size_t block = half * s[2] * s[3];
  auto part = [&](std::size_t which) {
    Tensor<T> out(Shape{s[0], half, s[2], s[3]});
    for (std::size_t n = 0; n < s[0]; ++n) {
      const T* src = x.value().data() + (2 * n + which) * block;
      std::copy(src, src + block, out.data() + n * block);
    }
    return x.tape().record(std::move(out), {x}, [which, block, batch = s[0]](const BackwardContext<T>& c) {
      for (std::size_t n = 0; n < batch; ++n) {
        T* dst = c.grad_in[0]->data() + (2 * n + which) * block;
        const T* g = c.grad_out.data() + n * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
      }
    });
  };
  Var<T> first = part(0);
  Var<T> second = part(1);
  return {first, second};
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_nchw(a.shape(), "concat_channels");
  require_nchw(b.shape(), "concat_channels");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) throw ShapeError("concat_channels extent mismatch");
  const std::size_t plane = sa[2] * sa[3];
  const std::size_t ba = sa[1] * plane, bb = sb[1] * plane;
  Tensor<T> out(Shape{sa[0], sa[1] + sb[1], sa[2], sa[3]});
  for (std::size_t n = 0; n < sa[0]; ++n) {
    std::copy_n(a.value().data() + n * ba, ba, out.data() + n * (ba + bb));
    std::copy_n(b.value().data() + n * bb, bb, out.data() + n * (ba + bb) + ba);
  }
  return a.tape().record(std::move(out), {a, b}, [ba, bb, batch = sa[0]](const BackwardContext<T>& c) {
    for (std::size_t n = 0; n < batch; ++n) {
      const T* g = c.grad_out.data() + n * (ba + bb);
      if (c.grad_in[0]) {
        T* d = c.grad_in[0]->data() + n * ba;
        for (std::size_t i = 0; i < ba; ++i) d[i] += g[i];
      }
      if (c.grad_in[1]) {
        T* d = c.grad_in[1]->data() + n * bb;
        for (std::size_t i = 0; i < bb; ++i) d[i] += g[ba + i];
      }
    }
  });
}

namespace {

// Index map for depth-to-space: entry k of the shuffled tensor reads source index map[k].
std::vector<std::size_t> shuffle_map(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t r) {
  // Source [n, c*r*r, h, w]; destination [n, c, h*r, w*r].
  std::vector<std::size_t> map(n * c * r * r * h * w);
  const std::size_t H = h * r, W = w * r;
  std::size_t k = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t sc = ch * r * r + (y % r) * r + (x % r);
          map[k++] = ((b * c * r * r + sc) * h + y / r) * w + x / r;
        }
  return map;
}

}  // namespace

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int factor) {
  require_nchw(x.shape(), "pixel_shuffle");
  const Shape& s = x.shape();
  const std::size_t r = static_cast<std::size_t>(factor);
  if (factor < 1 || s[1] % (r * r) != 0) throw ShapeError("pixel_shuffle channels must be divisible by factor^2");
  auto map = shuffle_map(s[0], s[1] / (r * r), s[2], s[3], r);
  Tensor<T> out(Shape{s[0], s[1] / (r * r), s[2] * r, s[3] * r});
  for (std::size_t k = 0; k < map.size(); ++k) out[k] = x.value()[map[k]];
  return x.tape().record(std::move(out), {x}, [map = std::move(map)](const BackwardContext<T>& c) {
    T* g = c.grad_in[0]->data();
    for (std::size_t k = 0; k < map.size(); ++k) g[map[k]] += c.grad_out[k];
  });
}

template <typename T>
Var<T> pixel_unshuffle(const Var<T>& x, int factor) {
  require_nchw(x.shape(), "pixel_unshuffle");
  const Shape& s = x.shape();
  const std::size_t r = static_cast<std::size_t>(factor);
  if (factor < 1 || s[2] % r != 0 || s[3] % r != 0) {
    throw ShapeError("pixel_unshuffle spatial extents must be divisible by the factor");
  }
  auto map = shuffle_map(s[0], s[1], s[2] / r, s[3] / r, r);
  Tensor<T> out(Shape{s[0], s[1] * r * r, s[2] / r, s[3] / r});
  for (std::size_t k = 0; k < map.size(); ++k) out[map[k]] = x.value()[k];
  return x.tape().record(std::move(out), {x}, [map = std::move(map)](const BackwardContext<T>& c) {
    T* g = c.grad_in[0]->data();
    for (std::size_t k = 0; k < map.size(); ++k) g[k] += c.grad_out[map[k]];
  });
}

template <typename T>
Var<T> softmax_taps(const Var<T>& w, int groups, int taps) {
  require_nchw(w.shape(), "softmax_taps");
  const Shape& s = w.shape();
  const std::size_t G = static_cast<std::size_t>(groups), K = static_cast<std::size_t>(taps);
  if (s[1] != G * K) throw ShapeError("softmax_taps expects G*taps channels");
  const std::size_t plane = s[2] * s[3];
  Tensor<T> out(s);
  for (std::size_t blk = 0; blk < s[0] * G; ++blk) {
    const T* in = w.value().data() + blk * K * plane;
    T* o = out.data() + blk * K * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      T m = in[i];
      for (std::size_t k = 1; k < K; ++k) m = std::max(m, in[k * plane + i]);
      T z{0};
      for (std::size_t k = 0; k < K; ++k) z += (o[k * plane + i] = std::exp(in[k * plane + i] - m));
      for (std::size_t k = 0; k < K; ++k) o[k * plane + i] /= z;
    }
  }
  return w.tape().record(std::move(out), {w}, [K, plane, blocks = s[0] * G](const BackwardContext<T>& c) {
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      const T* sm = c.out.data() + blk * K * plane;
      const T* g = c.grad_out.data() + blk * K * plane;
      T* gi = c.grad_in[0]->data() + blk * K * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        T dot{0};
        for (std::size_t k = 0; k < K; ++k) dot += g[k * plane + i] * sm[k * plane + i];
        for (std::size_t k = 0; k < K; ++k) gi[k * plane + i] += sm[k * plane + i] * (g[k * plane + i] - dot);
      }
    }
  });
}

namespace {

// y[y, x] += wplane[y, x] * in[y + dy, x + dx] on the valid region.
template <typename T>
inline void modulated_axpy(T* out, const T* wp, const T* in, std::ptrdiff_t dy, std::ptrdiff_t dx, std::size_t h,
                           std::size_t w) {
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min<std::ptrdiff_t>(H, H - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min<std::ptrdiff_t>(W, W - dx);
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    T* orow = out + y * W;
    const T* wrow = wp + y * W;
    const T* irow = in + (y + dy) * W + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) orow[x] += wrow[x] * irow[x];
  }
}

}  // namespace

template <typename T>
Var<T> dynamic_aggregate(const Var<T>& x, const Var<T>& w, int groups, int kernel) {
  require_nchw(x.shape(), "dynamic_aggregate");
  require_nchw(w.shape(), "dynamic_aggregate");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (groups < 1 || kernel < 1 || kernel % 2 == 0) throw ParameterError("dynamic_aggregate needs groups >= 1 and an odd kernel");
  const std::size_t G = static_cast<std::size_t>(groups), K = static_cast<std::size_t>(kernel), taps = K * K;
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], plane = H * W;
  if (C % G != 0) throw ShapeError("dynamic_aggregate: groups must divide channels");
  if (ws != Shape{N, G * taps, H, W}) {
    throw ShapeError("dynamic_aggregate weights must be " + to_string(Shape{N, G * taps, H, W}) + ", got " + to_string(ws));
  }
  const std::size_t per_group = C / G;
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(K / 2);
  Tensor<T> out(xs);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t g = c / per_group;
      const T* in = x.value().data() + (n * C + c) * plane;
      T* o = out.data() + (n * C + c) * plane;
      for (std::size_t t = 0; t < taps; ++t) {
        const T* wp = w.value().data() + (n * G * taps + g * taps + t) * plane;
        modulated_axpy(o, wp, in, static_cast<std::ptrdiff_t>(t / K) - r, static_cast<std::ptrdiff_t>(t % K) - r, H, W);
      }
    }
  }
  return x.tape().record(std::move(out), {x, w}, [=](const BackwardContext<T>& c) {
    const T* xv = c.in[0]->data();
    const T* wv = c.in[1]->data();
    T* gx = c.grad_in[0] ? c.grad_in[0]->data() : nullptr;
    T* gw = c.grad_in[1] ? c.grad_in[1]->data() : nullptr;
    const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t g = ch / per_group;
        const T* in = xv + (n * C + ch) * plane;
        const T* go = c.grad_out.data() + (n * C + ch) * plane;
        T* gin = gx ? gx + (n * C + ch) * plane : nullptr;
        for (std::size_t t = 0; t < taps; ++t) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(t / K) - r;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(t % K) - r;
          const std::size_t woff = (n * G * taps + g * taps + t) * plane;
          const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min<std::ptrdiff_t>(Hs, Hs - dy);
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min<std::ptrdiff_t>(Ws, Ws - dx);
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const T* grow = go + y * Ws;
            const T* wrow = wv + woff + y * Ws;
            const T* irow = in + (y + dy) * Ws + dx;
            if (gin) {
              T* girow = gin + (y + dy) * Ws + dx;
              for (std::ptrdiff_t xx = x0; xx < x1; ++xx) girow[xx] += wrow[xx] * grow[xx];
            }
            if (gw) {
              T* gwrow = gw + woff + y * Ws;
              for (std::ptrdiff_t xx = x0; xx < x1; ++xx) gwrow[xx] += grow[xx] * irow[xx];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> complex_to_channels(const Var<T>& z) {
  const Shape& s = z.shape();
  if (s.size() != 3 || s[2] != 2) throw ShapeError("complex_to_channels expects [H,W,2], got " + to_string(s));
  const std::size_t plane = s[0] * s[1];
  Tensor<T> out(Shape{1, 2, s[0], s[1]});
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = z.value()[2 * i];
    out[plane + i] = z.value()[2 * i + 1];
  }
  return z.tape().record(std::move(out), {z}, [plane](const BackwardContext<T>& c) {
    T* g = c.grad_in[0]->data();
    for (std::size_t i = 0; i < plane; ++i) {
      g[2 * i] += c.grad_out[i];
      g[2 * i + 1] += c.grad_out[plane + i];
    }
  });
}

template <typename T>
Var<T> channels_to_complex(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 2) throw ShapeError("channels_to_complex expects [1,2,H,W], got " + to_string(s));
  const std::size_t plane = s[2] * s[3];
  Tensor<T> out(Shape{s[2], s[3], 2});
  for (std::size_t i = 0; i < plane; ++i) {
    out[2 * i] = x.value()[i];
    out[2 * i + 1] = x.value()[plane + i];
  }
  return x.tape().record(std::move(out), {x}, [plane](const BackwardContext<T>& c) {
    T* g = c.grad_in[0]->data();
    for (std::size_t i = 0; i < plane; ++i) {
      g[i] += c.grad_out[2 * i];
      g[plane + i] += c.grad_out[2 * i + 1];
    }
  });
}

template <typename T>
Var<T> complex_abs(const Var<T>& z) {
  const Shape& s = z.shape();
  if (s.empty() || s.back() != 2) throw ShapeError("complex_abs expects a trailing extent of 2");
  Shape os(s.begin(), s.end() - 1);
  Tensor<T> out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(z.value()[2 * i], z.value()[2 * i + 1]);
  return z.tape().record(std::move(out), {z}, [](const BackwardContext<T>& c) {
    const T* zv = c.in[0]->data();
    T* g = c.grad_in[0]->data();
    for (std::size_t i = 0; i < c.out.size(); ++i) {
      const T m = c.out[i];
      if (m > T{0}) {
        g[2 * i] += c.grad_out[i] * zv[2 * i] / m;
        g[2 * i + 1] += c.grad_out[i] * zv[2 * i + 1] / m;
      }
    }
  });
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  const std::size_t n = pred.value().size();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred.value()[i] - target.value()[i]);
  Tensor<T> out(Shape{}, acc / static_cast<T>(n));
  return pred.tape().record(std::move(out), {pred, target}, [n](const BackwardContext<T>& c) {
    const T scale = c.grad_out[0] / static_cast<T>(n);
    const T* p = c.in[0]->data();
    const T* t = c.in[1]->data();
    for (std::size_t i = 0; i < n; ++i) {
      const T d = p[i] - t[i];
      const T s = d > 0 ? scale : (d < 0 ? -scale : T{0});
      if (c.grad_in[0]) (*c.grad_in[0])[i] += s;
      if (c.grad_in[1]) (*c.grad_in[1])[i] -= s;
    }
  });
}

#define MRIREST_INSTANTIATE(T)                                                                   \
  template Var<T> elementwise_binary<T>(const Var<T>&, const Var<T>&, BinaryOp);               \
  template Var<T> scale<T>(const Var<T>&, T);                                                   \
  template Var<T> sum<T>(const Var<T>&);                                                        \
  template Var<T> mean<T>(const Var<T>&);                                                       \
  template Var<T> abs<T>(const Var<T>&);                                                        \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                             \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>*, int);                  \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                \
  template std::pair<Var<T>, Var<T>> split_channels<T>(const Var<T>&);                          \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                             \
  template Var<T> pixel_shuffle<T>(const Var<T>&, int);                                         \
  template Var<T> pixel_unshuffle<T>(const Var<T>&, int);                                       \
  template Var<T> softmax_taps<T>(const Var<T>&, int, int);                                     \
  template Var<T> dynamic_aggregate<T>(const Var<T>&, const Var<T>&, int, int);                 \
  template Var<T> complex_to_channels<T>(const Var<T>&);                                        \
  template Var<T> channels_to_complex<T>(const Var<T>&);                                        \
  template Var<T> complex_abs<T>(const Var<T>&);                                                \
  template Var<T> l1_loss<T>(const Var<T>&, const Var<T>&);

MRIREST_INSTANTIATE(float)
MRIREST_INSTANTIATE(double)

#undef MRIREST_INSTANTIATE

}  // namespace mrirest::ad
