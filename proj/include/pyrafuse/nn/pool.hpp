#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "pyrafuse/nn/conv.hpp"
#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

struct PoolSpec {
  Dims2 kernel{3, 3};
  Dims2 stride{1, 1};
  Dims2 padding{1, 1};

  bool operator==(const PoolSpec&) const = default;

  static PoolSpec square(std::size_t k, std::size_t s, std::size_t p) { return {{k, k}, {s, s}, {p, p}}; }
};

inline Shape max_pool_output_shape(const Shape& x, const PoolSpec& p) {
  if (p.kernel.first == 0 || p.kernel.second == 0 || p.stride.first == 0 || p.stride.second == 0) {
    throw ShapeError("max_pool: kernel and stride must be >= 1");
  }
  if (2 * p.padding.first > p.kernel.first || 2 * p.padding.second > p.kernel.second) {
    throw ShapeError("max_pool: padding must be at most half the kernel");
  }
  const Shape out{x.n, x.c, conv_out_extent(x.h, p.kernel.first, p.stride.first, p.padding.first, 1),
                  conv_out_extent(x.w, p.kernel.second, p.stride.second, p.padding.second, 1)};
  if (out.h == 0 || out.w == 0) throw ShapeError("max_pool: empty output for input " + x.str());
  return out;
}

/// Windowed maximum with -inf padding. The gradient goes to the first
/// maximal element of each window in row-major scan order.
template <class T>
Tensor<T> max_pool(const Tensor<T>& x, const PoolSpec& p) {
  const Shape s = x.shape();
  const Shape so = max_pool_output_shape(s, p);
  Tensor<T> out(so);
  std::vector<std::size_t> argmax(so.numel());
  auto xd = x.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* plane = xd.data() + nc * s.plane();
    for (std::size_t oy = 0; oy < so.h; ++oy) {
      for (std::size_t ox = 0; ox < so.w; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        bool found = false;
        for (std::size_t ki = 0; ki < p.kernel.first; ++ki) {
          const long long iy = static_cast<long long>(oy * p.stride.first + ki) - static_cast<long long>(p.padding.first);
          if (iy < 0 || iy >= static_cast<long long>(s.h)) continue;
          for (std::size_t kj = 0; kj < p.kernel.second; ++kj) {
            const long long ix =
                static_cast<long long>(ox * p.stride.second + kj) - static_cast<long long>(p.padding.second);
            if (ix < 0 || ix >= static_cast<long long>(s.w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * s.w + static_cast<std::size_t>(ix);
            if (!found || plane[idx] > best) {
              best = plane[idx];
              best_i = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (nc * so.h + oy) * so.w + ox;
        y[o] = best;
        argmax[o] = nc * s.plane() + best_i;
      }
    }
  }
  detail::record(out, {x}, [x, out, argmax = std::move(argmax)]() {
    auto gy = out.grad();
    auto& gx = x.grad_ref();
    for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
  });
  return out;
}

namespace detail {
inline std::size_t bin_start(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
inline std::size_t bin_end(std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; }
}  // namespace detail

/// Each output cell averages input rows [floor(i*H/oh), ceil((i+1)*H/oh)) and
/// the analogous columns. out_hw = (1, 1) is global average pooling.
template <class T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, Dims2 out_hw) {
  const Shape s = x.shape();
  if (out_hw.first == 0 || out_hw.second == 0) throw ShapeError("adaptive_avg_pool: target must be at least 1x1");
  if (s.h == 0 || s.w == 0) throw ShapeError("adaptive_avg_pool: empty spatial input " + s.str());
  const Shape so{s.n, s.c, out_hw.first, out_hw.second};
  Tensor<T> out(so);
  auto xd = x.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* plane = xd.data() + nc * s.plane();
    for (std::size_t oy = 0; oy < so.h; ++oy) {
      const std::size_t y0 = detail::bin_start(oy, s.h, so.h), y1 = detail::bin_end(oy, s.h, so.h);
      for (std::size_t ox = 0; ox < so.w; ++ox) {
        const std::size_t x0 = detail::bin_start(ox, s.w, so.w), x1 = detail::bin_end(ox, s.w, so.w);
        T acc = T(0);
        for (std::size_t iy = y0; iy < y1; ++iy) {
          for (std::size_t ix = x0; ix < x1; ++ix) acc += plane[iy * s.w + ix];
        }
        y[(nc * so.h + oy) * so.w + ox] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  detail::record(out, {x}, [x, out, s, so]() {
    auto gy = out.grad();
    auto& gx = x.grad_ref();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      T* plane = gx.data() + nc * s.plane();
      for (std::size_t oy = 0; oy < so.h; ++oy) {
        const std::size_t y0 = detail::bin_start(oy, s.h, so.h), y1 = detail::bin_end(oy, s.h, so.h);
        for (std::size_t ox = 0; ox < so.w; ++ox) {
          const std::size_t x0 = detail::bin_start(ox, s.w, so.w), x1 = detail::bin_end(ox, s.w, so.w);
          const T g = gy[(nc * so.h + oy) * so.w + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
          for (std::size_t iy = y0; iy < y1; ++iy) {
            for (std::size_t ix = x0; ix < x1; ++ix) plane[iy * s.w + ix] += g;
          }
        }
      }
    }
  });
  return out;
}

}  // namespace pyrafuse
