#pragma once

#include <cmath>
#include <vector>

#include "pyrafuse/nn/conv.hpp"
#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out, bool align_corners) {
  std::vector<LerpTap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src;
    if (align_corners) {
      src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    } else {
      src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      if (src < 0) src = 0;
    }
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 + (i0 + 1 < in ? 1 : 0);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of the spatial dims. Defaults to align_corners = false.
template <class T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, Dims2 out_hw, bool align_corners = false) {
  const Shape s = x.shape();
  if (out_hw.first == 0 || out_hw.second == 0) throw ShapeError("bilinear_upsample: target must be at least 1x1");
  if (s.h == 0 || s.w == 0) throw ShapeError("bilinear_upsample: empty spatial input " + s.str());
  const Shape so{s.n, s.c, out_hw.first, out_hw.second};
  const auto ty = detail::lerp_taps(s.h, so.h, align_corners);
  const auto tx = detail::lerp_taps(s.w, so.w, align_corners);
  Tensor<T> out(so);
  auto xd = x.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = xd.data() + nc * s.plane();
    T* q = y.data() + nc * so.plane();
    for (std::size_t oy = 0; oy < so.h; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < so.w; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
        q[oy * so.w + ox] = wy0 * (wx0 * p[a.i0 * s.w + b.i0] + wx1 * p[a.i0 * s.w + b.i1]) +
                            wy1 * (wx0 * p[a.i1 * s.w + b.i0] + wx1 * p[a.i1 * s.w + b.i1]);
      }
    }
  }
  detail::record(out, {x}, [x, out, s, so, ty, tx]() {
    auto gy = out.grad();
    auto& gx = x.grad_ref();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      T* p = gx.data() + nc * s.plane();
      const T* q = gy.data() + nc * so.plane();
      for (std::size_t oy = 0; oy < so.h; ++oy) {
        const auto& a = ty[oy];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        for (std::size_t ox = 0; ox < so.w; ++ox) {
          const auto& b = tx[ox];
          const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
          const T g = q[oy * so.w + ox];
          p[a.i0 * s.w + b.i0] += g * wy0 * wx0;
          p[a.i0 * s.w + b.i1] += g * wy0 * wx1;
          p[a.i1 * s.w + b.i0] += g * wy1 * wx0;
          p[a.i1 * s.w + b.i1] += g * wy1 * wx1;
        }
      }
    }
  });
  return out;
}

}  // namespace pyrafuse
