#pragma once

#include <vector>

#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

namespace detail {

/// out[i] = x[source[i]]; the backward pass scatters through the same map.
template <class T>
Tensor<T> permute_gather(const Tensor<T>& x, const Shape& out_shape, std::vector<std::size_t> source) {
  Tensor<T> out(out_shape);
  auto xd = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[source[i]];
  detail::record(out, {x}, [x, out, source = std::move(source)]() {
    auto gy = out.grad();
    auto& gx = x.grad_ref();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[source[i]] += gy[i];
  });
  return out;
}

}  // namespace detail

inline Shape pixel_shuffle_shape(const Shape& s, std::size_t r) {
  if (r == 0 || s.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(s.c) + " channels not divisible by r^2 = " +
                     std::to_string(r * r));
  }
  return {s.n, s.c / (r * r), s.h * r, s.w * r};
}

inline Shape pixel_unshuffle_shape(const Shape& s, std::size_t r) {
  if (r == 0 || s.h % r != 0 || s.w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " not divisible by " + std::to_string(r));
  }
  return {s.n, s.c * r * r, s.h / r, s.w / r};
}

/// (N, C*r^2, H, W) -> (N, C, rH, rW) with
/// out[n, c, r*y + dy, r*x + dx] = in[n, c*r^2 + dy*r + dx, y, x].
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  const Shape s = x.shape();
  const Shape so = pixel_shuffle_shape(s, r);
  std::vector<std::size_t> src(so.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < so.n; ++n)
    for (std::size_t c = 0; c < so.c; ++c)
      for (std::size_t oy = 0; oy < so.h; ++oy)
        for (std::size_t ox = 0; ox < so.w; ++ox) {
          const std::size_t ic = c * r * r + (oy % r) * r + (ox % r);
          src[i++] = x.index(n, ic, oy / r, ox / r);
        }
  return detail::permute_gather(x, so, std::move(src));
}

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
  const Shape s = x.shape();
  const Shape so = pixel_unshuffle_shape(s, r);
  std::vector<std::size_t> src(so.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < so.n; ++n)
    for (std::size_t oc = 0; oc < so.c; ++oc)
      for (std::size_t y = 0; y < so.h; ++y)
        for (std::size_t xx = 0; xx < so.w; ++xx) {
          const std::size_t c = oc / (r * r);
          const std::size_t dy = (oc % (r * r)) / r;
          const std::size_t dx = oc % r;
          src[i++] = x.index(n, c, y * r + dy, xx * r + dx);
        }
  return detail::permute_gather(x, so, std::move(src));
}

inline void check_channel_shuffle(const Shape& s, std::size_t groups) {
  if (groups == 0 || s.c % groups != 0) {
    throw ShapeError("channel_shuffle: " + std::to_string(s.c) + " channels not divisible by " +
                     std::to_string(groups) + " groups");
  }
}

/// View channels as (groups, C/groups), transpose, flatten.
template <class T>
Tensor<T> channel_shuffle(const Tensor<T>& x, std::size_t groups) {
  const Shape s = x.shape();
  check_channel_shuffle(s, groups);
  const std::size_t per = s.c / groups;
  const std::size_t plane = s.plane();
  std::vector<std::size_t> src(s.numel());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oc = 0; oc < s.c; ++oc) {
      const std::size_t ic = (oc % groups) * per + oc / groups;
      for (std::size_t i = 0; i < plane; ++i) src[(n * s.c + oc) * plane + i] = (n * s.c + ic) * plane + i;
    }
  return detail::permute_gather(x, s, std::move(src));
}

}  // namespace pyrafuse
