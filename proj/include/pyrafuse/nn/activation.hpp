#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

template <class T>
struct PReLUState {
  Tensor<T> alpha;  // (1, C, 1, 1) negative-side slopes

  static PReLUState constant(std::size_t channels, T slope) { return {Tensor<T>::full({1, channels, 1, 1}, slope)}; }
};

/// y = x for x > 0, alpha_c * x otherwise. At x == 0 the gradient is taken
/// from the positive branch.
template <class T>
Tensor<T> prelu(const Tensor<T>& x, const PReLUState<T>& st) {
  const Shape s = x.shape();
  if (st.alpha.numel() != s.c) {
    throw ShapeError("prelu: " + std::to_string(st.alpha.numel()) + " slopes for " + std::to_string(s.c) +
                     " channels");
  }
  for (T a : st.alpha.data()) {
    if (!std::isfinite(a)) throw std::invalid_argument("prelu: non-finite slope");
  }
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  auto xd = x.data();
  auto y = out.data();
  auto a = st.alpha.data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const std::size_t c = (i / plane) % s.c;
    y[i] = xd[i] > T(0) ? xd[i] : a[c] * xd[i];
  }
  Tensor<T> alpha = st.alpha;
  detail::record(out, {x, alpha}, [x, alpha, out, s, plane]() {
    auto gy = out.grad();
    auto xd = x.data();
    auto a = alpha.data();
    if (x.requires_grad()) {
      auto& gx = x.grad_ref();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const std::size_t c = (i / plane) % s.c;
        gx[i] += xd[i] >= T(0) ? gy[i] : a[c] * gy[i];
      }
    }
    if (alpha.requires_grad()) {
      auto& ga = alpha.grad_ref();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (xd[i] < T(0)) ga[(i / plane) % s.c] += gy[i] * xd[i];
      }
    }
  });
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xd = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) y[i] = xd[i] > T(0) ? xd[i] : T(0);
  detail::record(out, {x}, [x, out]() {
    auto gy = out.grad();
    auto xd = x.data();
    auto& gx = x.grad_ref();
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (xd[i] > T(0)) gx[i] += gy[i];
    }
  });
  return out;
}

/// Softmax across channels at every (n, h, w) site.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.c == 0) throw ShapeError("softmax over an empty channel axis");
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  auto xd = x.data();
  auto y = out.data();
  std::vector<T> m(plane), z(plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t base = n * s.c * plane;
    std::fill(m.begin(), m.end(), -std::numeric_limits<T>::infinity());
    std::fill(z.begin(), z.end(), T(0));
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) m[i] = std::max(m[i], xd[base + c * plane + i]);
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const T e = std::exp(xd[base + c * plane + i] - m[i]);
        y[base + c * plane + i] = e;
        z[i] += e;
      }
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) y[base + c * plane + i] /= z[i];
    }
  }
  detail::record(out, {x}, [x, out, s, plane]() {
    auto gy = out.grad();
    auto y = out.data();
    auto& gx = x.grad_ref();
    std::vector<T> dot(plane);
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = n * s.c * plane;
      std::fill(dot.begin(), dot.end(), T(0));
      for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < plane; ++i) dot[i] += gy[base + c * plane + i] * y[base + c * plane + i];
      }
      for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = base + c * plane + i;
          gx[k] += y[k] * (gy[k] - dot[i]);
        }
      }
    }
  });
  return out;
}

}  // namespace pyrafuse
