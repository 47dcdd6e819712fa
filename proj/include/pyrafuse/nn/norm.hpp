#pragma once

#include <cmath>
#include <vector>

#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

template <class T>
struct BatchNormState {
  Tensor<T> gamma;  // (1, C, 1, 1)
  Tensor<T> beta;   // (1, C, 1, 1)
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  bool training = true;

  static BatchNormState identity(std::size_t channels) {
    BatchNormState st;
    st.gamma = Tensor<T>::ones({1, channels, 1, 1});
    st.beta = Tensor<T>::zeros({1, channels, 1, 1});
    st.running_mean.assign(channels, T(0));
    st.running_var.assign(channels, T(1));
    return st;
  }

  std::size_t channels() const { return gamma.numel(); }

  void validate() const {
    const std::size_t c = channels();
    if (beta.numel() != c || running_mean.size() != c || running_var.size() != c) {
      throw ShapeError("batch_norm state: per-channel arrays disagree in length");
    }
    if (!(eps > T(0))) throw std::invalid_argument("batch_norm state: eps must be positive");
    for (T v : running_var) {
      if (v < T(0)) throw std::invalid_argument("batch_norm state: negative running variance");
    }
  }
};

/// Batch normalization over (N, H, W) per channel. In training mode the batch
/// statistics normalize and the running statistics are updated in place.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& st) {
  st.validate();
  const Shape s = x.shape();
  if (s.c != st.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(s.c) + " channels, state has " +
                     std::to_string(st.channels()));
  }
  const std::size_t plane = s.plane();
  const std::size_t count = s.n * plane;
  std::vector<T> mean(s.c), inv_std(s.c);
  auto xd = x.data();
  const bool training = st.training;
  if (training) {
    for (std::size_t c = 0; c < s.c; ++c) {
      T acc = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = xd.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const T mu = count ? acc / static_cast<T>(count) : T(0);
      T var = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = xd.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      const T biased = count ? var / static_cast<T>(count) : T(0);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(biased + st.eps);
      if (count > 0) {
        const T unbiased = count > 1 ? var / static_cast<T>(count - 1) : biased;
        st.running_mean[c] = (T(1) - st.momentum) * st.running_mean[c] + st.momentum * mu;
        st.running_var[c] = (T(1) - st.momentum) * st.running_var[c] + st.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < s.c; ++c) {
      mean[c] = st.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(st.running_var[c] + st.eps);
    }
  }

  Tensor<T> xhat(s);
  Tensor<T> out(s);
  auto g = st.gamma.data();
  auto b = st.beta.data();
  auto xh = xhat.data();
  auto y = out.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t off = (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xh[off + i] = (xd[off + i] - mean[c]) * inv_std[c];
        y[off + i] = g[c] * xh[off + i] + b[c];
      }
    }
  }

  Tensor<T> gamma = st.gamma, beta = st.beta;
  detail::record(out, {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_std, training, s, plane, count]() {
    auto gy = out.grad();
    auto xh = xhat.data();
    auto g = gamma.data();
    std::vector<T> sum_gy(s.c, T(0)), sum_gy_xh(s.c, T(0));
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t off = (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_gy[c] += gy[off + i];
          sum_gy_xh[c] += gy[off + i] * xh[off + i];
        }
      }
    }
    if (gamma.requires_grad()) {
      auto& gg = gamma.grad_ref();
      for (std::size_t c = 0; c < s.c; ++c) gg[c] += sum_gy_xh[c];
    }
    if (beta.requires_grad()) {
      auto& gb = beta.grad_ref();
      for (std::size_t c = 0; c < s.c; ++c) gb[c] += sum_gy[c];
    }
    if (!x.requires_grad()) return;
    auto& gx = x.grad_ref();
    const T inv_m = count ? T(1) / static_cast<T>(count) : T(0);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t off = (n * s.c + c) * plane;
        const T k = g[c] * inv_std[c];
        if (training) {
          const T mg = sum_gy[c] * inv_m;
          const T mgx = sum_gy_xh[c] * inv_m;
          for (std::size_t i = 0; i < plane; ++i) gx[off + i] += k * (gy[off + i] - mg - xh[off + i] * mgx);
        } else {
          for (std::size_t i = 0; i < plane; ++i) gx[off + i] += k * gy[off + i];
        }
      }
    }
  });
  return out;
}

}  // namespace pyrafuse
