#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

struct PolySchedule {
  double lr_init = 3e-4;
  std::size_t max_iter = 1;
  double power = 0.9;
};

/// lr_init * (1 - iter / max_iter)^power
inline double poly_lr(const PolySchedule& s, std::size_t iter) {
  if (s.max_iter == 0) throw std::invalid_argument("poly_lr: max_iter must be >= 1");
  if (iter > s.max_iter) {
    throw std::out_of_range("poly_lr: iteration " + std::to_string(iter) + " beyond max_iter " +
                            std::to_string(s.max_iter));
  }
  if (iter == s.max_iter) return 0.0;
  return s.lr_init * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(s.max_iter), s.power);
}

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-6;
  std::size_t step = 0;

  void init(const std::vector<Tensor<T>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.numel(), T(0));
      v.emplace_back(p.numel(), T(0));
    }
    step = 0;
  }
};

/// Decoupled weight decay p -= lr * wd * p, then the bias-corrected Adam
/// update from each tensor's grad (a missing grad counts as zero).
template <class T>
void adam_step(const std::vector<Tensor<T>>& params, AdamState<T>& st, double lr) {
  if (st.m.empty() && !params.empty()) st.init(params);
  if (st.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer tracks " + std::to_string(st.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != p.size() || v.size() != p.size()) {
      throw ShapeError("adam_step: moment size mismatch for tensor " + std::to_string(i));
    }
    const auto g = params[i].grad();
    const bool has = g.size() == p.size();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = has ? static_cast<double>(g[k]) : 0.0;
      double pk = static_cast<double>(p[k]);
      pk -= lr * st.weight_decay * pk;
      const double mk = st.beta1 * static_cast<double>(m[k]) + (1.0 - st.beta1) * gk;
      const double vk = st.beta2 * static_cast<double>(v[k]) + (1.0 - st.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      pk -= lr * (mk / c1) / (std::sqrt(vk / c2) + st.eps);
      p[k] = static_cast<T>(pk);
    }
  }
}

}  // namespace pyrafuse
