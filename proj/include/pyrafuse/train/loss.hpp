#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

/// Per-pixel class ids for a batch, laid out (n, h, w).
struct LabelBatch {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> ids;

  std::size_t size() const { return n * h * w; }
};

/// mean over non-ignored pixels of w_y * -log softmax(logits)_y.
/// Returns 0 (with zero gradient) when every pixel is ignored.
template <class T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const LabelBatch& labels, std::span<const double> weights,
                                 std::int32_t ignore_index) {
  const Shape s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w || labels.ids.size() != labels.size()) {
    throw ShapeError("cross_entropy: labels (" + std::to_string(labels.n) + "," + std::to_string(labels.h) + "," +
                     std::to_string(labels.w) + ") do not match logits " + s.str());
  }
  const std::size_t k = s.c;
  if (!weights.empty() && weights.size() != k) {
    throw ShapeError("cross_entropy: " + std::to_string(weights.size()) + " class weights for " + std::to_string(k) +
                     " classes");
  }
  const std::size_t plane = s.plane();
  const auto& x = logits.values();
  std::vector<T> prob(logits.numel(), T(0));
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t y = labels.ids[n * plane + p];
      if (y == ignore_index) continue;
      if (y < 0 || static_cast<std::size_t>(y) >= k) {
        throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(k) +
                                ") and not the ignore index");
      }
      const std::size_t base = n * k * plane + p;
      double mx = -INFINITY;
      for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(x[base + c * plane]));
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(x[base + c * plane]) - mx);
      for (std::size_t c = 0; c < k; ++c) {
        prob[base + c * plane] = static_cast<T>(std::exp(static_cast<double>(x[base + c * plane]) - mx) / z);
      }
      const double wy = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(y)];
      total += wy * (mx + std::log(z) - static_cast<double>(x[base + static_cast<std::size_t>(y) * plane]));
      ++counted;
    }
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total / denom));
  std::vector<double> w(weights.begin(), weights.end());
  detail::record(out, {logits}, [logits, out, labels, w, prob = std::move(prob), ignore_index, denom, k, plane]() {
    const double g = static_cast<double>(out.grad()[0]) / denom;
    auto& gx = logits.grad_ref();
    for (std::size_t n = 0; n < labels.n; ++n) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::int32_t y = labels.ids[n * plane + p];
        if (y == ignore_index) continue;
        const double wy = w.empty() ? 1.0 : w[static_cast<std::size_t>(y)];
        const std::size_t base = n * k * plane + p;
        for (std::size_t c = 0; c < k; ++c) {
          const double target = c == static_cast<std::size_t>(y) ? 1.0 : 0.0;
          gx[base + c * plane] += static_cast<T>(g * wy * (static_cast<double>(prob[base + c * plane]) - target));
        }
      }
    }
  });
  return out;
}

/// Inverse-frequency class weights normalized to mean frequency, clamped to [lo, hi].
/// Classes never observed get the upper clamp.
inline std::vector<double> inverse_frequency_weights(const std::vector<std::uint64_t>& counts, double lo = 0.1,
                                                     double hi = 10.0) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  std::vector<double> w(counts.size(), hi);
  if (total == 0 || counts.empty()) return w;
  const double uniform = 1.0 / static_cast<double>(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) continue;
    const double f = static_cast<double>(counts[k]) / static_cast<double>(total);
    w[k] = std::clamp(uniform / f, lo, hi);
  }
  return w;
}

}  // namespace pyrafuse
