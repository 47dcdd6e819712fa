#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pyrafuse {

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k, std::optional<std::int32_t> ignore = std::nullopt)
      : k_(k), ignore_(ignore), counts_(k * k, 0) {}

  static ConfusionMatrix from_counts(std::size_t k, std::vector<std::uint64_t> counts) {
    if (counts.size() != k * k) throw std::invalid_argument("confusion matrix needs k*k counts");
    ConfusionMatrix cm(k);
    cm.counts_ = std::move(counts);
    return cm;
  }

  void add(std::int32_t truth, std::int32_t pred) {
    if (ignore_ && truth == *ignore_) return;
    if (truth < 0 || static_cast<std::size_t>(truth) >= k_ || pred < 0 || static_cast<std::size_t>(pred) >= k_) {
      throw std::out_of_range("confusion matrix: class id outside [0," + std::to_string(k_) + ")");
    }
    ++counts_[static_cast<std::size_t>(truth) * k_ + static_cast<std::size_t>(pred)];
  }

  void add(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred) {
    if (truth.size() != pred.size()) throw std::invalid_argument("confusion matrix: length mismatch");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
  }

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_.at(truth * k_ + pred); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

 private:
  std::size_t k_;
  std::optional<std::int32_t> ignore_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  std::vector<std::optional<double>> per_class;  // empty optional: no pixels in truth or prediction
  double mean = 0.0;
};

/// IoU_k = TP / (TP + FP + FN); classes with a zero denominator are left out of the mean.
inline IouResult miou(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  IouResult r;
  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) {
      r.per_class.emplace_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class.emplace_back(iou);
    sum += iou;
    ++included;
  }
  if (included == 0) throw std::domain_error("miou: every class is empty");
  r.mean = sum / static_cast<double>(included);
  return r;
}

}  // namespace pyrafuse
