#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pyrafuse/rng.hpp"
#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  bool passed = false;
  std::vector<double> autodiff;  // full analytic gradient
  std::vector<double> numeric;   // central differences at checked coordinates, 0 elsewhere
};

struct CheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  // Relative errors use max(|a|, |n|, floor_ratio * max_k |a_k|) as denominator
  // so near-zero entries are judged against the gradient's overall scale.
  double floor_ratio = 1e-3;
};

using ScalarFunction = std::function<Tensor<double>(const Tensor<double>&)>;

/// Compares the autodiff gradient of scalar-valued `f` at `x` with central
/// differences (f(x + h e_i) - f(x - h e_i)) / 2h.
inline CheckReport finite_diff_check(const ScalarFunction& f, const Tensor<double>& x, const CheckOptions& opt = {}) {
  const auto eval = [&f](const Tensor<double>& at) {
    const Tensor<double> y = f(at);
    if (y.numel() != 1) throw AutodiffError("finite_diff_check: f must be scalar-valued, got " + y.shape().str());
    return y.item();
  };

  const Tensor<double> base = x.detach();
  const double f0 = eval(base);
  const double f0_again = eval(base);
  if (std::memcmp(&f0, &f0_again, sizeof(double)) != 0) {
    throw NonDeterministicError("finite_diff_check: repeated evaluation of f differs");
  }

  CheckReport rep;
  {
    Tensor<double> probe = x.detach();
    probe.set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> y;
    {
      Tape<double>::Scope scope(tape);
      y = f(probe);
    }
    if (y.numel() != 1) throw AutodiffError("finite_diff_check: f must be scalar-valued");
    backward(tape, y);
    if (probe.has_grad() && probe.grad().size() == probe.numel()) {
      rep.autodiff.assign(probe.grad().begin(), probe.grad().end());
    } else {
      rep.autodiff.assign(probe.numel(), 0.0);
    }
  }

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opt.max_coordinates > 0 && opt.max_coordinates < coords.size()) {
    Rng rng(opt.seed);
    for (std::size_t i = 0; i < opt.max_coordinates; ++i) {
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    }
    coords.resize(opt.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  rep.numeric.assign(x.numel(), 0.0);
  Tensor<double> work = x.detach();
  auto wd = work.data();
  for (std::size_t i : coords) {
    const double orig = wd[i];
    wd[i] = orig + opt.step;
    const double fp = eval(work);
    wd[i] = orig - opt.step;
    const double fm = eval(work);
    wd[i] = orig;
    rep.numeric[i] = (fp - fm) / (2.0 * opt.step);
  }

  double scale = 0.0;
  for (double a : rep.autodiff) scale = std::max(scale, std::abs(a));
  const double floor = std::max(opt.floor_ratio * scale, 1e-300);
  for (std::size_t i : coords) {
    const double a = rep.autodiff[i];
    const double n = rep.numeric[i];
    const double abs_err = std::abs(a - n);
    const double rel = abs_err / std::max({std::abs(a), std::abs(n), floor});
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  rep.coordinates_checked = coords.size();
  rep.passed = rep.max_rel_error <= opt.tolerance;
  return rep;
}

}  // namespace pyrafuse
