#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pyrafuse/analysis.hpp"
#include "pyrafuse/esam.hpp"
#include "pyrafuse/gradcheck.hpp"
#include "pyrafuse/network.hpp"
#include "pyrafuse/pyramid.hpp"
#include "pyrafuse/train/loss.hpp"

namespace pyrafuse {

template <class T>
Tensor<T> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Values whose pairwise gaps and distance from zero both exceed `gap`,
/// in random order, so kinks (ReLU, max) are far from any probe step.
inline Tensor<double> spaced_tensor(const Shape& s, Rng& rng, double gap = 0.05) {
  Tensor<double> t(s);
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double mag = gap * static_cast<double>(i / 2 + 1);
    d[i] = (i % 2 ? -mag : mag);
  }
  for (std::size_t i = d.size(); i > 1; --i) std::swap(d[i - 1], d[rng.below(i)]);
  return t;
}

/// Direct nested-loop cross-correlation, the reference for conv2d.
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                                   const std::optional<Tensor<double>>& b, const ConvSpec& s) {
  const Shape os = conv_output_shape(x.shape(), s);
  Tensor<double> y(os);
  const std::size_t cin_g = s.in_channels / s.groups;
  const std::size_t cout_g = s.out_channels / s.groups;
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      const std::size_t g = oc / cout_g;
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          double acc = b ? b->at(0, oc, 0, 0) : 0.0;
          for (std::size_t ic = 0; ic < cin_g; ++ic) {
            for (std::size_t ky = 0; ky < s.kernel.first; ++ky) {
              for (std::size_t kx = 0; kx < s.kernel.second; ++kx) {
                const long iy = static_cast<long>(oy * s.stride.first + ky * s.dilation.first) -
                                static_cast<long>(s.padding.first);
                const long ix = static_cast<long>(ox * s.stride.second + kx * s.dilation.second) -
                                static_cast<long>(s.padding.second);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(x.shape().h) || ix >= static_cast<long>(x.shape().w)) {
                  continue;
                }
                acc += w.at(oc, ic, ky, kx) *
                       x.at(n, g * cin_g + ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          }
          y.at(n, oc, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

/// Random conv geometry with channels <= 8 and spatial extent <= 9.
inline ConvSpec random_conv_spec(Rng& rng, std::size_t h, std::size_t w) {
  for (;;) {
    ConvSpec s;
    s.groups = 1 + rng.below(4);
    s.in_channels = s.groups * (1 + rng.below(8 / s.groups));
    s.out_channels = s.groups * (1 + rng.below(8 / s.groups));
    s.kernel = {1 + rng.below(4), 1 + rng.below(4)};
    s.stride = {1 + rng.below(3), 1 + rng.below(3)};
    s.dilation = {1 + rng.below(3), 1 + rng.below(3)};
    s.padding = {rng.below(3), rng.below(3)};
    s.bias = rng.bernoulli(0.5);
    const long sh = static_cast<long>(h + 2 * s.padding.first) -
                    static_cast<long>(s.dilation.first * (s.kernel.first - 1) + 1);
    const long sw = static_cast<long>(w + 2 * s.padding.second) -
                    static_cast<long>(s.dilation.second * (s.kernel.second - 1) + 1);
    if (sh >= 0 && sw >= 0) return s;
  }
}

/// One gradient check: a scalar function and the point to check it at.
struct GradProblem {
  ScalarFunction f;
  Tensor<double> x;
  CheckOptions options;
};

struct GradCase {
  std::string name;
  std::string op;        // differentiable op or block this case covers
  std::string category;  // op | block | model
  double tolerance = 1e-4;
  // Composite cases hold ReLU / PReLU / max kinks the input cannot steer
  // away from, so they probe with a smaller step.
  double step = 1e-5;
  std::function<GradProblem(std::uint64_t seed)> make;
};

namespace detail {

/// sum(op(x) * R) for a fixed random R, so every output element carries a distinct weight.
inline ScalarFunction projected(std::function<Tensor<double>(const Tensor<double>&)> op, const Tensor<double>& x0,
                                Rng& rng) {
  const Tensor<double> y0 = op(x0.detach());
  const Tensor<double> r = random_tensor<double>(y0.shape(), rng);
  return [op, r](const Tensor<double>& x) { return sum(mul(op(x), r)); };
}

inline GradCase simple(const std::string& name, const std::string& op, const std::string& category, double tol,
                       std::function<GradProblem(Rng&)> body) {
  return GradCase{name, op, category, tol, category == "op" ? 1e-5 : 1e-7, [body](std::uint64_t seed) {
                    Rng rng(seed * 0x9E3779B97F4A7C15ull + 17);
                    return body(rng);
                  }};
}

inline GradProblem unary_problem(Rng& rng, const Shape& s, std::function<Tensor<double>(const Tensor<double>&)> op,
                                 bool spaced = false) {
  const Tensor<double> x = spaced ? spaced_tensor(s, rng) : random_tensor<double>(s, rng);
  return {projected(op, x, rng), x, {}};
}

/// Checks a whole graph with respect to its input, or a parameter tensor
/// when `param_layer` names a conv layer.
inline GradProblem graph_problem(ModelGraph g, const Shape& in, Rng& rng, std::size_t max_coords,
                                 std::optional<std::size_t> param_layer = std::nullopt) {
  auto params = std::make_shared<ParamStore<double>>(ParamStore<double>::init(g, rng.bits()));
  // Randomize normalization and activation parameters away from their identity defaults.
  for (std::size_t i = 0; i < params->size(); ++i) {
    if (auto* bn = std::get_if<BatchNormState<double>>(&params->slot(i))) {
      for (auto& v : bn->gamma.data()) v = rng.uniform(0.5, 1.5);
      for (auto& v : bn->beta.data()) v = rng.uniform(-0.2, 0.2);
    } else if (auto* a = std::get_if<PReLUState<double>>(&params->slot(i))) {
      for (auto& v : a->alpha.data()) v = rng.uniform(0.05, 0.4);
    } else if (auto* c = std::get_if<ConvParams<double>>(&params->slot(i))) {
      if (c->bias) {
        for (auto& v : c->bias->data()) v = rng.uniform(-0.2, 0.2);
      }
    }
  }
  auto graph = std::make_shared<ModelGraph>(std::move(g));
  const auto acts0 = run_graph<double>(*graph, *params, std::vector<Tensor<double>>{random_tensor<double>(in, rng)},
                                       Mode::Train);
  const Tensor<double> image = acts0[graph->inputs.front()];
  const Tensor<double> r = random_tensor<double>(acts0[graph->output].shape(), rng);
  CheckOptions opt;
  opt.max_coordinates = max_coords;
  opt.seed = rng.bits();
  if (param_layer) {
    const std::size_t li = *param_layer;
    const Tensor<double> w0 = params->conv(li).weight.detach();
    ScalarFunction f = [graph, params, image, r, li](const Tensor<double>& w) {
      params->conv(li).weight = w;
      const auto acts = run_graph<double>(*graph, *params, std::span<const Tensor<double>>(&image, 1), Mode::Train);
      return sum(mul(acts[graph->output], r));
    };
    return {f, w0, opt};
  }
  ScalarFunction f = [graph, params, r](const Tensor<double>& x) {
    const auto acts = run_graph<double>(*graph, *params, std::span<const Tensor<double>>(&x, 1), Mode::Train);
    return sum(mul(acts[graph->output], r));
  };
  return {f, image, opt};
}

inline SpfnetConfig gradcheck_spfnet_config() {
  SpfnetConfig c;
  c.backbone.depth = 18;
  c.backbone.variant = BackboneVariant::H;
  c.backbone.width_multiplier = 1.0 / 16.0;
  c.num_classes = 3;
  c.spfm.s = 2;
  c.decoder_widths = {64, 64, 64};
  return c;
}

}  // namespace detail

/// Every differentiable library operation; the gradient suite must cover each.
inline const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops{
      "add",        "mul",           "scale",           "sum",           "mean",
      "slice_channels", "concat_channels", "conv2d",    "depthwise_separable", "batch_norm",
      "prelu",      "relu",          "max_pool",        "adaptive_avg_pool", "pixel_shuffle",
      "pixel_unshuffle", "channel_shuffle", "bilinear_upsample", "softmax_channels", "weighted_cross_entropy"};
  return ops;
}

inline std::vector<GradCase> grad_cases() {
  using detail::simple;
  using detail::unary_problem;
  using T = Tensor<double>;
  std::vector<GradCase> cs;

  cs.push_back(simple("add", "add", "op", 1e-4, [](Rng& rng) {
    const T b = random_tensor<double>({2, 3, 4, 4}, rng);
    return unary_problem(rng, {2, 3, 4, 4}, [b](const T& x) { return add(x, b); });
  }));
  cs.push_back(simple("add.broadcast", "add", "op", 1e-4, [](Rng& rng) {
    const T a = random_tensor<double>({2, 3, 4, 4}, rng);
    return unary_problem(rng, {2, 3, 1, 1}, [a](const T& x) { return add(a, x); });
  }));
  cs.push_back(simple("mul", "mul", "op", 1e-4, [](Rng& rng) {
    const T b = random_tensor<double>({2, 3, 4, 4}, rng);
    return unary_problem(rng, {2, 3, 4, 4}, [b](const T& x) { return mul(x, b); });
  }));
  cs.push_back(simple("mul.square", "mul", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {1, 2, 3, 3}, [](const T& x) { return mul(x, x); });
  }));
  cs.push_back(simple("mul.broadcast", "mul", "op", 1e-4, [](Rng& rng) {
    const T a = random_tensor<double>({2, 3, 4, 4}, rng);
    return unary_problem(rng, {1, 3, 1, 1}, [a](const T& x) { return mul(a, x); });
  }));
  cs.push_back(simple("scale", "scale", "op", 1e-4, [](Rng& rng) {
    const double k = rng.uniform(-2.0, 2.0);
    return unary_problem(rng, {1, 2, 3, 3}, [k](const T& x) { return scale(x, k); });
  }));
  cs.push_back(simple("sum", "sum", "op", 1e-4, [](Rng& rng) {
    const T x = random_tensor<double>({1, 2, 3, 3}, rng);
    return GradProblem{[](const T& v) { return sum(mul(v, v)); }, x, {}};
  }));
  cs.push_back(simple("mean", "mean", "op", 1e-4, [](Rng& rng) {
    const T x = random_tensor<double>({2, 2, 3, 3}, rng);
    return GradProblem{[](const T& v) { return mean(mul(v, v)); }, x, {}};
  }));
  cs.push_back(simple("slice_channels", "slice_channels", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {2, 6, 3, 3}, [](const T& x) { return slice_channels(x, 1, 3); });
  }));
  cs.push_back(simple("concat_channels", "concat_channels", "op", 1e-4, [](Rng& rng) {
    const T b = random_tensor<double>({2, 3, 3, 3}, rng);
    return unary_problem(rng, {2, 2, 3, 3}, [b](const T& x) { return concat_channels<double>({b, x, x}); });
  }));
  cs.push_back(simple("conv2d.input", "conv2d", "op", 1e-4, [](Rng& rng) {
    const ConvSpec s = random_conv_spec(rng, 6, 7);
    const T w = random_tensor<double>(s.weight_shape(), rng);
    std::optional<T> b;
    if (s.bias) b = random_tensor<double>({1, s.out_channels, 1, 1}, rng);
    return unary_problem(rng, {2, s.in_channels, 6, 7}, [w, b, s](const T& x) { return conv2d(x, w, b, s); });
  }));
  cs.push_back(simple("conv2d.weight", "conv2d", "op", 1e-4, [](Rng& rng) {
    const ConvSpec s = random_conv_spec(rng, 6, 7);
    const T x = random_tensor<double>({2, s.in_channels, 6, 7}, rng);
    return unary_problem(rng, s.weight_shape(), [x, s](const T& w) { return conv2d(x, w, s); });
  }));
  cs.push_back(simple("conv2d.bias", "conv2d", "op", 1e-4, [](Rng& rng) {
    ConvSpec s = random_conv_spec(rng, 6, 7);
    s.bias = true;
    const T x = random_tensor<double>({2, s.in_channels, 6, 7}, rng);
    const T w = random_tensor<double>(s.weight_shape(), rng);
    return unary_problem(rng, {1, s.out_channels, 1, 1},
                         [x, w, s](const T& b) { return conv2d(x, w, std::optional<T>(b), s); });
  }));
  cs.push_back(simple("depthwise_separable", "depthwise_separable", "op", 1e-4, [](Rng& rng) {
    const ConvSpec dw = ConvSpec::square(4, 4, 3, 1, 1, 4);
    const ConvSpec pw = ConvSpec::square(4, 6, 1);
    const T wd = random_tensor<double>(dw.weight_shape(), rng);
    const T wp = random_tensor<double>(pw.weight_shape(), rng);
    return unary_problem(rng, {2, 4, 5, 5}, [=](const T& x) { return depthwise_separable(x, wd, dw, wp, pw); });
  }));
  cs.push_back(simple("batch_norm.input", "batch_norm", "op", 1e-4, [](Rng& rng) {
    auto st = std::make_shared<BatchNormState<double>>(BatchNormState<double>::identity(3));
    for (auto& v : st->gamma.data()) v = rng.uniform(0.5, 1.5);
    for (auto& v : st->beta.data()) v = rng.uniform(-0.5, 0.5);
    return unary_problem(rng, {2, 3, 4, 4}, [st](const T& x) { return batch_norm(x, *st); });
  }));
  cs.push_back(simple("batch_norm.gamma", "batch_norm", "op", 1e-4, [](Rng& rng) {
    const T x = random_tensor<double>({2, 3, 4, 4}, rng);
    return unary_problem(rng, {1, 3, 1, 1}, [x](const T& g) {
      BatchNormState<double> st = BatchNormState<double>::identity(3);
      st.gamma = g;
      return batch_norm(x, st);
    });
  }));
  cs.push_back(simple("batch_norm.beta", "batch_norm", "op", 1e-4, [](Rng& rng) {
    const T x = random_tensor<double>({2, 3, 4, 4}, rng);
    return unary_problem(rng, {1, 3, 1, 1}, [x](const T& b) {
      BatchNormState<double> st = BatchNormState<double>::identity(3);
      st.beta = b;
      return batch_norm(x, st);
    });
  }));
  cs.push_back(simple("batch_norm.eval", "batch_norm", "op", 1e-4, [](Rng& rng) {
    auto st = std::make_shared<BatchNormState<double>>(BatchNormState<double>::identity(3));
    st->training = false;
    for (auto& v : st->running_mean) v = rng.uniform(-0.5, 0.5);
    for (auto& v : st->running_var) v = rng.uniform(0.5, 2.0);
    return unary_problem(rng, {2, 3, 4, 4}, [st](const T& x) {
      BatchNormState<double> local = *st;
      return batch_norm(x, local);
    });
  }));
  cs.push_back(simple("prelu.input", "prelu", "op", 1e-4, [](Rng& rng) {
    PReLUState<double> st{random_tensor<double>({1, 3, 1, 1}, rng, 0.0, 0.5)};
    return unary_problem(rng, {2, 3, 4, 4}, [st](const T& x) { return prelu(x, st); }, true);
  }));
  cs.push_back(simple("prelu.alpha", "prelu", "op", 1e-4, [](Rng& rng) {
    const T x = spaced_tensor({2, 3, 4, 4}, rng);
    return unary_problem(rng, {1, 3, 1, 1}, [x](const T& a) { return prelu(x, PReLUState<double>{a}); });
  }));
  cs.push_back(simple("relu", "relu", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {2, 3, 4, 4}, [](const T& x) { return relu(x); }, true);
  }));
  cs.push_back(simple("max_pool.k3s1p1", "max_pool", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {2, 2, 5, 5}, [](const T& x) { return max_pool(x, PoolSpec::square(3, 1, 1)); }, true);
  }));
  cs.push_back(simple("max_pool.k3s2p1", "max_pool", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {2, 2, 7, 6}, [](const T& x) { return max_pool(x, PoolSpec::square(3, 2, 1)); }, true);
  }));
  cs.push_back(simple("adaptive_avg_pool", "adaptive_avg_pool", "op", 1e-4, [](Rng& rng) {
    const Dims2 out{1 + rng.below(4), 1 + rng.below(4)};
    return unary_problem(rng, {2, 3, 7, 5}, [out](const T& x) { return adaptive_avg_pool(x, out); });
  }));
  cs.push_back(simple("pixel_shuffle", "pixel_shuffle", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {2, 8, 3, 2}, [](const T& x) { return pixel_shuffle(x, 2); });
  }));
  cs.push_back(simple("pixel_unshuffle", "pixel_unshuffle", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {2, 2, 4, 6}, [](const T& x) { return pixel_unshuffle(x, 2); });
  }));
  cs.push_back(simple("channel_shuffle", "channel_shuffle", "op", 1e-4, [](Rng& rng) {
    const std::size_t g = rng.bernoulli(0.5) ? 2 : 3;
    return unary_problem(rng, {2, 6, 3, 3}, [g](const T& x) { return channel_shuffle(x, g); });
  }));
  cs.push_back(simple("bilinear_upsample", "bilinear_upsample", "op", 1e-4, [](Rng& rng) {
    const Dims2 out{2 + rng.below(8), 2 + rng.below(8)};
    const bool corners = rng.bernoulli(0.3);
    return unary_problem(rng, {2, 2, 3, 4}, [out, corners](const T& x) { return bilinear_upsample(x, out, corners); });
  }));
  cs.push_back(simple("softmax_channels", "softmax_channels", "op", 1e-4, [](Rng& rng) {
    return unary_problem(rng, {2, 4, 3, 3}, [](const T& x) { return softmax_channels(scale(x, 2.0)); });
  }));
  cs.push_back(simple("weighted_cross_entropy", "weighted_cross_entropy", "op", 1e-4, [](Rng& rng) {
    LabelBatch y{2, 3, 3, {}};
    for (std::size_t i = 0; i < y.size(); ++i) y.ids.push_back(static_cast<std::int32_t>(rng.below(5)));  // 4 = ignore
    std::vector<double> w{0.5, 1.0, 2.0, 1.5};
    const T x = random_tensor<double>({2, 4, 3, 3}, rng, -2.0, 2.0);
    return GradProblem{[y, w](const T& v) { return weighted_cross_entropy(v, y, w, 4); }, x, {}};
  }));

  cs.push_back(simple("rpp", "rpp", "block", 1e-4, [](Rng& rng) {
    RppConfig c;
    c.split_channels = 4;
    return detail::graph_problem(make_rpp_graph(c), {2, 4, 5, 6}, rng, 0);
  }));
  cs.push_back(simple("spfm", "spfm", "block", 1e-4, [](Rng& rng) {
    SpfmConfig c;
    c.in_channels = 8;
    c.s = 2;
    return detail::graph_problem(make_spfm_graph(c), {2, 8, 4, 5}, rng, 0);
  }));
  cs.push_back(simple("esam", "esam", "block", 1e-4, [](Rng& rng) {
    EsamConfig c;
    c.channels = 4;
    return detail::graph_problem(make_esam_graph(c), {2, 4, 5, 5}, rng, 0);
  }));
  cs.push_back(simple("spfnet.image", "spfnet", "model", 1e-3, [](Rng& rng) {
    return detail::graph_problem(make_spfnet_graph(detail::gradcheck_spfnet_config()), {2, 3, 32, 32}, rng, 24);
  }));
  cs.push_back(simple("spfnet.stem_weight", "spfnet", "model", 1e-3, [](Rng& rng) {
    const ModelGraph g = make_spfnet_graph(detail::gradcheck_spfnet_config());
    const std::size_t stem = *g.find_layer("backbone.stem.conv");
    return detail::graph_problem(g, {2, 3, 32, 32}, rng, 24, stem);
  }));
  return cs;
}

/// A deliberately wrong backward rule (gradient scaled by 1.5), for checking
/// that the gradient suite detects broken ops.
inline GradCase faulty_grad_case() {
  return detail::simple("faulty.scale", "faulty", "op", 1e-4, [](Rng& rng) {
    const auto op = [](const Tensor<double>& x) {
      Tensor<double> out(x.shape(), x.values());
      detail::record(out, {x}, [x, out]() {
        auto& g = x.grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.5 * out.grad()[i];
      });
      return out;
    };
    return detail::unary_problem(rng, {1, 2, 3, 3}, op);
  });
}

struct SuiteLine {
  std::string suite;
  std::string name;
  bool passed = true;
  std::string detail;
};

struct SuiteReport {
  std::vector<SuiteLine> lines;
  bool passed() const {
    return std::all_of(lines.begin(), lines.end(), [](const SuiteLine& l) { return l.passed; });
  }
  std::string format() const {
    std::ostringstream os;
    std::size_t wn = 4;
    for (const auto& l : lines) wn = std::max(wn, l.name.size());
    for (const auto& l : lines) {
      os << std::left << std::setw(8) << l.suite << std::setw(static_cast<int>(wn) + 2) << l.name
         << (l.passed ? "pass  " : "FAIL  ") << l.detail << '\n';
    }
    std::size_t failed = 0;
    for (const auto& l : lines) failed += l.passed ? 0 : 1;
    os << "summary: " << lines.size() - failed << '/' << lines.size() << " checks passed\n";
    return os.str();
  }
};

inline std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

/// Runs every case over `seeds` consecutive seeds starting at `base_seed`.
inline SuiteReport run_grad_suite(const std::vector<GradCase>& cases, std::uint64_t base_seed, std::size_t seeds,
                                  bool coverage = true) {
  SuiteReport rep;
  std::set<std::string> covered;
  for (const auto& c : cases) {
    double worst = 0.0;
    std::size_t coords = 0;
    bool ok = true;
    std::string error;
    for (std::size_t k = 0; k < seeds; ++k) {
      try {
        GradProblem p = c.make(base_seed + k);
        p.options.tolerance = c.tolerance;
        p.options.step = c.step;
        const CheckReport r = finite_diff_check(p.f, p.x, p.options);
        worst = std::max(worst, r.max_rel_error);
        coords += r.coordinates_checked;
        ok = ok && r.passed;
      } catch (const std::exception& e) {
        ok = false;
        error = e.what();
        break;
      }
    }
    covered.insert(c.op);
    std::string detail = "seeds=" + std::to_string(seeds) + " coords=" + std::to_string(coords) +
                         " max_rel=" + sci(worst) + " tol=" + sci(c.tolerance) + " step=" + sci(c.step);
    if (!error.empty()) detail += " error: " + error;
    rep.lines.push_back({"grad", c.name, ok, detail});
  }
  if (!coverage) return rep;
  std::vector<std::string> missing;
  for (const auto& op : differentiable_ops()) {
    if (!covered.count(op)) missing.push_back(op);
  }
  std::ostringstream cov;
  cov << (differentiable_ops().size() - missing.size()) << '/' << differentiable_ops().size() << " ops:";
  for (const auto& op : differentiable_ops()) cov << ' ' << op;
  if (!missing.empty()) {
    cov << " | missing:";
    for (const auto& m : missing) cov << ' ' << m;
  }
  rep.lines.push_back({"grad", "coverage", missing.empty(), cov.str()});
  return rep;
}

/// conv2d against the nested-loop reference on `cases` random geometries.
inline SuiteLine conv_oracle_check(std::uint64_t seed, std::size_t cases, double tol = 1e-6) {
  Rng rng(seed ^ 0xC0417ull);
  double worst = 0.0;
  std::set<int> combos;
  const auto combo = [](const ConvSpec& s) {
    return (s.stride.first > 1 || s.stride.second > 1 ? 1 : 0) + (s.dilation.first > 1 || s.dilation.second > 1 ? 2 : 0) +
           (s.groups > 1 ? 4 : 0);
  };
  for (std::size_t i = 0; i < cases; ++i) {
    // cycle through every stride / dilation / grouping combination
    std::size_t h = 0, w = 0;
    ConvSpec s;
    do {
      h = 1 + rng.below(9);
      w = 1 + rng.below(9);
      s = random_conv_spec(rng, h, w);
    } while (static_cast<std::size_t>(combo(s)) != i % 8);
    const auto x = random_tensor<double>({1 + rng.below(2), s.in_channels, h, w}, rng);
    const auto wt = random_tensor<double>(s.weight_shape(), rng);
    std::optional<Tensor<double>> b;
    if (s.bias) b = random_tensor<double>({1, s.out_channels, 1, 1}, rng);
    const auto fast = conv2d(x, wt, b, s);
    const auto ref = naive_conv2d(x, wt, b, s);
    for (std::size_t k = 0; k < ref.numel(); ++k) worst = std::max(worst, std::abs(fast.data()[k] - ref.data()[k]));
    combos.insert(combo(s));
  }
  return {"oracle", "conv2d_vs_direct", worst <= tol,
          "cases=" + std::to_string(cases) + " stride/dilation/group combos=" + std::to_string(combos.size()) +
              "/8 max_abs=" + sci(worst) + " tol=" + sci(tol)};
}

inline SuiteReport run_oracle_suite(std::uint64_t seed) {
  SuiteReport rep;
  rep.lines.push_back(conv_oracle_check(seed, 60));
  Rng rng(seed);
  {
    // float path against the double reference
    const ConvSpec s = ConvSpec::square(4, 6, 3, 1, 2, 2, true);
    const auto x = random_tensor<double>({2, 4, 6, 6}, rng);
    const auto w = random_tensor<double>(s.weight_shape(), rng);
    const auto b = random_tensor<double>({1, 6, 1, 1}, rng);
    const auto ref = naive_conv2d(x, w, b, s);
    const auto got = conv2d(x.cast<float>(), w.cast<float>(), std::optional<Tensor<float>>(b.cast<float>()), s);
    double worst = 0.0;
    for (std::size_t k = 0; k < ref.numel(); ++k) worst = std::max(worst, std::abs(got.data()[k] - ref.data()[k]));
    rep.lines.push_back({"oracle", "conv2d_float", worst <= 1e-5, "max_abs=" + sci(worst) + " tol=1.000e-05"});
  }
  {
    const ConvSpec dw = ConvSpec::square(5, 5, 3, 1, 1, 5), pw = ConvSpec::square(5, 7, 1);
    const auto x = random_tensor<double>({2, 5, 6, 6}, rng);
    const auto a = random_tensor<double>(dw.weight_shape(), rng), p = random_tensor<double>(pw.weight_shape(), rng);
    const auto y1 = depthwise_separable(x, a, dw, p, pw);
    const auto y2 = conv2d(conv2d(x, a, dw), p, pw);
    const bool same = std::equal(y1.data().begin(), y1.data().end(), y2.data().begin());
    rep.lines.push_back({"oracle", "depthwise_separable_composition", same, same ? "bit-identical" : "differs"});
  }
  {
    const auto x = random_tensor<double>({1, 2, 7, 5}, rng);
    const auto y = adaptive_avg_pool(x, {3, 2});
    double worst = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
          const std::size_t y0 = i * 7 / 3, y1 = ((i + 1) * 7 + 2) / 3, x0 = j * 5 / 2, x1 = ((j + 1) * 5 + 1) / 2;
          double acc = 0.0;
          for (std::size_t a = y0; a < y1; ++a) {
            for (std::size_t b = x0; b < x1; ++b) acc += x.at(0, c, a, b);
          }
          worst = std::max(worst, std::abs(acc / static_cast<double>((y1 - y0) * (x1 - x0)) - y.at(0, c, i, j)));
        }
      }
    }
    rep.lines.push_back({"oracle", "adaptive_avg_pool_bins", worst <= 1e-12, "max_abs=" + sci(worst)});
  }
  {
    const Tensor<double> x({1, 2, 1, 1}, {0.0, std::log(3.0)});
    const auto y = softmax_channels(x);
    const double err = std::max(std::abs(y.data()[0] - 0.25), std::abs(y.data()[1] - 0.75));
    rep.lines.push_back({"oracle", "softmax_ln3", err <= 1e-12, "max_abs=" + sci(err)});
  }
  for (std::size_t s : {2, 4, 8, 16}) {
    SpfmConfig c;
    c.in_channels = 64;
    c.s = s;
    const ModelGraph g = make_spfm_graph(c);
    const auto p = ParamStore<double>::init(g, seed);
    const bool ok = spfm_param_count(c) == p.scalar_count() && count_params(g) == p.scalar_count();
    rep.lines.push_back({"oracle", "spfm_param_count.s" + std::to_string(s), ok,
                         "closed=" + std::to_string(spfm_param_count(c)) + " graph=" + std::to_string(count_params(g)) +
                             " instantiated=" + std::to_string(p.scalar_count())});
  }
  {
    const ModelGraph g = make_spfnet_graph(detail::gradcheck_spfnet_config());
    const auto p = ParamStore<double>::init(g, seed);
    rep.lines.push_back({"oracle", "count_params_spfnet", count_params(g) == p.scalar_count(),
                         "graph=" + std::to_string(count_params(g)) + " instantiated=" + std::to_string(p.scalar_count())});
  }
  return rep;
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

template <class T>
bool same_multiset(const Tensor<T>& a, const Tensor<T>& b) {
  std::vector<T> x(a.data().begin(), a.data().end()), y(b.data().begin(), b.data().end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return x == y;
}

/// Shapes of the four ESAM inputs (stages 2..5) for a backbone at `input`.
inline std::vector<Shape> stage_shapes(const BackboneConfig& bb, const Shape& input) {
  const ModelGraph g = make_backbone_graph(bb);
  const auto shapes = trace_shapes(g, input);
  std::vector<Shape> out;
  for (int j = 2; j <= 5; ++j) out.push_back(shapes[g.tap("F" + std::to_string(j))]);
  return out;
}

inline SuiteReport run_shape_suite(std::uint64_t seed) {
  SuiteReport rep;
  Rng rng(seed ^ 0x5A4Eull);
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    const std::size_t r = 1 + rng.below(3);
    const auto x = random_tensor<double>({1 + rng.below(2), r * r * (1 + rng.below(3)), 1 + rng.below(4), 1 + rng.below(4)}, rng);
    const auto y = pixel_shuffle(x, r);
    ok = ok && bit_equal(pixel_unshuffle(y, r), x) && same_multiset(x, y);
    const auto z = random_tensor<double>({1, 2, r * (1 + rng.below(3)), r * (1 + rng.below(3))}, rng);
    ok = ok && bit_equal(pixel_shuffle(pixel_unshuffle(z, r), r), z);
  }
  rep.lines.push_back({"shape", "pixel_shuffle_round_trip", ok, "cases=20 both directions, multisets preserved"});

  ok = true;
  for (int i = 0; i < 20; ++i) {
    const std::size_t g = 1 + rng.below(4), m = 1 + rng.below(4);
    const auto x = random_tensor<double>({2, g * m, 3, 2}, rng);
    const auto y = channel_shuffle(x, g);
    ok = ok && bit_equal(channel_shuffle(y, m), x) && same_multiset(x, y);
  }
  rep.lines.push_back({"shape", "channel_shuffle_involution", ok, "cases=20 g then C/g"});

  ok = true;
  for (int i = 0; i < 20; ++i) {
    const std::size_t s = 1 + rng.below(4);
    const auto x = random_tensor<double>({2, s * (1 + rng.below(3)), 3, 3}, rng);
    ok = ok && bit_equal(concat_channels(split_channels(x, s)), x);
  }
  rep.lines.push_back({"shape", "split_concat_round_trip", ok, "cases=20"});

  ok = true;
  std::string where;
  for (int i = 0; i < 10; ++i) {
    SpfnetConfig c;
    c.backbone.depth = rng.bernoulli(0.5) ? 18 : 34;
    c.backbone.variant = rng.bernoulli(0.5) ? BackboneVariant::H : BackboneVariant::L;
    c.backbone.width_multiplier = 1.0 / 16.0;
    c.num_classes = 2 + rng.below(4);
    c.spfm_enabled = rng.bernoulli(0.7);
    c.spfm.s = std::size_t{1} << rng.below(3);
    c.esam_stages.clear();
    for (int j = 2; j <= 5; ++j) {
      if (rng.bernoulli(0.5)) c.esam_stages.push_back(j);
    }
    c.additive_skips = rng.bernoulli(0.5);
    c.concat_fusion = rng.bernoulli(0.7);
    c.decoder_widths = {64, 32, 32};
    const std::size_t stride = c.backbone.stride();
    const Shape in{1 + rng.below(2), 3, stride * (1 + rng.below(2)), stride * (1 + rng.below(2))};
    const ModelGraph g = make_spfnet_graph(c);
    auto params = ParamStore<float>::init(g, rng.bits());
    const auto traced = trace_shapes(g, in);
    const auto acts = run_graph<float>(g, params, std::vector<Tensor<float>>{Tensor<float>::zeros(in)}, Mode::Eval);
    for (std::size_t k = 0; k < g.layers.size(); ++k) {
      if (traced[k] != acts[k].shape()) {
        ok = false;
        where = g.layers[k].name;
      }
    }
    ok = ok && acts[g.output].shape() == Shape{in.n, c.num_classes, in.h, in.w};
  }
  rep.lines.push_back({"shape", "trace_matches_execution", ok, "configs=10" + (where.empty() ? "" : " first mismatch " + where)});

  // ESAM drop-in contract at the stage shapes of a full-size and a toy trace.
  ok = true;
  std::ostringstream shapes;
  BackboneConfig full;
  full.variant = BackboneVariant::L;
  for (const Shape& s : stage_shapes(full, {1, 3, 512, 1024})) {
    EsamConfig e;
    e.channels = s.c;
    const auto tr = trace_shapes(make_esam_graph(e), s);
    ok = ok && tr.back() == s;
    shapes << ' ' << s.c << 'x' << s.h << 'x' << s.w;
  }
  BackboneConfig toy;
  toy.width_multiplier = 0.125;
  double worst_sum = 0.0;
  for (const Shape& s : stage_shapes(toy, {2, 3, 64, 64})) {
    EsamConfig e;
    e.channels = s.c;
    const ModelGraph g = make_esam_graph(e);
    auto p = ParamStore<double>::init(g, rng.bits());
    const auto acts = run_graph<double>(g, p, std::vector<Tensor<double>>{random_tensor<double>(s, rng)}, Mode::Train);
    ok = ok && acts[g.output].shape() == s;
    const auto& a = acts[g.tap("attention_map")];
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t q = 0; q < s.plane(); ++q) {
        double sum_c = 0.0;
        for (std::size_t c = 0; c < s.c; ++c) sum_c += a.data()[(n * s.c + c) * s.plane() + q];
        worst_sum = std::max(worst_sum, std::abs(sum_c - 1.0));
      }
    }
  }
  ok = ok && worst_sum <= 1e-6;
  rep.lines.push_back({"shape", "esam_drop_in", ok, "512x1024 L stages" + shapes.str() + "; toy 64x64; attention sum err=" + sci(worst_sum)});
  return rep;
}

}  // namespace pyrafuse
