#pragma once

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pyrafuse/graph.hpp"
#include "pyrafuse/nn/activation.hpp"
#include "pyrafuse/nn/conv.hpp"
#include "pyrafuse/nn/norm.hpp"
#include "pyrafuse/nn/pool.hpp"
#include "pyrafuse/nn/resize.hpp"
#include "pyrafuse/nn/shuffle.hpp"
#include "pyrafuse/rng.hpp"

namespace pyrafuse {

enum class Mode { Train, Eval };

template <class T>
struct ConvParams {
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
};

/// Parameters for every layer of one ModelGraph, indexed like graph.layers.
template <class T>
class ParamStore {
 public:
  using Slot = std::variant<std::monostate, ConvParams<T>, BatchNormState<T>, PReLUState<T>>;

  ParamStore() = default;

  /// He-uniform fan-in conv weights, zero biases, BN gamma = 1 / beta = 0,
  /// PReLU slope 0.25.
  static ParamStore init(const ModelGraph& g, std::uint64_t seed) {
    ParamStore p = shaped(g);
    Rng rng(seed);
    for (auto& slot : p.slots_) {
      if (auto* c = std::get_if<ConvParams<T>>(&slot)) {
        const Shape ws = c->weight.shape();
        const double fan_in = static_cast<double>(ws.c * ws.h * ws.w);
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : c->weight.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      }
    }
    return p;
  }

  /// Every trainable scalar zero (BN running stats stay at identity).
  static ParamStore zeros(const ModelGraph& g) {
    ParamStore p = shaped(g);
    for (auto t : p.trainable()) std::fill(t.data().begin(), t.data().end(), T(0));
    return p;
  }

  std::size_t size() const { return slots_.size(); }
  Slot& slot(std::size_t layer) { return slots_.at(layer); }
  const Slot& slot(std::size_t layer) const { return slots_.at(layer); }
  ConvParams<T>& conv(std::size_t layer) { return std::get<ConvParams<T>>(slots_.at(layer)); }
  BatchNormState<T>& bn(std::size_t layer) { return std::get<BatchNormState<T>>(slots_.at(layer)); }
  PReLUState<T>& prelu(std::size_t layer) { return std::get<PReLUState<T>>(slots_.at(layer)); }

  /// Trainable tensors in layer order: conv weight, bias; BN gamma, beta; PReLU alpha.
  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& slot : slots_) {
      if (const auto* c = std::get_if<ConvParams<T>>(&slot)) {
        out.push_back(c->weight);
        if (c->bias) out.push_back(*c->bias);
      } else if (const auto* b = std::get_if<BatchNormState<T>>(&slot)) {
        out.push_back(b->gamma);
        out.push_back(b->beta);
      } else if (const auto* a = std::get_if<PReLUState<T>>(&slot)) {
        out.push_back(a->alpha);
      }
    }
    return out;
  }

  /// Running statistics, two vectors per BN layer, in layer order.
  std::vector<std::vector<T>*> buffers() {
    std::vector<std::vector<T>*> out;
    for (auto& slot : slots_) {
      if (auto* b = std::get_if<BatchNormState<T>>(&slot)) {
        out.push_back(&b->running_mean);
        out.push_back(&b->running_var);
      }
    }
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : trainable()) n += t.numel();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto t : trainable()) t.set_requires_grad(on);
  }
  void zero_grad() {
    for (const auto& t : trainable()) t.zero_grad();
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    out.slots_.reserve(slots_.size());
    for (const auto& slot : slots_) {
      if (const auto* c = std::get_if<ConvParams<T>>(&slot)) {
        ConvParams<U> cu{c->weight.template cast<U>(), std::nullopt};
        if (c->bias) cu.bias = c->bias->template cast<U>();
        out.slots_.emplace_back(std::move(cu));
      } else if (const auto* b = std::get_if<BatchNormState<T>>(&slot)) {
        BatchNormState<U> bu;
        bu.gamma = b->gamma.template cast<U>();
        bu.beta = b->beta.template cast<U>();
        bu.running_mean.assign(b->running_mean.begin(), b->running_mean.end());
        bu.running_var.assign(b->running_var.begin(), b->running_var.end());
        bu.momentum = static_cast<U>(b->momentum);
        bu.eps = static_cast<U>(b->eps);
        bu.training = b->training;
        out.slots_.emplace_back(std::move(bu));
      } else if (const auto* a = std::get_if<PReLUState<T>>(&slot)) {
        out.slots_.emplace_back(PReLUState<U>{a->alpha.template cast<U>()});
      } else {
        out.slots_.emplace_back(std::monostate{});
      }
    }
    return out;
  }

  ParamStore clone() const { return cast<T>(); }

 private:
  template <class U>
  friend class ParamStore;

  static ParamStore shaped(const ModelGraph& g) {
    ParamStore p;
    p.slots_.reserve(g.layers.size());
    for (const auto& l : g.layers) {
      switch (l.kind) {
        case LayerKind::Conv: {
          ConvParams<T> c{Tensor<T>::zeros(l.conv.weight_shape()), std::nullopt};
          if (l.conv.bias) c.bias = Tensor<T>::zeros({1, l.conv.out_channels, 1, 1});
          p.slots_.emplace_back(std::move(c));
          break;
        }
        case LayerKind::BatchNorm: p.slots_.emplace_back(BatchNormState<T>::identity(l.channels)); break;
        case LayerKind::PReLU: p.slots_.emplace_back(PReLUState<T>::constant(l.channels, T(0.25))); break;
        default: p.slots_.emplace_back(std::monostate{}); break;
      }
    }
    return p;
  }

  std::vector<Slot> slots_;
};

/// Evaluates every layer of `g` in order and returns all activations.
template <class T>
std::vector<Tensor<T>> run_graph(const ModelGraph& g, ParamStore<T>& params, std::span<const Tensor<T>> inputs,
                                 Mode mode) {
  if (inputs.size() != g.inputs.size()) {
    throw ShapeError("graph expects " + std::to_string(g.inputs.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  if (params.size() != g.layers.size()) throw std::invalid_argument("parameter store does not match graph");
  std::vector<Tensor<T>> act(g.layers.size());
  std::size_t next_input = 0;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    const auto in = [&](std::size_t k) -> const Tensor<T>& { return act[l.inputs.at(k)]; };
    try {
      switch (l.kind) {
        case LayerKind::Input: {
          const Tensor<T>& x = inputs[next_input++];
          if (x.shape().c != l.channels) {
            throw ShapeError("expected " + std::to_string(l.channels) + " channels, got " + x.shape().str());
          }
          act[i] = x;
          break;
        }
        case LayerKind::Conv: {
          auto& c = params.conv(i);
          act[i] = conv2d(in(0), c.weight, c.bias, l.conv);
          break;
        }
        case LayerKind::BatchNorm: {
          auto& st = params.bn(i);
          st.training = mode == Mode::Train;
          act[i] = batch_norm(in(0), st);
          break;
        }
        case LayerKind::PReLU: act[i] = prelu(in(0), params.prelu(i)); break;
        case LayerKind::ReLU: act[i] = relu(in(0)); break;
        case LayerKind::MaxPool: act[i] = max_pool(in(0), l.pool); break;
        case LayerKind::AdaptiveAvgPool: act[i] = adaptive_avg_pool(in(0), l.out_hw); break;
        case LayerKind::PixelShuffle: act[i] = pixel_shuffle(in(0), l.factor); break;
        case LayerKind::PixelUnshuffle: act[i] = pixel_unshuffle(in(0), l.factor); break;
        case LayerKind::ChannelShuffle: act[i] = channel_shuffle(in(0), l.factor); break;
        case LayerKind::Bilinear: {
          const Dims2 hw = l.inputs.size() > 1 ? Dims2{in(1).shape().h, in(1).shape().w} : l.out_hw;
          act[i] = (hw == Dims2{in(0).shape().h, in(0).shape().w} && !l.align_corners)
                       ? in(0)
                       : bilinear_upsample(in(0), hw, l.align_corners);
          break;
        }
        case LayerKind::Softmax: act[i] = softmax_channels(in(0)); break;
        case LayerKind::Add: act[i] = add(in(0), in(1)); break;
        case LayerKind::Mul: act[i] = mul(in(0), in(1)); break;
        case LayerKind::Concat: {
          std::vector<Tensor<T>> parts;
          for (std::size_t k = 0; k < l.inputs.size(); ++k) parts.push_back(in(k));
          act[i] = concat_channels(parts);
          break;
        }
        case LayerKind::Slice: act[i] = slice_channels(in(0), l.begin, l.count); break;
        case LayerKind::Uniform: {
          const Shape s = in(0).shape();
          act[i] = Tensor<T>::full(s, s.c ? T(1) / static_cast<T>(s.c) : T(0));
          break;
        }
      }
    } catch (const GraphShapeError&) {
      throw;
    } catch (const ShapeError& e) {
      throw GraphShapeError(i, l.name, e.what());
    }
  }
  return act;
}

/// A graph bundled with its parameters.
template <class T>
struct Model {
  ModelGraph graph;
  ParamStore<T> params;

  std::vector<Tensor<T>> run(const Tensor<T>& x, Mode mode = Mode::Train) {
    return run_graph<T>(graph, params, std::span<const Tensor<T>>(&x, 1), mode);
  }
  std::vector<Tensor<T>> run(std::span<const Tensor<T>> xs, Mode mode = Mode::Train) {
    return run_graph<T>(graph, params, xs, mode);
  }
  Tensor<T> forward(const Tensor<T>& x, Mode mode = Mode::Train) { return run(x, mode)[graph.output]; }
  Tensor<T> tap(const std::vector<Tensor<T>>& acts, const std::string& name) const { return acts.at(graph.tap(name)); }
};

template <class T>
Model<T> instantiate(ModelGraph g, std::uint64_t seed) {
  ParamStore<T> p = ParamStore<T>::init(g, seed);
  return Model<T>{std::move(g), std::move(p)};
}

}  // namespace pyrafuse
