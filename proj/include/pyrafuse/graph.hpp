#pragma once

#include <algorithm>
#include <climits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pyrafuse/nn/conv.hpp"
#include "pyrafuse/nn/pool.hpp"
#include "pyrafuse/nn/shuffle.hpp"
#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

enum class LayerKind {
  Input,
  Conv,
  BatchNorm,
  PReLU,
  ReLU,
  MaxPool,
  AdaptiveAvgPool,
  PixelShuffle,
  PixelUnshuffle,
  ChannelShuffle,
  Bilinear,
  Softmax,
  Add,
  Mul,
  Concat,
  Slice,
  Uniform,  // same shape as its input, every entry 1/C
};

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::PReLU: return "prelu";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "max_pool";
    case LayerKind::AdaptiveAvgPool: return "adaptive_avg_pool";
    case LayerKind::PixelShuffle: return "pixel_shuffle";
    case LayerKind::PixelUnshuffle: return "pixel_unshuffle";
    case LayerKind::ChannelShuffle: return "channel_shuffle";
    case LayerKind::Bilinear: return "bilinear";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::Add: return "add";
    case LayerKind::Mul: return "mul";
    case LayerKind::Concat: return "concat";
    case LayerKind::Slice: return "slice";
    case LayerKind::Uniform: return "uniform";
  }
  return "?";
}

/// One node of a ModelGraph. Only the fields relevant to `kind` are read.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Input;
  std::vector<std::size_t> inputs;
  ConvSpec conv;               // Conv
  std::size_t channels = 0;    // Input, BatchNorm, PReLU: declared width
  PoolSpec pool;               // MaxPool
  Dims2 out_hw{0, 0};          // AdaptiveAvgPool; Bilinear with a fixed target
  std::size_t factor = 1;      // pixel (un)shuffle scale, channel shuffle groups
  std::size_t begin = 0;       // Slice
  std::size_t count = 0;       // Slice
  bool align_corners = false;  // Bilinear

  std::size_t param_count() const {
    switch (kind) {
      case LayerKind::Conv: return conv.param_count();
      case LayerKind::BatchNorm: return 2 * channels;
      case LayerKind::PReLU: return channels;
      default: return 0;
    }
  }
};

/// Layers in topological order (every input index precedes its consumer).
struct ModelGraph {
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> inputs;
  std::vector<std::pair<std::string, std::size_t>> taps;
  std::size_t output = 0;

  std::optional<std::size_t> find_tap(const std::string& name) const {
    for (const auto& [n, id] : taps) {
      if (n == name) return id;
    }
    return std::nullopt;
  }
  std::size_t tap(const std::string& name) const {
    if (auto id = find_tap(name)) return *id;
    throw std::out_of_range("model graph has no tap named '" + name + "'");
  }
  std::optional<std::size_t> find_layer(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == name) return i;
    }
    return std::nullopt;
  }
};

/// Error raised while propagating shapes, naming the offending layer.
class GraphShapeError : public ShapeError {
 public:
  GraphShapeError(std::size_t layer, const std::string& name, const std::string& what)
      : ShapeError("layer " + std::to_string(layer) + " '" + name + "': " + what), layer_(layer) {}
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

namespace detail {
inline void need_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": expected identical shapes, got " + a.str() + " and " + b.str());
}
inline void need_channels(const Shape& s, std::size_t c, const char* op) {
  if (s.c != c) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(c) + " channels, got " + std::to_string(s.c));
  }
}
}  // namespace detail

/// Output shape of `layer` given its input shapes, without touching data.
inline Shape infer_layer_shape(const LayerSpec& layer, const std::vector<Shape>& in) {
  switch (layer.kind) {
    case LayerKind::Input:
      detail::need_channels(in.at(0), layer.channels, "input");
      return in.at(0);
    case LayerKind::Conv: return conv_output_shape(in.at(0), layer.conv);
    case LayerKind::BatchNorm:
    case LayerKind::PReLU:
      detail::need_channels(in.at(0), layer.channels, kind_name(layer.kind));
      return in.at(0);
    case LayerKind::ReLU:
    case LayerKind::Uniform: return in.at(0);
    case LayerKind::Softmax:
      if (in.at(0).c == 0) throw ShapeError("softmax over an empty channel axis");
      return in.at(0);
    case LayerKind::MaxPool: return max_pool_output_shape(in.at(0), layer.pool);
    case LayerKind::AdaptiveAvgPool: {
      const Shape s = in.at(0);
      if (layer.out_hw.first == 0 || layer.out_hw.second == 0 || s.h == 0 || s.w == 0) {
        throw ShapeError("adaptive_avg_pool: invalid target or empty input");
      }
      return {s.n, s.c, layer.out_hw.first, layer.out_hw.second};
    }
    case LayerKind::PixelShuffle: return pixel_shuffle_shape(in.at(0), layer.factor);
    case LayerKind::PixelUnshuffle: return pixel_unshuffle_shape(in.at(0), layer.factor);
    case LayerKind::ChannelShuffle:
      check_channel_shuffle(in.at(0), layer.factor);
      return in.at(0);
    case LayerKind::Bilinear: {
      const Shape s = in.at(0);
      const Dims2 hw = in.size() > 1 ? Dims2{in[1].h, in[1].w} : layer.out_hw;
      if (hw.first == 0 || hw.second == 0 || s.h == 0 || s.w == 0) {
        throw ShapeError("bilinear: invalid target " + std::to_string(hw.first) + "x" + std::to_string(hw.second));
      }
      return {s.n, s.c, hw.first, hw.second};
    }
    case LayerKind::Add:
    case LayerKind::Mul: {
      detail::check_broadcastable(in.at(0), in.at(1), kind_name(layer.kind));
      return in.at(0);
    }
    case LayerKind::Concat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      Shape out = in[0];
      out.c = 0;
      for (const auto& s : in) {
        if (s.n != in[0].n || s.h != in[0].h || s.w != in[0].w) {
          throw ShapeError("concat: part " + s.str() + " does not match " + in[0].str() + " in batch/spatial dims");
        }
        out.c += s.c;
      }
      return out;
    }
    case LayerKind::Slice: {
      Shape s = in.at(0);
      if (layer.begin + layer.count > s.c) throw ShapeError("slice: channel range exceeds input width");
      s.c = layer.count;
      return s;
    }
  }
  throw ShapeError("unknown layer kind");
}

/// Incremental graph construction with per-node channel and resolution
/// bookkeeping. Resolution is tracked as log2 of the downsampling factor
/// relative to the graph input, so skips can be matched structurally.
class GraphBuilder {
 public:
  static constexpr int kUnknownScale = INT_MIN;

  std::size_t input(const std::string& name, std::size_t channels, int scale = 0) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::Input;
    l.channels = channels;
    const std::size_t id = push(std::move(l), channels, scale);
    graph_.inputs.push_back(id);
    return id;
  }

  std::size_t conv(const std::string& name, std::size_t x, ConvSpec spec) {
    if (spec.in_channels != channels(x)) {
      throw ShapeError("conv '" + name + "': spec expects " + std::to_string(spec.in_channels) +
                       " input channels, producer has " + std::to_string(channels(x)));
    }
    spec.validate();
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::Conv;
    l.inputs = {x};
    l.conv = spec;
    int sc = scale(x);
    if (sc != kUnknownScale) {
      if (spec.stride.first != spec.stride.second) {
        sc = kUnknownScale;
      } else if (spec.stride.first == 2) {
        sc += 1;
      } else if (spec.stride.first != 1) {
        sc = kUnknownScale;
      }
    }
    return push(std::move(l), spec.out_channels, sc);
  }

  /// Same-padded square conv reading its input width from the producer.
  std::size_t conv(const std::string& name, std::size_t x, std::size_t out, std::size_t k, std::size_t stride = 1,
                   std::size_t dilation = 1, std::size_t groups = 1, bool bias = false) {
    return conv(name, x, ConvSpec::square(channels(x), out, k, stride, dilation, groups, bias));
  }

  std::size_t batch_norm(const std::string& name, std::size_t x) { return per_channel(name, LayerKind::BatchNorm, x); }
  std::size_t prelu(const std::string& name, std::size_t x) { return per_channel(name, LayerKind::PReLU, x); }
  std::size_t relu(const std::string& name, std::size_t x) { return unary(name, LayerKind::ReLU, x); }
  std::size_t softmax(const std::string& name, std::size_t x) { return unary(name, LayerKind::Softmax, x); }
  std::size_t uniform(const std::string& name, std::size_t x) { return unary(name, LayerKind::Uniform, x); }

  std::size_t max_pool(const std::string& name, std::size_t x, PoolSpec p) {
    LayerSpec l = base(name, LayerKind::MaxPool, {x});
    l.pool = p;
    int sc = scale(x);
    if (sc != kUnknownScale) {
      if (p.stride.first == 2 && p.stride.second == 2) {
        sc += 1;
      } else if (!(p.stride.first == 1 && p.stride.second == 1)) {
        sc = kUnknownScale;
      }
    }
    return push(std::move(l), channels(x), sc);
  }

  std::size_t adaptive_avg_pool(const std::string& name, std::size_t x, Dims2 out_hw) {
    LayerSpec l = base(name, LayerKind::AdaptiveAvgPool, {x});
    l.out_hw = out_hw;
    return push(std::move(l), channels(x), kUnknownScale);
  }

  std::size_t pixel_shuffle(const std::string& name, std::size_t x, std::size_t r) {
    if (r == 0 || channels(x) % (r * r) != 0) {
      throw ShapeError("pixel_shuffle '" + name + "': " + std::to_string(channels(x)) + " channels not divisible by " +
                       std::to_string(r * r));
    }
    LayerSpec l = base(name, LayerKind::PixelShuffle, {x});
    l.factor = r;
    return push(std::move(l), channels(x) / (r * r), shifted(scale(x), r, -1));
  }

  std::size_t pixel_unshuffle(const std::string& name, std::size_t x, std::size_t r) {
    LayerSpec l = base(name, LayerKind::PixelUnshuffle, {x});
    l.factor = r;
    return push(std::move(l), channels(x) * r * r, shifted(scale(x), r, +1));
  }

  std::size_t channel_shuffle(const std::string& name, std::size_t x, std::size_t groups) {
    if (groups == 0 || channels(x) % groups != 0) {
      throw ShapeError("channel_shuffle '" + name + "': channels not divisible by groups");
    }
    LayerSpec l = base(name, LayerKind::ChannelShuffle, {x});
    l.factor = groups;
    return push(std::move(l), channels(x), scale(x));
  }

  /// Resize `x` to the spatial dims of `ref`.
  std::size_t bilinear_like(const std::string& name, std::size_t x, std::size_t ref) {
    LayerSpec l = base(name, LayerKind::Bilinear, {x, ref});
    return push(std::move(l), channels(x), scale(ref));
  }

  std::size_t bilinear_to(const std::string& name, std::size_t x, Dims2 hw) {
    LayerSpec l = base(name, LayerKind::Bilinear, {x});
    l.out_hw = hw;
    return push(std::move(l), channels(x), kUnknownScale);
  }

  std::size_t add(const std::string& name, std::size_t a, std::size_t b) { return binary(name, LayerKind::Add, a, b); }
  std::size_t mul(const std::string& name, std::size_t a, std::size_t b) { return binary(name, LayerKind::Mul, a, b); }

  std::size_t concat(const std::string& name, const std::vector<std::size_t>& xs) {
    if (xs.empty()) throw ShapeError("concat '" + name + "': empty input list");
    std::size_t c = 0;
    for (auto x : xs) c += channels(x);
    return push(base(name, LayerKind::Concat, xs), c, scale(xs.front()));
  }

  std::size_t slice(const std::string& name, std::size_t x, std::size_t begin, std::size_t count) {
    if (begin + count > channels(x)) throw ShapeError("slice '" + name + "': range exceeds producer width");
    LayerSpec l = base(name, LayerKind::Slice, {x});
    l.begin = begin;
    l.count = count;
    return push(std::move(l), count, scale(x));
  }

  enum class Act { None, ReLU, PReLU };

  /// conv -> BN -> activation, named prefix.conv / prefix.bn / prefix.act.
  std::size_t conv_bn_act(const std::string& prefix, std::size_t x, const ConvSpec& spec, Act act) {
    std::size_t y = conv(prefix + ".conv", x, spec);
    y = batch_norm(prefix + ".bn", y);
    if (act == Act::ReLU) y = relu(prefix + ".act", y);
    if (act == Act::PReLU) y = prelu(prefix + ".act", y);
    return y;
  }

  void tap(const std::string& name, std::size_t id) {
    for (auto& [n, i] : graph_.taps) {
      if (n == name) {
        i = id;
        return;
      }
    }
    graph_.taps.emplace_back(name, id);
  }

  std::size_t channels(std::size_t id) const { return channels_.at(id); }
  int scale(std::size_t id) const { return scales_.at(id); }
  std::size_t size() const { return graph_.layers.size(); }
  const ModelGraph& peek() const { return graph_; }

  ModelGraph finish(std::size_t output) {
    graph_.output = output;
    return std::move(graph_);
  }

 private:
  static int shifted(int sc, std::size_t r, int dir) {
    if (sc == kUnknownScale) return sc;
    int bits = 0;
    std::size_t v = r;
    while (v > 1 && v % 2 == 0) {
      v /= 2;
      ++bits;
    }
    return v == 1 ? sc + dir * bits : kUnknownScale;
  }

  LayerSpec base(const std::string& name, LayerKind kind, std::vector<std::size_t> inputs) const {
    for (auto i : inputs) {
      if (i >= graph_.layers.size()) throw std::out_of_range("layer '" + name + "' references a future layer");
    }
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.inputs = std::move(inputs);
    return l;
  }

  std::size_t unary(const std::string& name, LayerKind kind, std::size_t x) {
    return push(base(name, kind, {x}), channels(x), scale(x));
  }

  std::size_t per_channel(const std::string& name, LayerKind kind, std::size_t x) {
    LayerSpec l = base(name, kind, {x});
    l.channels = channels(x);
    return push(std::move(l), channels(x), scale(x));
  }

  std::size_t binary(const std::string& name, LayerKind kind, std::size_t a, std::size_t b) {
    if (channels(a) != channels(b)) {
      throw ShapeError(std::string(kind_name(kind)) + " '" + name + "': channel widths " +
                       std::to_string(channels(a)) + " and " + std::to_string(channels(b)) + " differ");
    }
    return push(base(name, kind, {a, b}), channels(a), scale(a));
  }

  std::size_t push(LayerSpec l, std::size_t c, int sc) {
    if (names_.count(l.name)) throw std::invalid_argument("duplicate layer name '" + l.name + "'");
    names_[l.name] = graph_.layers.size();
    graph_.layers.push_back(std::move(l));
    channels_.push_back(c);
    scales_.push_back(sc);
    return graph_.layers.size() - 1;
  }

  ModelGraph graph_;
  std::vector<std::size_t> channels_;
  std::vector<int> scales_;
  std::map<std::string, std::size_t> names_;
};

}  // namespace pyrafuse
