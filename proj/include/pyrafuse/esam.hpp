#pragma once

#include <string>

#include "pyrafuse/graph.hpp"
#include "pyrafuse/model.hpp"

namespace pyrafuse {

struct EsamConfig {
  std::size_t channels = 64;
  std::size_t shuffle_groups = 2;
  int stage = 2;
  // Ablation hook: replace the learned attention map with a constant 1/C.
  bool uniform_attention = false;

  void validate() const {
    if (channels == 0 || channels % 2 != 0) {
      throw ShapeError("esam: channel count " + std::to_string(channels) + " must be even");
    }
    if (shuffle_groups == 0 || channels % shuffle_groups != 0) {
      throw ShapeError("esam: channels not divisible by shuffle_groups");
    }
  }
};

struct EsamNodes {
  std::size_t upper;
  std::size_t attention_map;
  std::size_t attention;  // shuffled attention branch output
  std::size_t out;
};

/// Appends one ESAM block.
///
/// Upper branch: 1x1 conv then 3x3 depthwise conv, each with BN + PReLU.
/// Attention branch: the two channel halves each go through a 1x1 depthwise
/// conv, a shape-preserving 3x3 max pool and a 1x1 pointwise conv widening
/// C/2 to C (BN + PReLU after each conv). The two maps are summed and
/// softmaxed over channels to give A; the branch output is
/// channel_shuffle(A * x + x). The block returns upper + attention.
inline EsamNodes add_esam(GraphBuilder& b, std::size_t x, const EsamConfig& cfg, const std::string& prefix) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  if (b.channels(x) != c) {
    throw ShapeError("esam '" + prefix + "': input has " + std::to_string(b.channels(x)) +
                     " channels, config expects " + std::to_string(c));
  }
  using Act = GraphBuilder::Act;
  EsamNodes n{};
  std::size_t u = b.conv_bn_act(prefix + ".upper.pw", x, ConvSpec::square(c, c, 1), Act::PReLU);
  n.upper = b.conv_bn_act(prefix + ".upper.dw", u, ConvSpec::square(c, c, 3, 1, 1, c), Act::PReLU);

  const std::size_t half = c / 2;
  std::size_t attn;
  if (cfg.uniform_attention) {
    attn = b.uniform(prefix + ".attn.uniform", x);
  } else {
    std::vector<std::size_t> maps;
    for (std::size_t g = 0; g < 2; ++g) {
      const std::string p = prefix + ".attn.g" + std::to_string(g + 1);
      std::size_t a = b.slice(p + ".split", x, g * half, half);
      a = b.conv_bn_act(p + ".dw", a, ConvSpec::square(half, half, 1, 1, 1, half), Act::PReLU);
      a = b.max_pool(p + ".mp", a, PoolSpec::square(3, 1, 1));
      a = b.conv_bn_act(p + ".pw", a, ConvSpec::square(half, c, 1), Act::PReLU);
      maps.push_back(a);
    }
    attn = b.softmax(prefix + ".attn.softmax", b.add(prefix + ".attn.sum", maps[0], maps[1]));
  }
  n.attention_map = attn;
  const std::size_t weighted = b.mul(prefix + ".attn.mul", attn, x);
  const std::size_t residual = b.add(prefix + ".attn.res", weighted, x);
  n.attention = b.channel_shuffle(prefix + ".attn.shuffle", residual, cfg.shuffle_groups);
  n.out = b.add(prefix + ".out", n.attention, n.upper);
  return n;
}

inline ModelGraph make_esam_graph(const EsamConfig& cfg) {
  GraphBuilder b;
  const std::size_t x = b.input("input", cfg.channels);
  const EsamNodes n = add_esam(b, x, cfg, "esam");
  b.tap("upper", n.upper);
  b.tap("attention_map", n.attention_map);
  b.tap("attention", n.attention);
  b.tap("out", n.out);
  return b.finish(n.out);
}

template <class T>
std::vector<Tensor<T>> run_esam(const Tensor<T>& f, const EsamConfig& cfg, ParamStore<T>& params, Mode mode) {
  const ModelGraph g = make_esam_graph(cfg);
  return run_graph<T>(g, params, std::span<const Tensor<T>>(&f, 1), mode);
}

template <class T>
Tensor<T> esam_upper(const Tensor<T>& f, const EsamConfig& cfg, ParamStore<T>& params, Mode mode = Mode::Train) {
  const ModelGraph g = make_esam_graph(cfg);
  return run_graph<T>(g, params, std::span<const Tensor<T>>(&f, 1), mode)[g.tap("upper")];
}

template <class T>
Tensor<T> esam_attention(const Tensor<T>& f, const EsamConfig& cfg, ParamStore<T>& params, Mode mode = Mode::Train) {
  const ModelGraph g = make_esam_graph(cfg);
  return run_graph<T>(g, params, std::span<const Tensor<T>>(&f, 1), mode)[g.tap("attention")];
}

template <class T>
Tensor<T> esam_forward(const Tensor<T>& f, const EsamConfig& cfg, ParamStore<T>& params, Mode mode = Mode::Train) {
  const ModelGraph g = make_esam_graph(cfg);
  return run_graph<T>(g, params, std::span<const Tensor<T>>(&f, 1), mode)[g.output];
}

}  // namespace pyrafuse
