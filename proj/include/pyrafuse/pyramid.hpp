#pragma once

#include <string>
#include <utility>

#include "pyrafuse/graph.hpp"
#include "pyrafuse/model.hpp"

namespace pyrafuse {

/// One reduced-pyramid-pooling block operating on a single channel split.
struct RppConfig {
  std::size_t split_channels = 128;
  Dims2 dilations{4, 8};
  std::size_t ps_factor = 2;
  std::size_t mid_channels = 0;  // 0 selects split_channels / 2

  std::size_t mid() const { return mid_channels ? mid_channels : split_channels / 2; }

  void validate() const {
    if (split_channels == 0) throw std::invalid_argument("rpp: split_channels must be >= 1");
    if (dilations.first == 0 || dilations.second == 0) throw std::invalid_argument("rpp: dilations must be positive");
    if (ps_factor != 2) throw std::invalid_argument("rpp: pixel shuffle factor is fixed at 2");
    if (mid() == 0) throw std::invalid_argument("rpp: mid_channels resolves to 0");
  }
};

/// Channel-split pyramid: s RPP blocks over contiguous channel groups, fused by a 1x1 conv.
struct SpfmConfig {
  std::size_t in_channels = 512;
  std::size_t s = 4;
  std::size_t out_channels = 0;  // 0 keeps in_channels
  Dims2 dilations{4, 8};
  std::size_t mid_channels = 0;  // per split; 0 selects split / 2

  std::size_t split_channels() const { return in_channels / s; }
  std::size_t out() const { return out_channels ? out_channels : in_channels; }

  RppConfig per_split() const {
    RppConfig r;
    r.split_channels = split_channels();
    r.dilations = dilations;
    r.mid_channels = mid_channels;
    return r;
  }

  void validate() const {
    if (s == 0 || in_channels % s != 0) {
      throw ShapeError("spfm: in_channels " + std::to_string(in_channels) + " not divisible by s = " + std::to_string(s));
    }
    per_split().validate();
  }
};

/// Appends an RPP block reading node `x`; returns the block output
/// (mid channels at twice the input resolution).
///
///   path_d = PReLU(BN(dilated 3x3 conv, rate d, to 4*mid)) then pixel shuffle x2, for d in dilations
///   refined = [1x1, 3x3, 1x1 conv + BN + PReLU](concat(path_a, path_b))
///   context = 1x1 conv(global average pool(x))
///   out = refined + broadcast(context)
inline std::size_t add_rpp(GraphBuilder& b, std::size_t x, const RppConfig& cfg, const std::string& prefix) {
  cfg.validate();
  if (b.channels(x) != cfg.split_channels) {
    throw ShapeError("rpp '" + prefix + "': input has " + std::to_string(b.channels(x)) + " channels, config expects " +
                     std::to_string(cfg.split_channels));
  }
  const std::size_t mid = cfg.mid();
  const std::size_t r = cfg.ps_factor;
  using Act = GraphBuilder::Act;
  std::vector<std::size_t> paths;
  for (std::size_t d : {cfg.dilations.first, cfg.dilations.second}) {
    const std::string p = prefix + ".dil" + std::to_string(d);
    std::size_t y = b.conv_bn_act(p, x, ConvSpec::square(cfg.split_channels, r * r * mid, 3, 1, d), Act::PReLU);
    paths.push_back(b.pixel_shuffle(p + ".ps", y, r));
  }
  std::size_t y = b.concat(prefix + ".cat", paths);
  y = b.conv_bn_act(prefix + ".refine1", y, ConvSpec::square(2 * mid, mid, 1), Act::PReLU);
  y = b.conv_bn_act(prefix + ".refine3", y, ConvSpec::square(mid, mid, 3), Act::PReLU);
  y = b.conv_bn_act(prefix + ".refine1b", y, ConvSpec::square(mid, mid, 1), Act::PReLU);
  std::size_t ctx = b.adaptive_avg_pool(prefix + ".apool", x, {1, 1});
  ctx = b.conv(prefix + ".apool.conv", ctx, ConvSpec::square(cfg.split_channels, mid, 1, 1, 1, 1, true));
  return b.add(prefix + ".out", y, ctx);
}

inline std::size_t add_spfm(GraphBuilder& b, std::size_t x, const SpfmConfig& cfg, const std::string& prefix = "spfm") {
  cfg.validate();
  if (b.channels(x) != cfg.in_channels) {
    throw ShapeError("spfm: input has " + std::to_string(b.channels(x)) + " channels, config expects " +
                     std::to_string(cfg.in_channels));
  }
  const RppConfig rc = cfg.per_split();
  const std::size_t split = cfg.split_channels();
  std::vector<std::size_t> outs;
  for (std::size_t i = 0; i < cfg.s; ++i) {
    const std::string p = prefix + ".rpp" + std::to_string(i);
    const std::size_t part = cfg.s == 1 ? x : b.slice(p + ".split", x, i * split, split);
    outs.push_back(add_rpp(b, part, rc, p));
  }
  const std::size_t cat = b.concat(prefix + ".cat", outs);
  return b.conv(prefix + ".fuse", cat, ConvSpec::square(cfg.s * rc.mid(), cfg.out(), 1, 1, 1, 1, true));
}

inline ModelGraph make_rpp_graph(const RppConfig& cfg) {
  GraphBuilder b;
  const std::size_t x = b.input("input", cfg.split_channels);
  const std::size_t y = add_rpp(b, x, cfg, "rpp");
  b.tap("out", y);
  return b.finish(y);
}

inline ModelGraph make_spfm_graph(const SpfmConfig& cfg) {
  GraphBuilder b;
  const std::size_t x = b.input("input", cfg.in_channels);
  const std::size_t y = add_spfm(b, x, cfg);
  b.tap("out", y);
  return b.finish(y);
}

template <class T>
Tensor<T> rpp_forward(const Tensor<T>& f, const RppConfig& cfg, ParamStore<T>& params, Mode mode = Mode::Train) {
  const ModelGraph g = make_rpp_graph(cfg);
  return run_graph<T>(g, params, std::span<const Tensor<T>>(&f, 1), mode)[g.output];
}

template <class T>
Tensor<T> spfm_forward(const Tensor<T>& f5, const SpfmConfig& cfg, ParamStore<T>& params, Mode mode = Mode::Train) {
  const ModelGraph g = make_spfm_graph(cfg);
  return run_graph<T>(g, params, std::span<const Tensor<T>>(&f5, 1), mode)[g.output];
}

/// Closed-form trainable scalar count of an SPFM, independent of graph construction.
inline std::size_t spfm_param_count(const SpfmConfig& cfg) {
  cfg.validate();
  const RppConfig rc = cfg.per_split();
  const std::size_t in = rc.split_channels;
  const std::size_t m = rc.mid();
  const std::size_t wide = rc.ps_factor * rc.ps_factor * m;
  const auto bn_prelu = [](std::size_t c) { return 3 * c; };
  const std::size_t dilated = 2 * (in * wide * 9 + bn_prelu(wide));
  const std::size_t refine = (2 * m * m + bn_prelu(m)) + (m * m * 9 + bn_prelu(m)) + (m * m + bn_prelu(m));
  const std::size_t context = in * m + m;
  const std::size_t rpp = dilated + refine + context;
  const std::size_t fuse = cfg.s * m * cfg.out() + cfg.out();
  return cfg.s * rpp + fuse;
}

}  // namespace pyrafuse
