#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "pyrafuse/esam.hpp"
#include "pyrafuse/graph.hpp"
#include "pyrafuse/model.hpp"
#include "pyrafuse/pyramid.hpp"

namespace pyrafuse {

enum class BackboneVariant { H, L };

inline const char* variant_name(BackboneVariant v) { return v == BackboneVariant::H ? "H" : "L"; }

inline std::size_t scaled_width(std::size_t nominal, double multiplier) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(nominal) * multiplier)));
}

struct BackboneConfig {
  int depth = 34;
  BackboneVariant variant = BackboneVariant::L;
  std::size_t in_channels = 3;
  std::size_t stem_channels = 64;
  std::array<std::size_t, 4> stage_widths{64, 128, 256, 512};
  double width_multiplier = 1.0;

  std::array<std::size_t, 4> blocks() const {
    if (depth == 18) return {2, 2, 2, 2};
    if (depth == 34) return {3, 4, 6, 3};
    throw std::invalid_argument("backbone: unsupported depth " + std::to_string(depth) + " (expected 18 or 34)");
  }
  std::size_t stem() const { return scaled_width(stem_channels, width_multiplier); }
  std::size_t width(int stage) const { return stage == 1 ? stem() : scaled_width(stage_widths.at(stage - 2), width_multiplier); }
  /// Cumulative downsampling of F_5.
  std::size_t stride() const { return variant == BackboneVariant::L ? 32 : 16; }

  void validate() const {
    blocks();
    if (!(width_multiplier > 0.0)) throw std::invalid_argument("backbone: width_multiplier must be positive");
    if (in_channels == 0) throw std::invalid_argument("backbone: in_channels must be >= 1");
  }
};

/// Node ids of F_1..F_5.
struct BackboneTaps {
  std::array<std::size_t, 5> f{};
  std::size_t operator[](int stage) const { return f.at(stage - 1); }
};

inline std::size_t add_basic_block(GraphBuilder& b, std::size_t x, std::size_t out, std::size_t stride,
                                   const std::string& p) {
  using Act = GraphBuilder::Act;
  const std::size_t in = b.channels(x);
  std::size_t y = b.conv_bn_act(p + ".a", x, ConvSpec::square(in, out, 3, stride), Act::ReLU);
  y = b.conv_bn_act(p + ".b", y, ConvSpec::square(out, out, 3), Act::None);
  std::size_t shortcut = x;
  if (stride != 1 || in != out) shortcut = b.conv_bn_act(p + ".down", x, ConvSpec::square(in, out, 1, stride), Act::None);
  return b.relu(p + ".out", b.add(p + ".sum", y, shortcut));
}

/// Residual encoder. F_1 is the stride-2 stem; the L variant max-pools
/// before stage 2, the H variant does not, so its F_2..F_5 are twice as large.
inline BackboneTaps add_backbone(GraphBuilder& b, std::size_t image, const BackboneConfig& cfg,
                                 const std::string& prefix = "backbone") {
  cfg.validate();
  using Act = GraphBuilder::Act;
  BackboneTaps t;
  std::size_t x = b.conv_bn_act(prefix + ".stem", image, ConvSpec::square(b.channels(image), cfg.stem(), 7, 2), Act::ReLU);
  t.f[0] = x;
  if (cfg.variant == BackboneVariant::L) x = b.max_pool(prefix + ".pool", x, PoolSpec::square(3, 2, 1));
  const auto blocks = cfg.blocks();
  for (int stage = 2; stage <= 5; ++stage) {
    const std::size_t w = cfg.width(stage);
    for (std::size_t k = 0; k < blocks[stage - 2]; ++k) {
      const std::size_t stride = (stage > 2 && k == 0) ? 2 : 1;
      x = add_basic_block(b, x, w, stride, prefix + ".stage" + std::to_string(stage) + "." + std::to_string(k));
    }
    t.f[stage - 1] = x;
  }
  return t;
}

inline ModelGraph make_backbone_graph(const BackboneConfig& cfg) {
  GraphBuilder b;
  const std::size_t x = b.input("image", cfg.in_channels);
  const BackboneTaps t = add_backbone(b, x, cfg);
  for (int j = 1; j <= 5; ++j) b.tap("F" + std::to_string(j), t[j]);
  return b.finish(t[5]);
}

template <class T>
Model<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  return instantiate<T>(make_backbone_graph(cfg), seed);
}

/// Upsamples each part to the resolution of `ref` (or leaves it if it is `ref`),
/// concatenates in order and fuses with a 1x1 conv. With `normalize` the
/// fusion is conv + BN + PReLU, otherwise a biased conv.
inline std::size_t add_fuse_skips(GraphBuilder& b, const std::vector<std::size_t>& parts, std::size_t ref,
                                  std::size_t out_channels, const std::string& prefix, bool normalize) {
  if (parts.empty()) throw ShapeError("fuse_skips: empty input list");
  std::vector<std::size_t> up;
  std::size_t c = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t p = parts[i];
    up.push_back(p == ref ? p : b.bilinear_like(prefix + ".up" + std::to_string(i), p, ref));
    c += b.channels(p);
  }
  const std::size_t cat = b.concat(prefix + ".cat", up);
  if (normalize) return b.conv_bn_act(prefix, cat, ConvSpec::square(c, out_channels, 1), GraphBuilder::Act::PReLU);
  return b.conv(prefix + ".conv", cat, ConvSpec::square(c, out_channels, 1, 1, 1, 1, true));
}

/// Standalone multi-scale fusion: one graph input per stage map plus a
/// reference input whose spatial dims define the target.
inline ModelGraph make_fuse_skips_graph(const std::vector<std::size_t>& stage_channels, std::size_t out_channels) {
  if (stage_channels.empty()) throw ShapeError("fuse_skips: empty input list");
  GraphBuilder b;
  std::vector<std::size_t> parts;
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    parts.push_back(b.input("skip" + std::to_string(i), stage_channels[i]));
  }
  const std::size_t ref = b.input("target", 1);
  std::vector<std::size_t> up;
  std::size_t c = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    up.push_back(b.bilinear_like("fuse.up" + std::to_string(i), parts[i], ref));
    c += stage_channels[i];
  }
  const std::size_t cat = b.concat("fuse.cat", up);
  b.tap("concat", cat);
  const std::size_t y = b.conv("fuse.conv", cat, ConvSpec::square(c, out_channels, 1, 1, 1, 1, true));
  return b.finish(y);
}

/// Runs the standalone fusion; returns {concatenated upsampled maps, fused output}.
template <class T>
std::pair<Tensor<T>, Tensor<T>> fuse_skips(const std::vector<Tensor<T>>& stage_outs, Dims2 target_hw,
                                           ParamStore<T>& params, const ModelGraph& g) {
  if (stage_outs.empty()) throw ShapeError("fuse_skips: empty input list");
  std::vector<Tensor<T>> in = stage_outs;
  in.push_back(Tensor<T>::zeros({stage_outs.front().shape().n, 1, target_hw.first, target_hw.second}));
  const auto acts = run_graph<T>(g, params, std::span<const Tensor<T>>(in), Mode::Train);
  return {acts[g.tap("concat")], acts[g.output]};
}

struct SpfnetConfig {
  BackboneConfig backbone;
  std::size_t num_classes = 19;
  bool spfm_enabled = true;
  SpfmConfig spfm;  // in_channels and out_channels are derived from the backbone
  std::vector<int> esam_stages{2, 3, 4, 5};
  std::size_t shuffle_groups = 2;
  bool uniform_attention = false;
  std::array<std::size_t, 3> decoder_widths{512, 256, 128};
  bool additive_skips = false;
  bool concat_fusion = true;

  std::size_t decoder_width(std::size_t k) const { return scaled_width(decoder_widths.at(k), backbone.width_multiplier); }

  SpfmConfig resolved_spfm() const {
    SpfmConfig s = spfm;
    s.in_channels = backbone.width(5);
    s.out_channels = s.out_channels ? s.out_channels : s.in_channels;
    return s;
  }

  EsamConfig esam(int stage) const {
    EsamConfig e;
    e.channels = backbone.width(stage);
    e.shuffle_groups = shuffle_groups;
    e.stage = stage;
    e.uniform_attention = uniform_attention;
    return e;
  }

  void validate() const {
    backbone.validate();
    if (num_classes == 0) throw std::invalid_argument("spfnet: num_classes must be >= 1");
    std::set<int> seen;
    for (int s : esam_stages) {
      if (s < 2 || s > 5) throw std::invalid_argument("spfnet: esam stage " + std::to_string(s) + " outside 2..5");
      if (!seen.insert(s).second) throw std::invalid_argument("spfnet: esam stage " + std::to_string(s) + " repeated");
    }
    if (spfm_enabled) resolved_spfm().validate();
  }
};

/// Full network: backbone, ESAM on the configured stages, SPFM (or a 1x1
/// center block) on F_5, three subpixel decoder stages, optional additive
/// skips, multi-scale concat fusion and a classifier resized to the input.
inline ModelGraph make_spfnet_graph(const SpfnetConfig& cfg) {
  cfg.validate();
  using Act = GraphBuilder::Act;
  GraphBuilder b;
  const std::size_t image = b.input("image", cfg.backbone.in_channels);
  const BackboneTaps f = add_backbone(b, image, cfg.backbone);
  for (int j = 1; j <= 5; ++j) b.tap("F" + std::to_string(j), f[j]);

  std::array<std::size_t, 4> skip{};
  for (int j = 2; j <= 5; ++j) {
    std::size_t s = f[j];
    if (std::find(cfg.esam_stages.begin(), cfg.esam_stages.end(), j) != cfg.esam_stages.end()) {
      const EsamNodes n = add_esam(b, f[j], cfg.esam(j), "esam" + std::to_string(j));
      b.tap("esam" + std::to_string(j), n.out);
      b.tap("esam" + std::to_string(j) + ".attention_map", n.attention_map);
      s = n.out;
    }
    skip[j - 2] = s;
  }

  const std::size_t c5 = b.channels(f[5]);
  std::size_t y = cfg.spfm_enabled ? add_spfm(b, f[5], cfg.resolved_spfm(), "spfm")
                                   : b.conv_bn_act("center", f[5], ConvSpec::square(c5, c5, 1), Act::PReLU);
  b.tap("center", y);

  for (std::size_t k = 0; k < cfg.decoder_widths.size(); ++k) {
    const std::string p = "decoder" + std::to_string(k + 1);
    const std::size_t w = cfg.decoder_width(k);
    y = b.conv(p + ".conv", y, ConvSpec::square(b.channels(y), 4 * w, 3));
    y = b.pixel_shuffle(p + ".ps", y, 2);
    y = b.batch_norm(p + ".bn", y);
    y = b.prelu(p + ".act", y);
    if (cfg.additive_skips) {
      for (std::size_t j = 0; j < skip.size(); ++j) {
        if (b.scale(skip[j]) == b.scale(y) && b.scale(y) != GraphBuilder::kUnknownScale) {
          const std::string sp = p + ".skip" + std::to_string(j + 2);
          const std::size_t s = b.conv_bn_act(sp, skip[j], ConvSpec::square(b.channels(skip[j]), w, 1), Act::None);
          y = b.add(sp + ".sum", y, s);
        }
      }
    }
  }
  b.tap("decoder", y);

  if (cfg.concat_fusion) {
    std::vector<std::size_t> parts(skip.begin(), skip.end());
    parts.push_back(y);
    y = add_fuse_skips(b, parts, y, cfg.decoder_width(cfg.decoder_widths.size() - 1), "fuse", true);
    b.tap("fused", y);
  }

  y = b.conv("classifier", y, ConvSpec::square(b.channels(y), cfg.num_classes, 1, 1, 1, 1, true));
  const std::size_t logits = b.bilinear_like("logits", y, image);
  b.tap("logits", logits);
  return b.finish(logits);
}

template <class T>
Model<T> build_spfnet(const SpfnetConfig& cfg, std::uint64_t seed) {
  return instantiate<T>(make_spfnet_graph(cfg), seed);
}

/// Validates input divisibility, then runs the network.
template <class T>
Tensor<T> spfnet_forward(const Tensor<T>& image, const SpfnetConfig& cfg, ParamStore<T>& params,
                         Mode mode = Mode::Train) {
  const std::size_t stride = cfg.backbone.stride();
  if (image.shape().h % stride != 0 || image.shape().w % stride != 0) {
    throw ShapeError("spfnet: input " + image.shape().str() + " not divisible by stride " + std::to_string(stride));
  }
  const ModelGraph g = make_spfnet_graph(cfg);
  return run_graph<T>(g, params, std::span<const Tensor<T>>(&image, 1), mode)[g.output];
}

}  // namespace pyrafuse
