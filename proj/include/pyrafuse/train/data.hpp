#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pyrafuse/rng.hpp"
#include "pyrafuse/tensor.hpp"
#include "pyrafuse/train/loss.hpp"

namespace pyrafuse {

/// 8-bit interleaved image, row-major HWC.
struct Image {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> px;

  static Image blank(std::size_t h, std::size_t w, std::size_t c = 3, std::uint8_t v = 0) {
    return Image{h, w, c, std::vector<std::uint8_t>(h * w * c, v)};
  }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return px[(y * w + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return px[(y * w + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

/// Single-channel class-id map.
struct LabelImage {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> ids;

  static LabelImage blank(std::size_t h, std::size_t w, std::uint8_t v = 0) {
    return LabelImage{h, w, std::vector<std::uint8_t>(h * w, v)};
  }
  std::uint8_t& at(std::size_t y, std::size_t x) { return ids[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * w + x]; }
  bool operator==(const LabelImage&) const = default;
};

struct Sample {
  Image image;
  LabelImage label;
  bool operator==(const Sample&) const = default;
};

struct AugmentConfig {
  double scale_min = 0.75;
  double scale_max = 2.0;
  bool flip = true;
  std::size_t crop_h = 0;  // 0 keeps the source height
  std::size_t crop_w = 0;
  std::uint8_t ignore = 255;
};

/// One draw of the random geometric transform.
struct AugmentParams {
  double scale = 1.0;
  bool flip = false;
  double crop_y = 0.0;  // fraction of the available offset range, in [0, 1)
  double crop_x = 0.0;
};

inline AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  p.flip = cfg.flip && rng.bernoulli(0.5);
  p.crop_y = rng.uniform();
  p.crop_x = rng.uniform();
  return p;
}

/// Rescale (bilinear for the image, nearest for labels), optional horizontal
/// flip, then crop; regions beyond the rescaled frame are zero / ignore.
inline Sample apply_augment(const Sample& s, const AugmentParams& p, const AugmentConfig& cfg) {
  const Image& img = s.image;
  const LabelImage& lbl = s.label;
  if (img.h != lbl.h || img.w != lbl.w) throw ShapeError("augment: image and label sizes differ");
  const std::size_t sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.h * p.scale)));
  const std::size_t sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.w * p.scale)));
  const std::size_t ch = cfg.crop_h ? cfg.crop_h : img.h;
  const std::size_t cw = cfg.crop_w ? cfg.crop_w : img.w;
  const std::size_t oy = sh > ch ? static_cast<std::size_t>(p.crop_y * static_cast<double>(sh - ch + 1)) : 0;
  const std::size_t ox = sw > cw ? static_cast<std::size_t>(p.crop_x * static_cast<double>(sw - cw + 1)) : 0;
  const double ry = static_cast<double>(img.h) / static_cast<double>(sh);
  const double rx = static_cast<double>(img.w) / static_cast<double>(sw);

  Sample out{Image::blank(ch, cw, img.channels), LabelImage::blank(ch, cw, cfg.ignore)};
  for (std::size_t y = 0; y < ch; ++y) {
    const std::size_t ty = oy + y;
    if (ty >= sh) continue;
    const double fy = std::clamp((static_cast<double>(ty) + 0.5) * ry - 0.5, 0.0, static_cast<double>(img.h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - static_cast<double>(y0);
    const std::size_t ny = std::min(img.h - 1, static_cast<std::size_t>((static_cast<double>(ty) + 0.5) * ry));
    for (std::size_t x = 0; x < cw; ++x) {
      const std::size_t tx0 = ox + x;
      if (tx0 >= sw) continue;
      const std::size_t tx = p.flip ? sw - 1 - tx0 : tx0;
      const double fx = std::clamp((static_cast<double>(tx) + 0.5) * rx - 0.5, 0.0, static_cast<double>(img.w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                         wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
        out.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
      }
      const std::size_t nx = std::min(img.w - 1, static_cast<std::size_t>((static_cast<double>(tx) + 0.5) * rx));
      out.label.at(y, x) = lbl.at(ny, nx);
    }
  }
  return out;
}

inline Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(s, sample_augment(cfg, rng), cfg);
}

/// Colored geometric shapes on a textured background. Class 0 is background.
struct SynthSpec {
  std::size_t classes = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t train = 200;
  std::size_t val = 50;
  std::vector<double> target_freq{0.55, 0.15, 0.15, 0.15};

  void validate() const {
    if (classes < 2) throw std::invalid_argument("synth: need at least 2 classes");
    if (classes > 16) throw std::invalid_argument("synth: at most 16 classes supported");
    if (height < 8 || width < 8) throw std::invalid_argument("synth: images must be at least 8x8");
    if (target_freq.size() != classes) throw std::invalid_argument("synth: target_freq needs one entry per class");
    double sum = 0.0;
    for (double f : target_freq) {
      if (f < 0.0) throw std::invalid_argument("synth: negative target frequency");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("synth: target frequencies must sum to 1");
  }
};

struct Dataset {
  std::size_t classes = 0;
  std::vector<Sample> train;
  std::vector<Sample> val;
};

namespace detail {

inline std::array<int, 3> class_color(std::size_t k) {
  static constexpr std::array<std::array<int, 3>, 15> colors{{{220, 40, 40},
                                                              {40, 190, 60},
                                                              {50, 80, 230},
                                                              {235, 200, 40},
                                                              {200, 60, 210},
                                                              {40, 210, 210},
                                                              {240, 130, 30},
                                                              {120, 60, 20},
                                                              {250, 250, 250},
                                                              {20, 20, 20},
                                                              {140, 220, 140},
                                                              {120, 120, 240},
                                                              {250, 160, 200},
                                                              {90, 150, 60},
                                                              {180, 180, 60}}};
  return colors[(k - 1) % colors.size()];
}

inline bool inside_shape(std::size_t kind, double dy, double dx, double r) {
  switch (kind % 3) {
    case 0: return dy * dy + dx * dx <= r * r;
    case 1: return std::abs(dy) <= 0.8 * r && std::abs(dx) <= 1.1 * r;
    default: {
      // upward triangle with apex at -r and base at +r
      if (dy < -r || dy > r) return false;
      const double half = (dy + r) * 0.6;
      return std::abs(dx) <= half;
    }
  }
}

}  // namespace detail

/// One synthetic image. Shapes are painted onto background pixels only,
/// greedily for the class furthest below its target share.
inline Sample synth_sample(const SynthSpec& spec, Rng& rng) {
  const std::size_t h = spec.height, w = spec.width;
  const double area = static_cast<double>(h * w);
  Sample s{Image::blank(h, w), LabelImage::blank(h, w, 0)};

  const double fy = rng.uniform(0.1, 0.5), fx = rng.uniform(0.1, 0.5), phase = rng.uniform(0.0, 6.283185307179586);
  const int base = 100 + static_cast<int>(rng.below(40));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double tex = 18.0 * std::sin(fy * y + fx * x + phase) + rng.uniform(-10.0, 10.0);
      for (std::size_t c = 0; c < 3; ++c) {
        s.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp<long>(std::lround(base + tex + 6.0 * c), 0, 255));
      }
    }
  }

  std::vector<double> count(spec.classes, 0.0);
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::size_t k = 1;
    double worst = -INFINITY;
    for (std::size_t c = 1; c < spec.classes; ++c) {
      const double deficit = spec.target_freq[c] * area - count[c];
      if (deficit > worst) {
        worst = deficit;
        k = c;
      }
    }
    if (worst < 0.02 * area) break;
    const double goal = std::min(worst, 0.2 * area) * rng.uniform(0.6, 1.2);
    const double r = std::clamp(std::sqrt(goal / 3.14159), 3.0, static_cast<double>(std::min(h, w)) / 3.0);
    const double cy = rng.uniform(0.0, static_cast<double>(h));
    const double cx = rng.uniform(0.0, static_cast<double>(w));
    const auto color = detail::class_color(k);
    const int shade = static_cast<int>(rng.below(31)) - 15;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (s.label.at(y, x) != 0) continue;
        if (!detail::inside_shape(k - 1, static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx, r)) continue;
        s.label.at(y, x) = static_cast<std::uint8_t>(k);
        count[k] += 1.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const long v = color[c] + shade + static_cast<long>(rng.below(21)) - 10;
          s.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp<long>(v, 0, 255));
        }
      }
    }
  }
  return s;
}

inline Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng master(seed);
  Dataset d;
  d.classes = spec.classes;
  for (std::size_t i = 0; i < spec.train; ++i) {
    Rng r = master.fork();
    d.train.push_back(synth_sample(spec, r));
  }
  for (std::size_t i = 0; i < spec.val; ++i) {
    Rng r = master.fork();
    d.val.push_back(synth_sample(spec, r));
  }
  return d;
}

inline std::vector<std::uint64_t> class_counts(const std::vector<Sample>& samples, std::size_t classes) {
  std::vector<std::uint64_t> n(classes, 0);
  for (const auto& s : samples) {
    for (auto id : s.label.ids) {
      if (id < classes) ++n[id];
    }
  }
  return n;
}

/// Stacks images into an (N, C, H, W) tensor scaled to roughly zero mean, unit range.
template <class T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& imgs) {
  if (imgs.empty()) throw ShapeError("images_to_tensor: empty batch");
  const Image& f = *imgs.front();
  Tensor<T> t(Shape{imgs.size(), f.channels, f.h, f.w});
  auto d = t.data();
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    const Image& im = *imgs[n];
    if (im.h != f.h || im.w != f.w || im.channels != f.channels) throw ShapeError("images_to_tensor: ragged batch");
    for (std::size_t c = 0; c < f.channels; ++c) {
      for (std::size_t y = 0; y < f.h; ++y) {
        for (std::size_t x = 0; x < f.w; ++x) {
          d[t.index(n, c, y, x)] = static_cast<T>((im.at(y, x, c) / 255.0 - 0.5) / 0.25);
        }
      }
    }
  }
  return t;
}

inline LabelBatch labels_to_batch(const std::vector<const LabelImage*>& lbls) {
  if (lbls.empty()) throw ShapeError("labels_to_batch: empty batch");
  LabelBatch b{lbls.size(), lbls.front()->h, lbls.front()->w, {}};
  b.ids.reserve(b.size());
  for (const auto* l : lbls) {
    if (l->h != b.h || l->w != b.w) throw ShapeError("labels_to_batch: ragged batch");
    b.ids.insert(b.ids.end(), l->ids.begin(), l->ids.end());
  }
  return b;
}

/// Per-pixel argmax over channels, laid out (n, h, w).
template <class T>
std::vector<std::int32_t> argmax_channels(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  std::vector<std::int32_t> out(s.n * s.plane(), 0);
  const auto d = logits.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.plane(); ++p) {
      std::size_t best = 0;
      T bv = d[(n * s.c) * s.plane() + p];
      for (std::size_t c = 1; c < s.c; ++c) {
        const T v = d[(n * s.c + c) * s.plane() + p];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out[n * s.plane() + p] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

}  // namespace pyrafuse
