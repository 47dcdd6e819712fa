#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pyrafuse/nn/gemm.hpp"
#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

using Dims2 = std::pair<std::size_t, std::size_t>;

/// Geometry of a 2-D convolution layer. Weights are laid out
/// (out_channels, in_channels / groups, kernel.first, kernel.second).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Dims2 kernel{1, 1};
  Dims2 stride{1, 1};
  Dims2 padding{0, 0};
  Dims2 dilation{1, 1};
  std::size_t groups = 1;
  bool bias = false;

  bool operator==(const ConvSpec&) const = default;

  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel.first, kernel.second}; }
  std::size_t weight_count() const { return weight_shape().numel(); }
  std::size_t param_count() const { return weight_count() + (bias ? out_channels : 0); }

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || groups == 0 || kernel.first == 0 || kernel.second == 0 ||
        stride.first == 0 || stride.second == 0 || dilation.first == 0 || dilation.second == 0) {
      throw ShapeError("conv spec: all counts must be >= 1");
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
      throw ShapeError("conv spec: channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                       " not divisible by groups " + std::to_string(groups));
    }
  }

  /// Same-padded k x k convolution.
  static ConvSpec square(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                         std::size_t dilation = 1, std::size_t groups = 1, bool bias = false) {
    ConvSpec s;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = {k, k};
    s.stride = {stride, stride};
    s.dilation = {dilation, dilation};
    s.padding = {dilation * (k - 1) / 2, dilation * (k - 1) / 2};
    s.groups = groups;
    s.bias = bias;
    return s;
  }
};

/// floor((in + 2p - d(k-1) - 1) / s) + 1, rejecting negative extents.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, std::size_t d) {
  const long long span = static_cast<long long>(d) * (static_cast<long long>(k) - 1) + 1;
  const long long room = static_cast<long long>(in) + 2 * static_cast<long long>(p) - span;
  if (room < 0) {
    throw ShapeError("convolution window (extent " + std::to_string(span) + ") exceeds padded input " +
                     std::to_string(in + 2 * p));
  }
  return static_cast<std::size_t>(room / static_cast<long long>(s)) + 1;
}

inline Shape conv_output_shape(const Shape& x, const ConvSpec& spec) {
  spec.validate();
  if (x.c != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  return {x.n, spec.out_channels,
          conv_out_extent(x.h, spec.kernel.first, spec.stride.first, spec.padding.first, spec.dilation.first),
          conv_out_extent(x.w, spec.kernel.second, spec.stride.second, spec.padding.second, spec.dilation.second)};
}

namespace detail {

struct ConvGeometry {
  ConvSpec spec;
  Shape in;
  Shape out;
  std::size_t cin_g, cout_g, k_rows, positions;
  bool direct;  // 1x1, stride 1, no padding: the input plane is already the column matrix

  ConvGeometry(const Shape& x, const ConvSpec& s) : spec(s), in(x), out(conv_output_shape(x, s)) {
    cin_g = s.in_channels / s.groups;
    cout_g = s.out_channels / s.groups;
    k_rows = cin_g * s.kernel.first * s.kernel.second;
    positions = out.h * out.w;
    direct = s.kernel == Dims2{1, 1} && s.stride == Dims2{1, 1} && s.padding == Dims2{0, 0};
  }
};

template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const auto& s = g.spec;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    const T* plane = x + c * g.in.h * g.in.w;
    for (std::size_t ki = 0; ki < s.kernel.first; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel.second; ++kj) {
        T* row = col + ((c * s.kernel.first + ki) * s.kernel.second + kj) * g.positions;
        for (std::size_t oy = 0; oy < g.out.h; ++oy) {
          const long long iy = static_cast<long long>(oy * s.stride.first + ki * s.dilation.first) -
                               static_cast<long long>(s.padding.first);
          T* dst = row + oy * g.out.w;
          if (iy < 0 || iy >= static_cast<long long>(g.in.h)) {
            std::fill(dst, dst + g.out.w, T(0));
            continue;
          }
          const T* src = plane + iy * g.in.w;
          for (std::size_t ox = 0; ox < g.out.w; ++ox) {
            const long long ix = static_cast<long long>(ox * s.stride.second + kj * s.dilation.second) -
                                 static_cast<long long>(s.padding.second);
            dst[ox] = (ix < 0 || ix >= static_cast<long long>(g.in.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* x) {
  const auto& s = g.spec;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    T* plane = x + c * g.in.h * g.in.w;
    for (std::size_t ki = 0; ki < s.kernel.first; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel.second; ++kj) {
        const T* row = col + ((c * s.kernel.first + ki) * s.kernel.second + kj) * g.positions;
        for (std::size_t oy = 0; oy < g.out.h; ++oy) {
          const long long iy = static_cast<long long>(oy * s.stride.first + ki * s.dilation.first) -
                               static_cast<long long>(s.padding.first);
          if (iy < 0 || iy >= static_cast<long long>(g.in.h)) continue;
          T* dst = plane + iy * g.in.w;
          const T* src = row + oy * g.out.w;
          for (std::size_t ox = 0; ox < g.out.w; ++ox) {
            const long long ix = static_cast<long long>(ox * s.stride.second + kj * s.dilation.second) -
                                 static_cast<long long>(s.padding.second);
            if (ix >= 0 && ix < static_cast<long long>(g.in.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation with zero padding, stride, dilation and channel groups.
/// `bias` is ignored when spec.bias is false; otherwise it must be (1, out, 1, 1).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 const ConvSpec& spec) {
  const detail::ConvGeometry geo(x.shape(), spec);
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + weight.shape().str() + " expected " + spec.weight_shape().str());
  }
  const bool use_bias = spec.bias && bias.has_value();
  if (use_bias && bias->numel() != spec.out_channels) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias->numel()) + " entries, expected " +
                     std::to_string(spec.out_channels));
  }
  Tensor<T> out(geo.out);
  const std::size_t in_img = geo.in.c * geo.in.h * geo.in.w;
  const std::size_t out_img = geo.out.c * geo.positions;
  std::vector<T> col(geo.direct ? 0 : geo.k_rows * geo.positions);
  const T* xp = x.data().data();
  const T* wp = weight.data().data();
  T* yp = out.data().data();
  for (std::size_t n = 0; n < geo.in.n; ++n) {
    for (std::size_t g = 0; g < spec.groups; ++g) {
      const T* xg = xp + n * in_img + g * geo.cin_g * geo.in.h * geo.in.w;
      const T* cm = xg;
      if (!geo.direct) {
        detail::im2col(geo, xg, col.data());
        cm = col.data();
      }
      gemm::nn(geo.cout_g, geo.positions, geo.k_rows, wp + g * geo.cout_g * geo.k_rows, cm,
               yp + n * out_img + g * geo.cout_g * geo.positions);
    }
    if (use_bias) {
      auto bv = bias->data();
      for (std::size_t o = 0; o < geo.out.c; ++o) {
        T* row = yp + n * out_img + o * geo.positions;
        for (std::size_t p = 0; p < geo.positions; ++p) row[p] += bv[o];
      }
    }
  }

  std::vector<Tensor<T>> inputs{x, weight};
  if (use_bias) inputs.push_back(*bias);
  detail::record(out, inputs, [x, weight, bias, use_bias, out, geo]() {
    const auto& spec = geo.spec;
    const std::size_t in_plane = geo.in.h * geo.in.w;
    const std::size_t in_img = geo.in.c * in_plane;
    const std::size_t out_img = geo.out.c * geo.positions;
    const T* gy = out.grad().data();
    const T* xp = x.data().data();
    const T* wp = weight.data().data();
    std::vector<T> col(geo.direct ? 0 : geo.k_rows * geo.positions);
    std::vector<T> dcol(geo.direct ? 0 : geo.k_rows * geo.positions);
    T* gw = weight.requires_grad() ? weight.grad_ref().data() : nullptr;
    T* gx = x.requires_grad() ? x.grad_ref().data() : nullptr;
    for (std::size_t n = 0; n < geo.in.n; ++n) {
      for (std::size_t g = 0; g < spec.groups; ++g) {
        const T* gyg = gy + n * out_img + g * geo.cout_g * geo.positions;
        const T* wg = wp + g * geo.cout_g * geo.k_rows;
        if (gw) {
          const T* xg = xp + n * in_img + g * geo.cin_g * in_plane;
          const T* cm = xg;
          if (!geo.direct) {
            detail::im2col(geo, xg, col.data());
            cm = col.data();
          }
          gemm::nt(geo.cout_g, geo.k_rows, geo.positions, gyg, cm, gw + g * geo.cout_g * geo.k_rows);
        }
        if (gx) {
          T* gxg = gx + n * in_img + g * geo.cin_g * in_plane;
          if (geo.direct) {
            gemm::tn(geo.k_rows, geo.positions, geo.cout_g, wg, gyg, gxg);
          } else {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm::tn(geo.k_rows, geo.positions, geo.cout_g, wg, gyg, dcol.data());
            detail::col2im_add(geo, dcol.data(), gxg);
          }
        }
      }
    }
    if (use_bias && bias->requires_grad()) {
      auto& gb = bias->grad_ref();
      for (std::size_t n = 0; n < geo.in.n; ++n) {
        for (std::size_t o = 0; o < geo.out.c; ++o) {
          const T* row = gy + n * out_img + o * geo.positions;
          T acc = T(0);
          for (std::size_t p = 0; p < geo.positions; ++p) acc += row[p];
          gb[o] += acc;
        }
      }
    }
  });
  return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const ConvSpec& spec) {
  return conv2d(x, weight, std::optional<Tensor<T>>{}, spec);
}

/// Depthwise k x k (groups == channels) followed by a 1x1 pointwise conv.
template <class T>
Tensor<T> depthwise_separable(const Tensor<T>& x, const Tensor<T>& dw_weight, const ConvSpec& dw,
                              const Tensor<T>& pw_weight, const ConvSpec& pw) {
  if (dw.groups != dw.in_channels) throw ShapeError("depthwise_separable: depthwise conv needs groups == in_channels");
  if (pw.kernel != Dims2{1, 1} || pw.groups != 1) throw ShapeError("depthwise_separable: pointwise conv must be 1x1");
  return conv2d(conv2d(x, dw_weight, dw), pw_weight, pw);
}

}  // namespace pyrafuse
