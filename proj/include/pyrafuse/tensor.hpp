#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pyrafuse {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Batch x channel x height x width extent of a rank-4 tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool leaf = true;
};

/// Shared handle to a dense NCHW buffer. Copies alias the same storage;
/// use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape s) { return Tensor(s, T(0)); }
  static Tensor ones(Shape s) { return Tensor(s, T(1)); }
  static Tensor full(Shape s, T v) { return Tensor(s, v); }

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() const { return node_->data; }
  std::vector<T>& values() const { return node_->data; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = node_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return node_->data[index(n, c, h, w)];
  }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  Tensor& set_requires_grad(bool on = true) {
    if (!node_->leaf) throw AutodiffError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty() || (numel() == 0 && node_->requires_grad); }
  std::span<const T> grad() const { return node_->grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::vector<T>& grad_ref() const {
    if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
  }
  void zero_grad() const { node_->grad.clear(); }

  Tensor clone() const {
    Tensor out(shape(), node_->data);
    out.node_->requires_grad = node_->requires_grad && node_->leaf;
    return out;
  }

  /// Same values as a fresh leaf with no autodiff history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(node_->data.begin(), node_->data.end());
    return Tensor<U>(shape(), std::move(v));
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same_storage(const Tensor& o) const { return node_ == o.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of differentiable operations for one forward/backward pair.
template <class T>
class Tape {
 public:
  struct Node {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor<T>> inputs, Tensor<T> output, std::function<void()> fn) {
    if (consumed_) throw AutodiffError("recording onto a tape that was already used for backward; call reset()");
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  bool consumed() const { return consumed_; }
  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

  /// Makes `tape` the recording target for the current thread while alive.
  class Scope {
   public:
    explicit Scope(Tape& tape) : prev_(Tape::active()) { Tape::active() = &tape; }
    ~Scope() { Tape::active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

 private:
  template <class U>
  friend void backward(Tape<U>& tape, const Tensor<U>& loss);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Reverse sweep over `tape`, seeding d(loss)/d(loss) = 1. Leaf gradients
/// accumulate across fan-out and across calls until zero_grad().
template <class T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw AutodiffError("backward needs a scalar loss, got shape " + loss.shape().str());
  }
  if (tape.consumed_) throw AutodiffError("backward invoked twice on the same tape without reset()");
  tape.consumed_ = true;
  loss.grad_ref()[0] += T(1);
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on a path to the loss
    it->backward();
  }
  // Leaves fed into the graph but unreachable from the loss still get a zero grad.
  for (const auto& node : tape.nodes_) {
    for (const auto& in : node.inputs) {
      if (in.requires_grad() && in.is_leaf()) in.grad_ref();
    }
  }
}

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> ins) {
  for (const auto* t : ins) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

/// Registers `fn` on the active tape when any input tracks gradients.
template <class T, class F>
void record(const Tensor<T>& out, std::vector<Tensor<T>> inputs, F&& fn) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return;
  bool needed = false;
  for (const auto& in : inputs) needed = needed || in.requires_grad();
  if (!needed) return;
  out.node()->requires_grad = true;
  out.node()->leaf = false;
  tape->record(std::move(inputs), out, std::forward<F>(fn));
}

inline void check_broadcastable(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return;
  const bool per_channel = b.h == 1 && b.w == 1 && b.c == a.c && (b.n == a.n || b.n == 1);
  if (!per_channel) {
    throw ShapeError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                     " are neither identical nor (N,C,1,1)-broadcastable");
  }
}

// Maps a flat index of `a` to the broadcast operand's flat index.
inline std::size_t broadcast_index(const Shape& a, const Shape& b, std::size_t i) {
  if (a == b) return i;
  const std::size_t plane = a.plane();
  const std::size_t nc = i / plane;
  const std::size_t n = nc / a.c;
  const std::size_t c = nc % a.c;
  return (b.n == 1 ? 0 : n) * b.c + c;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcastable(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto y = out.data();
  auto x = a.data();
  auto z = b.data();
  const Shape sa = a.shape(), sb = b.shape();
  if (sa == sb) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[detail::broadcast_index(sa, sb, i)];
  }
  detail::record(out, {a, b}, [a, b, out, sa, sb]() {
    const auto& gy = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad_ref();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_ref();
      for (std::size_t i = 0; i < gy.size(); ++i) gb[detail::broadcast_index(sa, sb, i)] += gy[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcastable(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto y = out.data();
  auto x = a.data();
  auto z = b.data();
  const Shape sa = a.shape(), sb = b.shape();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[detail::broadcast_index(sa, sb, i)];
  detail::record(out, {a, b}, [a, b, out, sa, sb]() {
    const auto& gy = out.grad();
    auto x = a.data();
    auto z = b.data();
    if (a.requires_grad()) {
      auto& ga = a.grad_ref();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * z[detail::broadcast_index(sa, sb, i)];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_ref();
      for (std::size_t i = 0; i < gy.size(); ++i) gb[detail::broadcast_index(sa, sb, i)] += gy[i] * x[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto y = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
  detail::record(out, {a}, [a, out, factor]() {
    const auto& gy = out.grad();
    auto& ga = a.grad_ref();
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * factor;
  });
  return out;
}

/// Sum of all elements as a (1,1,1,1) tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  Tensor<T> out(Shape{1, 1, 1, 1}, acc);
  detail::record(out, {a}, [a, out]() {
    const T g = out.grad()[0];
    auto& ga = a.grad_ref();
    for (auto& v : ga) v += g;
  });
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Channels [begin, begin + count) of `x`.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") exceeds " + std::to_string(s.c) + " channels");
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(src.begin() + (n * s.c + begin) * plane, count * plane, dst.begin() + n * count * plane);
  }
  detail::record(out, {x}, [x, out, begin, count, s, plane]() {
    const auto& gy = out.grad();
    auto& gx = x.grad_ref();
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t off = (n * s.c + begin) * plane;
      const std::size_t goff = n * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) gx[off + i] += gy[goff + i];
    }
  });
  return out;
}

template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::size_t parts) {
  const std::size_t c = x.shape().c;
  if (parts == 0 || c % parts != 0) {
    throw ShapeError("split_channels: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(parts) + " splits");
  }
  if (parts == 1) return {x};
  std::vector<Tensor<T>> out;
  out.reserve(parts);
  const std::size_t width = c / parts;
  for (std::size_t i = 0; i < parts; ++i) out.push_back(slice_channels(x, i * width, width));
  return out;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty list");
  if (parts.size() == 1) return parts.front();
  const Shape s0 = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: part " + s.str() + " does not match " + s0.str() +
                       " in batch/spatial dims");
    }
    total += s.c;
  }
  const Shape so{s0.n, total, s0.h, s0.w};
  Tensor<T> out(so);
  const std::size_t plane = s0.plane();
  auto dst = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.shape().c;
    auto src = p.data();
    for (std::size_t n = 0; n < so.n; ++n) {
      std::copy_n(src.begin() + n * pc * plane, pc * plane, dst.begin() + (n * total + offset) * plane);
    }
    offset += pc;
  }
  detail::record(out, parts, [parts, out, so, plane]() {
    const auto& gy = out.grad();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.shape().c;
      if (p.requires_grad()) {
        auto& gp = p.grad_ref();
        for (std::size_t n = 0; n < so.n; ++n) {
          const std::size_t src = (n * so.c + offset) * plane;
          for (std::size_t i = 0; i < pc * plane; ++i) gp[n * pc * plane + i] += gy[src + i];
        }
      }
      offset += pc;
    }
  });
  return out;
}

}  // namespace pyrafuse
