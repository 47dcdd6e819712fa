#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pyrafuse/gradcheck.hpp"
#include "pyrafuse/io/tensor_file.hpp"
#include "pyrafuse/rng.hpp"
#include "pyrafuse/tensor.hpp"
#include "support.hpp"

using namespace pyrafuse;
using pyrafuse::testing::grads_of;
using pyrafuse::testing::values;
using T = Tensor<double>;

TEST(Tensor, ShapeAndStorage) {
  T t({2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120u);
  EXPECT_EQ(t.data().size(), 120u);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t.data().back(), 7.0);
  EXPECT_THROW(T({1, 1, 1, 2}, std::vector<double>{1.0}), ShapeError);
}

TEST(Tensor, ZeroSizedTensorsPropagate) {
  const T z({0, 3, 4, 4});
  EXPECT_EQ(z.numel(), 0u);
  EXPECT_EQ(add(z, z).shape(), (Shape{0, 3, 4, 4}));
  EXPECT_EQ(concat_channels<double>({z, z}).shape(), (Shape{0, 6, 4, 4}));
}

TEST(Tensor, AddElementwise) {
  const T a({1, 1, 1, 2}, {1, 2}), b({1, 1, 1, 2}, {3, 4});
  EXPECT_EQ(values(add(a, b)), (std::vector<double>{4, 6}));
}

TEST(Tensor, AddZerosIsIdentity) {
  Rng rng(1);
  T x({2, 3, 2, 2});
  for (auto& v : x.data()) v = rng.normal();
  EXPECT_EQ(values(add(x, T::zeros(x.shape()))), values(x));
}

TEST(Tensor, AddBroadcastPerChannel) {
  const T a({1, 2, 2, 2});
  const T b({1, 2, 1, 1}, {10, 20});
  EXPECT_EQ(values(add(a, b)), (std::vector<double>{10, 10, 10, 10, 20, 20, 20, 20}));
}

TEST(Tensor, AddRejectsMismatch) {
  EXPECT_THROW(add(T({1, 2, 2, 2}), T({1, 3, 2, 2})), ShapeError);
  EXPECT_THROW(add(T({1, 2, 2, 2}), T({1, 2, 2, 1})), ShapeError);
}

TEST(Tensor, MulElementwise) {
  const T a({1, 1, 1, 3}, {1, 2, 3}), b({1, 1, 1, 3}, {4, 5, 6});
  EXPECT_EQ(values(mul(a, b)), (std::vector<double>{4, 10, 18}));
  EXPECT_EQ(values(mul(a, T::ones(a.shape()))), values(a));
  EXPECT_THROW(mul(a, T({1, 1, 1, 2})), ShapeError);
}

TEST(Tensor, MulSquareGradient) {
  const auto g = grads_of({T({1, 1, 1, 2}, {1, 2})}, [](auto& x) { return sum(mul(x[0], x[0])); });
  EXPECT_EQ(g[0], (std::vector<double>{2, 4}));
}

TEST(Tensor, BroadcastGradientSumsOverSpace) {
  const T a({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto g = grads_of({a, T({1, 2, 1, 1}, {1, 1})}, [](auto& x) { return sum(mul(x[0], x[1])); });
  EXPECT_EQ(g[1], (std::vector<double>{10, 26}));
  EXPECT_EQ(g[0], (std::vector<double>(8, 1.0)));
}

TEST(Tensor, ConcatShapesAndIdentity) {
  const T a({1, 2, 4, 4}, 1.0), b({1, 3, 4, 4}, 2.0);
  EXPECT_EQ(concat_channels<double>({a, b}).shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(values(concat_channels<double>({a})), values(a));
  EXPECT_THROW(concat_channels<double>({}), ShapeError);
  EXPECT_THROW(concat_channels<double>({a, T({1, 3, 4, 5})}), ShapeError);
  EXPECT_THROW(concat_channels<double>({a, T({2, 3, 4, 4})}), ShapeError);
}

TEST(Tensor, SplitContiguousRanges) {
  const T x({1, 6, 1, 1}, {0, 1, 2, 3, 4, 5});
  const auto parts = split_channels(x, 3);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(values(parts[0]), (std::vector<double>{0, 1}));
  EXPECT_EQ(values(parts[1]), (std::vector<double>{2, 3}));
  EXPECT_EQ(values(parts[2]), (std::vector<double>{4, 5}));
  EXPECT_THROW(split_channels(x, 4), ShapeError);
  EXPECT_THROW(split_channels(x, 0), ShapeError);
}

TEST(Tensor, SplitReferenceSpfmInput) {
  const auto parts = split_channels(T({1, 512, 12, 15}), 4);
  ASSERT_EQ(parts.size(), 4u);
  for (const auto& p : parts) EXPECT_EQ(p.shape(), (Shape{1, 128, 12, 15}));
}

TEST(Tensor, SplitSingletonAndRoundTrip) {
  Rng rng(3);
  T x({2, 12, 3, 2});
  for (auto& v : x.data()) v = rng.normal();
  const auto one = split_channels(x, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(values(one[0]), values(x));
  for (std::size_t s : {1, 2, 3, 4, 6, 12}) EXPECT_EQ(values(concat_channels(split_channels(x, s))), values(x)) << s;
  // split after concat returns the parts
  const T a({2, 4, 3, 2}, 1.5), b({2, 4, 3, 2}, -2.0);
  const auto back = split_channels(concat_channels<double>({a, b}), 2);
  EXPECT_EQ(values(back[0]), values(a));
  EXPECT_EQ(values(back[1]), values(b));
}

TEST(Autodiff, LinearGradient) {
  const auto g = grads_of({T({1, 1, 1, 3}, {1, 2, 3})}, [](auto& x) { return sum(scale(x[0], 2.0)); });
  EXPECT_EQ(g[0], (std::vector<double>{2, 2, 2}));
}

TEST(Autodiff, ProductRule) {
  const T x({1, 1, 1, 3}, {1, 2, 3}), y({1, 1, 1, 3}, {4, 5, 6});
  const auto g = grads_of({x, y}, [](auto& v) { return sum(mul(v[0], v[1])); });
  EXPECT_EQ(g[0], values(y));
  EXPECT_EQ(g[1], values(x));
}

TEST(Autodiff, FanOutAccumulates) {
  const auto g = grads_of({T({1, 2, 2, 2}, 0.5)}, [](auto& x) { return add(sum(x[0]), sum(x[0])); });
  EXPECT_EQ(g[0], std::vector<double>(8, 2.0));
}

TEST(Autodiff, DeepSumGraphGivesOnes) {
  const auto g = grads_of({T({1, 3, 2, 2}, 0.1)}, [](auto& x) {
    T y = x[0];
    for (int i = 0; i < 30; ++i) y = concat_channels(split_channels(add(y, T::zeros(y.shape())), 3));
    return sum(y);
  });
  EXPECT_EQ(g[0], std::vector<double>(12, 1.0));
}

TEST(Autodiff, RejectsNonScalarAndDoubleBackward) {
  T x({1, 1, 1, 2}, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  T y, l;
  {
    Tape<double>::Scope scope(tape);
    y = scale(x, 3.0);
    l = sum(y);
  }
  EXPECT_THROW(backward(tape, y), AutodiffError);
  backward(tape, l);
  EXPECT_THROW(backward(tape, l), AutodiffError);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Autodiff, TapeIsTopologicallyOrdered) {
  T x({1, 1, 1, 2}, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    sum(mul(add(x, x), x));
  }
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i].inputs) {
      if (in.is_leaf()) continue;
      bool earlier = false;
      for (std::size_t j = 0; j < i; ++j) earlier = earlier || nodes[j].output.same_storage(in);
      EXPECT_TRUE(earlier);
    }
  }
}

TEST(Autodiff, NoTapeRecordsNothing) {
  T x({1, 1, 1, 2}, {1, 2});
  x.set_requires_grad(true);
  const T y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, SquareIsAccurate) {
  Rng rng(5);
  T x({2, 2, 3, 3});
  for (auto& v : x.data()) v = rng.uniform(-2, 2);
  const auto r = finite_diff_check([](const T& v) { return sum(mul(v, v)); }, x, CheckOptions{1e-5, 1e-4});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coordinates_checked, x.numel());
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  const T c({1, 1, 1, 1}, 3.0);
  const auto r = finite_diff_check([c](const T&) { return c; }, T({1, 2, 2, 2}, 1.0));
  EXPECT_TRUE(r.passed);
  for (double g : r.autodiff) EXPECT_EQ(g, 0.0);
  for (double g : r.numeric) EXPECT_EQ(g, 0.0);
}

TEST(GradCheck, DetectsNondeterminism) {
  int calls = 0;
  const auto f = [&calls](const T& v) { return add(sum(v), T({1, 1, 1, 1}, static_cast<double>(++calls))); };
  EXPECT_THROW(finite_diff_check(f, T({1, 1, 1, 2}, 1.0)), NonDeterministicError);
}

TEST(GradCheck, DetectsWrongGradient) {
  const auto f = [](const T& v) {
    T out(v.shape(), v.values());
    detail::record(out, {v}, [v, out]() {
      for (std::size_t i = 0; i < v.numel(); ++i) v.grad_ref()[i] += 0.5 * out.grad()[i];
    });
    return sum(out);
  };
  EXPECT_FALSE(finite_diff_check(f, T({1, 1, 2, 2}, 1.0)).passed);
}

TEST(TensorFile, RoundTripBothWidths) {
  Rng rng(9);
  T x({2, 3, 4, 5});
  for (auto& v : x.data()) v = rng.normal();
  std::stringstream ss;
  write_tensor(ss, x);
  EXPECT_EQ(ss.str().size(), 16u + 120u * 8u);
  EXPECT_EQ(values(read_tensor<double>(ss)), values(x));

  const auto dir = pyrafuse::testing::scratch_dir("tensor_file");
  save_tensor(dir / "d.bin", x);
  save_tensor(dir / "f.bin", x.cast<float>());
  EXPECT_EQ(values(load_tensor(dir / "d.bin")), values(x));
  const T f = load_tensor(dir / "f.bin");
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(f.data()[i], static_cast<double>(static_cast<float>(x.data()[i])));
}

TEST(TensorFile, HeaderIsLittleEndianDims) {
  std::stringstream ss;
  write_tensor(ss, T({1, 2, 3, 4}));
  const std::string s = ss.str();
  const unsigned char expect[16] = {1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0};
  EXPECT_EQ(std::memcmp(s.data(), expect, 16), 0);
}

TEST(TensorFile, RejectsTruncatedAndMismatched) {
  const auto dir = pyrafuse::testing::scratch_dir("tensor_file_bad");
  std::ofstream(dir / "short.bin") << "abc";
  EXPECT_THROW(load_tensor(dir / "short.bin"), FormatError);
  {
    std::ofstream os(dir / "odd.bin", std::ios::binary);
    write_tensor(os, T({1, 1, 1, 3}));
    os << "x";
  }
  EXPECT_THROW(load_tensor(dir / "odd.bin"), FormatError);
  std::stringstream ss;
  write_tensor(ss, T({1, 1, 2, 2}));
  std::string cut = ss.str().substr(0, 20);
  std::stringstream in(cut);
  EXPECT_THROW(read_tensor<double>(in), FormatError);
}
