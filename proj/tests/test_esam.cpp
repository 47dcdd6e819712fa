#include <gtest/gtest.h>

#include "pyrafuse/analysis.hpp"
#include "pyrafuse/esam.hpp"
#include "pyrafuse/network.hpp"
#include "pyrafuse/verify.hpp"
#include "support.hpp"

using namespace pyrafuse;
using pyrafuse::testing::values;
using T = Tensor<double>;

namespace {

EsamConfig cfg(std::size_t c) {
  EsamConfig e;
  e.channels = c;
  return e;
}

}  // namespace

TEST(Esam, ShapePreserving) {
  const auto c = cfg(64);
  auto params = ParamStore<double>::init(make_esam_graph(c), 1);
  Rng rng(2);
  const T x = random_tensor<double>({1, 64, 8, 8}, rng);
  EXPECT_EQ(esam_upper(x, c, params).shape(), x.shape());
  EXPECT_EQ(esam_attention(x, c, params).shape(), x.shape());
  EXPECT_EQ(esam_forward(x, c, params).shape(), x.shape());
}

TEST(Esam, DropInAtEveryStage) {
  BackboneConfig bb;
  bb.variant = BackboneVariant::L;
  const auto stages = stage_shapes(bb, {1, 3, 512, 1024});
  for (int j = 2; j <= 5; ++j) {
    const Shape s = stages[j - 2];
    const ModelGraph g = make_esam_graph(cfg(s.c));
    EXPECT_EQ(trace_shapes(g, s)[g.output], s) << j;
  }
}

TEST(Esam, AttentionIsADistribution) {
  const auto c = cfg(8);
  auto params = ParamStore<double>::init(make_esam_graph(c), 3);
  Rng rng(4);
  const auto acts = run_esam(random_tensor<double>({2, 8, 5, 5}, rng, -3, 3), c, params, Mode::Train);
  const T a = acts[make_esam_graph(c).tap("attention_map")];
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t p = 0; p < 25; ++p) {
      double s = 0;
      for (std::size_t ch = 0; ch < 8; ++ch) {
        const double v = a.data()[(n * 8 + ch) * 25 + p];
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Esam, ShufflePreservesMultiset) {
  const auto c = cfg(8);
  const ModelGraph g = make_esam_graph(c);
  auto params = ParamStore<double>::init(g, 5);
  Rng rng(6);
  const auto acts = run_esam(random_tensor<double>({1, 8, 4, 4}, rng), c, params, Mode::Train);
  const T residual = acts[*g.find_layer("esam.attn.res")];
  const T shuffled = acts[g.tap("attention")];
  EXPECT_TRUE(same_multiset(residual, shuffled));
  EXPECT_FALSE(bit_equal(residual, shuffled));
}

TEST(Esam, ZeroInputZeroOutput) {
  const auto c = cfg(8);
  auto params = ParamStore<double>::init(make_esam_graph(c), 7);
  const T y = esam_forward(T({2, 8, 3, 3}), c, params);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  const T u = esam_upper(T({2, 8, 3, 3}), c, params);
  for (double v : u.data()) EXPECT_EQ(v, 0.0);
}

TEST(Esam, ZeroedBranchesZeroOutput) {
  const auto c = cfg(8);
  const ModelGraph g = make_esam_graph(c);
  auto params = ParamStore<double>::zeros(g);
  Rng rng(8);
  const T x = random_tensor<double>({2, 8, 3, 3}, rng);
  // upper branch collapses to zero; the attention branch is (A + 1) x, so zero
  // parameters only vanish the output when the input does too
  const T upper = esam_upper(x, c, params);
  for (double v : upper.data()) EXPECT_EQ(v, 0.0);
  const T a = run_esam(x, c, params, Mode::Train)[g.tap("attention_map")];
  for (double v : a.data()) EXPECT_NEAR(v, 1.0 / 8, 1e-15);
}

TEST(Esam, UniformAttentionAblation) {
  auto c = cfg(8);
  c.uniform_attention = true;
  const ModelGraph g = make_esam_graph(c);
  auto params = ParamStore<double>::init(g, 9);
  Rng rng(10);
  const T x = random_tensor<double>({1, 8, 4, 4}, rng);
  const auto acts = run_esam(x, c, params, Mode::Train);
  EXPECT_EQ(acts[g.output].shape(), x.shape());
  for (double v : acts[g.tap("attention_map")].data()) EXPECT_EQ(v, 1.0 / 8);
  EXPECT_LT(count_params(g), count_params(make_esam_graph(cfg(8))));
}

TEST(Esam, RejectsOddOrMismatchedChannels) {
  EXPECT_THROW(make_esam_graph(cfg(7)), ShapeError);
  auto c = cfg(8);
  c.shuffle_groups = 3;
  EXPECT_THROW(make_esam_graph(c), ShapeError);
  auto params = ParamStore<double>::init(make_esam_graph(cfg(8)), 1);
  EXPECT_THROW(esam_forward(T({1, 6, 4, 4}), cfg(8), params), ShapeError);
}

TEST(Esam, GradientCheck) {
  for (const auto& gc : grad_cases()) {
    if (gc.op != "esam") continue;
    const GradProblem prob = gc.make(11);
    const auto r = finite_diff_check(prob.f, prob.x, prob.options);
    EXPECT_TRUE(r.passed) << gc.name << " " << r.max_rel_error;
  }
}
