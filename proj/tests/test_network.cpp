#include <gtest/gtest.h>

#include "pyrafuse/analysis.hpp"
#include "pyrafuse/config.hpp"
#include "pyrafuse/network.hpp"
#include "pyrafuse/verify.hpp"
#include "support.hpp"

using namespace pyrafuse;
using pyrafuse::testing::source_path;
using T = Tensor<double>;

namespace {

SpfnetConfig toy() { return load_run_config(source_path("configs/toy.ini")).net; }

SpfnetConfig full_scale(bool esam, bool spfm) {
  SpfnetConfig c;
  c.backbone.depth = 34;
  c.backbone.variant = BackboneVariant::H;
  c.num_classes = 19;
  c.spfm_enabled = spfm;
  c.spfm.s = 4;
  c.esam_stages = esam ? std::vector<int>{2, 3, 4, 5} : std::vector<int>{};
  return c;
}

}  // namespace

TEST(Backbone, BlockLayouts) {
  BackboneConfig c;
  c.depth = 18;
  EXPECT_EQ(c.blocks(), (std::array<std::size_t, 4>{2, 2, 2, 2}));
  c.depth = 34;
  EXPECT_EQ(c.blocks(), (std::array<std::size_t, 4>{3, 4, 6, 3}));
  c.depth = 50;
  EXPECT_THROW(make_backbone_graph(c), std::invalid_argument);
  c.depth = 34;
  const ModelGraph g = make_backbone_graph(c);
  std::size_t blocks = 0;
  for (const auto& l : g.layers) blocks += l.name.ends_with(".out");
  EXPECT_EQ(blocks, 16u);
}

TEST(Backbone, StrideArithmetic) {
  BackboneConfig l;
  const ModelGraph gl = make_backbone_graph(l);
  EXPECT_EQ(trace_shapes(gl, Shape{1, 3, 224, 224})[gl.tap("F5")], (Shape{1, 512, 7, 7}));
  BackboneConfig h;
  h.variant = BackboneVariant::H;
  const ModelGraph gh = make_backbone_graph(h);
  const Shape f5 = trace_shapes(gh, Shape{1, 3, 512, 1024})[gh.tap("F5")];
  EXPECT_EQ(f5.h, 32u);
  EXPECT_EQ(f5.w, 64u);
  EXPECT_EQ(trace_shapes(gl, Shape{1, 3, 512, 1024})[gl.tap("F5")], (Shape{1, 512, 16, 32}));
}

TEST(Backbone, HVariantDoublesStages) {
  BackboneConfig l, h;
  h.variant = BackboneVariant::H;
  const auto sl = stage_shapes(l, {1, 3, 256, 320});
  const auto sh = stage_shapes(h, {1, 3, 256, 320});
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(sh[i].h, 2 * sl[i].h);
    EXPECT_EQ(sh[i].w, 2 * sl[i].w);
    EXPECT_EQ(sh[i].c, sl[i].c);
  }
}

TEST(Backbone, Depth34ParamCount) {
  const auto p = static_cast<double>(count_params(make_backbone_graph(BackboneConfig{})));
  EXPECT_EQ(p, 21284672.0);
  EXPECT_NEAR(p, 21.8e6, 0.05 * 21.8e6);
}

TEST(FuseSkips, ConcatShape) {
  const ModelGraph g = make_fuse_skips_graph({64, 128}, 32);
  auto params = ParamStore<double>::init(g, 1);
  Rng rng(2);
  const auto [cat, fused] = fuse_skips<double>({random_tensor<double>({1, 64, 16, 16}, rng),
                                                random_tensor<double>({1, 128, 8, 8}, rng)},
                                               {32, 32}, params, g);
  EXPECT_EQ(cat.shape(), (Shape{1, 192, 32, 32}));
  EXPECT_EQ(fused.shape(), (Shape{1, 32, 32, 32}));
}

TEST(FuseSkips, SingleStageAndConstants) {
  const ModelGraph g = make_fuse_skips_graph({4}, 2);
  std::size_t convs = 0;
  for (const auto& l : g.layers) convs += l.kind == LayerKind::Conv;
  EXPECT_EQ(convs, 1u);
  auto params = ParamStore<double>::init(g, 3);
  const auto [cat, fused] = fuse_skips<double>({T({1, 4, 3, 5}, 2.5)}, {12, 20}, params, g);
  for (double v : cat.data()) EXPECT_NEAR(v, 2.5, 1e-12);
  EXPECT_EQ(fused.shape(), (Shape{1, 2, 12, 20}));
  EXPECT_THROW(make_fuse_skips_graph({}, 2), ShapeError);
}

TEST(Spfnet, ToyShapeContract) {
  const SpfnetConfig c = toy();
  EXPECT_EQ(c.backbone.width_multiplier, 0.125);
  auto m = build_spfnet<double>(c, 1);
  Rng rng(4);
  const T y = m.forward(random_tensor<double>({2, 3, 64, 64}, rng));
  EXPECT_EQ(y.shape(), (Shape{2, 4, 64, 64}));
}

TEST(Spfnet, LogitsAlwaysAtInputResolution) {
  Rng rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    SpfnetConfig c = toy();
    c.backbone.variant = rng.bernoulli(0.5) ? BackboneVariant::H : BackboneVariant::L;
    c.spfm_enabled = rng.bernoulli(0.5);
    c.additive_skips = rng.bernoulli(0.5);
    c.concat_fusion = rng.bernoulli(0.5);
    c.esam_stages.clear();
    for (int j = 2; j <= 5; ++j)
      if (rng.bernoulli(0.5)) c.esam_stages.push_back(j);
    const std::size_t st = c.backbone.stride();
    const Shape in{1, 3, st * (1 + rng.below(4)), st * (1 + rng.below(4))};
    const ModelGraph g = make_spfnet_graph(c);
    EXPECT_EQ(trace_shapes(g, in)[g.output], (Shape{1, 4, in.h, in.w})) << trial;
  }
}

TEST(Spfnet, WithoutEsamStillValid) {
  SpfnetConfig c = toy();
  c.esam_stages.clear();
  auto params = ParamStore<double>::init(make_spfnet_graph(c), 6);
  Rng rng(7);
  const T y = spfnet_forward(random_tensor<double>({1, 3, 32, 32}, rng), c, params);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 32, 32}));
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Spfnet, ZeroParamsGiveZeroLogits) {
  const SpfnetConfig c = toy();
  auto params = ParamStore<double>::zeros(make_spfnet_graph(c));
  Rng rng(8);
  const T y = spfnet_forward(random_tensor<double>({1, 3, 32, 32}, rng), c, params);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Spfnet, RejectsIndivisibleInput) {
  const SpfnetConfig c = toy();
  auto params = ParamStore<double>::init(make_spfnet_graph(c), 1);
  EXPECT_THROW(spfnet_forward(T({1, 3, 40, 32}), c, params), ShapeError);
}

TEST(Spfnet, GradientReachesEveryBackboneParameter) {
  const SpfnetConfig c = toy();
  auto m = build_spfnet<double>(c, 9);
  Rng rng(10);
  const T x = random_tensor<double>({2, 3, 32, 32}, rng);
  m.params.set_requires_grad(true);
  Tape<double> tape;
  T loss;
  {
    Tape<double>::Scope scope(tape);
    const T y = m.forward(x);
    loss = sum(mul(y, random_tensor<double>(y.shape(), rng)));
  }
  backward(tape, loss);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < m.graph.layers.size(); ++i) {
    if (!m.graph.layers[i].name.starts_with("backbone.")) continue;
    std::vector<Tensor<double>> ts;
    if (auto* cp = std::get_if<ConvParams<double>>(&m.params.slot(i))) ts.push_back(cp->weight);
    if (auto* bn = std::get_if<BatchNormState<double>>(&m.params.slot(i))) ts = {bn->gamma, bn->beta};
    for (const auto& t : ts) {
      ASSERT_EQ(t.grad().size(), t.numel()) << m.graph.layers[i].name;
      bool any = false;
      for (double g : t.grad()) any = any || g != 0.0;
      EXPECT_TRUE(any) << m.graph.layers[i].name;
      ++checked;
    }
  }
  EXPECT_GT(checked, 50u);
}

TEST(Spfnet, EndToEndGradientCheck) {
  for (const auto& gc : grad_cases()) {
    if (gc.category != "model") continue;
    GradProblem prob = gc.make(1);
    prob.options.step = gc.step;
    prob.options.tolerance = gc.tolerance;
    const auto r = finite_diff_check(prob.f, prob.x, prob.options);
    EXPECT_TRUE(r.passed) << gc.name << " " << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
}

TEST(Spfnet, FullScaleBudgets) {
  const double base = static_cast<double>(count_params(make_spfnet_graph(full_scale(false, false))));
  const double full = static_cast<double>(count_params(make_spfnet_graph(full_scale(true, true))));
  EXPECT_NEAR(base, 37.7e6, 0.2 * 37.7e6);
  EXPECT_NEAR(full, 41.8e6, 0.2 * 41.8e6);
  EXPECT_GT(full, base);
}

TEST(Spfnet, EsamStagesIncreaseParams) {
  std::vector<double> p;
  std::vector<int> stages;
  for (int j = 1; j <= 5; ++j) {
    if (j > 1) stages.push_back(j);
    SpfnetConfig c = full_scale(false, false);
    c.esam_stages = stages;
    p.push_back(static_cast<double>(count_params(make_spfnet_graph(c))));
  }
  EXPECT_TRUE(check_trend("params", p, Trend::Increasing).passed);
}

TEST(Spfnet, ConfigValidation) {
  SpfnetConfig c = toy();
  c.esam_stages = {1};
  EXPECT_THROW(make_spfnet_graph(c), std::invalid_argument);
  c.esam_stages = {3, 3};
  EXPECT_THROW(make_spfnet_graph(c), std::invalid_argument);
  c = toy();
  c.num_classes = 0;
  EXPECT_THROW(make_spfnet_graph(c), std::invalid_argument);
}
