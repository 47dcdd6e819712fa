#include <gtest/gtest.h>

#include "pyrafuse/analysis.hpp"
#include "pyrafuse/pyramid.hpp"
#include "pyrafuse/verify.hpp"
#include "support.hpp"

using namespace pyrafuse;
using pyrafuse::testing::values;
using T = Tensor<double>;

namespace {

SpfmConfig small_spfm(std::size_t in, std::size_t s) {
  SpfmConfig c;
  c.in_channels = in;
  c.s = s;
  return c;
}

}  // namespace

TEST(Rpp, DoublesResolution) {
  RppConfig cfg;
  cfg.split_channels = 128;
  const ModelGraph g = make_rpp_graph(cfg);
  const auto shapes = trace_shapes(g, Shape{1, 128, 12, 15});
  EXPECT_EQ(shapes[g.output], (Shape{1, 64, 24, 30}));
  cfg.mid_channels = 48;
  EXPECT_EQ(trace_shapes(make_rpp_graph(cfg), Shape{1, 128, 12, 15})[make_rpp_graph(cfg).output],
            (Shape{1, 48, 24, 30}));
}

TEST(Rpp, ForwardSmall) {
  RppConfig cfg;
  cfg.split_channels = 8;
  auto params = ParamStore<double>::init(make_rpp_graph(cfg), 1);
  Rng rng(2);
  const T y = rpp_forward(random_tensor<double>({2, 8, 5, 6}, rng), cfg, params);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 10, 12}));
}

TEST(Rpp, ZeroInputGivesZero) {
  RppConfig cfg;
  cfg.split_channels = 8;
  auto params = ParamStore<double>::init(make_rpp_graph(cfg), 3);
  for (const Mode m : {Mode::Train, Mode::Eval}) {
    const T y = rpp_forward(T({2, 8, 4, 4}), cfg, params, m);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Rpp, BatchPermutationEquivariant) {
  RppConfig cfg;
  cfg.split_channels = 8;
  auto params = ParamStore<double>::init(make_rpp_graph(cfg), 4);
  Rng rng(5);
  const T x = random_tensor<double>({3, 8, 4, 5}, rng);
  const std::size_t img = 8 * 4 * 5;
  T xp(x.shape());
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t n = 0; n < 3; ++n)
    std::copy_n(x.data().begin() + perm[n] * img, img, xp.data().begin() + n * img);
  for (const Mode m : {Mode::Eval, Mode::Train}) {
    const T y = rpp_forward(x, cfg, params, m);
    const T yp = rpp_forward(xp, cfg, params, m);
    const std::size_t out = y.numel() / 3;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < out; ++i) ASSERT_NEAR(yp.data()[n * out + i], y.data()[perm[n] * out + i], 1e-12);
  }
}

TEST(Rpp, RejectsBadConfig) {
  RppConfig cfg;
  cfg.split_channels = 8;
  cfg.ps_factor = 3;
  EXPECT_THROW(make_rpp_graph(cfg), std::invalid_argument);
  cfg.ps_factor = 2;
  cfg.dilations = {0, 8};
  EXPECT_THROW(make_rpp_graph(cfg), std::invalid_argument);
}

TEST(Spfm, ReferenceInputShape) {
  const ModelGraph g = make_spfm_graph(small_spfm(512, 4));
  EXPECT_EQ(trace_shapes(g, Shape{1, 512, 16, 32})[g.output], (Shape{1, 512, 32, 64}));
  EXPECT_EQ(trace_shapes(g, Shape{1, 512, 12, 15})[g.output], (Shape{1, 512, 24, 30}));
  auto c = small_spfm(512, 4);
  c.out_channels = 256;
  const ModelGraph g2 = make_spfm_graph(c);
  EXPECT_EQ(trace_shapes(g2, Shape{1, 512, 16, 32})[g2.output], (Shape{1, 256, 32, 64}));
}

TEST(Spfm, SplitDivisibility) {
  EXPECT_THROW(make_spfm_graph(small_spfm(12, 5)), ShapeError);
  EXPECT_THROW(make_spfm_graph(small_spfm(12, 0)), ShapeError);
  auto params = ParamStore<double>::init(make_spfm_graph(small_spfm(8, 2)), 1);
  EXPECT_THROW(spfm_forward(T({1, 6, 4, 4}), small_spfm(8, 2), params), ShapeError);
}

TEST(Spfm, SingleSplitIsRppPlusFusion) {
  const auto cfg = small_spfm(8, 1);
  const ModelGraph g = make_spfm_graph(cfg);
  auto params = ParamStore<double>::init(g, 6);
  Rng rng(7);
  const T x = random_tensor<double>({2, 8, 3, 4}, rng);
  const T y = spfm_forward(x, cfg, params, Mode::Eval);

  const ModelGraph rg = make_rpp_graph(cfg.per_split());
  ParamStore<double> rp = ParamStore<double>::init(rg, 0);
  for (std::size_t i = 0; i < rg.layers.size(); ++i) {
    std::string name = rg.layers[i].name;
    if (name.rfind("rpp", 0) == 0) name = "spfm.rpp0" + name.substr(3);
    if (const auto j = g.find_layer(name)) rp.slot(i) = params.slot(*j);
  }
  const T r = rpp_forward(x, cfg.per_split(), rp, Mode::Eval);
  const auto& fuse = params.conv(*g.find_layer("spfm.fuse"));
  const T ref = conv2d(r, fuse.weight, fuse.bias, ConvSpec::square(4, 8, 1, 1, 1, 1, true));
  EXPECT_TRUE(bit_equal(y, ref));
}

TEST(Spfm, SplitOwnershipRelabeling) {
  const auto cfg = small_spfm(8, 2);
  const ModelGraph g = make_spfm_graph(cfg);
  auto params = ParamStore<double>::init(g, 8);
  Rng rng(9);
  for (auto t : params.trainable())
    for (auto& v : t.data()) v += 0.1 * rng.uniform(-1, 1);
  const T x = random_tensor<double>({2, 8, 3, 3}, rng);
  const T y = spfm_forward(x, cfg, params, Mode::Eval);

  // swap which RPP sees which half, and the matching fusion columns
  auto swapped = params.clone();
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const std::string& n = g.layers[i].name;
    if (n.rfind("spfm.rpp0.", 0) != 0 || n == "spfm.rpp0.split") continue;
    const auto j = g.find_layer("spfm.rpp1." + n.substr(10));
    ASSERT_TRUE(j);
    std::swap(swapped.slot(i), swapped.slot(*j));
  }
  auto& fw = swapped.conv(*g.find_layer("spfm.fuse")).weight;
  const T orig = params.conv(*g.find_layer("spfm.fuse")).weight;
  const std::size_t mid = cfg.per_split().mid();
  for (std::size_t o = 0; o < 8; ++o)
    for (std::size_t c = 0; c < 2 * mid; ++c) fw.at(o, c, 0, 0) = orig.at(o, (c + mid) % (2 * mid), 0, 0);
  const auto halves = split_channels(x, 2);
  const T xs = concat_channels<double>({halves[1], halves[0]});
  const T ys = spfm_forward(xs, cfg, swapped, Mode::Eval);
  for (std::size_t i = 0; i < y.numel(); ++i) ASSERT_NEAR(ys.data()[i], y.data()[i], 1e-12);
}

TEST(Spfm, ClosedFormCountMatchesInstance) {
  for (std::size_t in : {8, 16, 64, 512}) {
    for (std::size_t s : {1, 2, 4, 8}) {
      if (in % s || in / s < 2) continue;
      const auto cfg = small_spfm(in, s);
      const ModelGraph g = make_spfm_graph(cfg);
      if (in <= 64) {
        EXPECT_EQ(spfm_param_count(cfg), ParamStore<double>::init(g, 1).scalar_count());
      }
    }
  }
}

TEST(Spfm, ParamsHalveWithSplits) {
  std::vector<double> p;
  for (std::size_t s : {2, 4, 8, 16}) p.push_back(static_cast<double>(spfm_param_count(small_spfm(512, s))));
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    EXPECT_GT(p[i], p[i + 1]);
    EXPECT_GE(p[i] / p[i + 1], 1.8);
    EXPECT_LE(p[i] / p[i + 1], 2.2);
  }
  EXPECT_TRUE(check_trend("params", p, Trend::Halving).passed);
  // within half of the published 6.7M at s = 2
  EXPECT_NEAR(p[0], 6.7e6, 0.5 * 6.7e6);
}

TEST(Spfm, GradientCheckSmall) {
  for (const auto& c : grad_cases()) {
    if (c.op != "spfm" && c.op != "rpp") continue;
    const GradProblem prob = c.make(3);
    const auto r = finite_diff_check(prob.f, prob.x, prob.options);
    EXPECT_TRUE(r.passed) << c.name << " " << r.max_rel_error;
  }
}
