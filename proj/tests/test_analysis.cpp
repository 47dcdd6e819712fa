#include <gtest/gtest.h>

#include "pyrafuse/analysis.hpp"
#include "pyrafuse/config.hpp"
#include "pyrafuse/network.hpp"
#include "pyrafuse/verify.hpp"
#include "support.hpp"

using namespace pyrafuse;
using pyrafuse::testing::source_path;

namespace {

ModelGraph one_conv(const ConvSpec& s) {
  GraphBuilder b;
  const std::size_t x = b.input("x", s.in_channels);
  return b.finish(b.conv("conv", x, s));
}

ReferenceTarget target(double v, std::optional<double> tol) {
  ReferenceTarget t;
  t.key = "k";
  t.value = v;
  t.tolerance = tol;
  return t;
}

}  // namespace

TEST(TraceShapes, StridedConv) {
  const ModelGraph g = one_conv(ConvSpec::square(3, 8, 3, 2));
  EXPECT_EQ(trace_shapes(g, Shape{1, 3, 64, 64})[g.output], (Shape{1, 8, 32, 32}));
}

TEST(TraceShapes, SpfmDoubles) {
  SpfmConfig c;
  c.in_channels = 64;
  const ModelGraph g = make_spfm_graph(c);
  EXPECT_EQ(trace_shapes(g, Shape{2, 64, 7, 9})[g.output], (Shape{2, 64, 14, 18}));
}

TEST(TraceShapes, MatchesExecution) {
  const auto rep = run_shape_suite(3);
  bool seen = false;
  for (const auto& l : rep.lines) {
    if (l.name.find("trace") == std::string::npos) continue;
    seen = true;
    EXPECT_TRUE(l.passed) << l.detail;
  }
  EXPECT_TRUE(seen);
}

TEST(TraceShapes, ReportsOffendingLayer) {
  GraphBuilder b;
  const std::size_t x = b.input("x", 4);
  const std::size_t down = b.conv("down", x, ConvSpec::square(4, 4, 3, 2));
  const std::size_t bad = b.add("merge", down, x);
  const ModelGraph g = b.finish(bad);
  try {
    trace_shapes(g, Shape{1, 4, 8, 8});
    FAIL() << "expected a shape error";
  } catch (const GraphShapeError& e) {
    EXPECT_EQ(e.layer(), bad);
    EXPECT_NE(std::string(e.what()).find("merge"), std::string::npos);
  }
  EXPECT_THROW(trace_shapes(g, Shape{1, 3, 8, 8}), ShapeError);
}

TEST(CountParams, ClosedForms) {
  EXPECT_EQ(count_params(one_conv(ConvSpec::square(64, 64, 3))), 36864u);
  EXPECT_EQ(count_params(one_conv(ConvSpec::square(64, 64, 3, 1, 1, 1, true))), 36864u + 64u);
  EXPECT_EQ(count_params(one_conv(ConvSpec::square(64, 64, 3, 1, 1, 64))), 576u);
  GraphBuilder b;
  const std::size_t x = b.input("x", 5);
  const ModelGraph g = b.finish(b.prelu("a", b.batch_norm("bn", x)));
  EXPECT_EQ(count_params(g), 15u);
}

TEST(CountParams, EqualsInstantiatedTally) {
  Rng rng(4);
  for (int trial = 0; trial < 6; ++trial) {
    SpfnetConfig c;
    c.backbone.depth = rng.bernoulli(0.5) ? 18 : 34;
    c.backbone.width_multiplier = 0.0625 * static_cast<double>(1 + rng.below(2));
    c.backbone.variant = rng.bernoulli(0.5) ? BackboneVariant::H : BackboneVariant::L;
    c.num_classes = 2 + rng.below(5);
    c.spfm_enabled = rng.bernoulli(0.7);
    c.spfm.s = std::size_t{1} << rng.below(3);
    c.additive_skips = rng.bernoulli(0.5);
    const ModelGraph g = make_spfnet_graph(c);
    EXPECT_EQ(count_params(g), ParamStore<double>::init(g, 1).scalar_count()) << trial;
  }
}

TEST(CountFlops, PointwiseConv) {
  const ModelGraph g = one_conv(ConvSpec::square(16, 16, 1));
  EXPECT_EQ(count_flops(g, Shape{1, 16, 10, 12}), 10u * 12u * 16u * 16u);
  EXPECT_EQ(count_flops(g, Shape{1, 16, 10, 12}, Convention::Flops), 2u * 10u * 12u * 16u * 16u);
}

TEST(CountFlops, LinearInAreaAndBatchFree) {
  const ModelGraph g = one_conv(ConvSpec::square(4, 8, 3, 1, 2, 2));
  EXPECT_EQ(2 * count_flops(g, Shape{1, 4, 16, 16}), count_flops(g, Shape{1, 4, 16, 32}));
  EXPECT_EQ(count_flops(g, Shape{1, 4, 16, 16}), count_flops(g, Shape{5, 4, 16, 16}));
  BackboneConfig bb;
  bb.width_multiplier = 0.25;
  const ModelGraph net = make_backbone_graph(bb);
  EXPECT_EQ(profile(net, Shape{1, 3, 64, 64}).total_params, profile(net, Shape{3, 3, 128, 64}).total_params);
}

TEST(CountFlops, SpfmFallsWithSplits) {
  std::vector<double> f;
  for (std::size_t s : {2, 4, 8, 16}) {
    SpfmConfig c;
    c.in_channels = 512;
    c.s = s;
    f.push_back(static_cast<double>(count_flops(make_spfm_graph(c), Shape{1, 512, 16, 32})));
  }
  EXPECT_TRUE(check_trend("flops", f, Trend::Decreasing).passed);
}

TEST(Profile, TotalsAreRowSums) {
  SpfnetConfig c;
  c.backbone.depth = 18;
  c.backbone.width_multiplier = 0.125;
  c.num_classes = 4;
  const ModelGraph g = make_spfnet_graph(c);
  const ProfileReport r = profile(g, Shape{1, 3, 64, 64});
  std::uint64_t p = 0, f = 0;
  for (const auto& row : r.rows) {
    p += row.params;
    f += row.flops;
    EXPECT_NE(row.kind, LayerKind::Input);
  }
  EXPECT_EQ(p, r.total_params);
  EXPECT_EQ(f, r.total_flops);
  EXPECT_EQ(r.group_params(""), r.total_params);
  EXPECT_EQ(r.total_params, count_params(g));
  EXPECT_LT(r.group_params("spfm"), r.total_params);
  const std::string table = format_table(r);
  EXPECT_NE(table.find("total params"), std::string::npos);
  EXPECT_NE(table.find("macs"), std::string::npos);
}

TEST(Compare, Arithmetic) {
  const Deviation same = compare_value(target(37.7e6, 0.2), 37.7e6);
  EXPECT_EQ(same.relative, 0.0);
  EXPECT_TRUE(same.passed);
  const Deviation up = compare_value(target(3.4e6, 0.2), 3.74e6);
  EXPECT_NEAR(up.relative, 0.10, 1e-12);
  EXPECT_TRUE(up.passed);
  EXPECT_FALSE(compare_value(target(3.4e6, 0.05), 3.74e6).passed);
  EXPECT_TRUE(compare_value(target(3.4e6, std::nullopt), 9e9).passed);
}

TEST(Compare, FixtureCompleteness) {
  const auto fixture = load_targets(IniDocument::load(source_path("fixtures/reference_targets.ini")));
  EXPECT_GE(fixture.size(), 20u);
  std::vector<std::string> keys;
  for (const auto& [k, t] : fixture) keys.push_back(k);
  SpfmConfig c;
  c.in_channels = 512;
  const ProfileReport r = profile(make_spfm_graph(c), Shape{1, 512, 16, 32});
  const auto ds = compare_report(r, fixture, keys);
  ASSERT_EQ(ds.size(), fixture.size());
  for (std::size_t i = 0; i < keys.size(); ++i) EXPECT_EQ(ds[i].key, keys[i]);
  const std::string table = format_deviations(ds);
  for (const auto& k : keys) EXPECT_EQ(table.find(k + " "), table.rfind(k + " ")) << k;
  EXPECT_THROW(compare_report(r, fixture, {"no.such.key"}), std::out_of_range);
}

TEST(Compare, PublishedValuesInFixture) {
  const auto fx = load_targets(IniDocument::load(source_path("fixtures/reference_targets.ini")));
  EXPECT_EQ(fx.at("spfm.s2.params").value, 6.7e6);
  EXPECT_EQ(fx.at("spfm.s16.params").value, 1.0e6);
  EXPECT_EQ(fx.at("cityscapes.spfm.s4.flops").value, 4.6e9);
  EXPECT_EQ(fx.at("baseline.params").value, 37.7e6);
  EXPECT_EQ(*fx.at("baseline.params").tolerance, 0.2);
  EXPECT_EQ(fx.at("full.params").value, 41.8e6);
  EXPECT_FALSE(fx.at("full.flops").tolerance.has_value());
}

TEST(Trend, Checks) {
  EXPECT_TRUE(check_trend("a", {8, 4, 2, 1}, Trend::Halving).passed);
  EXPECT_FALSE(check_trend("a", {8, 4, 3}, Trend::Halving).passed);
  EXPECT_TRUE(check_trend("a", {1, 2, 3}, Trend::Increasing).passed);
  EXPECT_FALSE(check_trend("a", {1, 1, 3}, Trend::Increasing).passed);
  EXPECT_FALSE(check_trend("a", {3, 2, 2}, Trend::Decreasing).passed);
  EXPECT_THROW(parse_trend("sideways"), std::invalid_argument);
}
