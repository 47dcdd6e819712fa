#include <gtest/gtest.h>

#include "pyrafuse/config.hpp"
#include "support.hpp"

using namespace pyrafuse;
using pyrafuse::testing::source_path;

namespace {

RunConfig parse(const std::string& text) { return parse_run_config(IniDocument::parse(text, "t.ini")); }

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST(Ini, SectionsCommentsAndTrimming) {
  const auto doc = IniDocument::parse("# c\n[a]\n  k = v w  \n; c\n[b]\nn=3\n", "x");
  EXPECT_EQ(doc.get("a", "k"), "v w");
  EXPECT_EQ(doc.number<int>("b", "n", 0), 3);
  EXPECT_EQ(doc.number<int>("b", "missing", 7), 7);
  EXPECT_FALSE(doc.get("c", "k"));
}

TEST(Ini, ErrorsCarryLineNumbers) {
  const auto line_of = [](const std::string& t) {
    try {
      IniDocument::parse(t, "x");
    } catch (const ConfigError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of("[a]\nk = 1\njunk\n"), 3u);
  EXPECT_EQ(line_of("k = 1\n"), 1u);
  EXPECT_EQ(line_of("[a]\n[a]\n"), 2u);
  EXPECT_EQ(line_of("[a]\nk=1\nk=2\n"), 3u);
  EXPECT_EQ(line_of("[a\n"), 1u);
  try {
    IniDocument::parse("[a]\n\n\noops\n", "cfg.ini");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.ini:4"), std::string::npos);
  }
}

TEST(Config, ToyFile) {
  const RunConfig c = load_run_config(source_path("configs/toy.ini"));
  EXPECT_EQ(c.type, ModelType::Spfnet);
  EXPECT_EQ(c.net.num_classes, 4u);
  EXPECT_EQ(c.net.backbone.depth, 18);
  EXPECT_EQ(c.net.backbone.variant, BackboneVariant::H);
  EXPECT_EQ(c.net.esam_stages, (std::vector<int>{2, 3, 4, 5}));
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.data.classes, 4u);
  EXPECT_EQ(*c.input_shape, (Shape{8, 3, 64, 64}));
}

TEST(Config, AllShippedConfigsParseAndBuild) {
  for (const auto& e : std::filesystem::directory_iterator(source_path("configs"))) {
    SCOPED_TRACE(e.path().string());
    const RunConfig c = load_run_config(e.path());
    EXPECT_NO_THROW(build_graph(c));
  }
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_EQ(error_line("[model]\ntype = spfnet\ncolour = red\n"), 3u);
  EXPECT_EQ(error_line("[model]\ntype = spfnet\n[mystery]\nk = 1\n"), 3u);
  EXPECT_EQ(error_line("[model]\ntype = nothing\n"), 2u);
  EXPECT_EQ(error_line("[backbone]\nvariant = M\n"), 2u);
  EXPECT_EQ(error_line("[backbone]\n\ndepth = deep\n"), 3u);
  EXPECT_EQ(error_line("[decoder]\nwidths = 1,2\n"), 2u);
  EXPECT_EQ(error_line("[spfm]\nenabled = maybe\n"), 2u);
  EXPECT_EQ(error_line("[model]\ntype = sequential\n[layer.a]\nkind = teleport\n"), 4u);
  EXPECT_EQ(error_line("[sweep]\nkey = spfm.s\nvalues = 2;4\nids = a\n"), 4u);
}

TEST(Config, SequentialLayerErrorsPointAtSection) {
  const RunConfig c = parse("[model]\ntype = sequential\ninput_channels = 3\n[layer.a]\nkind = conv\nout_channels = 4\n"
                            "[layer.b]\nkind = pixel_shuffle\nfactor = 3\n");
  try {
    build_graph(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 7u);
  }
}

TEST(Config, RoundTripAndOverride) {
  const RunConfig c = load_run_config(source_path("configs/spfm_sweep_cityscapes.ini"));
  EXPECT_EQ(c.sweep.values, (std::vector<std::string>{"2", "4", "8", "16"}));
  EXPECT_EQ(c.sweep.ids.front(), "s2");
  const RunConfig again = parse_run_config(IniDocument::parse(to_ini(c), c.source));
  EXPECT_EQ(to_ini(again), to_ini(c));
  const RunConfig s8 = with_override(c, "spfm.s", "8");
  EXPECT_EQ(s8.spfm.s, 8u);
  EXPECT_EQ(s8.spfm.in_channels, 512u);
  EXPECT_THROW(with_override(c, "spfm.nonsense", "1"), ConfigError);
  EXPECT_THROW(with_override(c, "nodot", "1"), ConfigError);
}

TEST(Config, DefaultFrequenciesFollowClassCount) {
  const RunConfig c = parse("[model]\nnum_classes = 3\n");
  ASSERT_EQ(c.data.target_freq.size(), 3u);
  EXPECT_NEAR(c.data.target_freq[0] + c.data.target_freq[1] + c.data.target_freq[2], 1.0, 1e-12);
}
