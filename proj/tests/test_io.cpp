#include <gtest/gtest.h>

#include "pyrafuse/io/checkpoint.hpp"
#include "pyrafuse/io/dataset_dir.hpp"
#include "pyrafuse/io/png.hpp"
#include "pyrafuse/network.hpp"
#include "pyrafuse/train/data.hpp"
#include "support.hpp"

using namespace pyrafuse;
using pyrafuse::testing::scratch_dir;

TEST(Png, RgbAndLabelRoundTrip) {
  const auto dir = scratch_dir("png");
  const Dataset d = synth_dataset(SynthSpec{4, 24, 40, 1, 0, {0.55, 0.15, 0.15, 0.15}}, 3);
  write_rgb_png(dir / "a.png", d.train[0].image);
  write_label_png(dir / "b.png", d.train[0].label);
  EXPECT_EQ(read_rgb_png(dir / "a.png"), d.train[0].image);
  EXPECT_EQ(read_label_png(dir / "b.png"), d.train[0].label);
  EXPECT_THROW(read_rgb_png(dir / "missing.png"), PngError);
}

TEST(Png, ColorizeUsesOnePalettePerClass) {
  LabelImage l = LabelImage::blank(2, 3, 1);
  l.at(1, 2) = 2;
  const Image c = colorize(l);
  EXPECT_EQ(c.at(0, 0, 0), c.at(1, 1, 0));
  EXPECT_NE(std::vector<int>({c.at(0, 0, 0), c.at(0, 0, 1), c.at(0, 0, 2)}),
            std::vector<int>({c.at(1, 2, 0), c.at(1, 2, 1), c.at(1, 2, 2)}));
}

TEST(DatasetDir, RoundTrip) {
  const auto dir = scratch_dir("dataset");
  const Dataset d = synth_dataset(SynthSpec{3, 16, 16, 4, 2, {0.6, 0.2, 0.2}}, 5);
  save_dataset(dir, d);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.classes, 3u);
  EXPECT_EQ(back.train, d.train);
  EXPECT_EQ(back.val, d.val);
  EXPECT_THROW(load_dataset(dir / "nope"), ConfigError);
}

TEST(Checkpoint, RestoresParamsStateAndOptimizer) {
  const auto dir = scratch_dir("checkpoint");
  SpfnetConfig c;
  c.backbone.depth = 18;
  c.backbone.width_multiplier = 0.0625;
  c.num_classes = 3;
  auto m = build_spfnet<float>(c, 7);
  m.params.bn(*m.graph.find_layer("backbone.stem.bn")).running_mean[0] = 0.125f;
  AdamState<float> adam;
  adam.init(m.params.trainable());
  adam.m[0][0] = 0.5f;
  adam.step = 3;
  const TrainState st{42, 2, 0.75, 1};
  save_checkpoint(dir, "[model]\nnum_classes = 3\n", m.params, adam, st);
  EXPECT_EQ(read_model_cfg(dir), "[model]\nnum_classes = 3\n");

  auto fresh = build_spfnet<float>(c, 99);
  load_params(dir, fresh.params);
  const auto a = m.params.trainable(), b = fresh.params.trainable();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(std::equal(a[i].data().begin(), a[i].data().end(), b[i].data().begin()));
  EXPECT_EQ(fresh.params.bn(*m.graph.find_layer("backbone.stem.bn")).running_mean[0], 0.125f);

  AdamState<float> adam2;
  TrainState st2;
  load_training_state(dir, fresh.params, adam2, st2);
  EXPECT_EQ(st2.iter, 42u);
  EXPECT_EQ(st2.epoch, 2u);
  EXPECT_EQ(st2.best_miou, 0.75);
  EXPECT_EQ(adam2.step, 3u);
  EXPECT_EQ(adam2.m[0][0], 0.5f);

  SpfnetConfig other = c;
  other.num_classes = 5;
  auto wrong = build_spfnet<float>(other, 1);
  EXPECT_THROW(load_params(dir, wrong.params), FormatError);
}
