#include <fstream>
#include <random>

#include "doctest.h"
#include "helpers.hpp"

#include "dct/adaptation.hpp"
#include "dct/checkpoint.hpp"
#include "dct/errors.hpp"
#include "dct/ops.hpp"
#include "dct/pretrain.hpp"

using namespace dct;

namespace {

ModelConfig tiny(std::size_t classes) {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.depth = 1;
  c.num_classes = classes;
  return c;
}

// Dark versus bright images: separable by mean intensity.
SyntheticDataset two_level_set(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  SyntheticDataset d;
  d.num_classes = 2;
  d.images = Tensor(Shape{2 * per_class, 8, 8, 1});
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    d.labels.push_back(label);
    for (std::size_t p = 0; p < 64; ++p)
      d.images[i * 64 + p] = static_cast<float>(std::clamp((label ? 0.75 : 0.25) + noise(rng), 0.0, 1.0));
  }
  return d;
}

}  // namespace

TEST_SUITE("adaptation") {

TEST_CASE("cross entropy: uniform logits and smoothing") {
  Graph<double> g;
  auto logits = g.constant(TensorD(Shape{2, 4}));
  CHECK(cross_entropy(logits, {0, 3}).value()[0] == doctest::Approx(std::log(4.0)));
  TensorD sharp(Shape{1, 2}, std::vector<double>{20, -20});
  CHECK(cross_entropy(g.constant(sharp), {0}).value()[0] < 1e-12);
  CHECK(cross_entropy(g.constant(sharp), {0}, 0.2).value()[0] > 1.0);
  CHECK_THROWS(cross_entropy(logits, {0}));
}

TEST_CASE("one epoch separates a two-level toy set") {
  const auto train = two_level_set(500, 1);
  PretrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-2;
  cfg.seed = 2;
  const auto result = pretrain(tiny(2), train, cfg);
  REQUIRE(result.log.size() == 1);
  std::vector<StreamBatch> stream(1);
  stream[0].images = train.images;
  stream[0].labels = train.labels;
  CHECK(evaluate_stream(result.model, stream, AttentionMode::Baseline) > 0.9);
  CHECK(conditioner_kind(result.model.params) == ConditionerKind::Generator);
}

TEST_CASE("pretraining is deterministic in its seed") {
  const auto dir = testing::scratch_dir("pretrain_det");
  const auto train = two_level_set(16, 3);
  PretrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 4;
  save_checkpoint(pretrain(tiny(2), train, cfg).model, dir / "a.ckpt");
  save_checkpoint(pretrain(tiny(2), train, cfg).model, dir / "b.ckpt");
  std::ifstream a(dir / "a.ckpt", std::ios::binary), b(dir / "b.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  cfg.seed = 5;
  save_checkpoint(pretrain(tiny(2), train, cfg).model, dir / "c.ckpt");
  std::ifstream c(dir / "c.ckpt", std::ios::binary);
  CHECK(std::string((std::istreambuf_iterator<char>(c)), {}) != sa);
}

TEST_CASE("class count mismatch is a config error before training") {
  const auto train = two_level_set(4, 6);
  PretrainConfig cfg;
  CHECK_THROWS_AS(pretrain(tiny(3), train, cfg), ConfigError);
  cfg.epochs = 0;
  CHECK_THROWS_AS(pretrain(tiny(2), train, cfg), ConfigError);
}

}
