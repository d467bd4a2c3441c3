#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "dct/adaptation.hpp"
#include "dct/conditioners.hpp"
#include "dct/model.hpp"
#include "dct/ops.hpp"

using namespace dct;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.depth = 2;
  c.num_classes = 4;
  return c;
}

}  // namespace

TEST_SUITE("conditioners") {

TEST_CASE("zero generator yields zero conditioners") {
  Graph<float> g;
  auto cls = g.constant(testing::random_tensor(Shape{3, 1, 4}, 1));
  auto c = generate(cls, g.constant(Tensor(Shape{4, 12})), g.constant(Tensor(Shape{12})));
  for (const auto* part : {&c.query, &c.key, &c.value}) {
    CHECK(part->shape() == Shape{3, 1, 4});
    for (float v : part->value().data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("unit bias yields all-ones conditioners") {
  Graph<float> g;
  auto cls = g.constant(testing::random_tensor(Shape{2, 1, 4}, 2));
  auto c = generate(cls, g.constant(Tensor(Shape{4, 12})), g.constant(Tensor(Shape{12}, 1.0f)));
  for (const auto* part : {&c.query, &c.key, &c.value})
    for (float v : part->value().data()) CHECK(v == 1.0f);
}

TEST_CASE("generator matches matmul and slicing") {
  const Tensor x = testing::random_tensor(Shape{2, 1, 4}, 3);
  const Tensor w = testing::random_tensor(Shape{4, 12}, 4);
  const Tensor b = testing::random_tensor(Shape{12}, 5);
  Graph<float> g;
  auto c = generate(g.constant(x), g.constant(w), g.constant(b));
  const Tensor* parts[] = {&c.query.value(), &c.key.value(), &c.value.value()};
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t j = 0; j < 4; ++j) {
        double ref = b[p * 4 + j];
        for (std::size_t i = 0; i < 4; ++i) ref += static_cast<double>(x[s * 4 + i]) * w.at(i, p * 4 + j);
        CHECK(std::abs((*parts[p])[s * 4 + j] - ref) < 1e-6);
      }
}

TEST_CASE("fresh model: zero conditioners at every layer, still perturbing the logits") {
  Model m = init_model(tiny(), 1);
  CHECK(conditioner_kind(m.params) == ConditionerKind::Generator);
  Tensor images = testing::random_tensor(Shape{3, 8, 8, 1}, 6, 0.3);
  ForwardOptions opt;
  opt.mode = AttentionMode::Conditioned;
  opt.capture_tokens = true;
  Graph<float> g;
  auto fwd = run_forward(g, m, images, opt);
  REQUIRE(fwd.conditioners.size() == 2);
  for (const auto& c : fwd.conditioners) {
    CHECK(c.shape() == Shape{3, 24});
    for (float v : c.data()) CHECK(v == 0.0f);
  }
  const Tensor base = predict_logits(m, images, {});
  bool differs = false;
  for (std::size_t i = 0; i < base.numel(); ++i) differs |= base[i] != fwd.logits.value()[i];
  CHECK(differs);
}

TEST_CASE("generator weights receive a nonzero gradient on the first batch") {
  Model m = init_model(tiny(), 2);
  const auto names = select_adaptable(m.params, AdaptMode::Dct);
  const std::set<std::string> trainable(names.begin(), names.end());
  Graph<double> g;
  auto bound = bind_params(g, m.params, trainable);
  ForwardOptions opt;
  opt.mode = AttentionMode::Conditioned;
  auto logits = model_forward(g, m.config, bound, testing::random_tensor(Shape{4, 8, 8, 1}, 7, 0.3), opt).logits;
  auto grads = g.backward(*adaptation_loss(logits, 10.0).loss);
  double norm = 0.0;
  for (float v : grads.at(generator_weight_name(0)).cast<float>().data()) norm += std::abs(v);
  CHECK(norm > 0.0);
}

TEST_CASE("static conditioners: same vector for every sample, equal to zero generators at start") {
  Model gen = init_model(tiny(), 3);
  Model stat = gen;
  init_static_conditioners(stat.params, stat.config);
  CHECK(conditioner_kind(stat.params) == ConditionerKind::Static);
  CHECK_FALSE(stat.params.contains(generator_weight_name(0)));
  CHECK(stat.params.contains(static_conditioner_name(1, 'v')));

  stat.params.at(static_conditioner_name(0, 'k')) = testing::random_tensor(Shape{8}, 8);
  Graph<float> g;
  auto bound = bind_params(g, stat.params, {});
  auto c = static_conditioners(bound, 0, 3);
  CHECK(c.key.shape() == Shape{3, 1, 8});
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t j = 0; j < 8; ++j) CHECK(c.key.value()[s * 8 + j] == stat.params.at(static_conditioner_name(0, 'k'))[j]);
  CHECK_THROWS_AS(static_conditioners(bound, 5, 3), std::logic_error);

  stat.params.at(static_conditioner_name(0, 'k')) = Tensor(Shape{8});
  const Tensor images = testing::random_tensor(Shape{3, 8, 8, 1}, 9, 0.3);
  ForwardOptions opt;
  opt.mode = AttentionMode::Conditioned;
  CHECK(predict_logits(gen, images, opt) == predict_logits(stat, images, opt));
}

TEST_CASE("after one update the static and generated arms diverge") {
  Model base = init_model(tiny(), 4);
  Tensor images = testing::random_tensor(Shape{8, 8, 8, 1}, 10, 0.4);
  for (auto& v : images.data()) v = std::clamp(v + 0.5f, 0.0f, 1.0f);
  AdaptConfig cfg;
  cfg.e0_factor = 1.0;
  cfg.learning_rate = 0.5;

  Model gen = base;
  cfg.mode = AdaptMode::Dct;
  prepare_for_mode(gen, cfg.mode);
  AdaptState sg = make_adapt_state(cfg, 4);
  sg.threshold = 10.0;
  sam_update(gen, images, cfg, sg);

  Model stat = base;
  cfg.mode = AdaptMode::StaticConditioner;
  prepare_for_mode(stat, cfg.mode);
  AdaptState ss = make_adapt_state(cfg, 4);
  ss.threshold = 10.0;
  sam_update(stat, images, cfg, ss);

  ForwardOptions opt;
  opt.mode = AttentionMode::Conditioned;
  opt.capture_tokens = true;
  Graph<float> g1, g2;
  const Tensor cg = run_forward(g1, gen, images, opt).conditioners[1];
  const Tensor cs = run_forward(g2, stat, images, opt).conditioners[1];
  double gen_spread = 0.0, stat_spread = 0.0, gap = 0.0;
  for (std::size_t j = 0; j < 24; ++j) {
    gen_spread += std::abs(cg.at(0, j) - cg.at(1, j));
    stat_spread += std::abs(cs.at(0, j) - cs.at(1, j));
    gap += std::abs(cg.at(0, j) - cs.at(0, j));
  }
  CHECK(gen_spread > 0.0);     // layer-1 class tokens, hence generated conditioners, vary per sample
  CHECK(stat_spread == 0.0);   // static ones do not
  CHECK(gap > 0.0);
}

TEST_CASE("prepare_for_mode switches conditioner kinds") {
  Model m = init_model(tiny(), 5);
  prepare_for_mode(m, AdaptMode::StaticConditioner);
  CHECK(conditioner_kind(m.params) == ConditionerKind::Static);
  prepare_for_mode(m, AdaptMode::Dct);
  CHECK(conditioner_kind(m.params) == ConditionerKind::Generator);
  CHECK_FALSE(m.params.contains(static_conditioner_name(0, 'q')));
  const auto before = m.params;
  prepare_for_mode(m, AdaptMode::LnOnly);
  CHECK(m.params == before);
}

}
