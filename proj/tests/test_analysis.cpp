#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "dct/adaptation.hpp"
#include "dct/analysis.hpp"
#include "dct/errors.hpp"

using namespace dct;

namespace {

Tensor uniform(std::size_t n) { return Tensor(Shape{n, n}, 1.0f / static_cast<float>(n)); }

Tensor identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

Tensor random_stochastic(std::size_t n, std::uint64_t seed) {
  Tensor t = testing::random_tensor(Shape{n, n}, seed);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (t.at(i, j) = std::exp(t.at(i, j)));
    for (std::size_t j = 0; j < n; ++j) t.at(i, j) = static_cast<float>(t.at(i, j) / s);
  }
  return t;
}

// Record holding the given token matrices as batch samples, one head.
AttentionRecord record_of(const std::vector<Tensor>& samples, std::size_t grid, std::size_t patch, bool cond) {
  const std::size_t r = samples.front().dim(0);
  AttentionRecord rec;
  rec.weights = Tensor(Shape{samples.size(), 1, r, r});
  for (std::size_t s = 0; s < samples.size(); ++s) std::copy_n(samples[s].ptr(), r * r, rec.weights.ptr() + s * r * r);
  rec.logits = rec.weights;
  rec.has_conditioner = cond;
  rec.grid = grid;
  rec.patch_size = patch;
  return rec;
}

ModelConfig tiny() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.depth = 2;
  c.num_classes = 3;
  return c;
}

std::vector<StreamBatch> batches_of(std::size_t count, std::size_t b, std::uint64_t seed) {
  std::vector<StreamBatch> out;
  for (std::size_t i = 0; i < count; ++i) {
    StreamBatch batch;
    batch.images = testing::random_tensor(Shape{b, 8, 8, 1}, seed + i, 0.2);
    for (auto& v : batch.images.data()) v = std::clamp(v + 0.5f, 0.0f, 1.0f);
    for (std::size_t j = 0; j < b; ++j) {
      batch.ids.push_back(i * b + j);
      batch.labels.push_back(static_cast<std::int32_t>(j % 3));
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("attention distance: uniform, identity and farthest-token oracles") {
  const TokenGeometry geom = make_geometry(2, 4);
  double brute = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      brute += 0.25 * std::hypot(geom.centers[i].first - geom.centers[j].first,
                                 geom.centers[i].second - geom.centers[j].second);
  brute /= 4;
  const double got = mean_attention_distance(uniform(4), geom);
  CHECK(got == doctest::Approx(brute).epsilon(1e-9));
  CHECK(std::abs(got - 3.4142) < 1e-3);
  CHECK(mean_attention_distance(identity(4), geom) == 0.0);

  Tensor far(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) far.at(i, 3 - i) = 1.0f;  // diagonal opposite on a 2x2 grid
  CHECK(mean_attention_distance(far, geom) == doctest::Approx(geom.max_distance()));
  CHECK(geom.max_distance() == doctest::Approx(4.0 * std::sqrt(2.0)));
}

TEST_CASE("restriction drops the class and conditioner tokens and renormalises") {
  Tensor w(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    w.at(i, 0) = 0.5f;
    w.at(i, 1) = 0.1f;
    w.at(i, 2) = 0.3f;
    w.at(i, 3) = 0.1f;
  }
  const Tensor r = restrict_to_patches(w, true);
  CHECK(r.shape() == Shape{2, 2});
  CHECK(r.at(0, 0) == doctest::Approx(0.25));
  CHECK(r.at(1, 1) == doctest::Approx(0.75));
  CHECK(restrict_to_patches(w, false).shape() == Shape{3, 3});
  CHECK_THROWS_AS(restrict_to_patches(Tensor(Shape{2, 3}), false), ShapeError);
}

TEST_CASE("profile averages: single sample and duplicated samples") {
  const TokenGeometry geom = make_geometry(2, 4);
  const Tensor m = random_stochastic(6, 3);
  const auto rec = record_of({m}, 2, 4, true);
  const double single = attention_distance(rec, 0, geom)[0];
  const auto p = profile({{rec}}, geom);
  CHECK(p.samples == 1);
  CHECK(p.per_head[0][0] == single);
  CHECK(p.per_layer[0] == single);
  const auto twice = profile({{record_of({m, m}, 2, 4, true)}}, geom);
  CHECK(twice.per_layer[0] == doctest::Approx(single).epsilon(1e-12));
  CHECK_THROWS_AS(attention_distance(rec, 0, make_geometry(3, 4)), ShapeError);
}

TEST_CASE("rollout: identity is degenerate and flagged") {
  const Rollout r = rollout_from_matrices({identity(5)});
  CHECK(r.degenerate);
  for (double v : r.saliency) CHECK(v == 0.25);
}

TEST_CASE("rollout: class token attending to one patch gives a point mass") {
  Tensor a = identity(5);
  a.at(0, 0) = 0.0f;
  a.at(0, 3) = 1.0f;
  const Rollout r = rollout_from_matrices({a, a, a});
  CHECK_FALSE(r.degenerate);
  for (std::size_t j = 0; j < 4; ++j) CHECK(r.saliency[j] == doctest::Approx(j == 2 ? 1.0 : 0.0));
}

TEST_CASE("rollout matches an explicit matrix product") {
  const Tensor a1 = random_stochastic(5, 7), a2 = random_stochastic(5, 8);
  auto mixed = [](const Tensor& a, std::size_t i, std::size_t j) { return 0.5 * a.at(i, j) + (i == j ? 0.5 : 0.0); };
  std::vector<double> row(5, 0.0);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t k = 0; k < 5; ++k) row[j] += mixed(a2, 0, k) * mixed(a1, k, j);
  double mass = 0.0;
  for (std::size_t j = 1; j < 5; ++j) mass += row[j];
  const Rollout r = rollout_from_matrices({a1, a2});
  double total = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(r.saliency[j] - row[j + 1] / mass) < 1e-6);
    total += r.saliency[j];
  }
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("head averaging drops the conditioner row") {
  const Tensor m = random_stochastic(6, 9);
  const Tensor avg = head_averaged_tokens(record_of({m}, 2, 4, true), 0);
  CHECK(avg.shape() == Shape{5, 5});
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += avg.at(i, j);
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("embedding export: row counts and static conditioners") {
  Model m = init_model(tiny(), 3);
  const auto batches = batches_of(2, 5, 4);
  const auto rows = export_embeddings(m, batches, AttentionMode::Baseline, EmbeddingKind::ClassTokens, "clean");
  CHECK(rows.size() == 10 * 2);
  CHECK(rows.front().features.size() == 8);
  CHECK(rows.front().domain == "clean");
  CHECK_THROWS_AS(export_embeddings(m, batches, AttentionMode::Baseline, EmbeddingKind::Conditioners, "x"),
                  ConfigError);

  prepare_for_mode(m, AdaptMode::StaticConditioner);
  m.params.at(static_conditioner_name(1, 'q')) = testing::random_tensor(Shape{8}, 5);
  const auto cond = export_embeddings(m, batches, AttentionMode::Conditioned, EmbeddingKind::Conditioners, "x");
  REQUIRE(cond.size() == 20);
  for (const auto& row : cond) {
    CHECK(row.features.size() == 24);
    const auto& first = cond[row.layer].features;
    CHECK(row.features == first);
  }
}

TEST_CASE("running metrics") {
  RunningMetrics all;
  for (int i = 0; i < 3; ++i) all.update({4, 4, 4, std::nullopt, 4, false});
  CHECK(all.running_accuracy() == 1.0);

  RunningMetrics m;
  const std::vector<std::pair<std::size_t, std::size_t>> outcomes{{5, 3}, {7, 0}, {2, 2}, {9, 4}};
  std::size_t seen = 0, correct = 0;
  for (const auto& [n, c] : outcomes) {
    const bool skip = c == 0;
    const auto& row = m.update({n, skip ? 0 : n, skip ? 0 : n, skip ? std::nullopt : std::optional<double>(0.5), c, skip});
    seen += n;
    correct += c;
    CHECK(row.running_accuracy == static_cast<double>(correct) / static_cast<double>(seen));
    CHECK(row.batch_accuracy == static_cast<double>(c) / static_cast<double>(n));
  }
  CHECK(m.seen() == 23);
  CHECK(m.skipped_batches() == 1);
  CHECK(m.rows()[1].batch_idx == 1);
  CHECK_THROWS(m.update({1, 0, 0, std::nullopt, 2, false}));
}

TEST_CASE("csv writers: headers, round-trip numbers and empty loss") {
  const auto dir = testing::scratch_dir("csv");
  std::vector<MetricsRow> rows(2);
  rows[0].n_samples = 3;
  rows[0].loss = 0.1;
  rows[0].batch_accuracy = 2.0 / 3.0;
  rows[1].batch_idx = 1;
  rows[1].skipped = true;
  write_metrics_csv(dir / "m.csv", rows);
  std::ifstream in(dir / "m.csv");
  std::string header, first, second;
  std::getline(in, header);
  std::getline(in, first);
  std::getline(in, second);
  CHECK(header == "batch_idx,n_samples,n_selected_pass1,n_selected_pass2,loss,batch_accuracy,running_accuracy,skipped");
  CHECK(first == "0,3,0,0,0.1," + format_number(2.0 / 3.0) + ",0,0");
  CHECK(second == "1,0,0,0,,0,0,1");
  CHECK(std::stod(format_number(2.0 / 3.0)) == 2.0 / 3.0);

  write_profile_csv(dir / "p.csv", {{"5", 1, 2, 3.25}});
  std::ifstream p(dir / "p.csv");
  std::stringstream ps;
  ps << p.rdbuf();
  CHECK(ps.str() == "severity,layer,head,mean_distance_px\n5,1,2,3.25\n");

  CHECK_THROWS_AS(write_metrics_csv(dir, rows), ArtifactError);
}

}
