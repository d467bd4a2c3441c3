#include "dct/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "dct/errors.hpp"

namespace dct {

double TokenGeometry::max_distance() const {
  return distance.empty() ? 0.0 : *std::max_element(distance.begin(), distance.end());
}

TokenGeometry make_geometry(std::size_t grid, std::size_t patch_size) {
  if (grid == 0 || patch_size == 0) throw ConfigError("geometry needs a positive grid and patch size");
  TokenGeometry g;
  g.grid = grid;
  g.patch_size = patch_size;
  const auto p = static_cast<double>(patch_size);
  for (std::size_t i = 0; i < grid * grid; ++i) {
    g.centers.emplace_back((static_cast<double>(i % grid) + 0.5) * p, (static_cast<double>(i / grid) + 0.5) * p);
  }
  const std::size_t n = g.centers.size();
  g.distance.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      g.distance[i * n + j] = std::hypot(g.centers[i].first - g.centers[j].first,
                                         g.centers[i].second - g.centers[j].second);
  return g;
}

Tensor restrict_to_patches(const Tensor& weights, bool has_conditioner) {
  if (weights.rank() != 2 || weights.dim(0) != weights.dim(1)) {
    throw ShapeError("restrict_to_patches expects a square matrix, got " + shape_string(weights.shape()));
  }
  const std::size_t r = weights.dim(0);
  const std::size_t dropped = has_conditioner ? 2 : 1;
  if (r <= dropped) throw ShapeError("attention matrix has no patch tokens");
  const std::size_t n = r - dropped;
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j) mass += weights.at(i + 1, j + 1);
    if (mass <= 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = static_cast<float>(weights.at(i + 1, j + 1) / mass);
    }
  }
  return out;
}

double mean_attention_distance(const Tensor& patch_weights, const TokenGeometry& geom, bool per_query) {
  const std::size_t n = geom.num_patches();
  if (patch_weights.rank() != 2 || patch_weights.dim(0) != n || patch_weights.dim(1) != n) {
    throw ShapeError("attention matrix " + shape_string(patch_weights.shape()) + " does not match a " +
                     std::to_string(geom.grid) + "x" + std::to_string(geom.grid) + " patch grid");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) total += patch_weights.at(i, j) * geom.at(i, j);
  return per_query ? total / static_cast<double>(n) : total;
}

std::vector<double> attention_distance(const AttentionRecord& record, std::size_t sample,
                                       const TokenGeometry& geom, bool per_query) {
  if (record.grid != geom.grid || record.patch_size != geom.patch_size) {
    throw ShapeError("attention record grid " + std::to_string(record.grid) + "/" +
                     std::to_string(record.patch_size) + " does not match geometry " +
                     std::to_string(geom.grid) + "/" + std::to_string(geom.patch_size));
  }
  std::vector<double> out(record.heads());
  for (std::size_t h = 0; h < record.heads(); ++h) {
    out[h] = mean_attention_distance(restrict_to_patches(record.matrix(sample, h), record.has_conditioner),
                                     geom, per_query);
  }
  return out;
}

void ProfileAccumulator::add(const std::vector<AttentionRecord>& records) {
  if (records.empty()) return;
  if (sums_.empty()) {
    sums_.resize(records.size());
    for (std::size_t l = 0; l < records.size(); ++l) sums_[l].assign(records[l].heads(), 0.0);
  }
  if (records.size() != sums_.size()) throw ShapeError("profile: layer count changed between batches");
  const std::size_t batch = records.front().batch();
  for (std::size_t l = 0; l < records.size(); ++l) {
    for (std::size_t s = 0; s < batch; ++s) {
      const auto d = attention_distance(records[l], s, geom_, per_query_);
      for (std::size_t h = 0; h < d.size(); ++h) sums_[l][h] += d[h];
    }
  }
  samples_ += batch;
}

AttentionProfile ProfileAccumulator::result() const {
  AttentionProfile p;
  p.samples = samples_;
  if (samples_ == 0) return p;
  const auto count = static_cast<double>(samples_);
  for (const auto& layer : sums_) {
    std::vector<double> heads(layer.size());
    double total = 0.0;
    for (std::size_t h = 0; h < layer.size(); ++h) {
      heads[h] = layer[h] / count;
      total += heads[h];
    }
    p.per_layer.push_back(heads.empty() ? 0.0 : total / static_cast<double>(heads.size()));
    p.per_head.push_back(std::move(heads));
  }
  return p;
}

AttentionProfile profile(const std::vector<std::vector<AttentionRecord>>& batches, const TokenGeometry& geom,
                         bool per_query) {
  ProfileAccumulator acc(geom, per_query);
  for (const auto& records : batches) acc.add(records);
  return acc.result();
}

Tensor head_averaged_tokens(const AttentionRecord& record, std::size_t sample) {
  const std::size_t r = record.size();
  const std::size_t n = record.has_conditioner ? r - 1 : r;
  std::vector<double> avg(n * n, 0.0);
  for (std::size_t h = 0; h < record.heads(); ++h) {
    const float* w = record.weights.ptr() + (sample * record.heads() + h) * r * r;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) avg[i * n + j] += w[i * r + j];
  }
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j) mass += avg[i * n + j];
    if (mass <= 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = static_cast<float>(avg[i * n + j] / mass);
  }
  return out;
}

Rollout rollout_from_matrices(const std::vector<Tensor>& layer_matrices) {
  if (layer_matrices.empty()) throw ShapeError("rollout needs at least one layer");
  const std::size_t n = layer_matrices.front().dim(0);
  if (n < 2) throw ShapeError("rollout needs at least one patch token");
  // R = A_L ... A_1 with A = 0.5 W + 0.5 I, accumulated in double.
  std::vector<double> rollout(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) rollout[i * n + i] = 1.0;
  std::vector<double> mixed(n * n), next(n * n);
  for (const auto& w : layer_matrices) {
    if (w.rank() != 2 || w.dim(0) != n || w.dim(1) != n) throw ShapeError("rollout layers disagree in size");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) mixed[i * n + j] = 0.5 * w.at(i, j) + (i == j ? 0.5 : 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += mixed[i * n + k] * rollout[k * n + j];
        next[i * n + j] = acc;
      }
    rollout.swap(next);
  }

  Rollout out;
  out.saliency.assign(rollout.begin() + 1, rollout.begin() + static_cast<std::ptrdiff_t>(n));
  double mass = 0.0;
  for (double v : out.saliency) mass += v;
  if (mass <= 1e-12) {
    out.degenerate = true;
    std::fill(out.saliency.begin(), out.saliency.end(), 1.0 / static_cast<double>(n - 1));
  } else {
    for (double& v : out.saliency) v /= mass;
  }
  return out;
}

Rollout attention_rollout(const std::vector<AttentionRecord>& records, std::size_t sample) {
  std::vector<Tensor> layers;
  layers.reserve(records.size());
  for (const auto& rec : records) layers.push_back(head_averaged_tokens(rec, sample));
  return rollout_from_matrices(layers);
}

std::vector<EmbeddingRow> export_embeddings(const Model& model, const std::vector<StreamBatch>& batches,
                                            AttentionMode mode, EmbeddingKind what,
                                            const std::string& domain) {
  if (what == EmbeddingKind::Conditioners &&
      (mode != AttentionMode::Conditioned || conditioner_kind(model.params) == ConditionerKind::None)) {
    throw ConfigError("conditioner export needs a conditioned model");
  }
  ForwardOptions options;
  options.mode = mode;
  options.capture_tokens = true;
  std::vector<EmbeddingRow> rows;
  for (const auto& batch : batches) {
    Graph<float> graph;
    auto fwd = run_forward(graph, model, batch.images, options);
    const auto& per_layer = what == EmbeddingKind::ClassTokens ? fwd.class_tokens : fwd.conditioners;
    for (std::size_t s = 0; s < batch.ids.size(); ++s) {
      for (std::size_t l = 0; l < per_layer.size(); ++l) {
        const Tensor& t = per_layer[l];
        const std::size_t width = t.cols();
        EmbeddingRow row;
        row.sample_id = batch.ids[s];
        row.domain = domain;
        row.label = batch.labels[s];
        row.layer = l;
        row.features.assign(t.ptr() + s * width, t.ptr() + (s + 1) * width);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

const MetricsRow& RunningMetrics::update(const BatchOutcome& outcome) {
  if (outcome.correct > outcome.n_samples) throw std::invalid_argument("more correct predictions than samples");
  seen_ += outcome.n_samples;
  correct_ += outcome.correct;
  if (outcome.skipped) ++skipped_;
  MetricsRow row;
  row.batch_idx = rows_.size();
  row.n_samples = outcome.n_samples;
  row.n_selected_first = outcome.n_selected_first;
  row.n_selected_second = outcome.n_selected_second;
  row.loss = outcome.loss;
  row.batch_accuracy = outcome.n_samples == 0
                           ? 0.0
                           : static_cast<double>(outcome.correct) / static_cast<double>(outcome.n_samples);
  row.running_accuracy = running_accuracy();
  row.skipped = outcome.skipped;
  rows_.push_back(row);
  return rows_.back();
}

double RunningMetrics::running_accuracy() const {
  return seen_ == 0 ? 0.0 : static_cast<double>(correct_) / static_cast<double>(seen_);
}

}  // namespace dct
