#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dct/data.hpp"
#include "dct/model.hpp"

namespace dct {

/// Pixel geometry of the patch grid. Patch i sits at row i / grid,
/// column i % grid; its center is ((col + 0.5) p, (row + 0.5) p).
struct TokenGeometry {
  std::size_t grid = 0;
  std::size_t patch_size = 0;
  std::vector<std::pair<double, double>> centers;  // (x, y)
  std::vector<double> distance;                    // N x N, row-major

  std::size_t num_patches() const { return centers.size(); }
  double at(std::size_t i, std::size_t j) const { return distance[i * num_patches() + j]; }
  double max_distance() const;
};

TokenGeometry make_geometry(std::size_t grid, std::size_t patch_size);

/// Drops the class-token row/column (index 0) and, if present, the
/// conditioner row/column (last index) of an r x r attention matrix and
/// renormalises each remaining row to sum to 1. Rows whose restricted mass is
/// zero stay zero.
Tensor restrict_to_patches(const Tensor& weights, bool has_conditioner);

/// Attention-weighted pixel distance over an N x N row-stochastic patch matrix.
/// With per_query the double sum is divided by N (mean distance per query).
double mean_attention_distance(const Tensor& patch_weights, const TokenGeometry& geom,
                               bool per_query = true);

/// Per-head mean attention distance for one sample of a record.
std::vector<double> attention_distance(const AttentionRecord& record, std::size_t sample,
                                       const TokenGeometry& geom, bool per_query = true);

struct AttentionProfile {
  std::vector<std::vector<double>> per_head;  // [layer][head]
  std::vector<double> per_layer;              // head average
  std::size_t samples = 0;
};

/// Running average of attention distances over any number of forward passes.
class ProfileAccumulator {
 public:
  explicit ProfileAccumulator(TokenGeometry geom, bool per_query = true)
      : geom_(std::move(geom)), per_query_(per_query) {}

  /// records: one per layer, all covering the same batch.
  void add(const std::vector<AttentionRecord>& records);
  AttentionProfile result() const;

 private:
  TokenGeometry geom_;
  bool per_query_;
  std::vector<std::vector<double>> sums_;
  std::size_t samples_ = 0;
};

AttentionProfile profile(const std::vector<std::vector<AttentionRecord>>& batches,
                         const TokenGeometry& geom, bool per_query = true);

struct Rollout {
  std::vector<double> saliency;  // over the N patch tokens, sums to 1
  bool degenerate = false;       // class row had no patch mass; saliency is uniform
};

/// Heads averaged, conditioner dropped, rows renormalised, each layer mixed
/// as 0.5 A + 0.5 I, multiplied last-to-first; the class-token row restricted
/// to patches is returned, renormalised.
Rollout rollout_from_matrices(const std::vector<Tensor>& layer_matrices);
Rollout attention_rollout(const std::vector<AttentionRecord>& records, std::size_t sample);

/// Head-averaged n x n token matrix for one sample (conditioner removed, rows renormalised).
Tensor head_averaged_tokens(const AttentionRecord& record, std::size_t sample);

// ---------------------------------------------------------------------------
// Embedding export

enum class EmbeddingKind { ClassTokens, Conditioners };

struct EmbeddingRow {
  std::size_t sample_id = 0;
  std::string domain;
  std::int32_t label = 0;
  std::size_t layer = 0;
  std::vector<float> features;
};

/// One row per (sample, layer). Conditioner rows carry 3d features (q | k | v)
/// and require a conditioned forward.
std::vector<EmbeddingRow> export_embeddings(const Model& model, const std::vector<StreamBatch>& batches,
                                            AttentionMode mode, EmbeddingKind what,
                                            const std::string& domain);

// ---------------------------------------------------------------------------
// Metrics

struct BatchOutcome {
  std::size_t n_samples = 0;
  std::size_t n_selected_first = 0;
  std::size_t n_selected_second = 0;
  std::optional<double> loss;
  std::size_t correct = 0;
  bool skipped = false;
};

struct MetricsRow {
  std::size_t batch_idx = 0;
  std::size_t n_samples = 0;
  std::size_t n_selected_first = 0;
  std::size_t n_selected_second = 0;
  std::optional<double> loss;
  double batch_accuracy = 0.0;
  double running_accuracy = 0.0;
  bool skipped = false;
};

class RunningMetrics {
 public:
  const MetricsRow& update(const BatchOutcome& outcome);

  const std::vector<MetricsRow>& rows() const { return rows_; }
  double running_accuracy() const;
  std::size_t seen() const { return seen_; }
  std::size_t correct() const { return correct_; }
  std::size_t skipped_batches() const { return skipped_; }

 private:
  std::vector<MetricsRow> rows_;
  std::size_t seen_ = 0;
  std::size_t correct_ = 0;
  std::size_t skipped_ = 0;
};

// ---------------------------------------------------------------------------
// CSV writers (UTF-8, header row, '.' decimal separator)

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
void write_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingRow>& rows);

struct ProfileRow {
  std::string label;  // e.g. severity
  std::size_t layer = 0;
  std::size_t head = 0;
  double distance = 0.0;
};
void write_profile_csv(const std::filesystem::path& path, const std::vector<ProfileRow>& rows);

struct RolloutRow {
  std::size_t sample_id = 0;
  std::int32_t label = 0;
  bool degenerate = false;
  std::vector<double> saliency;
};
void write_rollout_csv(const std::filesystem::path& path, const std::vector<RolloutRow>& rows);

/// Shortest round-trip decimal form; used for every number written to CSV.
std::string format_number(double value);
std::string format_number(float value);

}  // namespace dct
