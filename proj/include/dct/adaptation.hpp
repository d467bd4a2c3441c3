#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dct/analysis.hpp"
#include "dct/autograd.hpp"
#include "dct/data.hpp"
#include "dct/model.hpp"

namespace dct {

enum class AdaptMode { Dct, StaticConditioner, LnOnly, None };

std::string to_string(AdaptMode mode);
/// Accepts "dct", "static-conditioner", "ln-only", "none".
AdaptMode parse_adapt_mode(std::string_view name);
/// dct and static-conditioner run the conditioned forward; the others the baseline one.
AttentionMode attention_mode_for(AdaptMode mode);

struct AdaptConfig {
  double learning_rate = 0.01;
  double rho = 0.05;
  double e0_factor = 0.4;
  AdaptMode mode = AdaptMode::Dct;
  double momentum = 0.9;
  /// Score each batch with a fresh forward after its update instead of the
  /// first pass of the update.
  bool score_after_update = false;
  /// adapt_stream scales learning_rate by (stream batch size / this); 0 disables.
  std::size_t lr_reference_batch = 64;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  /// E0 = e0_factor * ln(num_classes).
  double entropy_threshold(std::size_t num_classes) const;
};

/// Per-row Shannon entropy (nats) of softmax(logits): [b, C] -> [b].
template <typename T>
Var<T> entropy(const Var<T>& logits);

/// Float64 reference used for reporting: one entropy per row of logits [b, C].
std::vector<double> entropy_values(const Tensor& logits);

/// mask[i] = entropies[i] < e0 (strict).
std::vector<bool> reliability_mask(std::span<const double> entropies, double e0);

template <typename T>
struct AdaptationLoss {
  std::optional<Var<T>> loss;  // absent when nothing is selected
  std::size_t selected = 0;
  std::vector<bool> mask;
  std::vector<double> entropies;
};

/// Mean entropy over the samples whose entropy is below e0.
template <typename T>
AdaptationLoss<T> adaptation_loss(const Var<T>& logits, double e0);

/// Names of the parameters a mode updates, in store order: LN gammas/betas,
/// plus generator weights (dct) or static vectors (static-conditioner).
std::vector<std::string> select_adaptable(const ParamStore& params, AdaptMode mode);

/// Makes the store carry the conditioners a mode needs: generators for dct,
/// static vectors for static-conditioner. Other modes are left untouched.
void prepare_for_mode(Model& model, AdaptMode mode);

struct AdaptState {
  std::map<std::string, TensorD> momentum;  // created on first update
  std::size_t step = 0;                     // batches processed
  double threshold = 0.0;                   // E0, fixed for the run
  RunningMetrics metrics;
};

AdaptState make_adapt_state(const AdaptConfig& config, std::size_t num_classes);

/// One evaluation of the objective at the store's current values.
struct PassResult {
  std::optional<double> loss;  // absent when nothing was selected
  std::size_t selected = 0;
  Gradients<float> grads;      // over the adaptable names; missing entries are zero
};

using PassFn = std::function<PassResult(const ParamStore&)>;

struct SamStats {
  std::size_t selected_first = 0;
  std::size_t selected_second = 0;
  std::optional<double> loss;  // first-pass loss
  double grad_norm = 0.0;
  bool skipped = false;
};

/// Two-pass sharpness-aware step with momentum on an arbitrary objective.
/// eps = rho g / (||g|| + 1e-12) over the whole subset; the second pass runs
/// at theta + eps, parameters then return to their saved values before
/// m <- momentum m + g2 and theta <- theta - lr m. A skip on either pass
/// leaves the store bitwise unchanged. Non-finite losses or gradients restore
/// the store and throw NumericError.
SamStats sam_step(ParamStore& params, const std::vector<std::string>& adaptable, const PassFn& pass,
                  const AdaptConfig& config, AdaptState& state);

struct SamUpdate {
  SamStats stats;
  Tensor logits;  // first-pass logits [b, C]
};

/// sam_step with the entropy objective of the model on one batch of images.
SamUpdate sam_update(Model& model, const Tensor& images, const AdaptConfig& config,
                     AdaptState& state);

struct AdaptResult {
  Model model;
  std::vector<MetricsRow> rows;
  double final_accuracy = 0.0;
  std::size_t skipped_batches = 0;
};

/// Online adaptation over a stream: each batch is scored and used for one
/// update, with parameters carried forward and never reset.
AdaptResult adapt_stream(Model model, const std::vector<StreamBatch>& stream, const AdaptConfig& config);

/// Frozen accuracy of a model over a stream in the given attention mode.
double evaluate_stream(const Model& model, const std::vector<StreamBatch>& stream, AttentionMode mode);

std::size_t count_correct(const Tensor& logits, std::span<const std::int32_t> labels);

}  // namespace dct
