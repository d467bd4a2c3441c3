#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dct/data.hpp"
#include "dct/model.hpp"

namespace dct {

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 3e-3;  // Adam peak rate, cosine-decayed to zero
  double weight_decay = 0.0;
  double label_smoothing = 0.0;
  std::uint64_t seed = 0;       // initialisation and shuffling

  void validate() const;
};

struct PretrainLogRow {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;            // mean cross-entropy over the epoch
  double train_accuracy = 0.0;  // accuracy of the pre-update predictions
};

struct PretrainResult {
  Model model;
  std::vector<PretrainLogRow> log;
};

/// Supervised cross-entropy training of every non-conditioner parameter with
/// the baseline forward. The model carries zero generators on return.
/// Throws ConfigError when the data do not match the config and NumericError
/// when the loss diverges.
PretrainResult pretrain(const ModelConfig& config, const SyntheticDataset& train,
                        const PretrainConfig& options);

/// Mean cross-entropy of logits [b, C] against integer labels, optionally
/// against targets smoothed toward uniform.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int32_t>& labels, double smoothing = 0.0);

}  // namespace dct
