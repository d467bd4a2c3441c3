#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dct/autograd.hpp"
#include "dct/conditioners.hpp"
#include "dct/model_config.hpp"
#include "dct/params.hpp"

namespace dct {

/// Baseline is plain softmax(QK^T / sqrt(d_head)) V. Conditioned appends a
/// conditioner row to Q, K and V inside every block.
enum class AttentionMode { Baseline, Conditioned };

struct Model {
  ModelConfig config;
  ParamStore params;
};

/// Random backbone (Xavier-uniform projections, N(0, 0.02) embeddings, unit
/// LN) plus zero-initialised conditioner generators.
Model init_model(const ModelConfig& config, std::uint64_t seed);

struct ForwardOptions {
  AttentionMode mode = AttentionMode::Baseline;
  /// Conditioned mode only: the conditioner key column gets zero weight for
  /// every query, as if its score were -inf.
  bool mask_conditioner_keys = false;
  bool record_attention = false;
  /// Keep per-layer class tokens and conditioners for export.
  bool capture_tokens = false;
};

/// Attention of one layer for a whole batch. weights/logits are
/// [batch, heads, r, r] with r = n + 1 when a conditioner row is present
/// (last index) and r = n otherwise; index 0 is the class token. logits are
/// the scaled scores fed to the softmax.
struct AttentionRecord {
  std::size_t layer = 0;
  Tensor weights;
  Tensor logits;
  bool has_conditioner = false;
  std::size_t grid = 0;
  std::size_t patch_size = 0;

  std::size_t batch() const { return weights.dim(0); }
  std::size_t heads() const { return weights.dim(1); }
  std::size_t size() const { return weights.dim(2); }
  /// r x r weight matrix for one sample and head.
  Tensor matrix(std::size_t sample, std::size_t head) const;
};

template <typename T>
using ParamBinding = std::map<std::string, Var<T>, std::less<>>;

/// Binds every stored parameter as a leaf of graph; names in trainable get
/// gradients, the rest are constants.
template <typename T>
ParamBinding<T> bind_params(Graph<T>& graph, const ParamStore& params,
                            const std::set<std::string>& trainable);

/// images [b, H, W, ch] -> tokens [b, n, d]: class token at slot 0, patch
/// tokens in row-major grid order, positional embeddings added.
template <typename T>
Var<T> patch_embed(Graph<T>& graph, const ModelConfig& config, const ParamBinding<T>& params,
                   const Tensor& images);

/// Unscaled QK^T over the last two axes.
template <typename T>
Var<T> attention_scores(const Var<T>& q, const Var<T>& k);

template <typename T>
struct AugmentedQKV {
  Var<T> q, k, v;
};

/// Appends each conditioner as the last row of its matrix.
template <typename T>
AugmentedQKV<T> augment_qkv(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            const Var<T>& cq, const Var<T>& ck, const Var<T>& cv);

template <typename T>
struct AttentionOutput {
  Var<T> out;      // [..., n, dh]
  Var<T> weights;  // [..., r, r]
  Var<T> logits;   // [..., r, r]
};

/// Softmax attention over augmented inputs [..., n+1, dh]. Row n+1 (the
/// conditioner's own output) is computed and then dropped.
template <typename T>
AttentionOutput<T> conditioned_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                         bool mask_conditioner_keys = false);

template <typename T>
AttentionOutput<T> baseline_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v);

template <typename T>
struct BlockOutput {
  Var<T> tokens;
  std::optional<AttentionRecord> record;
  std::optional<ConditionerTriple<T>> conditioners;
};

/// Pre-norm block: LN -> (conditioned) attention -> W_o -> residual, then
/// LN -> MLP -> residual. Conditioners are generated from the class token of
/// the first LN's output.
template <typename T>
BlockOutput<T> block_forward(const ModelConfig& config, const Var<T>& tokens,
                             const ParamBinding<T>& params, std::size_t layer,
                             const ForwardOptions& options);

template <typename T>
struct ForwardResult {
  Var<T> logits;                        // [b, num_classes]
  std::vector<AttentionRecord> records;  // per layer, when recorded
  std::vector<Tensor> class_tokens;      // per layer [b, d], block outputs
  std::vector<Tensor> conditioners;      // per layer [b, 3d] (q | k | v)
};

template <typename T>
ForwardResult<T> model_forward(Graph<T>& graph, const ModelConfig& config,
                               const ParamBinding<T>& params, const Tensor& images,
                               const ForwardOptions& options);

/// Inference convenience: everything frozen, float path.
ForwardResult<float> run_forward(Graph<float>& graph, const Model& model, const Tensor& images,
                                 const ForwardOptions& options);
Tensor predict_logits(const Model& model, const Tensor& images, const ForwardOptions& options);

}  // namespace dct
