#pragma once

// Domain conditioners: per layer, three d-vectors (query, key, value) that
// are appended to the projected Q, K, V of self-attention. They come either
// from a per-layer affine generator applied to the class token, or, in the
// ablation, from directly learnable static vectors.

#include <cstddef>
#include <map>
#include <string>

#include "dct/autograd.hpp"
#include "dct/model_config.hpp"
#include "dct/params.hpp"

namespace dct {

enum class ConditionerKind { None, Generator, Static };

template <typename T>
struct ConditionerTriple {
  Var<T> query;
  Var<T> key;
  Var<T> value;
};

std::string generator_weight_name(std::size_t layer);
std::string generator_bias_name(std::size_t layer);
/// part is one of 'q', 'k', 'v'.
std::string static_conditioner_name(std::size_t layer, char part);

/// Generator output split into contiguous d-chunks, in (query, key, value)
/// order. class_token is [..., 1, d], weight [d, 3d], bias [3d]; each
/// conditioner comes back as [..., 1, d].
template <typename T>
ConditionerTriple<T> generate(const Var<T>& class_token, const Var<T>& weight, const Var<T>& bias);

/// Learnable per-layer vectors broadcast to every sample: [batch, 1, d] each.
/// Throws std::logic_error when the bound parameters carry no static
/// conditioners for the layer.
template <typename T>
ConditionerTriple<T> static_conditioners(const std::map<std::string, Var<T>, std::less<>>& bound,
                                         std::size_t layer, std::size_t batch);

/// Adds zero-initialised gen.{l}.weight [d, 3d] / gen.{l}.bias [3d] for every layer.
void init_generator(ParamStore& params, const ModelConfig& config);

/// Switches a model to the static-conditioner ablation: drops the generators
/// and adds zero static.{l}.q|k|v vectors.
void init_static_conditioners(ParamStore& params, const ModelConfig& config);

ConditionerKind conditioner_kind(const ParamStore& params);

}  // namespace dct
