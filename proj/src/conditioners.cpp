#include "dct/conditioners.hpp"

#include <stdexcept>

#include "dct/ops.hpp"

namespace dct {

std::string generator_weight_name(std::size_t layer) {
  return "gen." + std::to_string(layer) + ".weight";
}
std::string generator_bias_name(std::size_t layer) {
  return "gen." + std::to_string(layer) + ".bias";
}
std::string static_conditioner_name(std::size_t layer, char part) {
  return "static." + std::to_string(layer) + "." + part;
}

template <typename T>
ConditionerTriple<T> generate(const Var<T>& class_token, const Var<T>& weight, const Var<T>& bias) {
  const Shape in = class_token.shape();
  const std::size_t d = in.back();
  if (in.size() < 2 || in[in.size() - 2] != 1) {
    throw ShapeError("generate: class token must be [..., 1, d], got " + shape_string(in));
  }
  if (weight.shape() != Shape{d, 3 * d} || bias.shape() != Shape{3 * d}) {
    throw ShapeError("generate: generator for d=" + std::to_string(d) + " must be [d, 3d] + [3d], got " +
                     shape_string(weight.shape()) + " and " + shape_string(bias.shape()));
  }
  auto out = add(matmul(class_token, weight), bias);  // [..., 1, 3d]
  Shape split = in;
  split[split.size() - 2] = 3;
  auto rows = reshape(out, split);  // [..., 3, d]
  return {slice_rows(rows, 0, 1), slice_rows(rows, 1, 2), slice_rows(rows, 2, 3)};
}

template <typename T>
ConditionerTriple<T> static_conditioners(const std::map<std::string, Var<T>, std::less<>>& bound,
                                         std::size_t layer, std::size_t batch) {
  auto fetch = [&](char part) {
    auto it = bound.find(static_conditioner_name(layer, part));
    if (it == bound.end()) {
      throw std::logic_error("static conditioners requested for layer " + std::to_string(layer) +
                             " but the model is not in the static-conditioner ablation");
    }
    const Var<T>& v = it->second;
    auto zeros = v.graph().constant(BasicTensor<T>(Shape{batch, 1, v.shape().back()}));
    return add(zeros, v);
  };
  return {fetch('q'), fetch('k'), fetch('v')};
}

void init_generator(ParamStore& params, const ModelConfig& config) {
  const std::size_t d = config.embed_dim;
  for (std::size_t l = 0; l < config.depth; ++l) {
    params.add(generator_weight_name(l), Tensor(Shape{d, 3 * d}));
    params.add(generator_bias_name(l), Tensor(Shape{3 * d}));
  }
}

void init_static_conditioners(ParamStore& params, const ModelConfig& config) {
  params.remove_prefix("gen.");
  params.remove_prefix("static.");
  for (std::size_t l = 0; l < config.depth; ++l) {
    for (char part : {'q', 'k', 'v'}) {
      params.add(static_conditioner_name(l, part), Tensor(Shape{config.embed_dim}));
    }
  }
}

ConditionerKind conditioner_kind(const ParamStore& params) {
  if (params.contains(generator_weight_name(0))) return ConditionerKind::Generator;
  if (params.contains(static_conditioner_name(0, 'q'))) return ConditionerKind::Static;
  return ConditionerKind::None;
}

template ConditionerTriple<float> generate(const Var<float>&, const Var<float>&, const Var<float>&);
template ConditionerTriple<double> generate(const Var<double>&, const Var<double>&, const Var<double>&);
template ConditionerTriple<float> static_conditioners(
    const std::map<std::string, Var<float>, std::less<>>&, std::size_t, std::size_t);
template ConditionerTriple<double> static_conditioners(
    const std::map<std::string, Var<double>, std::less<>>&, std::size_t, std::size_t);

}  // namespace dct
