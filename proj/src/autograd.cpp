#include "dct/autograd.hpp"

#include <optional>

namespace dct {

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(const Var<T>& v) const {
  if (v.graph_ != this) {
    throw std::invalid_argument("variable belongs to a different graph");
  }
  return nodes_.at(v.id_);
}

template <typename T>
Var<T> Graph<T>::leaf(BasicTensor<T> value, std::string name, bool trainable) {
  value.require_finite("leaf '" + name + "'");
  if (trainable && !trainable_names_.insert(name).second) {
    throw std::invalid_argument("duplicate trainable leaf '" + name + "'");
  }
  Node n;
  n.value = std::move(value);
  n.name = std::move(name);
  n.requires_grad = trainable;
  n.trainable_leaf = trainable;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(BasicTensor<T> value) {
  return leaf(std::move(value), "", false);
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, BasicTensor<T> value,
                        const std::vector<Var<T>>& inputs, BackwardFn<T> backward) {
  value.require_finite(op);
  Node n;
  n.value = std::move(value);
  n.name = std::string(op);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    n.requires_grad = n.requires_grad || node(in).requires_grad;
    n.inputs.push_back(in.id_);
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Gradients<T> Graph<T>::backward(const Var<T>& loss) const {
  if (loss.graph_ != this || loss.id_ >= nodes_.size()) {
    throw std::invalid_argument("loss node is not part of this graph");
  }
  const auto& loss_value = nodes_[loss.id_].value;
  if (loss_value.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     shape_string(loss_value.shape()));
  }

  std::vector<std::optional<BasicTensor<T>>> grads(loss.id_ + 1);
  grads[loss.id_] = BasicTensor<T>::full(loss_value.shape(), T(1));

  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!grads[i] || !n.requires_grad || !n.backward) continue;
    BackwardArgs<T> args{n.value, *grads[i], {}, {}};
    args.inputs.reserve(n.inputs.size());
    args.input_grads.reserve(n.inputs.size());
    for (std::size_t in : n.inputs) {
      const Node& src = nodes_[in];
      args.inputs.push_back(&src.value);
      if (src.requires_grad) {
        if (!grads[in]) grads[in] = BasicTensor<T>::zeros(src.value.shape());
        args.input_grads.push_back(&*grads[in]);
      } else {
        args.input_grads.push_back(nullptr);
      }
    }
    n.backward(args);
  }

  Gradients<T> out;
  for (std::size_t i = 0; i <= loss.id_; ++i) {
    if (nodes_[i].trainable_leaf && grads[i]) {
      grads[i]->require_finite("gradient of '" + nodes_[i].name + "'");
      out.emplace(nodes_[i].name, std::move(*grads[i]));
    }
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace dct
