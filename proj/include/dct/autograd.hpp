#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dct/tensor.hpp"

namespace dct {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// What a node's backward callback receives. input_grads[i] is null when
/// input i does not need a gradient; otherwise gradients are accumulated into it.
template <typename T>
struct BackwardArgs {
  const BasicTensor<T>& output;
  const BasicTensor<T>& grad;
  std::vector<const BasicTensor<T>*> inputs;
  std::vector<BasicTensor<T>*> input_grads;
};

template <typename T>
using BackwardFn = std::function<void(const BackwardArgs<T>&)>;

/// Gradients keyed by trainable leaf name.
template <typename T>
using Gradients = std::map<std::string, BasicTensor<T>>;

/// Define-by-run tape. Nodes are appended in execution order, so the tape is
/// already a topological order and backward is a single reverse sweep.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Parameter leaf. Trainable leaf names must be unique within a graph.
  Var<T> leaf(BasicTensor<T> value, std::string name, bool trainable);
  Var<T> constant(BasicTensor<T> value);

  /// Appends an operation node. The value is checked for finiteness.
  Var<T> record(std::string_view op, BasicTensor<T> value,
                const std::vector<Var<T>>& inputs, BackwardFn<T> backward);

  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(const Var<T>& v) const { return node(v).requires_grad; }
  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }

  /// Reverse-mode sweep from a scalar loss. Frozen leaves get no storage;
  /// trainable leaves the loss does not depend on are absent from the result.
  Gradients<T> backward(const Var<T>& loss) const;

 private:
  struct Node {
    BasicTensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn<T> backward;
    std::string name;
    bool requires_grad = false;
    bool trainable_leaf = false;
  };

  const Node& node(const Var<T>& v) const;

  std::deque<Node> nodes_;  // stable addresses: Var::value() references survive later records
  std::set<std::string> trainable_names_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

template <typename T>
Gradients<T> backward(const Graph<T>& graph, const Var<T>& loss) {
  return graph.backward(loss);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace dct
