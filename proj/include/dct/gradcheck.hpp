#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dct/autograd.hpp"

namespace dct {

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> value;
  bool trainable = true;
};

template <typename T>
using LeafMap = std::map<std::string, Var<T>>;

/// Scalar objective built on a fresh graph from the supplied leaves.
template <typename T>
using ScalarObjective = std::function<Var<T>(Graph<T>&, const LeafMap<T>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Central differences against backward(), elementwise over every trainable
/// parameter. Relative error uses max(|a|, |b|, 1e-8) as the denominator.
/// Frozen parameters are bound as constants and never compared.
template <typename T>
GradCheckReport finite_diff_check(const ScalarObjective<T>& f,
                                  const std::vector<NamedTensor<T>>& params, double step);

}  // namespace dct
