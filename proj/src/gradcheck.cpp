#include "dct/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dct {
namespace {

template <typename T>
double evaluate(const ScalarObjective<T>& f, const std::vector<NamedTensor<T>>& params,
                bool with_grad, Gradients<T>* grads) {
  Graph<T> graph;
  LeafMap<T> leaves;
  for (const auto& p : params) {
    leaves.emplace(p.name, graph.leaf(p.value, p.name, with_grad && p.trainable));
  }
  Var<T> loss = f(graph, leaves);
  if (grads) *grads = graph.backward(loss);
  return static_cast<double>(loss.value().item());
}

}  // namespace

template <typename T>
GradCheckReport finite_diff_check(const ScalarObjective<T>& f,
                                  const std::vector<NamedTensor<T>>& params, double step) {
  Gradients<T> analytic;
  evaluate(f, params, true, &analytic);

  GradCheckReport report;
  std::vector<NamedTensor<T>> probe = params;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    if (!probe[p].trainable) continue;
    auto it = analytic.find(probe[p].name);
    for (std::size_t i = 0; i < probe[p].value.numel(); ++i) {
      const T original = probe[p].value[i];
      probe[p].value[i] = static_cast<T>(original + step);
      const double hi = probe[p].value[i];
      const double up = evaluate<T>(f, probe, false, nullptr);
      probe[p].value[i] = static_cast<T>(original - step);
      const double lo = probe[p].value[i];
      const double down = evaluate<T>(f, probe, false, nullptr);
      probe[p].value[i] = original;

      // Divide by the representable step actually taken.
      const double numeric = (up - down) / (hi - lo);
      const double a = it == analytic.end() ? 0.0 : static_cast<double>(it->second[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++report.checked;
      if (err > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = err;
        report.worst_param = probe[p].name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

template GradCheckReport finite_diff_check<float>(const ScalarObjective<float>&,
                                                  const std::vector<NamedTensor<float>>&, double);
template GradCheckReport finite_diff_check<double>(const ScalarObjective<double>&,
                                                   const std::vector<NamedTensor<double>>&, double);

}  // namespace dct
