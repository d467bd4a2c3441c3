#include "dct/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dct/errors.hpp"
#include "dct/ops.hpp"

namespace dct {

std::string to_string(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::Dct: return "dct";
    case AdaptMode::StaticConditioner: return "static-conditioner";
    case AdaptMode::LnOnly: return "ln-only";
    case AdaptMode::None: return "none";
  }
  return "unknown";
}

AdaptMode parse_adapt_mode(std::string_view name) {
  for (auto mode : {AdaptMode::Dct, AdaptMode::StaticConditioner, AdaptMode::LnOnly, AdaptMode::None})
    if (to_string(mode) == name) return mode;
  throw ConfigError("unknown adaptation mode '" + std::string(name) + "'");
}

AttentionMode attention_mode_for(AdaptMode mode) {
  return mode == AdaptMode::Dct || mode == AdaptMode::StaticConditioner ? AttentionMode::Conditioned
                                                                        : AttentionMode::Baseline;
}

void AdaptConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("adapt.learning_rate must be positive");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("adapt.rho must be non-negative");
  if (!(e0_factor > 0.0 && e0_factor <= 1.0)) throw ConfigError("adapt.e0_factor must be in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("adapt.momentum must be in [0, 1)");
}

double AdaptConfig::entropy_threshold(std::size_t num_classes) const {
  return e0_factor * std::log(static_cast<double>(num_classes));
}

template <typename T>
Var<T> entropy(const Var<T>& logits) {
  if (logits.shape().size() != 2 || logits.shape()[1] < 2) {
    throw ShapeError("entropy expects logits [b, C] with C >= 2, got " + shape_string(logits.shape()));
  }
  const std::size_t b = logits.shape()[0];
  Var<T> logp = log_softmax_rows(logits);
  Var<T> plogp = multiply(exp(logp), logp);
  return reshape(scale(sum_rows(plogp), -1.0), Shape{b});
}

std::vector<double> entropy_values(const Tensor& logits) {
  const std::size_t b = logits.rows(), c = logits.cols();
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const float* row = logits.ptr() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double lp = row[j] - mx - log_z;
      h -= std::exp(lp) * lp;
    }
    out[i] = h;
  }
  return out;
}

std::vector<bool> reliability_mask(std::span<const double> entropies, double e0) {
  std::vector<bool> mask(entropies.size());
  for (std::size_t i = 0; i < entropies.size(); ++i) mask[i] = entropies[i] < e0;
  return mask;
}

template <typename T>
AdaptationLoss<T> adaptation_loss(const Var<T>& logits, double e0) {
  AdaptationLoss<T> out;
  Var<T> h = entropy(logits);
  const auto& hv = h.value();
  out.entropies.assign(hv.data().begin(), hv.data().end());
  out.mask = reliability_mask(out.entropies, e0);
  out.selected = static_cast<std::size_t>(std::count(out.mask.begin(), out.mask.end(), true));
  if (out.selected == 0) return out;

  const std::size_t b = out.mask.size();
  BasicTensor<T> weights(Shape{b});
  for (std::size_t i = 0; i < b; ++i)
    if (out.mask[i]) weights[i] = static_cast<T>(1.0 / static_cast<double>(out.selected));
  Var<T> w = h.graph().constant(std::move(weights));
  out.loss = sum(multiply(h, w));
  return out;
}

std::vector<std::string> select_adaptable(const ParamStore& params, AdaptMode mode) {
  std::vector<std::string> names;
  for (const auto& p : params.params()) {
    bool take = false;
    switch (mode) {
      case AdaptMode::Dct:
        take = p.group == ParamGroup::LayerNorm || p.name.starts_with("gen.");
        break;
      case AdaptMode::StaticConditioner:
        take = p.group == ParamGroup::LayerNorm || p.name.starts_with("static.");
        break;
      case AdaptMode::LnOnly: take = p.group == ParamGroup::LayerNorm; break;
      case AdaptMode::None: break;
    }
    if (take) names.push_back(p.name);
  }
  return names;
}

void prepare_for_mode(Model& model, AdaptMode mode) {
  const auto kind = conditioner_kind(model.params);
  if (mode == AdaptMode::Dct && kind != ConditionerKind::Generator) {
    model.params.remove_prefix("static.");
    init_generator(model.params, model.config);
  } else if (mode == AdaptMode::StaticConditioner && kind != ConditionerKind::Static) {
    init_static_conditioners(model.params, model.config);
  }
}

AdaptState make_adapt_state(const AdaptConfig& config, std::size_t num_classes) {
  config.validate();
  if (num_classes < 2) throw ConfigError("adaptation needs at least 2 classes");
  AdaptState state;
  state.threshold = config.entropy_threshold(num_classes);
  return state;
}

namespace {

using Snapshot = std::vector<Tensor>;

Snapshot snapshot(const ParamStore& params, const std::vector<std::string>& names) {
  Snapshot out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(params.at(n));
  return out;
}

void restore(ParamStore& params, const std::vector<std::string>& names, const Snapshot& saved) {
  for (std::size_t i = 0; i < names.size(); ++i) params.at(names[i]) = saved[i];
}

void check_pass(const PassResult& r, const char* which) {
  if (r.loss && !std::isfinite(*r.loss)) {
    throw NumericError(std::string("non-finite adaptation loss on ") + which + " pass");
  }
  for (const auto& [name, g] : r.grads) {
    if (!g.all_finite()) {
      throw NumericError(std::string("non-finite gradient for '") + name + "' on " + which + " pass");
    }
  }
}

const Tensor* find_grad(const PassResult& r, const std::string& name) {
  auto it = r.grads.find(name);
  return it == r.grads.end() ? nullptr : &it->second;
}

}  // namespace

SamStats sam_step(ParamStore& params, const std::vector<std::string>& adaptable, const PassFn& pass,
                  const AdaptConfig& config, AdaptState& state) {
  if (adaptable.empty()) throw ConfigError("sam_step needs a non-empty adaptable subset");
  SamStats stats;
  const Snapshot saved = snapshot(params, adaptable);

  try {
    const PassResult first = pass(params);
    check_pass(first, "first");
    stats.selected_first = first.selected;
    stats.loss = first.loss;
    if (!first.loss) {
      stats.skipped = true;
      return stats;
    }

    double sq = 0.0;
    for (const auto& name : adaptable)
      if (const Tensor* g = find_grad(first, name))
        for (float v : g->data()) sq += static_cast<double>(v) * v;
    stats.grad_norm = std::sqrt(sq);
    const double factor = config.rho / (stats.grad_norm + 1e-12);

    for (std::size_t i = 0; i < adaptable.size(); ++i) {
      const Tensor* g = find_grad(first, adaptable[i]);
      if (!g) continue;
      Tensor& theta = params.at(adaptable[i]);
      for (std::size_t j = 0; j < theta.numel(); ++j) {
        theta[j] = static_cast<float>(static_cast<double>(saved[i][j]) + factor * (*g)[j]);
      }
    }

    const PassResult second = pass(params);
    restore(params, adaptable, saved);
    check_pass(second, "second");
    stats.selected_second = second.selected;
    if (!second.loss) {
      stats.skipped = true;
      return stats;
    }

    for (std::size_t i = 0; i < adaptable.size(); ++i) {
      Tensor& theta = params.at(adaptable[i]);
      auto [it, fresh] = state.momentum.try_emplace(adaptable[i], TensorD(theta.shape()));
      TensorD& m = it->second;
      const Tensor* g = find_grad(second, adaptable[i]);
      for (std::size_t j = 0; j < theta.numel(); ++j) {
        m[j] = config.momentum * m[j] + (g ? static_cast<double>((*g)[j]) : 0.0);
        theta[j] = static_cast<float>(static_cast<double>(theta[j]) - config.learning_rate * m[j]);
      }
    }
    for (const auto& name : adaptable) {
      if (!params.at(name).all_finite()) throw NumericError("update produced non-finite '" + name + "'");
    }
  } catch (const NumericError&) {
    restore(params, adaptable, saved);
    throw;
  }
  return stats;
}

SamUpdate sam_update(Model& model, const Tensor& images, const AdaptConfig& config,
                     AdaptState& state) {
  const auto adaptable = select_adaptable(model.params, config.mode);
  const std::set<std::string> trainable(adaptable.begin(), adaptable.end());
  ForwardOptions options;
  options.mode = attention_mode_for(config.mode);

  SamUpdate out;
  bool first_pass = true;
  PassFn pass = [&](const ParamStore& params) {
    Graph<float> graph;
    auto bound = bind_params(graph, params, trainable);
    auto fwd = model_forward(graph, model.config, bound, images, options);
    if (first_pass) {
      out.logits = fwd.logits.value();
      first_pass = false;
    }
    auto objective = adaptation_loss(fwd.logits, state.threshold);
    PassResult r;
    r.selected = objective.selected;
    if (objective.loss) {
      r.loss = static_cast<double>(objective.loss->value().item());
      r.grads = graph.backward(*objective.loss);
    }
    return r;
  };
  out.stats = sam_step(model.params, adaptable, pass, config, state);
  return out;
}

std::size_t count_correct(const Tensor& logits, std::span<const std::int32_t> labels) {
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) throw ShapeError("label count does not match logits rows");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const float* row = logits.ptr() + i * c;
    const auto pred = static_cast<std::int32_t>(std::max_element(row, row + c) - row);
    if (pred == labels[i]) ++correct;
  }
  return correct;
}

double evaluate_stream(const Model& model, const std::vector<StreamBatch>& stream, AttentionMode mode) {
  ForwardOptions options;
  options.mode = mode;
  std::size_t correct = 0, seen = 0;
  for (const auto& batch : stream) {
    correct += count_correct(predict_logits(model, batch.images, options), batch.labels);
    seen += batch.labels.size();
  }
  return seen == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(seen);
}

AdaptResult adapt_stream(Model model, const std::vector<StreamBatch>& stream, const AdaptConfig& config) {
  const std::size_t num_classes = model.config.num_classes;
  for (const auto& batch : stream)
    for (auto label : batch.labels)
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
        throw ConfigError("stream label " + std::to_string(label) + " outside the model's " +
                          std::to_string(num_classes) + " classes");

  AdaptState state = make_adapt_state(config, num_classes);
  AdaptConfig step_config = config;
  if (config.lr_reference_batch > 0 && !stream.empty()) {
    step_config.learning_rate *= static_cast<double>(stream.front().labels.size()) /
                                 static_cast<double>(config.lr_reference_batch);
  }
  prepare_for_mode(model, config.mode);
  ForwardOptions scoring;
  scoring.mode = attention_mode_for(config.mode);

  for (const auto& batch : stream) {
    BatchOutcome outcome;
    outcome.n_samples = batch.labels.size();
    Tensor logits;
    if (config.mode == AdaptMode::None) {
      logits = predict_logits(model, batch.images, scoring);
    } else {
      SamUpdate update = sam_update(model, batch.images, step_config, state);
      outcome.n_selected_first = update.stats.selected_first;
      outcome.n_selected_second = update.stats.selected_second;
      outcome.loss = update.stats.loss;
      outcome.skipped = update.stats.skipped;
      logits = config.score_after_update ? predict_logits(model, batch.images, scoring)
                                         : std::move(update.logits);
    }
    outcome.correct = count_correct(logits, batch.labels);
    state.metrics.update(outcome);
    ++state.step;
  }

  AdaptResult result;
  result.model = std::move(model);
  result.rows = state.metrics.rows();
  result.final_accuracy = state.metrics.running_accuracy();
  result.skipped_batches = state.metrics.skipped_batches();
  return result;
}

template Var<float> entropy(const Var<float>&);
template Var<double> entropy(const Var<double>&);
template AdaptationLoss<float> adaptation_loss(const Var<float>&, double);
template AdaptationLoss<double> adaptation_loss(const Var<double>&, double);

}  // namespace dct
