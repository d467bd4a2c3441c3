#include "dct/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "dct/adaptation.hpp"
#include "dct/errors.hpp"
#include "dct/ops.hpp"

namespace dct {

void PretrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("pretrain.epochs must be positive");
  if (batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw ConfigError("pretrain.label_smoothing must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("pretrain.weight_decay must be non-negative");
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int32_t>& labels, double smoothing) {
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != b) throw ShapeError("cross_entropy: label count does not match batch");
  const double off = smoothing / static_cast<double>(c);
  BasicTensor<T> target(Shape{b, c}, static_cast<T>(-off / static_cast<double>(b)));
  for (std::size_t i = 0; i < b; ++i) {
    target.at(i, static_cast<std::size_t>(labels[i])) =
        static_cast<T>(-(1.0 - smoothing + off) / static_cast<double>(b));
  }
  return sum(multiply(log_softmax_rows(logits), logits.graph().constant(std::move(target))));
}

namespace {

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::map<std::string, std::pair<TensorD, TensorD>> moments;
  std::size_t t = 0;

  void step(ParamStore& params, const Gradients<float>& grads, double lr, double weight_decay) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& [name, g] : grads) {
      Tensor& theta = params.at(name);
      auto [it, fresh] = moments.try_emplace(name, TensorD(theta.shape()), TensorD(theta.shape()));
      auto& [m, v] = it->second;
      const bool decay = weight_decay > 0.0 && params.group(name) == ParamGroup::Frozen &&
                         theta.rank() == 2;
      for (std::size_t j = 0; j < theta.numel(); ++j) {
        const double gj = g[j];
        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
        double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        if (decay) update += weight_decay * theta[j];
        theta[j] = static_cast<float>(theta[j] - lr * update);
      }
    }
  }
};

}  // namespace

PretrainResult pretrain(const ModelConfig& config, const SyntheticDataset& train,
                        const PretrainConfig& options) {
  config.validate();
  options.validate();
  if (train.num_classes != config.num_classes) {
    throw ConfigError("dataset has " + std::to_string(train.num_classes) + " classes but model.num_classes is " +
                      std::to_string(config.num_classes));
  }
  if (train.size() == 0) throw ConfigError("training split is empty");
  if (train.image_size() != config.image_size || train.images.dim(3) != config.channels) {
    throw ConfigError("dataset images " + shape_string(train.images.shape()) +
                      " do not match model.image_size/channels");
  }

  PretrainResult result;
  result.model = init_model(config, options.seed);
  ParamStore& params = result.model.params;
  std::set<std::string> trainable;
  for (const auto& p : params.params())
    if (p.group != ParamGroup::Conditioner) trainable.insert(p.name);

  std::mt19937_64 rng(options.seed ^ 0x5eedULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_image = train.images.numel() / train.size();
  const std::size_t steps_per_epoch = (train.size() + options.batch_size - 1) / options.batch_size;
  const double total_steps = static_cast<double>(options.epochs * steps_per_epoch);
  Adam adam;
  ForwardOptions forward;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t b = std::min(options.batch_size, order.size() - start);
      Tensor images(Shape{b, train.images.dim(1), train.images.dim(2), train.images.dim(3)});
      std::vector<std::int32_t> labels(b);
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t id = order[start + j];
        std::copy_n(train.images.ptr() + id * per_image, per_image, images.ptr() + j * per_image);
        labels[j] = train.labels[id];
      }

      const double progress = static_cast<double>(adam.t) / total_steps;
      lr = options.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));

      Graph<float> graph;
      auto bound = bind_params(graph, params, trainable);
      Gradients<float> grads;
      double loss = 0.0;
      try {
        auto fwd = model_forward(graph, config, bound, images, forward);
        Var<float> ce = cross_entropy(fwd.logits, labels, options.label_smoothing);
        loss = ce.value().item();
        correct += count_correct(fwd.logits.value(), labels);
        grads = graph.backward(ce);
      } catch (const NumericError& e) {
        throw NumericError("pretraining diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
      for (const auto& [name, g] : grads) {
        if (!g.all_finite()) {
          throw NumericError("pretraining diverged in epoch " + std::to_string(epoch + 1) +
                             ": non-finite gradient for '" + name + "'");
        }
      }
      adam.step(params, grads, lr, options.weight_decay);
      loss_sum += loss * static_cast<double>(b);
    }
    result.log.push_back({epoch + 1, lr, loss_sum / static_cast<double>(train.size()),
                          static_cast<double>(correct) / static_cast<double>(train.size())});
  }
  return result;
}

template Var<float> cross_entropy(const Var<float>&, const std::vector<std::int32_t>&, double);
template Var<double> cross_entropy(const Var<double>&, const std::vector<std::int32_t>&, double);

}  // namespace dct
