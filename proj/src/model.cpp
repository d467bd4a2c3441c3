#include "dct/model.hpp"

#include <cmath>
#include <random>

#include "dct/errors.hpp"
#include "dct/ops.hpp"

namespace dct {
namespace {

std::string block_name(std::size_t layer, const char* suffix) {
  return "blocks." + std::to_string(layer) + "." + suffix;
}

template <typename T>
const Var<T>& require(const ParamBinding<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("parameter '" + name + "' is not bound");
  return it->second;
}

template <typename T>
Var<T> linear(const Var<T>& x, const ParamBinding<T>& params, const std::string& prefix) {
  return add(matmul(x, require(params, prefix + ".weight")), require(params, prefix + ".bias"));
}

Tensor xavier(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(Shape{fan_in, fan_out});
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

Tensor normal(std::mt19937_64& rng, Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

}  // namespace

Tensor AttentionRecord::matrix(std::size_t sample, std::size_t head) const {
  const std::size_t r = size();
  if (sample >= batch() || head >= heads()) throw std::out_of_range("attention record index");
  Tensor m(Shape{r, r});
  const float* src = weights.ptr() + (sample * heads() + head) * r * r;
  std::copy_n(src, r * r, m.ptr());
  return m;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.embed_dim;
  const std::size_t hidden = config.mlp_hidden();
  Model model{config, {}};
  auto& p = model.params;

  p.add("patch.weight", xavier(rng, config.patch_dim(), d));
  p.add("patch.bias", Tensor(Shape{d}));
  p.add("cls_token", normal(rng, Shape{d}, 0.02));
  p.add("pos_embed", normal(rng, Shape{config.seq_len(), d}, 0.02));
  for (std::size_t l = 0; l < config.depth; ++l) {
    p.add(block_name(l, "ln1.gamma"), Tensor(Shape{d}, 1.0f));
    p.add(block_name(l, "ln1.beta"), Tensor(Shape{d}));
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
      p.add(block_name(l, proj) + ".weight", xavier(rng, d, d));
      p.add(block_name(l, proj) + ".bias", Tensor(Shape{d}));
    }
    p.add(block_name(l, "ln2.gamma"), Tensor(Shape{d}, 1.0f));
    p.add(block_name(l, "ln2.beta"), Tensor(Shape{d}));
    p.add(block_name(l, "mlp.fc1.weight"), xavier(rng, d, hidden));
    p.add(block_name(l, "mlp.fc1.bias"), Tensor(Shape{hidden}));
    p.add(block_name(l, "mlp.fc2.weight"), xavier(rng, hidden, d));
    p.add(block_name(l, "mlp.fc2.bias"), Tensor(Shape{d}));
  }
  p.add("norm.gamma", Tensor(Shape{d}, 1.0f));
  p.add("norm.beta", Tensor(Shape{d}));
  p.add("head.weight", xavier(rng, d, config.num_classes));
  p.add("head.bias", Tensor(Shape{config.num_classes}));
  init_generator(p, config);
  return model;
}

template <typename T>
ParamBinding<T> bind_params(Graph<T>& graph, const ParamStore& params,
                            const std::set<std::string>& trainable) {
  ParamBinding<T> bound;
  for (const auto& p : params.params()) {
    const bool train = trainable.count(p.name) > 0;
    if constexpr (std::is_same_v<T, float>) {
      bound.emplace(p.name, graph.leaf(p.value, p.name, train));
    } else {
      bound.emplace(p.name, graph.leaf(p.value.template cast<T>(), p.name, train));
    }
  }
  return bound;
}

template <typename T>
Var<T> patch_embed(Graph<T>& graph, const ModelConfig& config, const ParamBinding<T>& params,
                   const Tensor& images) {
  const std::size_t size = config.image_size;
  if (images.rank() != 4 || images.dim(1) != size || images.dim(2) != size ||
      images.dim(3) != config.channels) {
    throw ShapeError("patch_embed: expected images [b, " + std::to_string(size) + ", " +
                     std::to_string(size) + ", " + std::to_string(config.channels) + "], got " +
                     shape_string(images.shape()));
  }
  const std::size_t b = images.dim(0);
  const std::size_t p = config.patch_size;
  const std::size_t g = config.grid();
  const std::size_t ch = config.channels;
  const std::size_t pd = config.patch_dim();

  BasicTensor<T> patches(Shape{b, g * g, pd});
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t gy = 0; gy < g; ++gy)
      for (std::size_t gx = 0; gx < g; ++gx) {
        T* dst = patches.ptr() + (s * g * g + gy * g + gx) * pd;
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px)
            for (std::size_t c = 0; c < ch; ++c) {
              const std::size_t y = gy * p + py, x = gx * p + px;
              *dst++ = static_cast<T>(images[((s * size + y) * size + x) * ch + c]);
            }
      }

  auto tokens = linear(graph.constant(std::move(patches)), params, "patch");
  auto cls = add(graph.constant(BasicTensor<T>(Shape{b, 1, config.embed_dim})),
                 require(params, "cls_token"));
  return add(concat_rows(cls, tokens), require(params, "pos_embed"));
}

template <typename T>
Var<T> attention_scores(const Var<T>& q, const Var<T>& k) {
  if (q.shape().back() != k.shape().back()) {
    throw ShapeError("attention_scores: head dims differ: " + shape_string(q.shape()) + " vs " +
                     shape_string(k.shape()));
  }
  return matmul(q, transpose(k));
}

template <typename T>
AugmentedQKV<T> augment_qkv(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            const Var<T>& cq, const Var<T>& ck, const Var<T>& cv) {
  return {concat_rows(q, cq), concat_rows(k, ck), concat_rows(v, cv)};
}

template <typename T>
AttentionOutput<T> conditioned_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                         bool mask_conditioner_keys) {
  const std::size_t rows = q.shape()[q.shape().size() - 2];
  if (rows < 2) throw ShapeError("conditioned_attention needs at least one token plus the conditioner");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  auto logits = scale(attention_scores(q, k), inv_sqrt);
  auto weights = softmax_rows(logits, mask_conditioner_keys);
  auto out = slice_rows(matmul(weights, v), 0, rows - 1);
  return {out, weights, logits};
}

template <typename T>
AttentionOutput<T> baseline_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  auto logits = scale(attention_scores(q, k), inv_sqrt);
  auto weights = softmax_rows(logits);
  return {matmul(weights, v), weights, logits};
}

template <typename T>
BlockOutput<T> block_forward(const ModelConfig& config, const Var<T>& tokens,
                             const ParamBinding<T>& params, std::size_t layer,
                             const ForwardOptions& options) {
  const std::size_t heads = config.num_heads;
  const std::size_t batch = tokens.shape()[0];
  auto x1 = layer_norm(tokens, require(params, block_name(layer, "ln1.gamma")),
                       require(params, block_name(layer, "ln1.beta")));
  auto q = linear(x1, params, block_name(layer, "attn.q"));
  auto k = linear(x1, params, block_name(layer, "attn.k"));
  auto v = linear(x1, params, block_name(layer, "attn.v"));

  BlockOutput<T> out;
  AttentionOutput<T> att;
  switch (options.mode) {
    case AttentionMode::Baseline:
      att = baseline_attention(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads));
      break;
    case AttentionMode::Conditioned: {
      ConditionerTriple<T> c;
      if (params.count(generator_weight_name(layer))) {
        c = generate(slice_rows(x1, 0, 1), require(params, generator_weight_name(layer)),
                     require(params, generator_bias_name(layer)));
      } else {
        c = static_conditioners(params, layer, batch);
      }
      auto aug = augment_qkv(q, k, v, c.query, c.key, c.value);
      att = conditioned_attention(split_heads(aug.q, heads), split_heads(aug.k, heads),
                                  split_heads(aug.v, heads), options.mask_conditioner_keys);
      out.conditioners = c;
      break;
    }
    default:
      throw std::invalid_argument("unknown attention mode");
  }

  auto x = add(tokens, linear(merge_heads(att.out), params, block_name(layer, "attn.out")));
  auto x2 = layer_norm(x, require(params, block_name(layer, "ln2.gamma")),
                       require(params, block_name(layer, "ln2.beta")));
  auto mlp = linear(gelu(linear(x2, params, block_name(layer, "mlp.fc1"))), params,
                    block_name(layer, "mlp.fc2"));
  out.tokens = add(x, mlp);

  if (options.record_attention) {
    AttentionRecord rec;
    rec.layer = layer;
    rec.has_conditioner = options.mode == AttentionMode::Conditioned;
    rec.grid = config.grid();
    rec.patch_size = config.patch_size;
    if constexpr (std::is_same_v<T, float>) {
      rec.weights = att.weights.value();
      rec.logits = att.logits.value();
    } else {
      rec.weights = att.weights.value().template cast<float>();
      rec.logits = att.logits.value().template cast<float>();
    }
    out.record = std::move(rec);
  }
  return out;
}

template <typename T>
ForwardResult<T> model_forward(Graph<T>& graph, const ModelConfig& config,
                               const ParamBinding<T>& params, const Tensor& images,
                               const ForwardOptions& options) {
  ForwardResult<T> result;
  auto x = patch_embed(graph, config, params, images);
  const std::size_t b = images.dim(0);
  const std::size_t d = config.embed_dim;
  for (std::size_t l = 0; l < config.depth; ++l) {
    auto block = block_forward(config, x, params, l, options);
    x = block.tokens;
    if (block.record) result.records.push_back(std::move(*block.record));
    if (options.capture_tokens) {
      result.class_tokens.push_back(
          slice_rows(x, 0, 1).value().reshaped(Shape{b, d}).template cast<float>());
      if (block.conditioners) {
        const auto& c = *block.conditioners;
        Tensor packed(Shape{b, 3 * d});
        for (std::size_t s = 0; s < b; ++s) {
          std::size_t j = 0;
          for (const Var<T>* part : {&c.query, &c.key, &c.value}) {
            const auto& vals = part->value();
            for (std::size_t i = 0; i < d; ++i) packed[s * 3 * d + j++] = static_cast<float>(vals[s * d + i]);
          }
        }
        result.conditioners.push_back(std::move(packed));
      }
    }
  }
  auto normed = layer_norm(x, require(params, "norm.gamma"), require(params, "norm.beta"));
  auto cls = reshape(slice_rows(normed, 0, 1), Shape{b, d});
  result.logits = linear(cls, params, "head");
  return result;
}

ForwardResult<float> run_forward(Graph<float>& graph, const Model& model, const Tensor& images,
                                 const ForwardOptions& options) {
  auto bound = bind_params(graph, model.params, {});
  return model_forward(graph, model.config, bound, images, options);
}

Tensor predict_logits(const Model& model, const Tensor& images, const ForwardOptions& options) {
  Graph<float> graph;
  return run_forward(graph, model, images, options).logits.value();
}

#define DCT_INSTANTIATE_MODEL(T)                                                              \
  template ParamBinding<T> bind_params(Graph<T>&, const ParamStore&, const std::set<std::string>&); \
  template Var<T> patch_embed(Graph<T>&, const ModelConfig&, const ParamBinding<T>&, const Tensor&); \
  template Var<T> attention_scores(const Var<T>&, const Var<T>&);                             \
  template AugmentedQKV<T> augment_qkv(const Var<T>&, const Var<T>&, const Var<T>&,           \
                                       const Var<T>&, const Var<T>&, const Var<T>&);          \
  template AttentionOutput<T> conditioned_attention(const Var<T>&, const Var<T>&,             \
                                                    const Var<T>&, bool);                     \
  template AttentionOutput<T> baseline_attention(const Var<T>&, const Var<T>&, const Var<T>&); \
  template BlockOutput<T> block_forward(const ModelConfig&, const Var<T>&,                    \
                                        const ParamBinding<T>&, std::size_t,                  \
                                        const ForwardOptions&);                               \
  template ForwardResult<T> model_forward(Graph<T>&, const ModelConfig&,                      \
                                          const ParamBinding<T>&, const Tensor&,              \
                                          const ForwardOptions&);

DCT_INSTANTIATE_MODEL(float)
DCT_INSTANTIATE_MODEL(double)

}  // namespace dct
