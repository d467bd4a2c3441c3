#include "dct/params.hpp"

#include <algorithm>

#include "dct/model_config.hpp"
#include "dct/errors.hpp"

namespace dct {

namespace {
bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}
bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}
}  // namespace

ParamGroup group_for_name(std::string_view name) {
  if (starts_with(name, "gen.") || starts_with(name, "static.")) return ParamGroup::Conditioner;
  if (ends_with(name, ".gamma") || ends_with(name, ".beta")) return ParamGroup::LayerNorm;
  return ParamGroup::Frozen;
}

void ModelConfig::validate() const {
  if (image_size == 0 || patch_size == 0) throw ConfigError("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
  if (channels == 0) throw ConfigError("channels must be positive");
  if (embed_dim == 0 || num_heads == 0) throw ConfigError("embed_dim and num_heads must be positive");
  if (embed_dim % num_heads != 0) throw ConfigError("embed_dim must be divisible by num_heads");
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (mlp_hidden() == 0) throw ConfigError("mlp_ratio * embed_dim rounds to zero");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

std::size_t ModelConfig::mlp_hidden() const {
  return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim) + 0.5);
}

void ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  const ParamGroup group = group_for_name(name);
  index_.emplace(name, params_.size());
  params_.push_back(Param{std::move(name), std::move(value), group});
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

Tensor& ParamStore::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return params_[it->second].value;
}

const Tensor& ParamStore::at(std::string_view name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

ParamGroup ParamStore::group(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return params_[it->second].group;
}

std::vector<std::string> ParamStore::names(ParamGroup group) const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (p.group == group) out.push_back(p.name);
  return out;
}

void ParamStore::remove_prefix(std::string_view prefix) {
  std::erase_if(params_, [&](const Param& p) { return starts_with(p.name, prefix); });
  reindex();
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamStore::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace(params_[i].name, i);
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value))
      return false;
  }
  return true;
}

}  // namespace dct
