#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dct/tensor.hpp"

namespace dct {

/// Every parameter belongs to exactly one group.
enum class ParamGroup { Frozen, LayerNorm, Conditioner };

/// Group implied by a parameter's name: LN gammas/betas are LayerNorm,
/// "gen.*" and "static.*" are Conditioner, everything else is Frozen.
ParamGroup group_for_name(std::string_view name);

struct Param {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::Frozen;
};

/// Named parameters in insertion order. The order is the checkpoint order.
class ParamStore {
 public:
  void add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  ParamGroup group(std::string_view name) const;

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  std::vector<std::string> names(ParamGroup group) const;

  /// Drops every parameter whose name starts with prefix.
  void remove_prefix(std::string_view prefix);

  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  void reindex();

  std::vector<Param> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace dct
