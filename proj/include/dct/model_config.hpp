#pragma once

#include <cstddef>

namespace dct {

struct ModelConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 4;
  std::size_t depth = 4;  // 0 is accepted: patch embedding straight into the head
  double mlp_ratio = 2.0;
  std::size_t num_classes = 10;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  /// Patch tokens plus the class token.
  std::size_t seq_len() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const;
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace dct
