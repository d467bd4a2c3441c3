#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dct/tensor.hpp"

namespace dct {

enum class Split { Train, Test };

/// Grayscale images [m, H, W, 1] in [0, 1] with integer labels in [0, C).
struct SyntheticDataset {
  Tensor images;
  std::vector<std::int32_t> labels;
  std::size_t num_classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return images.dim(1); }
  /// Copy of sample i as [1, H, W, ch].
  Tensor image(std::size_t i) const;
};

struct DatasetPair {
  SyntheticDataset train;
  SyntheticDataset test;
};

/// Class c is an oriented sinusoidal grating: angle pi * c / C and one of two
/// spatial frequencies, with per-sample jitter of angle, frequency, phase,
/// amplitude and mean level plus mild pixel noise. Train and test draw from
/// independent seeds derived from `seed`. Samples are class-major.
DatasetPair gen_synthetic_dataset(std::size_t num_classes, std::size_t train_per_class,
                                  std::size_t test_per_class, std::size_t image_size,
                                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corruptions

enum class CorruptionKind { GaussianNoise, ImpulseNoise, BoxBlur, Contrast, Brightness, Pixelate };

inline constexpr int kMaxSeverity = 5;

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 0;
};

std::string to_string(CorruptionKind kind);
/// Throws ConfigError for names outside the six kinds.
CorruptionKind parse_corruption(std::string_view name);
const std::vector<CorruptionKind>& all_corruptions();

/// Severity-indexed parameter for a kind (noise std, flip probability, blur
/// kernel width, contrast factor, brightness offset, pixelate downscale factor).
double severity_parameter(CorruptionKind kind, int severity);

/// Corrupts one image [H, W, ch] or [1, H, W, ch]; output clamped to [0, 1].
/// Severity 0 returns the input unchanged. Noise kinds are deterministic in seed.
Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, std::uint64_t seed);

/// Seed used for the image with the given dataset id.
std::uint64_t corruption_seed_for(std::uint64_t stream_seed, std::size_t image_id);

// ---------------------------------------------------------------------------
// Streams

enum class ProtocolKind { Normal, Imbalanced, BatchSizeOne };

std::string to_string(ProtocolKind kind);
ProtocolKind parse_protocol(std::string_view name);

struct StreamProtocol {
  ProtocolKind kind = ProtocolKind::Normal;
  std::size_t batch_size = 64;  // forced to 1 for BatchSizeOne
  double concentration = 1.0;   // Dirichlet concentration, Imbalanced only
  std::uint64_t seed = 0;
};

struct StreamBatch {
  std::size_t index = 0;
  Tensor images;                       // [b, H, W, ch], corrupted
  std::vector<std::int32_t> labels;    // hidden from adaptation
  std::vector<std::size_t> ids;        // test-set indices
  CorruptionSpec corruption;
};

/// Emission order of test-set indices under a protocol. Every index appears
/// exactly once.
std::vector<std::size_t> stream_order(const SyntheticDataset& test, const StreamProtocol& protocol);

/// Orders, batches and corrupts the test set. Each image's corruption noise
/// depends only on (corruption_seed, image id), not on its stream position.
std::vector<StreamBatch> make_stream(const SyntheticDataset& test, const CorruptionSpec& corruption,
                                     const StreamProtocol& protocol, std::uint64_t corruption_seed);

// ---------------------------------------------------------------------------
// Dataset files: magic "DCTDATA1", manifest with a float32 "images" block and
// an int32 "labels" block.

inline constexpr const char* kDatasetMagic = "DCTDATA1";

void save_dataset(const SyntheticDataset& data, const std::filesystem::path& path);
SyntheticDataset load_dataset(const std::filesystem::path& path);

}  // namespace dct
