#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"

#include "dct/adaptation.hpp"
#include "dct/data.hpp"
#include "dct/model_config.hpp"
#include "dct/pretrain.hpp"

namespace dct {

/// Exit codes of every command.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3, kExitArtifact = 4 };

struct DataConfig {
  std::size_t classes = 10;
  std::size_t per_class = 200;       // training images per class
  std::size_t test_per_class = 100;
  std::size_t image_size = 16;
  std::uint64_t dataset_seed = 0;
};

struct StreamConfig {
  ProtocolKind protocol = ProtocolKind::Normal;
  std::size_t batch_size = 64;
  CorruptionKind corruption = CorruptionKind::GaussianNoise;
  int severity = 5;
  std::uint64_t stream_seed = 0;      // emission order
  std::uint64_t corruption_seed = 0;  // per-image corruption noise
  double concentration = 1.0;
};

struct AnalysisConfig {
  std::size_t samples = 200;  // evaluation subset for profile and export
};

/// Child seeds default to run seed + fixed offsets; explicit fields win.
inline constexpr std::uint64_t kDatasetSeedOffset = 101;
inline constexpr std::uint64_t kInitSeedOffset = 202;
inline constexpr std::uint64_t kStreamSeedOffset = 303;
inline constexpr std::uint64_t kCorruptionSeedOffset = 404;

struct RunConfig {
  std::string run_id;
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = 0;
  ModelConfig model;
  AdaptConfig adapt;
  DataConfig data;
  StreamConfig stream;
  PretrainConfig pretrain;
  AnalysisConfig analysis;

  /// Seeds that were not given explicitly, recomputed from a new run seed.
  void reseed(std::uint64_t run_seed);

  std::optional<std::uint64_t> explicit_dataset_seed, explicit_init_seed, explicit_stream_seed,
      explicit_corruption_seed;
};

/// Strict parse: unknown keys, wrong types and missing required fields
/// (run_id, model, data.classes, data.per_class, stream.protocol,
/// stream.corruption, stream.severity) raise ConfigError naming the field.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

/// Entry point shared by the dct_cli binary and the tests. Returns an ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dct
