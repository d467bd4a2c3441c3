#include "dct/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "dct/container.hpp"
#include "dct/errors.hpp"

namespace dct {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SyntheticDataset make_split(std::size_t num_classes, std::size_t per_class, std::size_t size,
                            std::uint64_t seed, Split split) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double kPi = std::numbers::pi;

  SyntheticDataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.images = Tensor(Shape{num_classes * per_class, size, size, 1});
  ds.labels.reserve(num_classes * per_class);

  std::size_t i = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double base_angle = kPi * static_cast<double>(c) / static_cast<double>(num_classes);
    const double base_freq = c % 2 == 0 ? 2.0 : 3.0;  // cycles per image width
    for (std::size_t k = 0; k < per_class; ++k, ++i) {
      const double angle = base_angle + gauss(rng) * (2.0 * kPi / 180.0);
      const double freq = base_freq * (0.9 + 0.2 * unit(rng));
      const double phase = 2.0 * kPi * unit(rng);
      const double amplitude = 0.3 + 0.15 * unit(rng);
      const double level = 0.45 + 0.1 * unit(rng);
      const double ca = std::cos(angle), sa = std::sin(angle);
      float* px = ds.images.ptr() + i * size * size;
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(size) - 0.5;
          const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(size) - 0.5;
          double value = level + amplitude * std::cos(2.0 * kPi * freq * (u * ca + v * sa) + phase);
          value += 0.02 * gauss(rng);
          px[y * size + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
      }
      ds.labels.push_back(static_cast<std::int32_t>(c));
    }
  }
  return ds;
}

// Severity tables, index 0 is always the identity.
constexpr std::array<double, 6> kGaussianStd{0.0, 0.04, 0.08, 0.12, 0.18, 0.26};
constexpr std::array<double, 6> kImpulseProb{0.0, 0.02, 0.04, 0.06, 0.09, 0.13};
constexpr std::array<double, 6> kBlurKernel{1, 1, 3, 3, 5, 7};
constexpr std::array<double, 6> kContrastFactor{1.0, 0.75, 0.6, 0.45, 0.3, 0.2};
constexpr std::array<double, 6> kBrightnessOffset{0.0, 0.08, 0.16, 0.24, 0.32, 0.38};
constexpr std::array<double, 6> kPixelateFactor{1.0, 1.1, 1.25, 1.4, 1.6, 2.0};

void check_severity(int severity) {
  if (severity < 0 || severity > kMaxSeverity) {
    throw ConfigError("corruption severity must be in 0..5, got " + std::to_string(severity));
  }
}

}  // namespace

Tensor SyntheticDataset::image(std::size_t i) const {
  const std::size_t h = images.dim(1), w = images.dim(2), ch = images.dim(3);
  Tensor out(Shape{1, h, w, ch});
  std::copy_n(images.ptr() + i * h * w * ch, h * w * ch, out.ptr());
  return out;
}

DatasetPair gen_synthetic_dataset(std::size_t num_classes, std::size_t train_per_class,
                                  std::size_t test_per_class, std::size_t image_size,
                                  std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (train_per_class == 0 || test_per_class == 0 || image_size == 0) {
    throw ConfigError("dataset sizes must be positive");
  }
  return {make_split(num_classes, train_per_class, image_size, splitmix64(seed ^ 0x7472), Split::Train),
          make_split(num_classes, test_per_class, image_size, splitmix64(seed ^ 0x7465), Split::Test)};
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ImpulseNoise: return "impulse_noise";
    case CorruptionKind::BoxBlur: return "box_blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::Pixelate: return "pixelate";
  }
  return "unknown";
}

const std::vector<CorruptionKind>& all_corruptions() {
  static const std::vector<CorruptionKind> kinds{
      CorruptionKind::GaussianNoise, CorruptionKind::ImpulseNoise, CorruptionKind::BoxBlur,
      CorruptionKind::Contrast,      CorruptionKind::Brightness,   CorruptionKind::Pixelate};
  return kinds;
}

CorruptionKind parse_corruption(std::string_view name) {
  for (auto kind : all_corruptions())
    if (to_string(kind) == name) return kind;
  throw ConfigError("unknown corruption kind '" + std::string(name) + "'");
}

double severity_parameter(CorruptionKind kind, int severity) {
  check_severity(severity);
  const auto s = static_cast<std::size_t>(severity);
  switch (kind) {
    case CorruptionKind::GaussianNoise: return kGaussianStd[s];
    case CorruptionKind::ImpulseNoise: return kImpulseProb[s];
    case CorruptionKind::BoxBlur: return kBlurKernel[s];
    case CorruptionKind::Contrast: return kContrastFactor[s];
    case CorruptionKind::Brightness: return kBrightnessOffset[s];
    case CorruptionKind::Pixelate: return kPixelateFactor[s];
  }
  throw ConfigError("unknown corruption kind");
}

std::uint64_t corruption_seed_for(std::uint64_t stream_seed, std::size_t image_id) {
  return splitmix64(stream_seed ^ splitmix64(static_cast<std::uint64_t>(image_id) + 1));
}

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, std::uint64_t seed) {
  check_severity(spec.severity);
  const std::size_t r = image.rank();
  if (r != 3 && !(r == 4 && image.dim(0) == 1)) {
    throw ShapeError("corrupt expects [H, W, ch] or [1, H, W, ch], got " + shape_string(image.shape()));
  }
  if (spec.severity == 0) return image;

  const std::size_t h = image.dim(r - 3), w = image.dim(r - 2), ch = image.dim(r - 1);
  const double param = severity_parameter(spec.kind, spec.severity);
  Tensor out = image;
  auto px = [&](Tensor& t, std::size_t y, std::size_t x, std::size_t c) -> float& {
    return t[(y * w + x) * ch + c];
  };
  std::mt19937_64 rng(seed);

  switch (spec.kind) {
    case CorruptionKind::GaussianNoise: {
      std::normal_distribution<double> noise(0.0, param);
      for (auto& v : out.data()) v = static_cast<float>(v + noise(rng));
      break;
    }
    case CorruptionKind::ImpulseNoise: {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (auto& v : out.data()) {
        const double u = unit(rng);
        const double salt = unit(rng);
        if (u < param) v = salt < 0.5 ? 0.0f : 1.0f;
      }
      break;
    }
    case CorruptionKind::BoxBlur: {
      const auto k = static_cast<std::ptrdiff_t>(param);
      const std::ptrdiff_t half = k / 2;
      Tensor src = image.reshaped(Shape{h, w, ch});
      out = Tensor(Shape{h, w, ch});
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t c = 0; c < ch; ++c) {
            double acc = 0.0;
            for (std::ptrdiff_t dy = -half; dy <= half; ++dy)
              for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
                const auto yy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + dy, 0, static_cast<std::ptrdiff_t>(h) - 1);
                const auto xx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) + dx, 0, static_cast<std::ptrdiff_t>(w) - 1);
                acc += px(src, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
              }
            px(out, y, x, c) = static_cast<float>(acc / static_cast<double>(k * k));
          }
      out = out.reshaped(image.shape());
      break;
    }
    case CorruptionKind::Contrast:
      for (auto& v : out.data()) v = static_cast<float>(0.5 + param * (v - 0.5));
      break;
    case CorruptionKind::Brightness:
      for (auto& v : out.data()) v = static_cast<float>(v + param);
      break;
    case CorruptionKind::Pixelate: {
      // Nearest-cell downscale to round(size / factor) cells per side, then back up.
      const auto cells = [&](std::size_t n) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) / param)));
      };
      const std::size_t mh = cells(h), mw = cells(w);
      Tensor src = image.reshaped(Shape{h, w, ch});
      std::vector<double> sum(mh * mw * ch, 0.0), count(mh * mw, 0.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t cell = (y * mh / h) * mw + x * mw / w;
          count[cell] += 1.0;
          for (std::size_t c = 0; c < ch; ++c) sum[cell * ch + c] += px(src, y, x, c);
        }
      out = Tensor(Shape{h, w, ch});
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t cell = (y * mh / h) * mw + x * mw / w;
          for (std::size_t c = 0; c < ch; ++c) px(out, y, x, c) = static_cast<float>(sum[cell * ch + c] / count[cell]);
        }
      out = out.reshaped(image.shape());
      break;
    }
  }
  for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

void save_dataset(const SyntheticDataset& data, const std::filesystem::path& path) {
  Container c;
  c.meta["num_classes"] = data.num_classes;
  c.meta["split"] = data.split == Split::Train ? "train" : "test";
  c.floats.emplace_back("images", data.images);
  c.ints.push_back(IntBlock{"labels", Shape{data.labels.size()}, data.labels});
  write_container(path, kDatasetMagic, c);
}

SyntheticDataset load_dataset(const std::filesystem::path& path) {
  Container c = read_container(path, kDatasetMagic);
  SyntheticDataset ds;
  try {
    ds.num_classes = c.meta.at("num_classes").get<std::size_t>();
    const auto split = c.meta.at("split").get<std::string>();
    if (split != "train" && split != "test") throw ArtifactError("dataset split must be train or test");
    ds.split = split == "train" ? Split::Train : Split::Test;
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("dataset header: ") + e.what());
  }
  if (c.floats.size() != 1 || c.floats[0].first != "images" || c.ints.size() != 1 ||
      c.ints[0].name != "labels") {
    throw ArtifactError("dataset must contain exactly an 'images' and a 'labels' block");
  }
  ds.images = std::move(c.floats[0].second);
  ds.labels = std::move(c.ints[0].values);
  if (ds.images.rank() != 4 || ds.images.dim(0) != ds.labels.size()) {
    throw ArtifactError("tensor 'labels' count does not match 'images' " + shape_string(ds.images.shape()));
  }
  for (auto label : ds.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= ds.num_classes) {
      throw ArtifactError("tensor 'labels' holds out-of-range label " + std::to_string(label));
    }
  }
  return ds;
}

}  // namespace dct
