#include <algorithm>
#include <numeric>
#include <random>

#include "dct/data.hpp"
#include "dct/errors.hpp"

namespace dct {
namespace {

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

// Each contiguous segment draws label proportions p ~ Dir(alpha). The sorted
// weights go to the still-available classes in ascending class order, so as
// alpha -> 0 every segment is a point mass on the lowest remaining class and
// the whole stream comes out sorted by class.
std::vector<std::size_t> imbalanced_order(const SyntheticDataset& test, std::size_t segment,
                                          double concentration, std::mt19937_64& rng) {
  const std::size_t C = test.num_classes;
  std::vector<std::vector<std::size_t>> pools(C);
  for (std::size_t i = 0; i < test.size(); ++i) pools[static_cast<std::size_t>(test.labels[i])].push_back(i);
  for (auto& pool : pools) {
    shuffle(pool, rng);
    std::reverse(pool.begin(), pool.end());  // pop_back yields the shuffled order
  }

  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> order;
  order.reserve(test.size());
  std::vector<double> weight(C, 0.0);

  while (order.size() < test.size()) {
    std::vector<std::size_t> live;
    for (std::size_t c = 0; c < C; ++c)
      if (!pools[c].empty()) live.push_back(c);
    std::vector<double> draws(live.size());
    for (auto& g : draws) g = gamma(rng);
    std::sort(draws.begin(), draws.end(), std::greater<>());
    std::fill(weight.begin(), weight.end(), 0.0);
    for (std::size_t j = 0; j < live.size(); ++j) weight[live[j]] = draws[j];

    for (std::size_t slot = 0; slot < segment && order.size() < test.size(); ++slot) {
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c)
        if (!pools[c].empty()) total += weight[c];
      std::size_t chosen = C;
      if (total > 0.0) {
        double u = unit(rng) * total;
        for (std::size_t c = 0; c < C; ++c) {
          if (pools[c].empty() || weight[c] <= 0.0) continue;
          chosen = c;
          if (u < weight[c]) break;
          u -= weight[c];
        }
      } else {
        for (std::size_t c = 0; c < C; ++c)
          if (!pools[c].empty()) { chosen = c; break; }
      }
      order.push_back(pools[chosen].back());
      pools[chosen].pop_back();
    }
  }
  return order;
}

}  // namespace

std::string to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::Normal: return "normal";
    case ProtocolKind::Imbalanced: return "imbalanced";
    case ProtocolKind::BatchSizeOne: return "bs1";
  }
  return "unknown";
}

ProtocolKind parse_protocol(std::string_view name) {
  for (auto kind : {ProtocolKind::Normal, ProtocolKind::Imbalanced, ProtocolKind::BatchSizeOne})
    if (to_string(kind) == name) return kind;
  throw ConfigError("unknown stream protocol '" + std::string(name) + "'");
}

std::vector<std::size_t> stream_order(const SyntheticDataset& test, const StreamProtocol& protocol) {
  std::mt19937_64 rng(protocol.seed);
  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  switch (protocol.kind) {
    case ProtocolKind::Normal:
    case ProtocolKind::BatchSizeOne:
      shuffle(order, rng);
      return order;
    case ProtocolKind::Imbalanced:
      if (!(protocol.concentration > 0.0)) {
        throw ConfigError("imbalanced protocol needs concentration > 0");
      }
      if (protocol.batch_size == 0) throw ConfigError("batch_size must be positive");
      return imbalanced_order(test, protocol.batch_size, protocol.concentration, rng);
  }
  throw ConfigError("unknown stream protocol");
}

std::vector<StreamBatch> make_stream(const SyntheticDataset& test, const CorruptionSpec& corruption,
                                     const StreamProtocol& protocol, std::uint64_t corruption_seed) {
  const std::size_t batch_size =
      protocol.kind == ProtocolKind::BatchSizeOne ? 1 : protocol.batch_size;
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto order = stream_order(test, protocol);

  const std::size_t h = test.images.dim(1), w = test.images.dim(2), ch = test.images.dim(3);
  const std::size_t per_image = h * w * ch;
  std::vector<StreamBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, order.size() - start);
    StreamBatch batch;
    batch.index = batches.size();
    batch.corruption = corruption;
    batch.images = Tensor(Shape{b, h, w, ch});
    for (std::size_t j = 0; j < b; ++j) {
      const std::size_t id = order[start + j];
      const Tensor img = corrupt(test.image(id), corruption, corruption_seed_for(corruption_seed, id));
      std::copy_n(img.ptr(), per_image, batch.images.ptr() + j * per_image);
      batch.labels.push_back(test.labels[id]);
      batch.ids.push_back(id);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace dct
