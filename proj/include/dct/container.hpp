#pragma once

// Binary container shared by checkpoints and dataset files:
//   8-byte magic | uint64 LE header length | UTF-8 JSON header | payload
// The header carries caller metadata plus "tensors": [{name, shape, dtype,
// byte_offset}], offsets relative to the payload start. Payload blocks are
// little-endian, row-major, concatenated in manifest order.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dct/tensor.hpp"

namespace dct {

struct IntBlock {
  std::string name;
  Shape shape;
  std::vector<std::int32_t> values;
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> floats;
  std::vector<IntBlock> ints;
};

/// Serialises to bytes; float blocks precede int blocks in the manifest.
std::string encode_container(std::string_view magic, const Container& c);
Container decode_container(std::string_view magic, std::string_view bytes);

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c);
/// Throws ArtifactError on I/O failure, bad magic, truncation, or a manifest
/// that disagrees with the payload (naming the offending block).
Container read_container(const std::filesystem::path& path, std::string_view magic);

}  // namespace dct
