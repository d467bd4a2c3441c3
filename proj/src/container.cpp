#include "dct/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dct/errors.hpp"

namespace dct {
namespace {

using nlohmann::json;

template <typename V>
void append_le(std::string& out, V value) {
  static_assert(sizeof(V) == 4 || sizeof(V) == 8);
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, &value, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(V) / 2; ++i) std::swap(bytes[i], bytes[sizeof(V) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(V));
}

template <typename V>
V read_le(const char* src) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, src, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(V) / 2; ++i) std::swap(bytes[i], bytes[sizeof(V) - 1 - i]);
  }
  V value;
  std::memcpy(&value, bytes, sizeof(V));
  return value;
}

}  // namespace

std::string encode_container(std::string_view magic, const Container& c) {
  if (magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");
  json header = c.meta;
  json manifest = json::array();
  std::string payload;
  for (const auto& [name, tensor] : c.floats) {
    manifest.push_back({{"name", name}, {"shape", tensor.shape()}, {"dtype", "float32"},
                        {"byte_offset", payload.size()}});
    for (float v : tensor.data()) append_le(payload, v);
  }
  for (const auto& block : c.ints) {
    if (numel_of(block.shape) != block.values.size()) {
      throw ShapeError("int block '" + block.name + "' length does not match its shape");
    }
    manifest.push_back({{"name", block.name}, {"shape", block.shape}, {"dtype", "int32"},
                        {"byte_offset", payload.size()}});
    for (std::int32_t v : block.values) append_le(payload, v);
  }
  header["tensors"] = std::move(manifest);
  const std::string text = header.dump();

  std::string out(magic);
  append_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

Container decode_container(std::string_view magic, std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != magic) {
    throw ArtifactError("bad magic: expected \"" + std::string(magic) + "\"");
  }
  const auto header_len = read_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw ArtifactError("corrupt file: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("corrupt file: unreadable header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(16 + header_len);

  Container c;
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array()) {
    throw ArtifactError("corrupt file: header has no tensor manifest");
  }
  const auto& entries = header["tensors"];
  // Each block runs up to the next block's offset (the last one to the end of
  // the payload), so a shape that disagrees with its span is caught on the
  // offending block rather than on its neighbour.
  std::vector<std::size_t> block_end(entries.size(), payload.size());
  for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
    const auto& next = entries[i + 1];
    if (next.is_object() && next.contains("byte_offset") && next["byte_offset"].is_number_unsigned()) {
      block_end[i] = next["byte_offset"].get<std::size_t>();
    }
  }
  std::size_t expected_offset = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& entry = entries[k];
    std::string name = "<unnamed>";
    try {
      name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto offset = entry.at("byte_offset").get<std::size_t>();
      const std::size_t count = numel_of(shape);
      if (count == 0) throw ArtifactError("tensor '" + name + "': empty or invalid shape");
      if (offset != expected_offset) {
        throw ArtifactError("tensor '" + name + "': byte_offset " + std::to_string(offset) +
                            " does not follow the previous block (expected " +
                            std::to_string(expected_offset) + ")");
      }
      const std::size_t nbytes = count * 4;
      if (offset + nbytes != block_end[k] && block_end[k] >= offset) {
        throw ArtifactError("corrupt file: tensor '" + name + "' with shape " + shape_string(shape) +
                            " needs " + std::to_string(nbytes) + " bytes but its block holds " +
                            std::to_string(block_end[k] - offset));
      }
      if (offset + nbytes > payload.size()) {
        throw ArtifactError("corrupt file: tensor '" + name + "' with shape " +
                            shape_string(shape) + " needs " + std::to_string(nbytes) +
                            " bytes at offset " + std::to_string(offset) + " but payload has " +
                            std::to_string(payload.size()));
      }
      const char* src = payload.data() + offset;
      if (dtype == "float32") {
        std::vector<float> values(count);
        for (std::size_t i = 0; i < count; ++i) values[i] = read_le<float>(src + 4 * i);
        try {
          c.floats.emplace_back(name, Tensor(shape, std::move(values)));
        } catch (const std::exception& e) {
          throw ArtifactError("tensor '" + name + "': " + e.what());
        }
      } else if (dtype == "int32") {
        IntBlock block{name, shape, std::vector<std::int32_t>(count)};
        for (std::size_t i = 0; i < count; ++i) block.values[i] = read_le<std::int32_t>(src + 4 * i);
        c.ints.push_back(std::move(block));
      } else {
        throw ArtifactError("tensor '" + name + "': unsupported dtype '" + dtype + "'");
      }
      expected_offset = offset + nbytes;
    } catch (const json::exception& e) {
      throw ArtifactError("corrupt manifest entry '" + name + "': " + e.what());
    }
  }
  if (expected_offset != payload.size()) {
    throw ArtifactError("corrupt file: payload has " + std::to_string(payload.size()) +
                        " bytes but manifest declares " + std::to_string(expected_offset));
  }
  header.erase("tensors");
  c.meta = std::move(header);
  return c;
}

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c) {
  const std::string bytes = encode_container(magic, c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError("write to '" + path.string() + "' failed");
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return decode_container(magic, buffer.str());
}

}  // namespace dct
