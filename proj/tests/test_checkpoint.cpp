#include <cstring>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "dct/checkpoint.hpp"
#include "dct/container.hpp"
#include "dct/errors.hpp"

using namespace dct;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

// Rewrites the JSON header of a container file through edit().
template <typename Edit>
std::string edit_header(const std::string& bytes, Edit edit) {
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + i]);
  auto header = nlohmann::json::parse(bytes.substr(16, len));
  edit(header);
  const std::string text = header.dump();
  std::string out = bytes.substr(0, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
  return out + text + bytes.substr(16 + len);
}

Model small_model() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.depth = 1;
  c.num_classes = 3;
  return init_model(c, 3);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("checkpoint round-trip is lossless and byte-stable") {
  const auto dir = testing::scratch_dir("ckpt_roundtrip");
  Model m = small_model();
  save_checkpoint(m, dir / "a.ckpt");
  Model back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.config == m.config);
  CHECK(back.params == m.params);
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK(slurp(dir / "a.ckpt").substr(0, 8) == "DCTCKPT1");
}

TEST_CASE("truncated checkpoint is an artifact error") {
  const auto dir = testing::scratch_dir("ckpt_truncated");
  save_checkpoint(small_model(), dir / "a.ckpt");
  const std::string bytes = slurp(dir / "a.ckpt");
  dump(dir / "cut.ckpt", bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), ArtifactError);
  dump(dir / "tiny.ckpt", bytes.substr(0, 12));
  CHECK_THROWS_AS(load_checkpoint(dir / "tiny.ckpt"), ArtifactError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), ArtifactError);
}

TEST_CASE("manifest shape disagreeing with the payload names the tensor") {
  const auto dir = testing::scratch_dir("ckpt_shape");
  save_checkpoint(small_model(), dir / "a.ckpt");
  const std::string bad = edit_header(slurp(dir / "a.ckpt"), [](nlohmann::json& h) {
    for (auto& t : h["tensors"])
      if (t["name"] == "head.bias") t["shape"] = {7};
  });
  dump(dir / "bad.ckpt", bad);
  try {
    load_checkpoint(dir / "bad.ckpt");
    FAIL("expected an error");
  } catch (const ArtifactError& e) {
    INFO(std::string(e.what()));
    CHECK(std::string(e.what()).find("head.bias") != std::string::npos);
  }
}

TEST_CASE("bad magic and unknown config keys are rejected") {
  const auto dir = testing::scratch_dir("ckpt_magic");
  save_checkpoint(small_model(), dir / "a.ckpt");
  std::string bytes = slurp(dir / "a.ckpt");
  dump(dir / "data.bin", "DCTDATA1" + bytes.substr(8));
  CHECK_THROWS_AS(load_checkpoint(dir / "data.bin"), ArtifactError);
  dump(dir / "extra.ckpt", edit_header(bytes, [](nlohmann::json& h) { h["config"]["dropout"] = 1; }));
  CHECK_THROWS_AS(load_checkpoint(dir / "extra.ckpt"), ArtifactError);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"depth", "two"}}), ConfigError);
}

TEST_CASE("container keeps float and int blocks") {
  Container c;
  c.meta["kind"] = "test";
  c.floats.emplace_back("x", Tensor(Shape{2, 2}, std::vector<float>{1, -2, 3.5f, 0}));
  c.ints.push_back({"labels", Shape{3}, {4, -1, 7}});
  const std::string bytes = encode_container("TESTMAG1", c);
  const Container back = decode_container("TESTMAG1", bytes);
  CHECK(back.meta["kind"] == "test");
  REQUIRE(back.floats.size() == 1);
  CHECK(back.floats[0].second == c.floats[0].second);
  REQUIRE(back.ints.size() == 1);
  CHECK(back.ints[0].values == c.ints[0].values);
  CHECK_THROWS_AS(decode_container("OTHERMAG", bytes), ArtifactError);
}

}
