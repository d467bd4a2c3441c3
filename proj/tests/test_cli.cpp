#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "dct/checkpoint.hpp"
#include "dct/cli.hpp"
#include "dct/errors.hpp"

using namespace dct;
using nlohmann::json;

namespace {

json tiny_config(const std::string& run_id) {
  return {{"run_id", run_id},
          {"seed", 3},
          {"model",
           {{"image_size", 8}, {"patch_size", 4}, {"embed_dim", 8}, {"num_heads", 2}, {"depth", 2}, {"num_classes", 3}}},
          {"data", {{"classes", 3}, {"per_class", 12}, {"test_per_class", 8}, {"image_size", 8}}},
          {"stream", {{"protocol", "normal"}, {"batch_size", 8}, {"corruption", "gaussian_noise"}, {"severity", 3}}},
          {"pretrain", {{"epochs", 1}, {"batch_size", 8}}},
          {"analysis", {{"samples", 10}}}};
}

std::filesystem::path write_config(const std::filesystem::path& dir, const json& j, const std::string& name = "cfg.json") {
  const auto path = dir / name;
  std::ofstream(path) << j.dump(2);
  return path;
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "dct_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("missing required field exits 2 naming it") {
  const auto dir = testing::scratch_dir("cli_missing");
  json j = tiny_config("r");
  j["stream"].erase("severity");
  const auto r = run({"pretrain", "--config", write_config(dir, j).string(), "--out", dir.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("stream.severity") != std::string::npos);
}

TEST_CASE("unknown keys, bad values and bad flags exit 2") {
  const auto dir = testing::scratch_dir("cli_bad");
  json j = tiny_config("r");
  j["adapt"] = {{"learning_rat", 0.1}};
  CHECK(run({"pretrain", "--config", write_config(dir, j).string()}).code == kExitConfig);
  j = tiny_config("r");
  j["data"]["classes"] = 4;
  CHECK(run({"pretrain", "--config", write_config(dir, j).string()}).code == kExitConfig);
  CHECK(run({"pretrain"}).code == kExitConfig);
  CHECK(run({"fly", "--config", "x"}).code == kExitConfig);
  CHECK(run({"pretrain", "--config", (dir / "absent.json").string()}).code == kExitConfig);
}

TEST_CASE("config parsing: seeds derive from the run seed unless explicit") {
  json j = tiny_config("r");
  RunConfig c = parse_run_config(j);
  CHECK(c.data.dataset_seed == 3 + kDatasetSeedOffset);
  CHECK(c.stream.corruption_seed == 3 + kCorruptionSeedOffset);
  j["stream"]["stream_seed"] = 42;
  c = parse_run_config(j);
  c.reseed(10);
  CHECK(c.stream.stream_seed == 42);
  CHECK(c.pretrain.seed == 10 + kInitSeedOffset);
  const RunConfig back = parse_run_config(run_config_to_json(c));
  CHECK(back.stream.stream_seed == 42);
  CHECK(back.model == c.model);
}

TEST_CASE("pretrain, adapt, profile and export end to end") {
  const auto dir = testing::scratch_dir("cli_e2e");
  const auto cfg = write_config(dir, tiny_config("toy")).string();
  const auto out = dir.string();

  auto r = run({"pretrain", "--config", cfg, "--out", out});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(std::filesystem::exists(dir / "toy.pretrain.csv"));
  const Model source = load_checkpoint(dir / "toy.source.ckpt");
  CHECK(source.config.depth == 2);

  const std::string first_ckpt = slurp(dir / "toy.source.ckpt");
  REQUIRE(run({"pretrain", "--config", cfg, "--out", out}).code == kExitOk);
  CHECK(slurp(dir / "toy.source.ckpt") == first_ckpt);

  SUBCASE("adapt writes metrics, checkpoint and a strict-JSON summary") {
    REQUIRE(run({"adapt", "--config", cfg, "--out", out, "--mode", "none"}).code == kExitOk);
    REQUIRE(run({"adapt", "--config", cfg, "--out", out, "--mode", "dct"}).code == kExitOk);
    for (const char* id : {"toy-none", "toy-dct"}) {
      const auto summary = json::parse(slurp(dir / (std::string(id) + ".summary.json")));
      CHECK(summary["run_id"] == id);
      CHECK(summary["batches"] == 3);
      CHECK(line_count(dir / (std::string(id) + ".metrics.csv")) == 4);
      load_checkpoint(dir / (std::string(id) + ".adapted.ckpt"));
    }
    const std::string metrics = slurp(dir / "toy-dct.metrics.csv");
    REQUIRE(run({"adapt", "--config", cfg, "--out", out, "--mode", "dct"}).code == kExitOk);
    CHECK(slurp(dir / "toy-dct.metrics.csv") == metrics);
  }

  SUBCASE("profile rows per severity, layer and head") {
    REQUIRE(run({"profile", "--config", cfg, "--out", out, "--severities", "0,3,5", "--mode", "none"}).code == kExitOk);
    CHECK(line_count(dir / "toy.profile.csv") == 1 + 3 * 2 * 2);
    const std::string first = slurp(dir / "toy.profile.csv");
    REQUIRE(run({"profile", "--config", cfg, "--out", out, "--severities", "0,3,5", "--mode", "none"}).code == kExitOk);
    CHECK(slurp(dir / "toy.profile.csv") == first);
    CHECK(run({"profile", "--config", cfg, "--out", out, "--severities", "0,9"}).code == kExitConfig);
  }

  SUBCASE("severity 0 profile equals the clean-model profile") {
    REQUIRE(run({"profile", "--config", cfg, "--out", out, "--severities", "0", "--mode", "none"}).code == kExitOk);
    const std::string sev0 = slurp(dir / "toy.profile.csv");
    json clean = tiny_config("toy");
    clean["stream"]["corruption"] = "contrast";
    const auto clean_cfg = write_config(dir, clean, "clean.json").string();
    REQUIRE(run({"profile", "--config", clean_cfg, "--out", out, "--severities", "0", "--mode", "none"}).code == kExitOk);
    CHECK(slurp(dir / "toy.profile.csv") == sev0);
  }

  SUBCASE("export variants") {
    REQUIRE(run({"export", "--config", cfg, "--out", out, "--what", "class_tokens"}).code == kExitOk);
    CHECK(line_count(dir / "toy.embed.csv") == 1 + 10 * 2);
    CHECK(run({"export", "--config", cfg, "--out", out, "--what", "conditioners", "--mode", "ln-only"}).code ==
          kExitConfig);
    REQUIRE(run({"export", "--config", cfg, "--out", out, "--what", "conditioners", "--mode", "dct"}).code == kExitOk);
    REQUIRE(run({"export", "--config", cfg, "--out", out, "--what", "rollout"}).code == kExitOk);
    std::ifstream in(dir / "toy.rollout.csv");
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string cell;
      double total = 0.0;
      for (int col = 0; std::getline(ss, cell, ','); ++col)
        if (col >= 3) total += std::stod(cell);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
      ++rows;
    }
    CHECK(rows == 10);
    CHECK(run({"export", "--config", cfg, "--out", out, "--what", "pixels"}).code == kExitConfig);
  }

  SUBCASE("corrupted or mismatched checkpoints exit 4") {
    std::string bytes = first_ckpt;
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + i]);
    auto header = json::parse(bytes.substr(16, len));
    header["tensors"][3]["shape"] = {1};
    const std::string name = header["tensors"][3]["name"];
    const std::string text = header.dump();
    std::string bad = bytes.substr(0, 8);
    for (int i = 0; i < 8; ++i) bad.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
    bad += text + bytes.substr(16 + len);
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << bad;
    r = run({"adapt", "--config", cfg, "--out", out, "--checkpoint", (dir / "bad.ckpt").string()});
    CHECK(r.code == kExitArtifact);
    CHECK(r.err.find(name) != std::string::npos);

    json other = tiny_config("toy");
    other["model"]["embed_dim"] = 4;
    const auto other_cfg = write_config(dir, other, "other.json").string();
    CHECK(run({"adapt", "--config", other_cfg, "--out", out}).code == kExitArtifact);
    CHECK(run({"adapt", "--config", cfg, "--out", (dir / "nowhere").string()}).code == kExitArtifact);
  }
}

TEST_CASE("binary reports exit codes") {
  const int status = std::system(DCT_CLI_PATH " pretrain --config /nonexistent.json > /dev/null 2>&1");
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == kExitConfig);
}

}
