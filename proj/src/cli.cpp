#include "dct/cli.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "dct/analysis.hpp"
#include "dct/checkpoint.hpp"
#include "dct/errors.hpp"

namespace dct {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(name("") + " must be a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename U>
  void read(const char* key, U& dst, bool required = false) {
    if (!j_.contains(key)) {
      if (required) throw ConfigError("missing required field " + name(key));
      return;
    }
    seen_.insert(key);
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<U, bool>) {
      if (!v.is_boolean()) throw ConfigError(name(key) + " must be a boolean");
    } else if constexpr (std::is_same_v<U, std::string>) {
      if (!v.is_string()) throw ConfigError(name(key) + " must be a string");
    } else if constexpr (std::is_floating_point_v<U>) {
      if (!v.is_number()) throw ConfigError(name(key) + " must be a number");
    } else if constexpr (std::is_unsigned_v<U>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) throw ConfigError(name(key) + " must be a non-negative integer");
    } else {
      if (!v.is_number_integer()) throw ConfigError(name(key) + " must be an integer");
    }
    dst = v.get<U>();
  }

  std::string string(const char* key, bool required) {
    std::string s;
    read(key, s, required);
    return s;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown key " + name(key));
    }
  }

 private:
  std::string name(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

}  // namespace

void RunConfig::reseed(std::uint64_t run_seed) {
  seed = run_seed;
  data.dataset_seed = explicit_dataset_seed.value_or(run_seed + kDatasetSeedOffset);
  pretrain.seed = explicit_init_seed.value_or(run_seed + kInitSeedOffset);
  stream.stream_seed = explicit_stream_seed.value_or(run_seed + kStreamSeedOffset);
  stream.corruption_seed = explicit_corruption_seed.value_or(run_seed + kCorruptionSeedOffset);
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  Section top(j, "");
  top.read("run_id", c.run_id, true);
  if (c.run_id.empty() || c.run_id.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("run_id must be a non-empty file-name-safe string");
  }
  if (top.has("out_dir")) c.out_dir = top.string("out_dir", false);
  top.read("seed", c.seed);

  if (!top.has("model")) throw ConfigError("missing required field model");
  c.model = model_config_from_json(top.raw("model"));
  if (c.model.depth == 0) throw ConfigError("model.depth must be at least 1");

  if (!top.has("data")) throw ConfigError("missing required field data");
  {
    Section s(top.raw("data"), "data");
    s.read("classes", c.data.classes, true);
    s.read("per_class", c.data.per_class, true);
    s.read("test_per_class", c.data.test_per_class);
    s.read("image_size", c.data.image_size);
    if (s.has("dataset_seed")) {
      std::uint64_t v = 0;
      s.read("dataset_seed", v);
      c.explicit_dataset_seed = v;
    }
    s.finish();
  }

  if (!top.has("stream")) throw ConfigError("missing required field stream");
  {
    Section s(top.raw("stream"), "stream");
    c.stream.protocol = parse_protocol(s.string("protocol", true));
    s.read("batch_size", c.stream.batch_size);
    c.stream.corruption = parse_corruption(s.string("corruption", true));
    s.read("severity", c.stream.severity, true);
    s.read("concentration", c.stream.concentration);
    for (auto [key, slot] : {std::pair{"stream_seed", &c.explicit_stream_seed},
                             std::pair{"corruption_seed", &c.explicit_corruption_seed}}) {
      if (s.has(key)) {
        std::uint64_t v = 0;
        s.read(key, v);
        *slot = v;
      }
    }
    s.finish();
  }

  if (top.has("adapt")) {
    Section s(top.raw("adapt"), "adapt");
    s.read("learning_rate", c.adapt.learning_rate);
    s.read("rho", c.adapt.rho);
    s.read("e0_factor", c.adapt.e0_factor);
    s.read("momentum", c.adapt.momentum);
    s.read("score_after_update", c.adapt.score_after_update);
    s.read("lr_reference_batch", c.adapt.lr_reference_batch);
    if (s.has("mode")) c.adapt.mode = parse_adapt_mode(s.string("mode", false));
    s.finish();
  }

  if (top.has("pretrain")) {
    Section s(top.raw("pretrain"), "pretrain");
    s.read("epochs", c.pretrain.epochs);
    s.read("batch_size", c.pretrain.batch_size);
    s.read("learning_rate", c.pretrain.learning_rate);
    s.read("weight_decay", c.pretrain.weight_decay);
    s.read("label_smoothing", c.pretrain.label_smoothing);
    if (s.has("seed")) {
      std::uint64_t v = 0;
      s.read("seed", v);
      c.explicit_init_seed = v;
    }
    s.finish();
  }

  if (top.has("analysis")) {
    Section s(top.raw("analysis"), "analysis");
    s.read("samples", c.analysis.samples);
    s.finish();
  }
  top.finish();

  c.reseed(c.seed);
  if (c.data.classes != c.model.num_classes) {
    throw ConfigError("data.classes (" + std::to_string(c.data.classes) + ") must equal model.num_classes (" +
                      std::to_string(c.model.num_classes) + ")");
  }
  if (c.data.image_size != c.model.image_size) throw ConfigError("data.image_size must equal model.image_size");
  if (c.model.channels != 1) throw ConfigError("model.channels must be 1 for the synthetic data");
  if (c.data.classes < 2) throw ConfigError("data.classes must be at least 2");
  if (c.data.per_class == 0 || c.data.test_per_class == 0) throw ConfigError("data sizes must be positive");
  if (c.stream.batch_size == 0) throw ConfigError("stream.batch_size must be positive");
  if (c.stream.severity < 0 || c.stream.severity > kMaxSeverity) throw ConfigError("stream.severity must be in 0..5");
  if (!(c.stream.concentration > 0.0)) throw ConfigError("stream.concentration must be positive");
  if (c.analysis.samples == 0) throw ConfigError("analysis.samples must be positive");
  c.adapt.validate();
  c.pretrain.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, false);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["out_dir"] = c.out_dir.generic_string();
  j["seed"] = c.seed;
  j["model"] = model_config_to_json(c.model);
  j["data"] = {{"classes", c.data.classes},
               {"per_class", c.data.per_class},
               {"test_per_class", c.data.test_per_class},
               {"image_size", c.data.image_size},
               {"dataset_seed", c.data.dataset_seed}};
  j["stream"] = {{"protocol", to_string(c.stream.protocol)},
                 {"batch_size", c.stream.batch_size},
                 {"corruption", to_string(c.stream.corruption)},
                 {"severity", c.stream.severity},
                 {"stream_seed", c.stream.stream_seed},
                 {"corruption_seed", c.stream.corruption_seed},
                 {"concentration", c.stream.concentration}};
  j["adapt"] = {{"learning_rate", c.adapt.learning_rate},
                {"rho", c.adapt.rho},
                {"e0_factor", c.adapt.e0_factor},
                {"mode", to_string(c.adapt.mode)},
                {"momentum", c.adapt.momentum},
                {"score_after_update", c.adapt.score_after_update},
                {"lr_reference_batch", c.adapt.lr_reference_batch}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"weight_decay", c.pretrain.weight_decay},
                   {"label_smoothing", c.pretrain.label_smoothing},
                   {"seed", c.pretrain.seed}};
  j["analysis"] = {{"samples", c.analysis.samples}};
  return j;
}

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string mode;
};

RunConfig resolve(const CommonArgs& args) {
  RunConfig c = load_run_config(args.config);
  if (args.seed) c.reseed(*args.seed);
  if (!args.out.empty()) c.out_dir = args.out;
  return c;
}

std::filesystem::path artifact(const RunConfig& c, const std::string& run_id, const std::string& suffix) {
  return c.out_dir / (run_id + suffix);
}

DatasetPair make_data(const RunConfig& c) {
  return gen_synthetic_dataset(c.data.classes, c.data.per_class, c.data.test_per_class, c.data.image_size,
                               c.data.dataset_seed);
}

Model load_matching_checkpoint(const RunConfig& c, const CommonArgs& args) {
  const std::filesystem::path path =
      args.checkpoint.empty() ? artifact(c, c.run_id, ".source.ckpt") : std::filesystem::path(args.checkpoint);
  Model model = load_checkpoint(path);
  if (!(model.config == c.model)) {
    throw ArtifactError("checkpoint '" + path.string() + "' was built for a different model config: " +
                        model_config_to_json(model.config).dump());
  }
  return model;
}

// Evenly spaced test ids, corrupted exactly as in the adaptation stream.
std::vector<StreamBatch> evaluation_subset(const SyntheticDataset& test, const RunConfig& c,
                                           const CorruptionSpec& spec) {
  const std::size_t count = std::min(c.analysis.samples, test.size());
  std::vector<std::size_t> ids(count);
  for (std::size_t i = 0; i < count; ++i) ids[i] = i * test.size() / count;
  const std::size_t h = test.images.dim(1), w = test.images.dim(2), ch = test.images.dim(3);
  const std::size_t batch_size = 64;
  std::vector<StreamBatch> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t b = std::min(batch_size, count - start);
    StreamBatch batch;
    batch.index = batches.size();
    batch.corruption = spec;
    batch.images = Tensor(Shape{b, h, w, ch});
    for (std::size_t j = 0; j < b; ++j) {
      const std::size_t id = ids[start + j];
      const Tensor img = corrupt(test.image(id), spec, corruption_seed_for(c.stream.corruption_seed, id));
      std::copy_n(img.ptr(), h * w * ch, batch.images.ptr() + j * h * w * ch);
      batch.labels.push_back(test.labels[id]);
      batch.ids.push_back(id);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

AdaptMode effective_mode(const RunConfig& c, const CommonArgs& args) {
  return args.mode.empty() ? c.adapt.mode : parse_adapt_mode(args.mode);
}

int cmd_pretrain(const CommonArgs& args, std::ostream& out) {
  RunConfig c = resolve(args);
  const DatasetPair data = make_data(c);
  PretrainResult result = pretrain(c.model, data.train, c.pretrain);

  std::filesystem::create_directories(c.out_dir);
  save_checkpoint(result.model, artifact(c, c.run_id, ".source.ckpt"));
  {
    std::ofstream log(artifact(c, c.run_id, ".pretrain.csv"), std::ios::binary | std::ios::trunc);
    log << "epoch,learning_rate,loss,train_accuracy\n";
    for (const auto& row : result.log) {
      log << row.epoch << ',' << format_number(row.learning_rate) << ',' << format_number(row.loss) << ','
          << format_number(row.train_accuracy) << '\n';
    }
    if (!log) throw ArtifactError("failed writing training log");
  }
  const double acc = evaluate_stream(
      result.model,
      make_stream(data.test, CorruptionSpec{}, StreamProtocol{ProtocolKind::Normal, 256, 1.0, c.stream.stream_seed}, 0),
      AttentionMode::Baseline);
  out << "source accuracy (clean test): " << format_number(acc) << '\n';
  return kExitOk;
}

int cmd_adapt(const CommonArgs& args, std::ostream& out) {
  RunConfig c = resolve(args);
  const AdaptMode mode = effective_mode(c, args);
  // An overriding --mode writes to its own run id so arms can share out_dir.
  const std::string run_id = args.mode.empty() ? c.run_id : c.run_id + "-" + to_string(mode);
  c.adapt.mode = mode;
  Model model = load_matching_checkpoint(c, args);
  const DatasetPair data = make_data(c);
  const StreamProtocol protocol{c.stream.protocol, c.stream.batch_size, c.stream.concentration, c.stream.stream_seed};
  const auto stream = make_stream(data.test, CorruptionSpec{c.stream.corruption, c.stream.severity}, protocol,
                                  c.stream.corruption_seed);
  AdaptResult result = adapt_stream(std::move(model), stream, c.adapt);

  std::filesystem::create_directories(c.out_dir);
  write_metrics_csv(artifact(c, run_id, ".metrics.csv"), result.rows);
  save_checkpoint(result.model, artifact(c, run_id, ".adapted.ckpt"));
  json summary = {{"run_id", run_id},
                  {"mode", to_string(mode)},
                  {"corruption", to_string(c.stream.corruption)},
                  {"severity", c.stream.severity},
                  {"protocol", to_string(c.stream.protocol)},
                  {"final_accuracy", result.final_accuracy},
                  {"skipped_batches", result.skipped_batches},
                  {"batches", result.rows.size()},
                  {"config", run_config_to_json(c)}};
  std::ofstream f(artifact(c, run_id, ".summary.json"), std::ios::binary | std::ios::trunc);
  f << summary.dump(2) << '\n';
  if (!f) throw ArtifactError("failed writing summary");
  out << "final accuracy (" << to_string(mode) << "): " << format_number(result.final_accuracy) << '\n';
  return kExitOk;
}

std::vector<int> parse_severities(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int s = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      if (s < 0 || s > kMaxSeverity) throw std::out_of_range(item);
      out.push_back(s);
    } catch (const std::logic_error&) {
      throw ConfigError("--severities expects integers in 0..5, got '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--severities is empty");
  return out;
}

int cmd_profile(const CommonArgs& args, const std::string& severities, std::ostream& out) {
  RunConfig c = resolve(args);
  const auto levels = parse_severities(severities);
  const AdaptMode mode = effective_mode(c, args);
  Model model = load_matching_checkpoint(c, args);
  prepare_for_mode(model, mode);
  const DatasetPair data = make_data(c);
  const TokenGeometry geom = make_geometry(c.model.grid(), c.model.patch_size);
  ForwardOptions options;
  options.mode = attention_mode_for(mode);
  options.record_attention = true;

  std::vector<ProfileRow> rows;
  for (int level : levels) {
    ProfileAccumulator acc(geom);
    for (const auto& batch : evaluation_subset(data.test, c, CorruptionSpec{c.stream.corruption, level})) {
      Graph<float> graph;
      acc.add(run_forward(graph, model, batch.images, options).records);
    }
    const AttentionProfile p = acc.result();
    for (std::size_t l = 0; l < p.per_head.size(); ++l) {
      for (std::size_t h = 0; h < p.per_head[l].size(); ++h) {
        rows.push_back({std::to_string(level), l, h, p.per_head[l][h]});
      }
      out << "severity " << level << " layer " << l << ": " << format_number(p.per_layer[l]) << " px\n";
    }
  }
  write_profile_csv(artifact(c, c.run_id, ".profile.csv"), rows);
  return kExitOk;
}

int cmd_export(const CommonArgs& args, const std::string& what, std::ostream& out) {
  RunConfig c = resolve(args);
  if (what != "class_tokens" && what != "conditioners" && what != "rollout") {
    throw ConfigError("--what must be class_tokens, conditioners or rollout, got '" + what + "'");
  }
  const AdaptMode mode = effective_mode(c, args);
  if (what == "conditioners" && attention_mode_for(mode) != AttentionMode::Conditioned) {
    throw ConfigError("mode " + to_string(mode) + " has no conditioners to export");
  }
  Model model = load_matching_checkpoint(c, args);
  prepare_for_mode(model, mode);
  const DatasetPair data = make_data(c);
  const CorruptionSpec spec{c.stream.corruption, c.stream.severity};
  const auto batches = evaluation_subset(data.test, c, spec);
  const AttentionMode attention = attention_mode_for(mode);

  if (what == "rollout") {
    ForwardOptions options;
    options.mode = attention;
    options.record_attention = true;
    std::vector<RolloutRow> rows;
    for (const auto& batch : batches) {
      Graph<float> graph;
      const auto records = run_forward(graph, model, batch.images, options).records;
      for (std::size_t s = 0; s < batch.ids.size(); ++s) {
        const Rollout r = attention_rollout(records, s);
        rows.push_back({batch.ids[s], batch.labels[s], r.degenerate, r.saliency});
      }
    }
    write_rollout_csv(artifact(c, c.run_id, ".rollout.csv"), rows);
    out << "rollout rows: " << rows.size() << '\n';
    return kExitOk;
  }

  const auto kind = what == "class_tokens" ? EmbeddingKind::ClassTokens : EmbeddingKind::Conditioners;
  const std::string domain = to_string(spec.kind) + "-" + std::to_string(spec.severity);
  const auto rows = export_embeddings(model, batches, attention, kind, domain);
  write_embeddings_csv(artifact(c, c.run_id, ".embed.csv"), rows);
  out << "embedding rows: " << rows.size() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-conditioned transformer with test-time adaptation"};
  app.require_subcommand(1);
  CommonArgs args;
  std::uint64_t seed = 0;
  std::string severities = "0,1,2,3,4,5";
  std::string what;

  auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("--config", args.config, "run config (JSON)")->required();
    sub->add_option("--out", args.out, "output directory, overrides out_dir");
    sub->add_option("--seed", seed, "run seed, overrides seed");
    if (with_checkpoint) {
      sub->add_option("--checkpoint", args.checkpoint, "model checkpoint (default {out_dir}/{run_id}.source.ckpt)");
      sub->add_option("--mode", args.mode, "dct | static-conditioner | ln-only | none");
    }
  };
  auto* pre = app.add_subcommand("pretrain", "train the source model");
  add_common(pre, false);
  auto* adapt = app.add_subcommand("adapt", "adapt online over a corrupted stream");
  add_common(adapt, true);
  auto* prof = app.add_subcommand("profile", "attention distance per layer and severity");
  add_common(prof, true);
  prof->add_option("--severities", severities, "comma-separated severity list");
  auto* exp = app.add_subcommand("export", "export embeddings, conditioners or rollout saliency");
  add_common(exp, true);
  exp->add_option("--what", what, "class_tokens | conditioners | rollout")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  for (auto* sub : {pre, adapt, prof, exp})
    if (sub->parsed() && sub->count("--seed") > 0) args.seed = seed;

  try {
    if (pre->parsed()) return cmd_pretrain(args, out);
    if (adapt->parsed()) return cmd_adapt(args, out);
    if (prof->parsed()) return cmd_profile(args, severities, out);
    return cmd_export(args, what, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ArtifactError& e) {
    err << "artifact error: " << e.what() << '\n';
    return kExitArtifact;
  } catch (const ShapeError& e) {
    err << "artifact error: " << e.what() << '\n';
    return kExitArtifact;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "artifact error: " << e.what() << '\n';
    return kExitArtifact;
  }
}

}  // namespace dct
