#include "dct/checkpoint.hpp"

#include <algorithm>

#include "dct/container.hpp"
#include "dct/errors.hpp"

namespace dct {

using nlohmann::json;

json model_config_to_json(const ModelConfig& c) {
  return json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
              {"channels", c.channels},     {"embed_dim", c.embed_dim},
              {"num_heads", c.num_heads},   {"depth", c.depth},
              {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  auto read_size = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) throw ConfigError(std::string("model.") + key + " must be a non-negative integer");
    dst = v.get<std::size_t>();
  };
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"image_size", "patch_size", "channels", "embed_dim",
                                  "num_heads",  "depth",      "mlp_ratio", "num_classes"};
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ConfigError("unknown key model." + key);
    }
  }
  read_size("image_size", c.image_size);
  read_size("patch_size", c.patch_size);
  read_size("channels", c.channels);
  read_size("embed_dim", c.embed_dim);
  read_size("num_heads", c.num_heads);
  read_size("depth", c.depth);
  read_size("num_classes", c.num_classes);
  if (j.contains("mlp_ratio")) {
    if (!j.at("mlp_ratio").is_number()) throw ConfigError("model.mlp_ratio must be a number");
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
  }
  c.validate();
  return c;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Container c;
  c.meta["config"] = model_config_to_json(model.config);
  for (const auto& p : model.params.params()) c.floats.emplace_back(p.name, p.value);
  write_container(path, kCheckpointMagic, c);
}

Model load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path, kCheckpointMagic);
  if (!c.meta.contains("config")) throw ArtifactError("checkpoint header has no config");
  Model model;
  try {
    model.config = model_config_from_json(c.meta.at("config"));
  } catch (const ConfigError& e) {
    throw ArtifactError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (!c.ints.empty()) throw ArtifactError("checkpoint contains unexpected int32 blocks");
  for (auto& [name, tensor] : c.floats) model.params.add(name, std::move(tensor));

  // Shape check against a freshly initialised model of the same config.
  const Model reference = init_model(model.config, 0);
  for (const auto& p : reference.params.params()) {
    if (group_for_name(p.name) == ParamGroup::Conditioner) continue;
    if (!model.params.contains(p.name)) {
      throw ArtifactError("checkpoint is missing tensor '" + p.name + "'");
    }
    if (model.params.at(p.name).shape() != p.value.shape()) {
      throw ArtifactError("tensor '" + p.name + "' has shape " +
                          shape_string(model.params.at(p.name).shape()) + " but config implies " +
                          shape_string(p.value.shape()));
    }
  }
  const std::size_t d = model.config.embed_dim;
  for (const auto& p : model.params.params()) {
    if (p.group != ParamGroup::Conditioner) continue;
    const bool weight = p.name.ends_with(".weight");
    const bool bias = p.name.ends_with(".bias");
    const Shape want = weight ? Shape{d, 3 * d} : bias ? Shape{3 * d} : Shape{d};
    if (p.value.shape() != want) {
      throw ArtifactError("tensor '" + p.name + "' has shape " + shape_string(p.value.shape()) +
                          " but config implies " + shape_string(want));
    }
  }
  return model;
}

}  // namespace dct
