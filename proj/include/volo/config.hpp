// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace volo {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Token mixer used by the first-stage blocks.
enum class Stage1Layer { outlooker, local_self_attention, convolution };

inline std::string_view to_string(Stage1Layer k) {
  switch (k) {
    case Stage1Layer::outlooker: return "outlooker";
    case Stage1Layer::local_self_attention: return "lsa";
    case Stage1Layer::convolution: return "conv";
  }
  return "?";
}

inline Stage1Layer parse_stage1_layer(std::string_view s) {
  if (s == "outlooker") return Stage1Layer::outlooker;
  if (s == "lsa") return Stage1Layer::local_self_attention;
  if (s == "conv") return Stage1Layer::convolution;
  throw ConfigError("unknown stage1_layer '" + std::string(s) +
                    "' (expected outlooker, lsa or conv)");
}

/// Full description of a two-stage model.
struct ModelConfig {
  std::string name = "custom";
  std::size_t image_size = 224;
  // stage 1: fine-level token map
  std::size_t patch_size = 8;
  std::size_t stem_hidden = 64;
  std::size_t outlookers = 4;
  std::size_t stage1_heads = 6;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t stage1_mlp_ratio = 3;
  std::size_t stage1_dim = 192;
  Stage1Layer stage1_layer = Stage1Layer::outlooker;
  // downsampling patch embedding
  std::size_t downsample_patch = 2;
  // stage 2: coarse-level transformer stack
  std::size_t transformers = 14;
  std::size_t stage2_heads = 12;
  std::size_t stage2_mlp_ratio = 3;
  std::size_t stage2_dim = 384;
  std::size_t class_attention_layers = 2;
  std::size_t num_classes = 1000;
  double drop_path_max = 0.1;

  std::size_t total_layers() const { return outlookers + transformers; }
  std::size_t stage1_grid(std::size_t resolution) const { return resolution / patch_size; }
  std::size_t stage2_grid(std::size_t resolution) const {
    return resolution / (patch_size * downsample_patch);
  }

  /// Throws on unusable configurations; returns advisory warnings.
  std::vector<std::string> validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(image_size > 0, "image_size must be positive");
    need(patch_size >= 2 && patch_size % 2 == 0, "patch_size must be even (stride-2 stem times a projection patch)");
    need(stem_hidden > 0, "stem_hidden must be positive");
    need(stage1_dim > 0 && stage2_dim > 0, "stage dims must be positive");
    need(stage1_heads > 0 && stage1_dim % stage1_heads == 0, "stage1_dim must be divisible by stage1_heads");
    need(stage2_heads > 0 && stage2_dim % stage2_heads == 0, "stage2_dim must be divisible by stage2_heads");
    need(kernel % 2 == 1, "kernel must be odd");
    need(stride > 0, "stride must be positive");
    need(stage1_mlp_ratio > 0 && stage2_mlp_ratio > 0, "mlp ratios must be positive");
    need(downsample_patch > 0, "downsample_patch must be positive");
    need(num_classes > 0, "num_classes must be positive");
    need(drop_path_max >= 0.0 && drop_path_max < 1.0, "drop_path_max must lie in [0, 1)");
    need(image_size % (patch_size * downsample_patch) == 0,
         "image_size must be divisible by patch_size * downsample_patch");
    std::vector<std::string> warnings;
    if (2 * stage1_dim != stage2_dim)
      warnings.push_back("stage1_dim is not half of stage2_dim");
    return warnings;
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"image_size", c.image_size},
                     {"patch_size", c.patch_size},
                     {"stem_hidden", c.stem_hidden},
                     {"outlookers", c.outlookers},
                     {"stage1_heads", c.stage1_heads},
                     {"kernel", c.kernel},
                     {"stride", c.stride},
                     {"stage1_mlp_ratio", c.stage1_mlp_ratio},
                     {"stage1_dim", c.stage1_dim},
                     {"stage1_layer", std::string(to_string(c.stage1_layer))},
                     {"downsample_patch", c.downsample_patch},
                     {"transformers", c.transformers},
                     {"stage2_heads", c.stage2_heads},
                     {"stage2_mlp_ratio", c.stage2_mlp_ratio},
                     {"stage2_dim", c.stage2_dim},
                     {"class_attention_layers", c.class_attention_layers},
                     {"num_classes", c.num_classes},
                     {"drop_path_max", c.drop_path_max}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::array<std::string_view, 19> known = {
      "name", "image_size", "patch_size", "stem_hidden", "outlookers", "stage1_heads",
      "kernel", "stride", "stage1_mlp_ratio", "stage1_dim", "stage1_layer",
      "downsample_patch", "transformers", "stage2_heads", "stage2_mlp_ratio",
      "stage2_dim", "class_attention_layers", "num_classes", "drop_path_max"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown model config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("name", c.name);
  get("image_size", c.image_size);
  get("patch_size", c.patch_size);
  get("stem_hidden", c.stem_hidden);
  get("outlookers", c.outlookers);
  get("stage1_heads", c.stage1_heads);
  get("kernel", c.kernel);
  get("stride", c.stride);
  get("stage1_mlp_ratio", c.stage1_mlp_ratio);
  get("stage1_dim", c.stage1_dim);
  if (j.contains("stage1_layer")) c.stage1_layer = parse_stage1_layer(j.at("stage1_layer").get<std::string>());
  get("downsample_patch", c.downsample_patch);
  get("transformers", c.transformers);
  get("stage2_heads", c.stage2_heads);
  get("stage2_mlp_ratio", c.stage2_mlp_ratio);
  get("stage2_dim", c.stage2_dim);
  get("class_attention_layers", c.class_attention_layers);
  get("num_classes", c.num_classes);
  get("drop_path_max", c.drop_path_max);
}

namespace presets {

inline ModelConfig make(std::string name, std::size_t outlookers, std::size_t heads1,
                        std::size_t dim1, std::size_t transformers, std::size_t heads2,
                        std::size_t dim2, std::size_t mlp, double drop) {
  ModelConfig c;
  c.name = std::move(name);
  c.outlookers = outlookers;
  c.stage1_heads = heads1;
  c.stage1_dim = dim1;
  c.transformers = transformers;
  c.stage2_heads = heads2;
  c.stage2_dim = dim2;
  c.stage1_mlp_ratio = mlp;
  c.stage2_mlp_ratio = mlp;
  c.drop_path_max = drop;
  return c;
}

inline ModelConfig d1() { return make("d1", 4, 6, 192, 14, 12, 384, 3, 0.1); }
inline ModelConfig d2() { return make("d2", 6, 8, 256, 18, 16, 512, 3, 0.2); }
inline ModelConfig d3() { return make("d3", 8, 8, 256, 28, 16, 512, 3, 0.5); }
inline ModelConfig d4() { return make("d4", 8, 12, 384, 28, 16, 768, 3, 0.5); }
inline ModelConfig d5() { return make("d5", 12, 12, 384, 36, 16, 768, 4, 0.75); }

/// Desk-scale model for the toy training harness: 32x32 inputs, 10 classes.
inline ModelConfig tiny() {
  ModelConfig c = make("tiny", 2, 2, 16, 2, 4, 32, 3, 0.1);
  c.image_size = 32;
  c.stem_hidden = 16;
  c.num_classes = 10;
  return c;
}

inline std::vector<ModelConfig> named() { return {d1(), d2(), d3(), d4(), d5()}; }

inline std::optional<ModelConfig> find(std::string_view name) {
  if (name == "d1") return d1();
  if (name == "d2") return d2();
  if (name == "d3") return d3();
  if (name == "d4") return d4();
  if (name == "d5") return d5();
  if (name == "tiny") return tiny();
  return std::nullopt;
}

/// Reported parameter count and 224x224 multiply-adds for d1..d5.
struct PublishedFigures {
  double parameters;
  double madds;
};

inline std::optional<PublishedFigures> published(std::string_view name) {
  if (name == "d1") return PublishedFigures{26.6e6, 6.8e9};
  if (name == "d2") return PublishedFigures{58.7e6, 14.1e9};
  if (name == "d3") return PublishedFigures{86.3e6, 20.6e9};
  if (name == "d4") return PublishedFigures{193e6, 43.8e9};
  if (name == "d5") return PublishedFigures{296e6, 69.0e9};
  return std::nullopt;
}

}  // namespace presets

/// A preset name or a path to a JSON config file.
inline ModelConfig load_config(const std::string& preset_or_path) {
  if (auto p = presets::find(preset_or_path)) return *p;
  std::ifstream in(preset_or_path);
  if (!in) throw ConfigError("'" + preset_or_path + "' is neither a preset (d1..d5, tiny) nor a readable file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + preset_or_path + ": " + e.what());
  }
  try {
    return j.get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + preset_or_path + ": " + e.what());
  }
}

}  // namespace volo
