// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "volo/config.hpp"
#include "volo/model.hpp"

namespace volo {

struct InspectReport {
  ModelConfig config;
  std::size_t resolution = 224;
  CostBreakdown breakdown;
  std::uint64_t params = 0;
  std::uint64_t madds = 0;
  std::optional<double> params_target, madds_target;
  std::vector<std::string> warnings;

  /// (value - target) / target; empty when no published figure applies.
  std::optional<double> params_deviation() const {
    if (!params_target) return std::nullopt;
    return (double(params) - *params_target) / *params_target;
  }
  std::optional<double> madds_deviation() const {
    if (!madds_target) return std::nullopt;
    return (double(madds) - *madds_target) / *madds_target;
  }

  std::vector<std::string> layers() const {
    const auto& c = config;
    const auto g1 = c.stage1_grid(resolution), g2 = c.stage2_grid(resolution);
    auto grid = [](std::size_t g, std::size_t ch) {
      return std::to_string(g) + "x" + std::to_string(g) + "x" + std::to_string(ch);
    };
    std::vector<std::string> out;
    out.push_back("stem        conv7x7/2 3->" + std::to_string(c.stem_hidden) + ", 2 x conv3x3 " +
                  std::to_string(c.stem_hidden) + "->" + std::to_string(c.stem_hidden) +
                  ", patch " + std::to_string(c.patch_size / 2) + "x" +
                  std::to_string(c.patch_size / 2) + " -> " + grid(g1, c.stage1_dim));
    out.push_back("stage 1     " + std::to_string(c.outlookers) + " x " +
                  std::string(to_string(c.stage1_layer)) + " (K=" + std::to_string(c.kernel) +
                  (c.stage1_layer == Stage1Layer::outlooker ? ", s=" + std::to_string(c.stride)
                                                            : std::string()) +
                  ", heads " + std::to_string(c.stage1_heads) + ", mlp " +
                  std::to_string(c.stage1_mlp_ratio) + ") @ " + grid(g1, c.stage1_dim));
    out.push_back("downsample  patch " + std::to_string(c.downsample_patch) + "x" +
                  std::to_string(c.downsample_patch) + " " + std::to_string(c.stage1_dim) +
                  "->" + std::to_string(c.stage2_dim) + " -> " + grid(g2, c.stage2_dim) +
                  ", + positional embedding");
    out.push_back("stage 2     " + std::to_string(c.transformers) + " x transformer (heads " +
                  std::to_string(c.stage2_heads) + ", mlp " + std::to_string(c.stage2_mlp_ratio) +
                  ") @ " + grid(g2, c.stage2_dim));
    out.push_back("class attn  " + std::to_string(c.class_attention_layers) + " x (heads " +
                  std::to_string(c.stage2_heads) + ", mlp " + std::to_string(c.stage2_mlp_ratio) +
                  ")");
    out.push_back("head        layer norm, linear " + std::to_string(c.stage2_dim) + "->" +
                  std::to_string(c.num_classes));
    return out;
  }

  std::string table() const {
    std::ostringstream os;
    os << "model " << config.name << " at " << resolution << "x" << resolution << ", "
       << config.total_layers() << " layers (" << config.outlookers << " + "
       << config.transformers << ")\n";
    for (const auto& l : layers()) os << "  " << l << '\n';
    os << "\n  part                   count        params          M-Adds\n";
    char line[200];
    for (const auto& i : breakdown.items) {
      std::snprintf(line, sizeof line, "  %-20s %6zu %13llu %15llu\n", i.part.c_str(), i.count,
                    (unsigned long long)i.params, (unsigned long long)i.madds);
      os << line;
    }
    auto row = [&](const char* what, std::uint64_t v, const std::optional<double>& target,
                   const std::optional<double>& dev, double unit, const char* suffix) {
      std::snprintf(line, sizeof line, "  %-10s %15llu (%.2f%s)", what, (unsigned long long)v,
                    double(v) / unit, suffix);
      os << line;
      if (target) {
        std::snprintf(line, sizeof line, "   published %.1f%s   deviation %+.2f%%",
                      *target / unit, suffix, 100.0 * *dev);
        os << line;
      }
      os << '\n';
    };
    os << '\n';
    row("params", params, params_target, params_deviation(), 1e6, "M");
    row("M-Adds", madds, madds_target, madds_deviation(), 1e9, "B");
    for (const auto& w : warnings) os << "  warning: " << w << '\n';
    return os.str();
  }

  nlohmann::json json() const {
    nlohmann::json j;
    j["config"] = config;
    j["resolution"] = resolution;
    j["total_layers"] = config.total_layers();
    j["layers"] = layers();
    j["params"] = params;
    j["madds"] = madds;
    auto opt = [](const std::optional<double>& v) {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    j["params_target"] = opt(params_target);
    j["madds_target"] = opt(madds_target);
    j["params_deviation"] = opt(params_deviation());
    j["madds_deviation"] = opt(madds_deviation());
    auto& parts = j["breakdown"] = nlohmann::json::array();
    for (const auto& i : breakdown.items)
      parts.push_back({{"part", i.part}, {"count", i.count}, {"params", i.params},
                       {"madds", i.madds}});
    j["warnings"] = warnings;
    return j;
  }
};

/// Parameter and cost accounting from the config alone. Published figures
/// are attached for the named presets; M-Adds targets only at 224.
inline InspectReport inspect(const ModelConfig& config, std::size_t resolution) {
  InspectReport r;
  r.config = config;
  r.resolution = resolution;
  r.warnings = config.validate();
  if (resolution == 0 || resolution % (config.patch_size * config.downsample_patch) != 0)
    throw ConfigError("resolution " + std::to_string(resolution) +
                      " must be a positive multiple of patch_size * downsample_patch = " +
                      std::to_string(config.patch_size * config.downsample_patch));
  r.breakdown = analyze(config, resolution);
  r.params = count_params(config);
  r.madds = r.breakdown.madds();
  const auto fig = presets::published(config.name);
  const auto preset = presets::find(config.name);
  if (fig && preset && *preset == config) {
    r.params_target = fig->parameters;
    if (resolution == 224) r.madds_target = fig->madds;
  }
  return r;
}

}  // namespace volo
