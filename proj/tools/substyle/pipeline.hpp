#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "substyle/transfer.hpp"

namespace substyle::cli {

namespace fs = std::filesystem;

// Everything a stylization run depends on; serialized into its manifest.
struct RunSpec {
  transfer::Mode mode = transfer::Mode::kWct;
  wct::StylizeConfig config;
  int decomp_level = 4;
  std::size_t k = 3;
  std::vector<double> beta;  // empty: uniform
  int max_side = 1024;
  fs::path content;
  std::vector<fs::path> styles;
  fs::path weights;
  fs::path model;      // load when present, otherwise decompose and save here
  fs::path masks_out;  // optional
  fs::path out;
};

nlohmann::json spec_to_json(const RunSpec& spec);
RunSpec spec_from_json(const nlohmann::json& j);

// Style images, their statistics and (for sub-style modes) the model, shared
// by every content image of a run.
struct PreparedStyle {
  std::vector<std::string> ids;
  std::unique_ptr<wct::StyleStatsCache> cache;
  decomp::SubStyleModel model;
  bool has_model = false;
  bool model_loaded = false;
  std::vector<fs::path> masks;
  std::vector<wct::StageTiming> timings;
  std::vector<std::string> warnings;
};

cnn::Image load_image(const fs::path& path, int max_side);

// Loads style images, computes per-level statistics and obtains the
// sub-style model. `levels` must cover every level the run will touch.
PreparedStyle prepare_style(const RunSpec& spec, const cnn::NetworkSet& nets,
                            bool need_model);

struct RunOutcome {
  fs::path image;
  fs::path manifest;
};

// Stylizes one content image into spec.out and writes the manifest next to
// it (same stem, .json).
RunOutcome stylize_one(const RunSpec& spec, const PreparedStyle& style,
                       const cnn::NetworkSet& nets);

fs::path manifest_path(const fs::path& image);
void write_json(const fs::path& path, const nlohmann::json& j);

transfer::MixWeights resolve_beta(const RunSpec& spec, std::size_t k);

}  // namespace substyle::cli
