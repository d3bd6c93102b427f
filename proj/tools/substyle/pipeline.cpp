#include "pipeline.hpp"

#include <chrono>
#include <fstream>
#include <set>

#include "substyle/error.hpp"

namespace substyle::cli {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

json timings_json(const std::vector<wct::StageTiming>& timings) {
  json out = json::array();
  for (const auto& t : timings) out.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  return out;
}

std::vector<std::string> path_strings(const std::vector<fs::path>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) out.push_back(p.string());
  return out;
}

bool uses_model(transfer::Mode mode) { return mode != transfer::Mode::kWct; }

}  // namespace

json spec_to_json(const RunSpec& spec) {
  return {
      {"mode", transfer::to_string(spec.mode)},
      {"alpha", spec.config.alpha},
      {"delta", spec.config.delta},
      {"levels", spec.config.levels},
      {"eig_cutoff", spec.config.eig_cutoff},
      {"seed", spec.config.seed},
      {"decomp_level", spec.decomp_level},
      {"k", spec.k},
      {"beta", spec.beta},
      {"max_side", spec.max_side},
      {"content", spec.content.string()},
      {"styles", path_strings(spec.styles)},
      {"weights", spec.weights.string()},
      {"model", spec.model.string()},
      {"masks_out", spec.masks_out.string()},
      {"out", spec.out.string()},
  };
}

RunSpec spec_from_json(const json& j) {
  RunSpec s;
  try {
    s.mode = transfer::parse_mode(j.at("mode").get<std::string>());
    s.config.alpha = j.at("alpha").get<double>();
    s.config.delta = j.at("delta").get<double>();
    s.config.levels = j.at("levels").get<std::vector<int>>();
    s.config.eig_cutoff = j.at("eig_cutoff").get<double>();
    s.config.seed = j.at("seed").get<std::uint64_t>();
    s.decomp_level = j.at("decomp_level").get<int>();
    s.k = j.at("k").get<std::size_t>();
    s.beta = j.at("beta").get<std::vector<double>>();
    s.max_side = j.at("max_side").get<int>();
    s.content = j.at("content").get<std::string>();
    for (const auto& p : j.at("styles")) s.styles.emplace_back(p.get<std::string>());
    s.weights = j.at("weights").get<std::string>();
    s.model = j.at("model").get<std::string>();
    s.masks_out = j.at("masks_out").get<std::string>();
    s.out = j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, ErrorCode::kGeneric, std::string("malformed run manifest: ") + e.what());
  }
  return s;
}

fs::path manifest_path(const fs::path& image) {
  fs::path p = image;
  p.replace_extension(".json");
  return p;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot write " + path.string());
}

cnn::Image load_image(const fs::path& path, int max_side) {
  return cnn::limit_size(cnn::read_image(path), max_side);
}

transfer::MixWeights resolve_beta(const RunSpec& spec, std::size_t k) {
  if (spec.beta.empty()) return transfer::MixWeights::uniform(k);
  return {spec.beta};
}

PreparedStyle prepare_style(const RunSpec& spec, const cnn::NetworkSet& nets, bool need_model) {
  PreparedStyle out;
  if (spec.styles.empty()) fail(ErrorKind::kConfig, ErrorCode::kGeneric, "--style is required");
  auto start = std::chrono::steady_clock::now();
  std::vector<cnn::Image> images;
  for (const auto& p : spec.styles) {
    images.push_back(load_image(p, spec.max_side));
    out.ids.push_back(p.string());
  }
  out.timings.push_back({"load style", seconds_since(start)});

  std::set<int> levels(spec.config.levels.begin(), spec.config.levels.end());
  if (need_model) levels.insert(spec.decomp_level);
  std::vector<int> ordered(levels.rbegin(), levels.rend());
  out.cache = std::make_unique<wct::StyleStatsCache>(nets, std::move(images), ordered);

  start = std::chrono::steady_clock::now();
  for (int l : spec.config.levels) out.cache->stats(l);
  out.timings.push_back({"style statistics", seconds_since(start)});

  if (!need_model) return out;
  if (!spec.model.empty() && fs::exists(spec.model)) {
    start = std::chrono::steady_clock::now();
    out.model = decomp::load_model(spec.model);
    out.model_loaded = true;
    out.timings.push_back({"load model", seconds_since(start)});
    if (out.model.level != spec.decomp_level) {
      fail(ErrorKind::kConfig, ErrorCode::kLevelMismatch,
           "model " + spec.model.string() + " was built at level " +
               std::to_string(out.model.level) + ", run uses --decomp-level " +
               std::to_string(spec.decomp_level));
    }
    if (out.model.preprocess != cnn::to_string(nets.preprocess())) {
      out.warnings.push_back("model preprocessing '" + out.model.preprocess +
                             "' differs from the weights' '" + cnn::to_string(nets.preprocess()) +
                             "'");
    }
  } else {
    start = std::chrono::steady_clock::now();
    out.model = decomp::decompose_feature_maps(out.cache->feature_maps(spec.decomp_level),
                                               out.ids, spec.k, spec.config.seed);
    out.model.preprocess = cnn::to_string(nets.preprocess());
    out.timings.push_back({"decompose", seconds_since(start)});
    if (!spec.model.empty()) decomp::save_model(out.model, spec.model);
  }
  out.has_model = true;
  out.warnings.insert(out.warnings.end(), out.model.warnings.begin(), out.model.warnings.end());
  if (!spec.masks_out.empty()) {
    for (std::size_t i = 0; i < out.model.label_maps.size(); ++i) {
      const std::string prefix = out.model.label_maps.size() == 1
                                     ? "style_mask"
                                     : "style" + std::to_string(i + 1) + "_mask";
      auto paths = decomp::export_masks(out.model.label_maps[i], out.model.k, spec.masks_out, prefix);
      out.masks.insert(out.masks.end(), paths.begin(), paths.end());
    }
  }
  return out;
}

RunOutcome stylize_one(const RunSpec& spec, const PreparedStyle& style,
                       const cnn::NetworkSet& nets) {
  const auto start_all = std::chrono::steady_clock::now();
  if (uses_model(spec.mode) && !style.has_model) {
    fail(ErrorKind::kConfig, ErrorCode::kGeneric, "sub-style mode without a model");
  }
  wct::StylizeReport report;
  report.timings = style.timings;
  report.warnings = style.warnings;

  auto start = std::chrono::steady_clock::now();
  const cnn::Image content = load_image(spec.content, spec.max_side);
  report.timings.push_back({"load content", seconds_since(start)});

  transfer::MixWeights beta;
  if (spec.mode == transfer::Mode::kSmt || spec.mode == transfer::Mode::kMst) {
    beta = resolve_beta(spec, style.model.k);
  } else if (!spec.beta.empty()) {
    report.warnings.push_back("--beta is ignored in " + transfer::to_string(spec.mode) + " mode");
  }
  std::vector<std::string> notes;
  decomp::ContentSegmentation seg;
  const wct::StyleSource source = transfer::make_style_source(
      spec.mode, *style.cache, style.has_model ? &style.model : nullptr, beta, spec.config.seed,
      spec.config.eig_cutoff, &notes, &seg);
  const cnn::Image result = wct::multi_level_stylize(content, source, spec.config, nets, &report);
  report.warnings.insert(report.warnings.end(), notes.begin(), notes.end());

  start = std::chrono::steady_clock::now();
  if (spec.out.has_parent_path()) fs::create_directories(spec.out.parent_path());
  cnn::write_png(result, spec.out);
  std::vector<fs::path> masks = style.masks;
  if (spec.mode == transfer::Mode::kSst && !spec.masks_out.empty() && seg.k > 0) {
    auto paths = decomp::export_masks(seg.label_map(content.height(), content.width()), seg.k,
                                      spec.masks_out, spec.out.stem().string() + "_content_mask");
    masks.insert(masks.end(), paths.begin(), paths.end());
  }
  report.timings.push_back({"write", seconds_since(start)});
  report.timings.push_back({"total", seconds_since(start_all)});

  json manifest = {
      {"command", "stylize"},
      {"spec", spec_to_json(spec)},
      {"beta_used", beta.beta},
      {"model",
       {{"path", spec.model.string()},
        {"loaded", style.model_loaded},
        {"k", style.has_model ? style.model.k : 0},
        {"level", style.has_model ? style.model.level : 0}}},
      {"weights_preprocess", cnn::to_string(nets.preprocess())},
      {"outputs", {{"image", spec.out.string()}, {"masks", path_strings(masks)}}},
      {"timings", timings_json(report.timings)},
      {"warnings", report.warnings},
  };
  const fs::path mpath = manifest_path(spec.out);
  write_json(mpath, manifest);
  return {spec.out, mpath};
}

}  // namespace substyle::cli
