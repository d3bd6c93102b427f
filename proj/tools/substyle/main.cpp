// substyle: stylize, decompose, grid and replay commands.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "pipeline.hpp"
#include "substyle/error.hpp"

namespace {

using namespace substyle;
using namespace substyle::cli;
using nlohmann::json;

constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo:
    case ErrorKind::kFormat: return kExitIo;
    case ErrorKind::kConfig: return kExitConfig;
    case ErrorKind::kNumeric: return kExitNumeric;
  }
  return 1;
}

[[noreturn]] void config_error(const std::string& msg) {
  fail(ErrorKind::kConfig, ErrorCode::kGeneric, msg);
}

struct Flags {
  RunSpec spec;
  std::string mode = "wct";
  std::string content;
  std::vector<std::string> styles;
  std::string weights, model, masks_out, out;
  int jobs = 1;
  std::vector<int> pair;
  int steps = 6;
  std::string manifest;
};

void add_style_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--style", f.styles, "Style image(s); several enable multi-image decomposition")
      ->required();
  cmd->add_option("-K,--k", f.spec.k, "Number of sub-styles")->capture_default_str();
  cmd->add_option("--decomp-level", f.spec.decomp_level, "Encoder level of the decomposition")
      ->capture_default_str();
  cmd->add_option("--seed", f.spec.config.seed, "Random seed")->capture_default_str();
  cmd->add_option("--weights", f.weights, "Weight directory (default: $SUBSTYLE_WEIGHTS)");
  cmd->add_option("--model", f.model, "Sub-style model file to load, or to save when absent");
  cmd->add_option("--masks-out", f.masks_out, "Directory for cluster mask PNGs");
  cmd->add_option("--max-side", f.spec.max_side, "Downscale inputs so the long side fits")
      ->capture_default_str();
}

void add_cascade_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--content", f.content, "Content image (or directory for stylize)")->required();
  cmd->add_option("--alpha", f.spec.config.alpha, "Style weight")->capture_default_str();
  cmd->add_option("--delta", f.spec.config.delta, "Content weight")->capture_default_str();
  cmd->add_option("--levels", f.spec.config.levels, "Cascade levels, deepest first")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--eig-cutoff", f.spec.config.eig_cutoff, "Eigenvalue truncation cutoff")
      ->capture_default_str();
  cmd->add_option("--out", f.out, "Output PNG (directory when --content is one)")->required();
}

void finish_spec(Flags& f) {
  RunSpec& s = f.spec;
  s.mode = transfer::parse_mode(f.mode);
  s.content = f.content;
  s.styles.assign(f.styles.begin(), f.styles.end());
  s.model = f.model;
  s.masks_out = f.masks_out;
  s.out = f.out;
  if (f.weights.empty()) {
    if (const char* env = std::getenv("SUBSTYLE_WEIGHTS")) f.weights = env;
  }
  if (f.weights.empty()) config_error("no weights: pass --weights or set SUBSTYLE_WEIGHTS");
  s.weights = f.weights;
  if (!fs::is_directory(s.weights)) {
    fail(ErrorKind::kIo, ErrorCode::kMissingNetwork, "weight directory " + s.weights.string() +
                                                         " does not exist");
  }
  if (s.k == 0) config_error("-K must be at least 1");
  if (s.decomp_level < cnn::kMinLevel || s.decomp_level > cnn::kMaxLevel) {
    fail(ErrorKind::kConfig, ErrorCode::kLevelOutOfRange, "--decomp-level must lie in 1..5");
  }
  if (s.max_side < cnn::kMinImageSide) config_error("--max-side must be at least 32");
  s.config.validate();
}

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

void report(const RunOutcome& r) {
  std::cout << "wrote " << r.image.string() << " (" << r.manifest.string() << ")\n";
}

int cmd_stylize(Flags& f) {
  finish_spec(f);
  if (f.jobs < 1) config_error("--jobs must be at least 1");
  const RunSpec& spec = f.spec;
  const cnn::NetworkSet nets(spec.weights);
  const PreparedStyle style = prepare_style(spec, nets, spec.mode != transfer::Mode::kWct);
  for (const auto& w : style.warnings) std::cerr << "warning: " << w << "\n";

  if (!fs::is_directory(spec.content)) {
    report(stylize_one(spec, style, nets));
    return 0;
  }
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(spec.content))
    if (e.is_regular_file() && is_image(e.path())) inputs.push_back(e.path());
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) config_error("no PNG or JPEG images in " + spec.content.string());
  fs::create_directories(spec.out);

  // Each image is independent; results do not depend on the job count.
  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < inputs.size();) {
      RunSpec one = spec;
      one.content = inputs[i];
      one.out = spec.out / (inputs[i].stem().string() + ".png");
      try {
        const RunOutcome r = stylize_one(one, style, nets);
        std::lock_guard lock(io);
        report(r);
      } catch (...) {
        std::lock_guard lock(io);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(f.jobs, static_cast<int>(inputs.size()));
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return 0;
}

int cmd_decompose(Flags& f) {
  f.mode = "smt";
  f.content = f.styles.empty() ? "" : f.styles.front();
  f.out = f.model;
  finish_spec(f);
  RunSpec& spec = f.spec;
  if (spec.model.empty()) config_error("decompose needs --model");
  spec.config.levels = {spec.decomp_level};
  // Always recompute: decompose overwrites an existing model file.
  const fs::path target = spec.model;
  spec.model.clear();
  const cnn::NetworkSet nets(spec.weights);
  PreparedStyle style = prepare_style(spec, nets, true);
  decomp::save_model(style.model, target);
  for (const auto& w : style.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << target.string() << " (k=" << style.model.k << ", level "
            << style.model.level << ")\n";
  for (std::size_t i = 0; i < style.model.k; ++i) {
    std::cout << "  sub-style " << i + 1 << ": " << style.model.clusters[i].count << " positions\n";
  }
  for (const auto& m : style.masks) std::cout << "  mask " << m.string() << "\n";
  return 0;
}

cnn::Image compose_row(const std::vector<cnn::Image>& frames) {
  int width = 0, height = 0;
  for (const auto& f : frames) {
    width += f.width();
    height = std::max(height, f.height());
  }
  cnn::Image sheet(height, width, 1.0f);
  int x0 = 0;
  for (const auto& f : frames) {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x) sheet.pixels.at(c, y, x0 + x) = f.pixels.at(c, y, x);
    x0 += f.width();
  }
  return sheet;
}

int run_grid(RunSpec spec, int pi, int pj, int steps) {
  if (steps < 2) config_error("--steps must be at least 2");
  const cnn::NetworkSet nets(spec.weights);
  spec.mode = transfer::Mode::kSmt;
  const PreparedStyle style = prepare_style(spec, nets, true);
  for (const auto& w : style.warnings) std::cerr << "warning: " << w << "\n";
  const std::size_t k = style.model.k;
  if (pi < 1 || pj < 1 || static_cast<std::size_t>(pi) > k || static_cast<std::size_t>(pj) > k) {
    config_error("--pair indices must lie in 1.." + std::to_string(k));
  }
  const fs::path sheet_path = spec.out;
  const fs::path frame_dir = fs::path(sheet_path).replace_extension("").string() + "_frames";
  fs::create_directories(frame_dir);
  std::vector<cnn::Image> frames;
  json frame_list = json::array();
  for (int t = 0; t < steps; ++t) {
    const double s = static_cast<double>(t) / (steps - 1);
    RunSpec one = spec;
    one.beta.assign(k, 0.0);
    one.beta[pi - 1] += 1.0 - s;
    one.beta[pj - 1] += s;
    one.out = frame_dir / ("frame" + std::to_string(t + 1) + ".png");
    const RunOutcome r = stylize_one(one, style, nets);
    frames.push_back(cnn::read_image(r.image));
    frame_list.push_back({{"beta", one.beta}, {"image", r.image.string()}});
  }
  if (sheet_path.has_parent_path()) fs::create_directories(sheet_path.parent_path());
  cnn::write_png(compose_row(frames), sheet_path);
  json manifest = {{"command", "grid"},
                   {"spec", spec_to_json(spec)},
                   {"pair", {pi, pj}},
                   {"steps", steps},
                   {"frames", frame_list},
                   {"outputs", {{"image", sheet_path.string()}}}};
  write_json(manifest_path(sheet_path), manifest);
  std::cout << "wrote " << sheet_path.string() << " (" << steps << " frames)\n";
  return 0;
}

int cmd_grid(Flags& f) {
  f.mode = "smt";
  finish_spec(f);
  if (f.pair.size() != 2) config_error("--pair needs two sub-style indices I,J");
  return run_grid(f.spec, f.pair[0], f.pair[1], f.steps);
}

int cmd_replay(Flags& f) {
  std::ifstream in(f.manifest);
  if (!in) fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot open " + f.manifest);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, ErrorCode::kGeneric, "malformed manifest: " + std::string(e.what()));
  }
  const std::string command = j.value("command", "");
  RunSpec spec = spec_from_json(j.value("spec", json::object()));
  if (!f.out.empty()) spec.out = f.out;
  spec.config.validate();
  if (command == "grid") {
    const auto pair = j.at("pair").get<std::vector<int>>();
    return run_grid(spec, pair.at(0), pair.at(1), j.at("steps").get<int>());
  }
  if (command != "stylize") config_error("cannot replay command '" + command + "'");
  const cnn::NetworkSet nets(spec.weights);
  const PreparedStyle style = prepare_style(spec, nets, spec.mode != transfer::Mode::kWct);
  report(stylize_one(spec, style, nets));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sub-style decomposition and transfer for neural style transfer"};
  app.require_subcommand(1);
  Flags f;

  auto* stylize = app.add_subcommand("stylize", "Stylize a content image (or a directory of them)");
  add_cascade_flags(stylize, f);
  add_style_flags(stylize, f);
  stylize->add_option("--mode", f.mode, "wct | smt | sst | mst")
      ->check(CLI::IsMember({"wct", "smt", "sst", "mst"}))
      ->capture_default_str();
  stylize->add_option("--beta", f.spec.beta, "Sub-style mixing weights (smt, mst)")->delimiter(',');
  stylize->add_option("--jobs", f.jobs, "Parallel images for directory input")->capture_default_str();

  auto* decompose = app.add_subcommand("decompose", "Detect sub-styles and save the model and masks");
  add_style_flags(decompose, f);

  auto* grid = app.add_subcommand("grid", "Render a mixing sweep between two sub-styles");
  add_cascade_flags(grid, f);
  add_style_flags(grid, f);
  grid->add_option("--pair", f.pair, "Sub-style indices I,J (1-based)")->delimiter(',')->required();
  grid->add_option("--steps", f.steps, "Number of frames")->capture_default_str();

  auto* replay = app.add_subcommand("replay", "Re-run a stylize or grid manifest");
  replay->add_option("manifest", f.manifest, "Manifest JSON written by a previous run")->required();
  replay->add_option("--out", f.out, "Override the output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  try {
    if (*stylize) return cmd_stylize(f);
    if (*decompose) return cmd_decompose(f);
    if (*grid) return cmd_grid(f);
    if (*replay) return cmd_replay(f);
  } catch (const substyle::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
