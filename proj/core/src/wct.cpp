#include "substyle/wct.hpp"

#include <algorithm>
#include <chrono>

#include "dense.hpp"
#include "substyle/error.hpp"

namespace substyle::wct {

namespace {

// Covariance plus eps * I with eps = 1e-8 * trace / C, then truncated
// eigenpairs.
SpectralMap spectral_map(const MomentStats& stats, double cutoff, double power) {
  const std::size_t n = stats.dim();
  std::vector<double> cov(stats.cov.values().begin(), stats.cov.values().end());
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += cov[i * n + i];
  const double eps = n > 0 ? 1e-8 * trace / static_cast<double>(n) : 0.0;
  for (std::size_t i = 0; i < n; ++i) cov[i * n + i] += eps;
  const linalg::EigenDecomp eig = linalg::sym_eig(cov, n, cutoff);
  SpectralMap map;
  map.dim = stats.dim();
  map.rank = eig.rank;
  map.matrix = linalg::spectral_function(eig, power);
  map.mean.assign(stats.mean.begin(), stats.mean.end());
  return map;
}

void check_dim(const Matrix& f, std::size_t dim, const char* what) {
  if (f.rows() != dim) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         std::string(what) + ": feature dimension " + std::to_string(f.rows()) +
             " does not match statistics dimension " + std::to_string(dim));
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void StylizeConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, ErrorCode::kGeneric, msg); };
  if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha must lie in [0,1]");
  if (!(delta >= 0.0 && delta <= 1.0)) bad("delta must lie in [0,1]");
  if (levels.empty()) bad("at least one level is required");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < cnn::kMinLevel || levels[i] > cnn::kMaxLevel) {
      fail(ErrorKind::kConfig, ErrorCode::kLevelOutOfRange,
           "level " + std::to_string(levels[i]) + " outside 1..5");
    }
    if (i > 0 && levels[i] >= levels[i - 1]) bad("levels must be strictly descending");
  }
  if (!(eig_cutoff >= 0.0)) bad("eigenvalue cutoff must be nonnegative");
}

SpectralMap whitening_map(const MomentStats& stats, double cutoff) {
  return spectral_map(stats, cutoff, -0.5);
}

SpectralMap coloring_map(const MomentStats& stats, double cutoff) {
  return spectral_map(stats, cutoff, 0.5);
}

Transformed whiten(const Matrix& f, double cutoff) {
  const MomentStats stats = linalg::moment_stats(f);
  const SpectralMap map = whitening_map(stats, cutoff);
  Matrix c = linalg::centered(f, map.mean);
  if (map.rank == 0) return {std::move(c), true};
  const std::vector<double> zero(map.dim, 0.0);
  return {linalg::apply_affine(map.matrix, c, zero), false};
}

Transformed color(const Matrix& fw, const MomentStats& target, double cutoff) {
  check_dim(fw, target.dim(), "color");
  const SpectralMap map = coloring_map(target, cutoff);
  return {linalg::apply_affine(map.matrix, fw, map.mean), map.rank == 0};
}

Transformed wct(const Matrix& content, const MomentStats& style, double cutoff) {
  check_dim(content, style.dim(), "wct");
  const SpectralMap w = whitening_map(linalg::moment_stats(content), cutoff);
  return wct(content, w, coloring_map(style, cutoff));
}

Transformed wct(const Matrix& content, const SpectralMap& whitening,
                const SpectralMap& coloring) {
  const std::size_t n = whitening.dim;
  check_dim(content, n, "wct");
  if (coloring.dim != n) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "wct: whitening and coloring dimensions differ");
  }
  // Coloring composed with whitening in double, applied once.
  std::vector<double> t(n * n);
  dense::Map<double>(t.data(), n, n).noalias() =
      dense::ConstMap<double>(coloring.matrix.data(), n, n) *
      dense::ConstMap<double>(whitening.matrix.data(), n, n);
  Matrix out = linalg::apply_affine(t, linalg::centered(content, whitening.mean), coloring.mean);
  return {std::move(out), whitening.rank == 0 || coloring.rank == 0};
}

Matrix blend(const Matrix& stylized, const Matrix& content, double alpha) {
  if (stylized.rows() != content.rows() || stylized.cols() != content.cols()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch, "blend: shapes differ");
  }
  if (alpha == 0.0) return content;
  if (alpha == 1.0) return stylized;
  Matrix out(content.rows(), content.cols());
  const float* s = stylized.data();
  const float* c = content.data();
  float* o = out.data();
  const double beta = 1.0 - alpha;
  for (std::size_t i = 0; i < out.size(); ++i) {
    o[i] = static_cast<float>(alpha * s[i] + beta * c[i]);
  }
  return out;
}

cnn::Image multi_level_stylize(const cnn::Image& content, const StyleSource& style,
                               const StylizeConfig& cfg, const cnn::NetworkSet& nets,
                               StylizeReport* report) {
  cfg.validate();
  for (int level : cfg.levels) {
    if (!nets.has_level(level)) {
      fail(ErrorKind::kIo, ErrorCode::kMissingNetwork,
           "no encoder/decoder pair for level " + std::to_string(level) + " in " +
               nets.dir().string());
    }
  }
  const bool has_special =
      style.special && std::find(cfg.levels.begin(), cfg.levels.end(), style.special_level) !=
                           cfg.levels.end();
  if (style.special && !has_special) {
    fail(ErrorKind::kConfig, ErrorCode::kLevelOutOfRange,
         "decomposition level " + std::to_string(style.special_level) +
             " is not among the stylization levels");
  }
  for (int level : cfg.levels) {
    if (!(has_special && level == style.special_level) && !style.global_stats) {
      fail(ErrorKind::kConfig, ErrorCode::kGeneric, "style source has no global statistics");
    }
  }
  StylizeReport local;
  StylizeReport& rep = report ? *report : local;
  auto timed = [&](const std::string& stage, auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto result = fn();
    rep.timings.push_back({stage, seconds_since(start)});
    return result;
  };

  const auto originals =
      timed("encode content", [&] { return nets.encode_levels(content, cfg.levels); });
  cnn::Image running = content;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    const int level = cfg.levels[i];
    const std::string tag = " l" + std::to_string(level);
    const cnn::FeatureMap& orig = originals[i];
    // The first level sees the unmodified content, whose encoding is known.
    const cnn::FeatureMap run =
        i == 0 ? orig : timed("encode" + tag, [&] { return nets.encode(running, level); });
    const Matrix f_run = run.as_matrix();
    Matrix f_cs;
    if (has_special && level == style.special_level) {
      f_cs = timed("sub-style transfer" + tag, [&] { return style.special(run); });
    } else {
      const MomentStats target = timed("style stats" + tag, [&] { return style.global_stats(level); });
      Transformed t = timed("wct" + tag, [&] { return wct(f_run, target, cfg.eig_cutoff); });
      if (t.degenerate) rep.warnings.push_back("level " + std::to_string(level) + ": rank-0 covariance");
      f_cs = std::move(t.features);
    }
    const Matrix keep = blend(orig.as_matrix(), f_run, cfg.delta);
    const Matrix f_hat = blend(f_cs, keep, cfg.alpha);
    running = timed("decode" + tag, [&] { return nets.decode(run.with_values(f_hat)); });
  }
  return running;
}

StyleStatsCache::StyleStatsCache(const cnn::NetworkSet& nets, std::vector<cnn::Image> images,
                                 std::vector<int> levels)
    : nets_(nets), images_(std::move(images)), levels_(std::move(levels)) {
  if (images_.empty()) {
    fail(ErrorKind::kConfig, ErrorCode::kGeneric, "at least one style image is required");
  }
}

void StyleStatsCache::ensure(int level) {
  if (maps_.count(level)) return;
  std::vector<int> batch = levels_;
  if (std::find(batch.begin(), batch.end(), level) == batch.end()) batch = {level};
  for (int l : batch) maps_[l];
  for (const cnn::Image& img : images_) {
    auto fs = nets_.encode_levels(img, batch);
    for (std::size_t i = 0; i < batch.size(); ++i) maps_[batch[i]].push_back(std::move(fs[i]));
  }
  for (int l : batch) {
    std::vector<Matrix> parts;
    for (const auto& f : maps_[l]) parts.push_back(f.as_matrix());
    features_[l] = parts.size() == 1 ? std::move(parts.front()) : linalg::concat_columns(parts);
  }
}

const std::vector<cnn::FeatureMap>& StyleStatsCache::feature_maps(int level) {
  ensure(level);
  return maps_.at(level);
}

const Matrix& StyleStatsCache::features(int level) {
  ensure(level);
  return features_.at(level);
}

const MomentStats& StyleStatsCache::stats(int level) {
  auto it = stats_.find(level);
  if (it == stats_.end()) it = stats_.emplace(level, linalg::moment_stats(features(level))).first;
  return it->second;
}

}  // namespace substyle::wct
