#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "substyle/cnn.hpp"
#include "substyle/linalg.hpp"

namespace substyle::wct {

using linalg::Matrix;
using linalg::MomentStats;

struct StylizeConfig {
  double alpha = 0.6;  // style weight
  double delta = 0.8;  // content weight across cascade levels
  std::vector<int> levels = {5, 4, 3, 2, 1};
  double eig_cutoff = linalg::kDefaultEigCutoff;
  std::uint64_t seed = 42;

  // Throws kConfig unless levels are nonempty, strictly descending, within
  // 1..5, and alpha, delta lie in [0,1].
  void validate() const;
};

// Result of a statistics transform. `degenerate` is set when a rank-0
// covariance forced the fallback path.
struct Transformed {
  Matrix features;
  bool degenerate = false;
};

// E * D^power * E^T over the retained eigenpairs of a covariance, with the
// mean it was estimated around. Composable in double precision.
struct SpectralMap {
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::vector<double> matrix;  // dim x dim
  std::vector<double> mean;
};

SpectralMap whitening_map(const MomentStats& stats, double cutoff = linalg::kDefaultEigCutoff);
SpectralMap coloring_map(const MomentStats& stats, double cutoff = linalg::kDefaultEigCutoff);

Transformed whiten(const Matrix& f, double cutoff = linalg::kDefaultEigCutoff);
Transformed color(const Matrix& fw, const MomentStats& target,
                  double cutoff = linalg::kDefaultEigCutoff);
Transformed wct(const Matrix& content, const MomentStats& style,
                double cutoff = linalg::kDefaultEigCutoff);
// Same transform from precomputed maps; bitwise equal to wct() for the
// maps wct() would build.
Transformed wct(const Matrix& content, const SpectralMap& whitening,
                const SpectralMap& coloring);

// alpha * stylized + (1 - alpha) * content. alpha 0 and 1 return exact copies.
Matrix blend(const Matrix& stylized, const Matrix& content, double alpha);

// Per-stage wall-clock record.
struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

// Where the target statistics come from at each cascade level.
struct StyleSource {
  // Global style statistics for a level. Called once per level.
  std::function<MomentStats(int level)> global_stats;
  // Optional replacement transform used at `special_level` instead of global
  // WCT. Receives the running features for that level.
  int special_level = 0;
  std::function<Matrix(const cnn::FeatureMap& running)> special;
};

struct StylizeReport {
  std::vector<StageTiming> timings;
  std::vector<std::string> warnings;
};

// Cascade over cfg.levels (deepest first):
//   F_run  = encode(I_run, l), F_orig = encode(content, l)
//   F_cs   = special(F_run) at the special level, wct(F_run, global_stats(l)) otherwise
//   F_hat  = alpha * F_cs + (1 - alpha) * (delta * F_orig + (1 - delta) * F_run)
//   I_run  = decode(F_hat)
// All networks are checked before any work starts.
cnn::Image multi_level_stylize(const cnn::Image& content, const StyleSource& style,
                               const StylizeConfig& cfg, const cnn::NetworkSet& nets,
                               StylizeReport* report = nullptr);

// StyleSource::global_stats backed by the concatenated features of one or
// more style images; encodings for all cascade levels are computed on first
// use and cached.
class StyleStatsCache {
 public:
  StyleStatsCache(const cnn::NetworkSet& nets, std::vector<cnn::Image> images,
                  std::vector<int> levels);

  const MomentStats& stats(int level);
  // Feature columns of all images at `level`, concatenated in input order.
  const Matrix& features(int level);
  const std::vector<cnn::FeatureMap>& feature_maps(int level);

 private:
  void ensure(int level);

  const cnn::NetworkSet& nets_;
  std::vector<cnn::Image> images_;
  std::vector<int> levels_;
  std::map<int, std::vector<cnn::FeatureMap>> maps_;
  std::map<int, Matrix> features_;
  std::map<int, MomentStats> stats_;
};

}  // namespace substyle::wct
