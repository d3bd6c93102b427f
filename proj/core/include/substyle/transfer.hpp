#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "substyle/decomposition.hpp"
#include "substyle/wct.hpp"

namespace substyle::transfer {

using decomp::ContentSegmentation;
using decomp::SubStyleModel;
using linalg::Matrix;

// Cosine similarities between content cluster means (rows) and sub-style
// means (columns), and the best sub-style per content cluster.
struct MatchTable {
  std::size_t content_k = 0;
  std::size_t style_k = 0;
  std::vector<double> sim;  // content_k x style_k
  std::vector<std::size_t> assignment;

  double at(std::size_t content, std::size_t style) const { return sim[content * style_k + style]; }
};

// Independent argmax per content cluster; many-to-one allowed, ties to the
// lowest sub-style index. Zero-norm means are an error.
MatchTable match_means(const std::vector<std::vector<float>>& content_means,
                       const std::vector<std::vector<float>>& style_means);
MatchTable match_substyles(const ContentSegmentation& seg, const SubStyleModel& model);

struct MixWeights {
  std::vector<double> beta;

  static MixWeights uniform(std::size_t k) { return {std::vector<double>(k, 1.0)}; }
  static MixWeights one_hot(std::size_t k, std::size_t i);
};

// sum_i beta_i * wct(content, cluster_i) / sum_i beta_i. Clusters with zero
// weight are skipped.
Matrix smt(const Matrix& content, const SubStyleModel& model, const MixWeights& beta,
           double cutoff = linalg::kDefaultEigCutoff);

struct SstResult {
  Matrix features;
  MatchTable match;
  std::vector<std::string> warnings;
};

// Per content region: gather its columns, wct against the matched sub-style,
// scatter back. Regions with fewer than two columns only get their mean
// moved onto the sub-style mean.
SstResult sst(const Matrix& content, const ContentSegmentation& seg, const SubStyleModel& model,
              double cutoff = linalg::kDefaultEigCutoff);

// Encodes every image at `level`, concatenates the feature columns and
// decomposes them jointly.
SubStyleModel mst_decompose(const std::vector<cnn::Image>& images,
                            const std::vector<std::string>& ids, std::size_t k, int level,
                            std::uint64_t seed, const cnn::NetworkSet& nets);

enum class Mode { kWct, kSmt, kSst, kMst };
Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

// Cascade style source: global statistics from `cache` at every level and,
// for the sub-style modes, SMT (kSmt, kMst) or SST (kSst) at model.level.
// For kSst the running features at that level are segmented with
// K_c = model.k and `seed`. Per-run notes are appended to `log` and the
// content segmentation is stored in `segmentation` when given.
// `cache` fills itself on demand; share it across threads only after every
// level has been computed.
wct::StyleSource make_style_source(Mode mode, wct::StyleStatsCache& cache,
                                   const SubStyleModel* model, const MixWeights& beta,
                                   std::uint64_t seed, double cutoff,
                                   std::vector<std::string>* log = nullptr,
                                   ContentSegmentation* segmentation = nullptr);

}  // namespace substyle::transfer
