#include "substyle/transfer.hpp"

#include <algorithm>

#include "substyle/error.hpp"

namespace substyle::transfer {

MatchTable match_means(const std::vector<std::vector<float>>& content_means,
                       const std::vector<std::vector<float>>& style_means) {
  MatchTable t;
  t.content_k = content_means.size();
  t.style_k = style_means.size();
  if (t.style_k == 0) fail(ErrorKind::kConfig, ErrorCode::kGeneric, "no sub-styles to match");
  t.sim.resize(t.content_k * t.style_k);
  t.assignment.resize(t.content_k);
  for (std::size_t j = 0; j < t.content_k; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < t.style_k; ++i) {
      t.sim[j * t.style_k + i] = linalg::cosine_similarity(content_means[j], style_means[i]);
      if (t.sim[j * t.style_k + i] > t.sim[j * t.style_k + best]) best = i;
    }
    t.assignment[j] = best;
  }
  return t;
}

MatchTable match_substyles(const ContentSegmentation& seg, const SubStyleModel& model) {
  std::vector<std::vector<float>> style;
  for (const auto& c : model.clusters) style.push_back(c.mean);
  return match_means(seg.means, style);
}

MixWeights MixWeights::one_hot(std::size_t k, std::size_t i) {
  MixWeights w{std::vector<double>(k, 0.0)};
  w.beta.at(i) = 1.0;
  return w;
}

Matrix smt(const Matrix& content, const SubStyleModel& model, const MixWeights& beta,
           double cutoff) {
  if (beta.beta.size() != model.k) {
    fail(ErrorKind::kConfig, ErrorCode::kLengthMismatch,
         "beta has " + std::to_string(beta.beta.size()) + " entries for " +
             std::to_string(model.k) + " sub-styles");
  }
  double total = 0.0;
  for (double b : beta.beta) {
    if (!(b >= 0.0)) fail(ErrorKind::kConfig, ErrorCode::kGeneric, "beta entries must be >= 0");
    total += b;
  }
  if (!(total > 0.0)) {
    fail(ErrorKind::kNumeric, ErrorCode::kDegenerateMixture, "degenerate mixture: beta sums to 0");
  }
  const wct::SpectralMap whitening =
      wct::whitening_map(linalg::moment_stats(content), cutoff);
  std::vector<double> acc(content.size(), 0.0);
  for (std::size_t i = 0; i < model.k; ++i) {
    if (beta.beta[i] == 0.0) continue;
    const wct::Transformed t =
        wct::wct(content, whitening, wct::coloring_map(model.clusters[i], cutoff));
    const float* p = t.features.data();
    for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += beta.beta[i] * p[e];
  }
  Matrix out(content.rows(), content.cols());
  float* o = out.data();
  for (std::size_t e = 0; e < acc.size(); ++e) o[e] = static_cast<float>(acc[e] / total);
  return out;
}

SstResult sst(const Matrix& content, const ContentSegmentation& seg, const SubStyleModel& model,
              double cutoff) {
  if (seg.labels.size() != content.cols()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "segmentation does not cover the content feature map");
  }
  SstResult r;
  r.match = match_substyles(seg, model);
  r.features = Matrix(content.rows(), content.cols());
  for (std::size_t j = 0; j < seg.k; ++j) {
    const auto cols = seg.members(j);
    if (cols.empty()) continue;
    const auto& target = model.clusters[r.match.assignment[j]];
    Matrix region = linalg::gather_columns(content, cols);
    if (cols.size() < 2) {
      r.warnings.push_back("content region " + std::to_string(j) +
                           " has a single position; mean shift only");
      for (std::size_t row = 0; row < region.rows(); ++row)
        for (float& v : region.row(row))
          v = static_cast<float>(static_cast<double>(v) - seg.means[j][row] + target.mean[row]);
    } else {
      wct::Transformed t = wct::wct(region, target, cutoff);
      if (t.degenerate) {
        r.warnings.push_back("content region " + std::to_string(j) + ": rank-0 covariance");
      }
      region = std::move(t.features);
    }
    linalg::scatter_columns(region, cols, r.features);
  }
  return r;
}

SubStyleModel mst_decompose(const std::vector<cnn::Image>& images,
                            const std::vector<std::string>& ids, std::size_t k, int level,
                            std::uint64_t seed, const cnn::NetworkSet& nets) {
  if (images.empty()) fail(ErrorKind::kConfig, ErrorCode::kGeneric, "no style images");
  std::vector<cnn::FeatureMap> maps;
  for (const auto& img : images) maps.push_back(nets.encode(img, level));
  SubStyleModel model = decomp::decompose_feature_maps(maps, ids, k, seed);
  model.preprocess = cnn::to_string(nets.preprocess());
  return model;
}

Mode parse_mode(const std::string& name) {
  if (name == "wct") return Mode::kWct;
  if (name == "smt") return Mode::kSmt;
  if (name == "sst") return Mode::kSst;
  if (name == "mst") return Mode::kMst;
  fail(ErrorKind::kConfig, ErrorCode::kGeneric, "unknown mode '" + name + "'");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kWct: return "wct";
    case Mode::kSmt: return "smt";
    case Mode::kSst: return "sst";
    case Mode::kMst: return "mst";
  }
  return "wct";
}

wct::StyleSource make_style_source(Mode mode, wct::StyleStatsCache& cache,
                                   const SubStyleModel* model, const MixWeights& beta,
                                   std::uint64_t seed, double cutoff,
                                   std::vector<std::string>* log,
                                   ContentSegmentation* segmentation) {
  wct::StyleSource source;
  source.global_stats = [&cache](int level) { return cache.stats(level); };
  if (mode == Mode::kWct) return source;
  if (!model) fail(ErrorKind::kConfig, ErrorCode::kGeneric, "sub-style mode without a model");
  source.special_level = model->level;
  if (mode == Mode::kSst) {
    source.special = [model, seed, cutoff, log, segmentation](const cnn::FeatureMap& run) {
      auto seg = decomp::segment_content(run, model->k, seed);
      SstResult r = sst(run.as_matrix(), seg, *model, cutoff);
      if (log) {
        log->insert(log->end(), seg.warnings.begin(), seg.warnings.end());
        log->insert(log->end(), r.warnings.begin(), r.warnings.end());
        std::string m = "sst matching:";
        for (std::size_t j = 0; j < r.match.content_k; ++j)
          m += " " + std::to_string(j + 1) + "->" + std::to_string(r.match.assignment[j] + 1);
        log->push_back(m);
      }
      if (segmentation) *segmentation = std::move(seg);
      return std::move(r.features);
    };
  } else {
    source.special = [model, beta, cutoff](const cnn::FeatureMap& run) {
      return smt(run.as_matrix(), *model, beta, cutoff);
    };
  }
  return source;
}

}  // namespace substyle::transfer
