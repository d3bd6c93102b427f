#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "substyle/cnn.hpp"
#include "substyle/linalg.hpp"

namespace substyle::decomp {

using linalg::Matrix;
using linalg::MomentStats;

// ---- FastICA ------------------------------------------------------------------

struct IcaOptions {
  int max_iter = 200;
  double tol = 1e-4;
  double eig_cutoff = linalg::kDefaultEigCutoff;
};

// F - mean ~= mixing * S with S = unmixing * (F - mean) of unit variance.
// unmixing = rotation * whitener, mixing = whitener^+ * rotation^T.
struct IcaModel {
  Matrix mixing;    // C x k
  Matrix unmixing;  // k x C
  Matrix whitener;  // k x C, PCA whitening onto the top-k eigenvectors
  Matrix rotation;  // k x k, orthonormal rows
  std::vector<float> mean;
  int iterations = 0;
  bool converged = false;

  std::size_t k() const { return unmixing.rows(); }
  Matrix sources(const Matrix& features) const;
  friend bool operator==(const IcaModel&, const IcaModel&) = default;
};

// Symmetric-decorrelation FastICA with the log-cosh contrast.
IcaModel fast_ica(const Matrix& features, std::size_t k, std::uint64_t seed,
                  const IcaOptions& opts = {});

// ---- Gaussian mixture ---------------------------------------------------------

struct GmmOptions {
  int max_iter = 100;
  double tol = 1e-6;      // on the mean per-point log-likelihood
  int kmeans_iter = 10;   // Lloyd refinements after seeding
  int restarts = 4;       // seeded k-means++ runs; lowest inertia kept
};

// Diagonal-covariance mixture over d-dimensional points.
struct GmmModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<float> weights;    // k
  std::vector<float> means;      // k x d
  std::vector<float> variances;  // k x d, each >= variance_floor
  float variance_floor = 0.0f;
  // Mean per-point log-likelihood before each M-step, then at the final
  // parameters.
  std::vector<double> log_likelihood;
  bool converged = false;

  friend bool operator==(const GmmModel&, const GmmModel&) = default;
};

// EM from the best of several k-means++ seedings (seeded D^2 sampling), each
// refined by a few Lloyd steps.
// Variances are floored at 1e-6 times the mean per-dimension variance.
GmmModel gmm_fit(const Matrix& points, std::size_t k, std::uint64_t seed,
                 const GmmOptions& opts = {});

// Most responsible component per column; ties go to the lowest index.
std::vector<int> assign(const GmmModel& gmm, const Matrix& points);

// ---- sub-styles -----------------------------------------------------------------

// Label map of one encoded image.
struct LabelMap {
  std::string source;  // image identifier
  int height = 0;      // feature map size
  int width = 0;
  int level = 0;
  int image_height = 0;  // size of the image that was encoded
  int image_width = 0;
  std::vector<int> labels;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct SubStyleModel {
  std::size_t k = 0;
  std::vector<MomentStats> clusters;  // statistics in the original feature space
  IcaModel ica;
  GmmModel gmm;
  std::vector<int> component_of_cluster;  // GMM component each cluster started from
  int level = 0;
  std::uint64_t seed = 0;
  std::string preprocess = "none";
  std::vector<std::string> provenance;
  std::vector<LabelMap> label_maps;  // one per source image, when known
  std::vector<std::string> warnings;

  std::size_t total_count() const;
  friend bool operator==(const SubStyleModel&, const SubStyleModel&) = default;
};

// Smallest cluster kept as its own sub-style: max(2, C / 16).
std::size_t min_cluster_size(std::size_t channels);

// ICA sources, GMM clustering of the sources, then per-cluster moments of
// the original feature columns. Clusters below min_cluster_size are merged
// into the cluster whose mean is most cosine-similar; empty ones vanish.
// Labels are returned through `labels` when non-null.
SubStyleModel decompose_style(const Matrix& features, std::size_t k, std::uint64_t seed,
                              std::vector<int>* labels = nullptr);

// As above for encoded images: features are concatenated in order and the
// label maps and provenance are filled in.
SubStyleModel decompose_feature_maps(const std::vector<cnn::FeatureMap>& maps,
                                     const std::vector<std::string>& ids, std::size_t k,
                                     std::uint64_t seed);

// ---- content segmentation -------------------------------------------------------

struct ContentSegmentation {
  std::size_t k = 0;
  int height = 0;
  int width = 0;
  int level = 0;
  std::vector<int> labels;                // height x width, row-major
  std::vector<std::vector<float>> means;  // per cluster, feature space
  std::vector<std::size_t> counts;
  std::vector<std::string> warnings;

  std::vector<std::size_t> members(std::size_t cluster) const;
  LabelMap label_map(int image_height, int image_width) const;
};

// GMM directly on the raw feature columns; empty clusters are dropped and the
// rest renumbered in order.
ContentSegmentation segment_content(const cnn::FeatureMap& features, std::size_t k,
                                    std::uint64_t seed);

// ---- outputs ----------------------------------------------------------------------

// One white-on-black PNG per cluster at image resolution (nearest neighbour
// through the 2^level feature stride), named <prefix><i>.png. Returns paths.
std::vector<std::filesystem::path> export_masks(const LabelMap& labels, std::size_t k,
                                                const std::filesystem::path& dir,
                                                const std::string& prefix = "mask");
// Mask i as 0/255 bytes at image resolution.
std::vector<std::uint8_t> render_mask(const LabelMap& labels, int cluster);

// Model persistence: JSON manifest at `path`, tensors in a sidecar SSWT file
// (same stem, .sswt extension). Round trips are bit-exact.
void save_model(const SubStyleModel& model, const std::filesystem::path& path);
SubStyleModel load_model(const std::filesystem::path& path);
std::filesystem::path model_tensor_path(const std::filesystem::path& path);

}  // namespace substyle::decomp
