#include "substyle/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

#include "dense.hpp"
#include "substyle/error.hpp"
#include "substyle/sswt.hpp"
#include "substyle/vgg.hpp"

namespace substyle::decomp {

namespace {

using DMat = dense::RowMat<double>;

DMat to_double(const Matrix& m) {
  return dense::ConstMap<float>(m.data(), m.rows(), m.cols()).cast<double>();
}

Matrix to_float(const DMat& m) {
  Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  dense::Map<float>(out.data(), out.rows(), out.cols()) = m.cast<float>();
  return out;
}

// (W W^T)^{-1/2} W.
DMat symmetric_decorrelation(const DMat& w) {
  const std::size_t k = static_cast<std::size_t>(w.rows());
  DMat gram = w * w.transpose();
  const auto eig = linalg::sym_eig(std::span<const double>(gram.data(), k * k), k, 0.0);
  if (eig.rank < k) {
    fail(ErrorKind::kNumeric, ErrorCode::kRankExceeded, "ICA rotation became singular");
  }
  const auto inv_sqrt = linalg::spectral_function(eig, -0.5);
  return dense::ConstMap<double>(inv_sqrt.data(), k, k) * w;
}

}  // namespace

// ---- FastICA ------------------------------------------------------------------

Matrix IcaModel::sources(const Matrix& features) const {
  const std::vector<double> mu(mean.begin(), mean.end());
  return linalg::matmul(unmixing, linalg::centered(features, mu));
}

IcaModel fast_ica(const Matrix& features, std::size_t k, std::uint64_t seed,
                  const IcaOptions& opts) {
  const std::size_t c = features.rows();
  const std::size_t n = features.cols();
  if (k == 0 || k > c) {
    fail(ErrorKind::kConfig, ErrorCode::kGeneric,
         "ICA needs 1 <= k <= " + std::to_string(c) + ", got " + std::to_string(k));
  }
  if (n <= c) {
    fail(ErrorKind::kConfig, ErrorCode::kTooFewPoints,
         "ICA needs more samples (" + std::to_string(n) + ") than channels (" +
             std::to_string(c) + ")");
  }
  const MomentStats stats = linalg::moment_stats(features);
  const linalg::EigenDecomp eig = linalg::sym_eig(stats.cov, opts.eig_cutoff);
  if (eig.rank < k) {
    fail(ErrorKind::kNumeric, ErrorCode::kRankExceeded,
         "k exceeds feature rank (" + std::to_string(k) + " > " + std::to_string(eig.rank) + ")");
  }

  // PCA whitening onto the leading k eigenvectors, and its pseudo-inverse.
  DMat whitener(k, c);
  DMat dewhitener(c, k);
  for (std::size_t i = 0; i < k; ++i) {
    const double s = std::sqrt(eig.values[i]);
    for (std::size_t r = 0; r < c; ++r) {
      whitener(i, r) = eig.vector_entry(r, i) / s;
      dewhitener(r, i) = eig.vector_entry(r, i) * s;
    }
  }
  DMat x = to_double(features);
  for (std::size_t r = 0; r < c; ++r) x.row(r).array() -= static_cast<double>(stats.mean[r]);
  const DMat z = whitener * x;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  DMat w(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) w(i, j) = normal(rng);
  w = symmetric_decorrelation(w);

  IcaModel model;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const DMat g = (w * z).array().tanh().matrix();
    const Eigen::VectorXd dg = (1.0 - g.array().square()).rowwise().sum() * inv_n;
    DMat next = (g * z.transpose()) * inv_n - dg.asDiagonal() * w;
    next = symmetric_decorrelation(next);
    const double lim = ((next * w.transpose()).diagonal().array().abs() - 1.0).abs().maxCoeff();
    w = next;
    model.iterations = it;
    if (lim < opts.tol) {
      model.converged = true;
      break;
    }
  }
  model.rotation = to_float(w);
  model.whitener = to_float(whitener);
  model.unmixing = to_float(w * whitener);
  model.mixing = to_float(dewhitener * w.transpose());
  model.mean = stats.mean;
  return model;
}

// ---- Gaussian mixture ---------------------------------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Point-major double copy of a d x N matrix.
std::vector<double> point_major(const Matrix& points) {
  const std::size_t d = points.rows();
  const std::size_t n = points.cols();
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < d; ++r) {
    const auto row = points.row(r);
    for (std::size_t j = 0; j < n; ++j) out[j * d + r] = row[j];
  }
  return out;
}

// Hash of a point's float bits, so equal points draw equal random numbers.
std::vector<std::uint64_t> point_hashes(const Matrix& points) {
  const std::size_t d = points.rows();
  std::vector<std::uint64_t> h(points.cols());
  std::vector<float> col(d);
  for (std::size_t j = 0; j < points.cols(); ++j) {
    for (std::size_t r = 0; r < d; ++r) col[r] = points(r, j);
    h[j] = sswt::fnv1a({reinterpret_cast<const std::uint8_t*>(col.data()), d * sizeof(float)});
  }
  return h;
}

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

// k-means++ seeding. Each draw is an exponential race: point j wins with key
// -log(u_j) / D_j^2 minimal, where u_j depends on the seed, the draw index
// and the point's value. Duplicated points therefore behave as one point,
// which keeps the seeding invariant under repeating the data set.
std::vector<double> kmeanspp(const std::vector<double>& x, const std::vector<std::uint64_t>& hash,
                             std::size_t d, std::size_t k, std::uint64_t seed) {
  const std::size_t n = hash.size();
  std::vector<double> centers;
  std::vector<double> dist(n, 1.0);
  for (std::size_t r = 0; r < k; ++r) {
    const std::uint64_t stream = cnn::splitmix64(seed + 0x51ED2701ull * (r + 1));
    std::size_t best = n;
    double best_key = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!(dist[j] > 0.0)) continue;
      const double u =
          (static_cast<double>(cnn::splitmix64(hash[j] ^ stream) >> 11) + 1.0) * 0x1.0p-53;
      const double key = -std::log(u) / dist[j];
      if (key < best_key) {
        best_key = key;
        best = j;
      }
    }
    if (best == n) best = 0;  // fewer distinct points than components
    centers.insert(centers.end(), x.begin() + best * d, x.begin() + (best + 1) * d);
    for (std::size_t j = 0; j < n; ++j) {
      dist[j] = std::min(r == 0 ? std::numeric_limits<double>::infinity() : dist[j],
                         sq_dist(&x[j * d], &centers[r * d], d));
    }
  }
  return centers;
}

std::size_t nearest(const double* p, const std::vector<double>& centers, std::size_t d,
                    std::size_t k) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double dd = sq_dist(p, &centers[c * d], d);
    if (dd < best_d) {
      best_d = dd;
      best = c;
    }
  }
  return best;
}

struct LloydResult {
  std::vector<double> centers;
  std::vector<std::size_t> label;
  double inertia = 0.0;
};

LloydResult lloyd(const std::vector<double>& x, std::vector<double> centers, std::size_t d,
                  std::size_t k, int iterations) {
  const std::size_t n = x.size() / d;
  std::vector<std::size_t> label(n);
  for (int it = 0; it <= iterations; ++it) {
    bool changed = false;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t l = nearest(&x[j * d], centers, d, k);
      if (it == 0 || l != label[j]) changed = true;
      label[j] = l;
    }
    if (!changed || it == iterations) break;
    std::vector<double> sum(k * d, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t j = 0; j < n; ++j) {
      ++cnt[label[j]];
      for (std::size_t i = 0; i < d; ++i) sum[label[j] * d + i] += x[j * d + i];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (cnt[c] > 0)
        for (std::size_t i = 0; i < d; ++i)
          centers[c * d + i] = sum[c * d + i] / static_cast<double>(cnt[c]);
  }

  double inertia = 0.0;
  for (std::size_t j = 0; j < n; ++j) inertia += sq_dist(&x[j * d], &centers[label[j] * d], d);
  return {std::move(centers), std::move(label), inertia};
}

struct Components {
  std::vector<double> log_weight;  // k
  std::vector<double> mean;        // k x d
  std::vector<double> inv_var;     // k x d
  std::vector<double> norm;        // k: -0.5 * (d log 2pi + sum log var)
};

Components prepare(std::size_t k, std::size_t d, const std::vector<double>& weights,
                   const std::vector<double>& means, const std::vector<double>& vars) {
  Components c;
  c.log_weight.resize(k);
  c.mean = means;
  c.inv_var.resize(k * d);
  c.norm.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    c.log_weight[j] = weights[j] > 0.0 ? std::log(weights[j])
                                       : -std::numeric_limits<double>::infinity();
    double logdet = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      c.inv_var[j * d + i] = 1.0 / vars[j * d + i];
      logdet += std::log(vars[j * d + i]);
    }
    c.norm[j] = -0.5 * (static_cast<double>(d) * kLog2Pi + logdet);
  }
  return c;
}

// Per-component log(weight * density) of one point.
void log_joint(const Components& c, const double* p, std::size_t d, std::size_t k,
               double* out) {
  for (std::size_t j = 0; j < k; ++j) {
    const double* m = &c.mean[j * d];
    const double* iv = &c.inv_var[j * d];
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double t = p[i] - m[i];
      q += t * t * iv[i];
    }
    out[j] = c.log_weight[j] + c.norm[j] - 0.5 * q;
  }
}

}  // namespace

GmmModel gmm_fit(const Matrix& points, std::size_t k, std::uint64_t seed,
                 const GmmOptions& opts) {
  const std::size_t d = points.rows();
  const std::size_t n = points.cols();
  if (k == 0) fail(ErrorKind::kConfig, ErrorCode::kGeneric, "GMM needs k >= 1");
  if (n < k) {
    fail(ErrorKind::kConfig, ErrorCode::kTooFewPoints,
         "GMM needs at least k points (" + std::to_string(n) + " < " + std::to_string(k) + ")");
  }
  if (d == 0) fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch, "GMM points have no dimensions");
  const std::vector<double> x = point_major(points);

  std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < d; ++i) global_mean[i] += x[j * d + i];
  for (double& m : global_mean) m /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < d; ++i) {
      const double t = x[j * d + i] - global_mean[i];
      global_var[i] += t * t;
    }
  double mean_var = 0.0;
  for (double& v : global_var) {
    v /= static_cast<double>(n);
    mean_var += v;
  }
  mean_var /= static_cast<double>(d);
  const float floor_f = static_cast<float>(mean_var > 0.0 ? 1e-6 * mean_var : 1e-12);
  const double floor = floor_f;

  // Seeding and Lloyd refinement, restarted; the lowest inertia wins. The
  // relative margin keeps the choice stable when the data set is repeated.
  const std::vector<std::uint64_t> hashes = point_hashes(points);
  std::vector<double> centers;
  std::vector<std::size_t> label(n);
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    const std::uint64_t restart_seed =
        restart == 0 ? seed : cnn::splitmix64(seed ^ (0xC2B2AE3D27D4EB4Full * restart));
    auto [c, l, inertia] = lloyd(x, kmeanspp(x, hashes, d, k, restart_seed), d, k, opts.kmeans_iter);
    if (inertia < best_inertia * (1.0 - 1e-9)) {
      best_inertia = inertia;
      centers = std::move(c);
      label = std::move(l);
    }
  }

  std::vector<double> weights(k), means = centers, vars(k * d);
  {
    std::vector<std::size_t> cnt(k, 0);
    std::vector<double> ss(k * d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t c = label[j];
      ++cnt[c];
      for (std::size_t i = 0; i < d; ++i) {
        const double t = x[j * d + i] - centers[c * d + i];
        ss[c * d + i] += t * t;
      }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += static_cast<double>(std::max<std::size_t>(cnt[c], 1));
    for (std::size_t c = 0; c < k; ++c) {
      weights[c] = static_cast<double>(std::max<std::size_t>(cnt[c], 1)) / total;
      for (std::size_t i = 0; i < d; ++i) {
        const double v = cnt[c] > 0 ? ss[c * d + i] / static_cast<double>(cnt[c]) : global_var[i];
        vars[c * d + i] = std::max(v, floor);
      }
    }
  }

  GmmModel model;
  model.k = k;
  model.dim = d;
  model.variance_floor = floor_f;
  std::vector<double> resp(n * k);
  std::vector<double> lj(k);
  for (int it = 0;; ++it) {
    // E-step.
    const Components comp = prepare(k, d, weights, means, vars);
    double ll = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      log_joint(comp, &x[j * d], d, k, lj.data());
      const double mx = *std::max_element(lj.begin(), lj.end());
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(lj[c] - mx);
      const double lse = mx + std::log(s);
      ll += lse;
      for (std::size_t c = 0; c < k; ++c) resp[j * k + c] = std::exp(lj[c] - lse);
    }
    ll /= static_cast<double>(n);
    const bool small_gain = !model.log_likelihood.empty() && ll - model.log_likelihood.back() < opts.tol;
    model.log_likelihood.push_back(ll);
    if (small_gain) {
      model.converged = true;
      break;
    }
    if (it == opts.max_iter) break;
    // M-step.
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t j = 0; j < n; ++j) nk += resp[j * k + c];
      if (!(nk > 1e-300)) {
        weights[c] = 0.0;
        continue;
      }
      weights[c] = nk / static_cast<double>(n);
      double* m = &means[c * d];
      std::fill(m, m + d, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double r = resp[j * k + c];
        if (r == 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) m[i] += r * x[j * d + i];
      }
      for (std::size_t i = 0; i < d; ++i) m[i] /= nk;
      double* v = &vars[c * d];
      std::fill(v, v + d, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double r = resp[j * k + c];
        if (r == 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) {
          const double t = x[j * d + i] - m[i];
          v[i] += r * t * t;
        }
      }
      for (std::size_t i = 0; i < d; ++i) v[i] = std::max(v[i] / nk, floor);
    }
  }

  model.weights.resize(k);
  model.means.resize(k * d);
  model.variances.resize(k * d);
  for (std::size_t c = 0; c < k; ++c) model.weights[c] = static_cast<float>(weights[c]);
  for (std::size_t i = 0; i < k * d; ++i) {
    model.means[i] = static_cast<float>(means[i]);
    model.variances[i] = std::max(static_cast<float>(vars[i]), floor_f);
  }
  return model;
}

std::vector<int> assign(const GmmModel& gmm, const Matrix& points) {
  if (points.rows() != gmm.dim) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "assign: points have " + std::to_string(points.rows()) + " dimensions, model " +
             std::to_string(gmm.dim));
  }
  const std::size_t k = gmm.k;
  const std::size_t d = gmm.dim;
  const std::vector<double> w(gmm.weights.begin(), gmm.weights.end());
  const std::vector<double> m(gmm.means.begin(), gmm.means.end());
  const std::vector<double> v(gmm.variances.begin(), gmm.variances.end());
  const Components comp = prepare(k, d, w, m, v);
  const std::vector<double> x = point_major(points);
  std::vector<int> labels(points.cols(), 0);
  std::vector<double> lj(k);
  for (std::size_t j = 0; j < points.cols(); ++j) {
    log_joint(comp, &x[j * d], d, k, lj.data());
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (lj[c] > lj[best]) best = c;
    labels[j] = static_cast<int>(best);
  }
  return labels;
}

// ---- sub-styles -----------------------------------------------------------------

std::size_t SubStyleModel::total_count() const {
  std::size_t n = 0;
  for (const auto& c : clusters) n += c.count;
  return n;
}

std::size_t min_cluster_size(std::size_t channels) {
  return std::max<std::size_t>(2, channels / 16);
}

namespace {

std::vector<double> member_mean(const Matrix& features, const std::vector<int>& labels, int c) {
  std::vector<double> mean(features.rows(), 0.0);
  std::size_t count = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] != c) continue;
    ++count;
    for (std::size_t r = 0; r < features.rows(); ++r) mean[r] += features(r, j);
  }
  for (double& v : mean) v /= static_cast<double>(std::max<std::size_t>(count, 1));
  return mean;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return ab / std::sqrt(aa * bb);
}

// Renumbers labels to 0..m-1 in order of first component index; returns the
// original component index of each new label.
std::vector<int> compact_labels(std::vector<int>& labels, std::size_t k) {
  std::vector<std::size_t> counts(k, 0);
  for (int l : labels) ++counts[l];
  std::vector<int> remap(k, -1), origin;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    remap[c] = static_cast<int>(origin.size());
    origin.push_back(static_cast<int>(c));
  }
  for (int& l : labels) l = remap[l];
  return origin;
}

}  // namespace

SubStyleModel decompose_style(const Matrix& features, std::size_t k, std::uint64_t seed,
                              std::vector<int>* labels_out) {
  SubStyleModel model;
  model.seed = seed;
  model.ica = fast_ica(features, k, seed);
  if (!model.ica.converged) {
    model.warnings.push_back("ICA did not converge in " + std::to_string(model.ica.iterations) +
                             " iterations");
  }
  const Matrix sources = model.ica.sources(features);
  model.gmm = gmm_fit(sources, k, seed);
  std::vector<int> labels = assign(model.gmm, sources);

  // Merge clusters too small for usable statistics.
  const std::size_t min_size = min_cluster_size(features.rows());
  for (;;) {
    std::vector<std::size_t> counts(k, 0);
    for (int l : labels) ++counts[l];
    std::size_t alive = 0;
    int smallest = -1;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      ++alive;
      if (counts[c] < min_size && (smallest < 0 || counts[c] < counts[smallest]))
        smallest = static_cast<int>(c);
    }
    if (smallest < 0 || alive <= 1) break;
    const auto mean = member_mean(features, labels, smallest);
    int target = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (static_cast<int>(c) == smallest || counts[c] == 0) continue;
      const double s = cosine(mean, member_mean(features, labels, static_cast<int>(c)));
      if (std::isnan(s)) continue;
      if (s > best) {
        best = s;
        target = static_cast<int>(c);
      }
    }
    if (target < 0) {  // zero mean: fall back to the largest cluster
      for (std::size_t c = 0; c < k; ++c)
        if (static_cast<int>(c) != smallest && counts[c] > 0 &&
            (target < 0 || counts[c] > counts[target]))
          target = static_cast<int>(c);
    }
    model.warnings.push_back("merged cluster " + std::to_string(smallest) + " (" +
                             std::to_string(counts[smallest]) + " members) into cluster " +
                             std::to_string(target));
    for (int& l : labels)
      if (l == smallest) l = target;
  }
  model.component_of_cluster = compact_labels(labels, k);
  model.k = model.component_of_cluster.size();
  if (model.k < k) {
    model.warnings.push_back("kept " + std::to_string(model.k) + " of " + std::to_string(k) +
                             " clusters");
  }
  std::vector<std::vector<std::size_t>> members(model.k);
  for (std::size_t j = 0; j < labels.size(); ++j) members[labels[j]].push_back(j);
  for (const auto& m : members) {
    model.clusters.push_back(linalg::moment_stats(linalg::gather_columns(features, m)));
  }
  if (labels_out) *labels_out = std::move(labels);
  return model;
}

SubStyleModel decompose_feature_maps(const std::vector<cnn::FeatureMap>& maps,
                                     const std::vector<std::string>& ids, std::size_t k,
                                     std::uint64_t seed) {
  if (maps.empty()) fail(ErrorKind::kConfig, ErrorCode::kGeneric, "no style feature maps");
  if (ids.size() != maps.size()) {
    fail(ErrorKind::kConfig, ErrorCode::kLengthMismatch, "one identifier per style image required");
  }
  std::vector<Matrix> parts;
  for (const auto& f : maps) {
    if (f.level != maps.front().level || f.channels() != maps.front().channels()) {
      fail(ErrorKind::kConfig, ErrorCode::kLevelMismatch, "style feature maps differ in level");
    }
    parts.push_back(f.as_matrix());
  }
  const Matrix features =
      parts.size() == 1 ? std::move(parts.front()) : linalg::concat_columns(parts);
  std::vector<int> labels;
  SubStyleModel model = decompose_style(features, k, seed, &labels);
  model.level = maps.front().level;
  model.provenance = ids;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    LabelMap lm;
    lm.source = ids[i];
    lm.height = maps[i].height();
    lm.width = maps[i].width();
    lm.level = maps[i].level;
    lm.image_height = maps[i].source_height;
    lm.image_width = maps[i].source_width;
    const std::size_t n = maps[i].tensor.plane();
    lm.labels.assign(labels.begin() + offset, labels.begin() + offset + n);
    offset += n;
    model.label_maps.push_back(std::move(lm));
  }
  return model;
}

// ---- content segmentation -------------------------------------------------------

std::vector<std::size_t> ContentSegmentation::members(std::size_t cluster) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (labels[j] == static_cast<int>(cluster)) out.push_back(j);
  return out;
}

LabelMap ContentSegmentation::label_map(int image_height, int image_width) const {
  return {"content", height, width, level, image_height, image_width, labels};
}

ContentSegmentation segment_content(const cnn::FeatureMap& features, std::size_t k,
                                    std::uint64_t seed) {
  const Matrix f = features.as_matrix();
  if (f.cols() < k) {
    fail(ErrorKind::kConfig, ErrorCode::kTooFewPoints,
         "content feature map has fewer positions than clusters");
  }
  ContentSegmentation seg;
  seg.height = features.height();
  seg.width = features.width();
  seg.level = features.level;
  const GmmModel gmm = gmm_fit(f, k, seed);
  seg.labels = assign(gmm, f);
  seg.k = compact_labels(seg.labels, k).size();
  if (seg.k < k) {
    seg.warnings.push_back("content segmentation kept " + std::to_string(seg.k) + " of " +
                           std::to_string(k) + " clusters");
  }
  std::vector<std::vector<double>> sums(seg.k, std::vector<double>(f.rows(), 0.0));
  seg.counts.assign(seg.k, 0);
  for (std::size_t j = 0; j < f.cols(); ++j) {
    const int l = seg.labels[j];
    ++seg.counts[l];
    for (std::size_t r = 0; r < f.rows(); ++r) sums[l][r] += f(r, j);
  }
  for (std::size_t c = 0; c < seg.k; ++c) {
    std::vector<float> mean(f.rows());
    for (std::size_t r = 0; r < f.rows(); ++r)
      mean[r] = static_cast<float>(sums[c][r] / static_cast<double>(seg.counts[c]));
    seg.means.push_back(std::move(mean));
  }
  return seg;
}

// ---- outputs ----------------------------------------------------------------------

std::vector<std::uint8_t> render_mask(const LabelMap& labels, int cluster) {
  if (labels.labels.size() != static_cast<std::size_t>(labels.height) * labels.width) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch, "label map size mismatch");
  }
  const int h = labels.image_height > 0 ? labels.image_height : labels.height << labels.level;
  const int w = labels.image_width > 0 ? labels.image_width : labels.width << labels.level;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const int fy = std::min(y >> labels.level, labels.height - 1);
    for (int x = 0; x < w; ++x) {
      const int fx = std::min(x >> labels.level, labels.width - 1);
      mask[static_cast<std::size_t>(y) * w + x] =
          labels.labels[static_cast<std::size_t>(fy) * labels.width + fx] == cluster ? 255 : 0;
    }
  }
  return mask;
}

std::vector<std::filesystem::path> export_masks(const LabelMap& labels, std::size_t k,
                                                const std::filesystem::path& dir,
                                                const std::string& prefix) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot create " + dir.string());
  const int h = labels.image_height > 0 ? labels.image_height : labels.height << labels.level;
  const int w = labels.image_width > 0 ? labels.image_width : labels.width << labels.level;
  std::vector<std::filesystem::path> paths;
  for (std::size_t c = 0; c < k; ++c) {
    const auto path = dir / (prefix + std::to_string(c + 1) + ".png");
    cnn::write_gray_png(render_mask(labels, static_cast<int>(c)), h, w, path);
    paths.push_back(path);
  }
  return paths;
}

// ---- persistence ------------------------------------------------------------------

namespace {

using nlohmann::json;

sswt::Record tensor(std::string name, std::vector<std::uint32_t> dims, std::vector<float> data) {
  return {std::move(name), sswt::Kind::kTensor, std::move(dims), std::move(data)};
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

sswt::Record matrix_record(std::string name, const Matrix& m) {
  return tensor(std::move(name), {u32(m.rows()), u32(m.cols())}, m.values());
}

[[noreturn]] void format_error(const std::string& msg) {
  fail(ErrorKind::kFormat, ErrorCode::kGeneric, msg);
}

const sswt::Record& need(const std::vector<sswt::Record>& records, const std::string& name,
                         std::size_t elements) {
  const sswt::Record* r = sswt::find(records, name);
  if (!r) format_error("model tensors lack '" + name + "'");
  if (r->element_count() != elements) format_error("model tensor '" + name + "' has wrong size");
  return *r;
}

Matrix need_matrix(const std::vector<sswt::Record>& records, const std::string& name) {
  const sswt::Record* r = sswt::find(records, name);
  if (!r || r->dims.size() != 2) format_error("model tensors lack matrix '" + name + "'");
  return Matrix(r->dims[0], r->dims[1], r->payload);
}

}  // namespace

std::filesystem::path model_tensor_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".sswt");
  if (p == path) p += ".tensors";
  return p;
}

void save_model(const SubStyleModel& model, const std::filesystem::path& path) {
  const auto tensor_path = model_tensor_path(path);
  std::vector<sswt::Record> records;
  json counts = json::array();
  for (std::size_t i = 0; i < model.clusters.size(); ++i) {
    const auto& c = model.clusters[i];
    const std::string p = "cluster." + std::to_string(i);
    records.push_back(tensor(p + ".mean", {u32(c.dim())}, c.mean));
    records.push_back(matrix_record(p + ".cov", c.cov));
    counts.push_back(c.count);
  }
  records.push_back(matrix_record("ica.mixing", model.ica.mixing));
  records.push_back(matrix_record("ica.unmixing", model.ica.unmixing));
  records.push_back(matrix_record("ica.whitener", model.ica.whitener));
  records.push_back(matrix_record("ica.rotation", model.ica.rotation));
  records.push_back(tensor("ica.mean", {u32(model.ica.mean.size())}, model.ica.mean));
  records.push_back(tensor("gmm.weights", {u32(model.gmm.k)}, model.gmm.weights));
  records.push_back(tensor("gmm.means", {u32(model.gmm.k), u32(model.gmm.dim)}, model.gmm.means));
  records.push_back(
      tensor("gmm.variances", {u32(model.gmm.k), u32(model.gmm.dim)}, model.gmm.variances));
  json maps = json::array();
  for (std::size_t i = 0; i < model.label_maps.size(); ++i) {
    const auto& lm = model.label_maps[i];
    records.push_back(tensor("labels." + std::to_string(i), {u32(lm.height), u32(lm.width)},
                             std::vector<float>(lm.labels.begin(), lm.labels.end())));
    maps.push_back({{"source", lm.source},
                    {"height", lm.height},
                    {"width", lm.width},
                    {"level", lm.level},
                    {"image_height", lm.image_height},
                    {"image_width", lm.image_width}});
  }
  const json manifest = {
      {"format", "substyle-model"},
      {"version", 1},
      {"tensors", tensor_path.filename().string()},
      {"k", model.k},
      {"channels", model.clusters.empty() ? 0 : model.clusters.front().dim()},
      {"level", model.level},
      {"seed", model.seed},
      {"preprocess", model.preprocess},
      {"provenance", model.provenance},
      {"counts", counts},
      {"component_of_cluster", model.component_of_cluster},
      {"warnings", model.warnings},
      {"ica", {{"iterations", model.ica.iterations}, {"converged", model.ica.converged}}},
      {"gmm",
       {{"k", model.gmm.k},
        {"dim", model.gmm.dim},
        {"variance_floor", model.gmm.variance_floor},
        {"converged", model.gmm.converged},
        {"log_likelihood", model.gmm.log_likelihood}}},
      {"label_maps", maps},
  };
  sswt::write_file(tensor_path, records);
  std::ofstream out(path);
  out << manifest.dump(2) << "\n";
  if (!out) fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot write " + path.string());
}

SubStyleModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot open model " + path.string());
  SubStyleModel model;
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != "substyle-model") format_error("not a sub-style model: " + path.string());
    if (j.value("version", 0) != 1) {
      fail(ErrorKind::kFormat, ErrorCode::kBadVersion, "unsupported model version");
    }
    const auto records = sswt::read_file(path.parent_path() / j.at("tensors").get<std::string>());
    model.k = j.at("k").get<std::size_t>();
    const std::size_t c = j.at("channels").get<std::size_t>();
    model.level = j.at("level").get<int>();
    model.seed = j.at("seed").get<std::uint64_t>();
    model.preprocess = j.at("preprocess").get<std::string>();
    model.provenance = j.at("provenance").get<std::vector<std::string>>();
    model.component_of_cluster = j.at("component_of_cluster").get<std::vector<int>>();
    model.warnings = j.at("warnings").get<std::vector<std::string>>();
    const auto counts = j.at("counts").get<std::vector<std::size_t>>();
    if (counts.size() != model.k) format_error("model counts do not match k");
    for (std::size_t i = 0; i < model.k; ++i) {
      const std::string p = "cluster." + std::to_string(i);
      MomentStats s;
      s.mean = need(records, p + ".mean", c).payload;
      s.cov = Matrix(c, c, need(records, p + ".cov", c * c).payload);
      s.count = counts[i];
      model.clusters.push_back(std::move(s));
    }
    model.ica.mixing = need_matrix(records, "ica.mixing");
    model.ica.unmixing = need_matrix(records, "ica.unmixing");
    model.ica.whitener = need_matrix(records, "ica.whitener");
    model.ica.rotation = need_matrix(records, "ica.rotation");
    model.ica.mean = need(records, "ica.mean", c).payload;
    model.ica.iterations = j.at("ica").at("iterations").get<int>();
    model.ica.converged = j.at("ica").at("converged").get<bool>();
    const json& g = j.at("gmm");
    model.gmm.k = g.at("k").get<std::size_t>();
    model.gmm.dim = g.at("dim").get<std::size_t>();
    model.gmm.variance_floor = g.at("variance_floor").get<float>();
    model.gmm.converged = g.at("converged").get<bool>();
    model.gmm.log_likelihood = g.at("log_likelihood").get<std::vector<double>>();
    model.gmm.weights = need(records, "gmm.weights", model.gmm.k).payload;
    model.gmm.means = need(records, "gmm.means", model.gmm.k * model.gmm.dim).payload;
    model.gmm.variances = need(records, "gmm.variances", model.gmm.k * model.gmm.dim).payload;
    const json& maps = j.at("label_maps");
    for (std::size_t i = 0; i < maps.size(); ++i) {
      LabelMap lm;
      lm.source = maps[i].at("source").get<std::string>();
      lm.height = maps[i].at("height").get<int>();
      lm.width = maps[i].at("width").get<int>();
      lm.level = maps[i].at("level").get<int>();
      lm.image_height = maps[i].at("image_height").get<int>();
      lm.image_width = maps[i].at("image_width").get<int>();
      const auto& r = need(records, "labels." + std::to_string(i),
                           static_cast<std::size_t>(lm.height) * lm.width);
      lm.labels.assign(r.payload.begin(), r.payload.end());
      model.label_maps.push_back(std::move(lm));
    }
  } catch (const json::exception& e) {
    format_error("malformed model manifest " + path.string() + ": " + e.what());
  }
  return model;
}

}  // namespace substyle::decomp
