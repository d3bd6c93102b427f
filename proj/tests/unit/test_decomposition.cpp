#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "substyle/decomposition.hpp"
#include "substyle/sswt.hpp"
#include "test_support.hpp"

namespace {

using namespace substyle;
using namespace substyle::decomp;
using substyle::testing::amari_index;
using substyle::testing::random_matrix;
using substyle::testing::TempDir;

struct Mixture {
  Matrix mixing;
  Matrix observed;
};

// Independent unit-variance uniform sources through a random square mixing.
Mixture uniform_mixture(std::size_t k, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-std::sqrt(3.0), std::sqrt(3.0));
  Matrix s(k, n);
  for (float& v : s.values()) v = static_cast<float>(u(rng));
  Mixture m{random_matrix(k, k, rng, -1.0, 1.0), {}};
  m.observed = linalg::matmul(m.mixing, s);
  return m;
}

Matrix blobs(std::size_t per_blob, double sigma, std::uint64_t seed, std::vector<int>* truth) {
  const double centers[3][2] = {{0, 0}, {5, 0}, {0, 5}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  Matrix p(2, 3 * per_blob);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < per_blob; ++i) {
      const std::size_t col = b * per_blob + i;
      p(0, col) = static_cast<float>(centers[b][0] + g(rng));
      p(1, col) = static_cast<float>(centers[b][1] + g(rng));
      if (truth) truth->push_back(static_cast<int>(b));
    }
  }
  return p;
}

TEST(FastIca, RecoversUniformSources) {
  const Mixture m = uniform_mixture(3, 20000, 1);
  const IcaModel ica = fast_ica(m.observed, 3, 42);
  EXPECT_TRUE(ica.converged);
  EXPECT_LT(amari_index(m.mixing, ica.unmixing), 0.05);
}

TEST(FastIca, FactorInvariants) {
  const Mixture m = uniform_mixture(4, 5000, 2);
  const IcaModel ica = fast_ica(m.observed, 3, 7);
  ASSERT_EQ(ica.k(), 3u);
  ASSERT_EQ(ica.mixing.rows(), 4u);
  const Matrix wa = linalg::matmul(ica.unmixing, ica.mixing);
  const Matrix rrt = linalg::matmul(ica.rotation, ica.rotation.transposed());
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(wa(i, j), i == j ? 1.0 : 0.0, 1e-3);
      EXPECT_NEAR(rrt(i, j), i == j ? 1.0 : 0.0, 1e-4);
    }
  }
}

TEST(FastIca, ReconstructsCenteredFeaturesAtFullRank) {
  const Mixture m = uniform_mixture(3, 4000, 3);
  const IcaModel ica = fast_ica(m.observed, 3, 1);
  ASSERT_TRUE(ica.converged);
  const Matrix rec = linalg::matmul(ica.mixing, ica.sources(m.observed));
  std::vector<double> mean(ica.mean.begin(), ica.mean.end());
  const Matrix centered = linalg::centered(m.observed, mean);
  Matrix diff = rec;
  for (std::size_t i = 0; i < diff.size(); ++i) diff.values()[i] -= centered.values()[i];
  EXPECT_LT(linalg::frobenius(diff) / linalg::frobenius(m.observed), 1e-2);
}

TEST(FastIca, SingleComponentHasUnitVariance) {
  const Mixture m = uniform_mixture(3, 3000, 4);
  const IcaModel ica = fast_ica(m.observed, 1, 5);
  const Matrix s = ica.sources(m.observed);
  ASSERT_EQ(s.rows(), 1u);
  EXPECT_NEAR(linalg::moment_stats(s).cov(0, 0), 1.0, 1e-3);
}

TEST(FastIca, GaussianSourcesDoNotCrash) {
  std::mt19937_64 rng(6);
  const Matrix f = substyle::testing::correlated_gaussian(4, 2000, rng, {0, 1, 2, 3});
  IcaModel ica;
  EXPECT_NO_THROW(ica = fast_ica(f, 4, 1));
  EXPECT_TRUE(ica.unmixing.all_finite());
  EXPECT_LE(ica.iterations, 200);
}

TEST(FastIca, Errors) {
  std::mt19937_64 rng(7);
  // Rank 2 in 4 dimensions.
  const Matrix low = linalg::matmul(random_matrix(4, 2, rng), random_matrix(2, 500, rng));
  try {
    fast_ica(low, 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRankExceeded);
    EXPECT_EQ(std::string(e.what()).rfind("k exceeds feature rank", 0), 0u) << e.what();
  }
  EXPECT_THROW(fast_ica(random_matrix(5, 5, rng), 2, 1), Error);
  EXPECT_THROW(fast_ica(random_matrix(3, 100, rng), 0, 1), Error);
  EXPECT_THROW(fast_ica(random_matrix(3, 100, rng), 4, 1), Error);
}

TEST(FastIca, DeterministicForSeed) {
  const Mixture m = uniform_mixture(3, 3000, 8);
  EXPECT_EQ(fast_ica(m.observed, 3, 9), fast_ica(m.observed, 3, 9));
}

double best_matching_error(const GmmModel& gmm) {
  const double centers[3][2] = {{0, 0}, {5, 0}, {0, 5}};
  std::vector<int> perm{0, 1, 2};
  double best = 1e300;
  do {
    double worst = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (int d = 0; d < 2; ++d) {
        worst = std::max(worst, std::abs(gmm.means[perm[c] * 2 + d] - centers[c][d]));
      }
    }
    best = std::min(best, worst);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

TEST(Gmm, RecoversThreeBlobs) {
  std::vector<int> truth;
  const Matrix p = blobs(1000, 0.1, 1, &truth);
  const GmmModel gmm = gmm_fit(p, 3, 42);
  EXPECT_LT(best_matching_error(gmm), 0.05);
  const auto labels = assign(gmm, p);
  // Agreement after relabeling each true blob by its majority label.
  std::size_t agree = 0;
  for (int b = 0; b < 3; ++b) {
    std::vector<std::size_t> votes(3, 0);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (truth[i] == b) ++votes[labels[i]];
    agree += *std::max_element(votes.begin(), votes.end());
  }
  EXPECT_GE(static_cast<double>(agree) / labels.size(), 0.99);
}

TEST(Gmm, ModelInvariants) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix p = random_matrix(3, 400, rng, -2, 2);
    const GmmModel gmm = gmm_fit(p, 4, seed);
    ASSERT_GE(gmm.log_likelihood.size(), 2u);
    for (std::size_t i = 1; i < gmm.log_likelihood.size(); ++i) {
      EXPECT_GE(gmm.log_likelihood[i], gmm.log_likelihood[i - 1] - 1e-7) << seed << " " << i;
    }
    double sum = 0.0;
    for (float w : gmm.weights) {
      EXPECT_GE(w, 0.0f);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    for (float v : gmm.variances) EXPECT_GE(v, gmm.variance_floor);
  }
}

TEST(Gmm, SingleComponent) {
  std::mt19937_64 rng(3);
  const Matrix p = random_matrix(2, 300, rng);
  const GmmModel gmm = gmm_fit(p, 1, 1);
  const auto mean = linalg::column_mean(p);
  EXPECT_EQ(gmm.weights, (std::vector<float>{1.0f}));
  EXPECT_NEAR(gmm.means[0], mean[0], 1e-6);
  EXPECT_NEAR(gmm.means[1], mean[1], 1e-6);
}

TEST(Gmm, TooFewPoints) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(gmm_fit(random_matrix(2, 2, rng), 3, 1), Error);
}

TEST(Gmm, DuplicatedDataGivesTheSameFit) {
  std::mt19937_64 rng(10);
  const Matrix p = random_matrix(3, 200, rng);
  const std::vector<Matrix> twice{p, p};
  const GmmModel a = gmm_fit(p, 3, 5);
  const GmmModel b = gmm_fit(linalg::concat_columns(twice), 3, 5);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.variances, b.variances);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Assign, MeansAndTies) {
  GmmModel gmm;
  gmm.k = 3;
  gmm.dim = 1;
  gmm.weights = {0.2f, 0.4f, 0.4f};
  gmm.means = {0.0f, 10.0f, 10.0f};
  gmm.variances = {1.0f, 1.0f, 1.0f};
  const Matrix pts(1, 3, {0.0f, 10.0f, 5.0f});
  const auto labels = assign(gmm, pts);
  EXPECT_EQ(labels[0], 0);
  EXPECT_EQ(labels[1], 1);  // identical components 1 and 2: lower index

  GmmModel twins = gmm;
  twins.weights = {0.5f, 0.5f, 0.0f};
  twins.means = {-1.0f, 1.0f, 50.0f};
  const Matrix mid(1, 1, {0.0f});
  EXPECT_EQ(assign(twins, mid)[0], 0);
}

TEST(MinClusterSize, Rule) {
  EXPECT_EQ(min_cluster_size(8), 2u);
  EXPECT_EQ(min_cluster_size(32), 2u);
  EXPECT_EQ(min_cluster_size(64), 4u);
  EXPECT_EQ(min_cluster_size(512), 32u);
}

TEST(DecomposeStyle, SingleClusterEqualsGlobalStats) {
  std::mt19937_64 rng(1);
  const Matrix f = random_matrix(6, 300, rng);
  std::vector<int> labels;
  const SubStyleModel m = decompose_style(f, 1, 42, &labels);
  ASSERT_EQ(m.k, 1u);
  EXPECT_EQ(m.clusters[0], linalg::moment_stats(f));
  EXPECT_TRUE(std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0; }));
}

Matrix two_gaussians(std::size_t c, std::size_t n, std::uint64_t seed, std::vector<double>& m0,
                     std::vector<double>& m1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  m0.assign(c, 0.0);
  m1.assign(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    m0[i] = 1.0 + g(rng);
    m1[i] = m0[i] + 3.0 * (i % 2 == 0 ? 1.0 : -1.0);
  }
  Matrix f(c, n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& m = j % 3 == 0 ? m1 : m0;
    for (std::size_t i = 0; i < c; ++i) f(i, j) = static_cast<float>(m[i] + 0.5 * g(rng));
  }
  return f;
}

double dist(const std::vector<float>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

TEST(DecomposeStyle, SeparatesTwoGaussians) {
  std::vector<double> m0, m1;
  const Matrix f = two_gaussians(8, 900, 3, m0, m1);
  const SubStyleModel m = decompose_style(f, 2, 42);
  ASSERT_EQ(m.k, 2u);
  // Each cluster mean is closer to one generator than the generators are apart,
  // and the two clusters pick different generators.
  const bool first_is_0 = dist(m.clusters[0].mean, m0) < dist(m.clusters[0].mean, m1);
  const auto& c0 = first_is_0 ? m.clusters[0] : m.clusters[1];
  const auto& c1 = first_is_0 ? m.clusters[1] : m.clusters[0];
  EXPECT_LT(dist(c0.mean, m0), dist(c0.mean, m1));
  EXPECT_LT(dist(c1.mean, m1), dist(c1.mean, m0));
}

TEST(DecomposeStyle, ClusterStatsAreConsistentWithGlobalStats) {
  std::vector<double> m0, m1;
  const Matrix f = two_gaussians(8, 900, 4, m0, m1);
  std::vector<int> labels;
  const SubStyleModel m = decompose_style(f, 3, 9, &labels);
  EXPECT_EQ(m.total_count(), f.cols());
  const MomentStats global = linalg::moment_stats(f);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double acc = 0.0;
    for (const auto& c : m.clusters) {
      acc += static_cast<double>(c.count) / f.cols() * c.mean[r];
    }
    EXPECT_NEAR(acc, global.mean[r], 1e-5);
  }
  // Recomputed from the original columns of each cluster.
  for (std::size_t c = 0; c < m.k; ++c) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[j] == static_cast<int>(c)) cols.push_back(j);
    EXPECT_EQ(m.clusters[c], linalg::moment_stats(linalg::gather_columns(f, cols)));
    EXPECT_GE(m.clusters[c].count, min_cluster_size(f.rows()));
  }
}

TEST(DecomposeStyle, DeterministicBytes) {
  std::vector<double> m0, m1;
  const Matrix f = two_gaussians(8, 600, 5, m0, m1);
  TempDir dir("det");
  save_model(decompose_style(f, 3, 11), dir / "a.json");
  save_model(decompose_style(f, 3, 11), dir / "b.json");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  // The manifests differ only in the sidecar name they point at.
  std::string a = slurp(dir / "a.json");
  const auto pos = a.find("\"a.sswt\"");
  ASSERT_NE(pos, std::string::npos);
  a.replace(pos, 8, "\"b.sswt\"");
  EXPECT_EQ(a, slurp(dir / "b.json"));
  EXPECT_EQ(slurp(dir / "a.sswt"), slurp(dir / "b.sswt"));
}

TEST(DecomposeStyle, TinyClustersAreMerged) {
  // 64 channels: clusters need at least 4 members. Three outliers far away.
  std::mt19937_64 rng(12);
  Matrix f = random_matrix(64, 400, rng);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t r = 0; r < 64; ++r) f(r, j) += 40.0f;
  const SubStyleModel m = decompose_style(f, 3, 1);
  for (const auto& c : m.clusters) EXPECT_GE(c.count, 4u);
  EXPECT_EQ(m.total_count(), 400u);
}

cnn::FeatureMap halves_map(float left, float right) {
  cnn::FeatureMap f;
  f.level = 3;
  f.tensor = cnn::Tensor(4, 6, 8);
  f.source_height = 48;
  f.source_width = 64;
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 8; ++x) f.tensor.at(c, y, x) = (x < 4 ? left : right) * (c + 1);
  return f;
}

TEST(SegmentContent, SingleClusterIsUniform) {
  const auto seg = segment_content(halves_map(1.0f, 2.0f), 1, 3);
  EXPECT_EQ(seg.k, 1u);
  EXPECT_TRUE(std::all_of(seg.labels.begin(), seg.labels.end(), [](int l) { return l == 0; }));
  EXPECT_NEAR(seg.means[0][0], 1.5, 1e-6);
}

TEST(SegmentContent, ConstantHalvesSplitExactly) {
  const auto seg = segment_content(halves_map(1.0f, 3.0f), 2, 3);
  ASSERT_EQ(seg.k, 2u);
  EXPECT_EQ(seg.height, 6);
  EXPECT_EQ(seg.width, 8);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) {
      EXPECT_EQ(seg.labels[y * 8 + x], seg.labels[x < 4 ? 0 : 7]);
    }
  }
  EXPECT_NE(seg.labels[0], seg.labels[7]);
  const int left = seg.labels[0];
  EXPECT_EQ(seg.counts[left], 24u);
  for (int c = 0; c < 4; ++c) EXPECT_FLOAT_EQ(seg.means[left][c], 1.0f * (c + 1));
  EXPECT_EQ(seg.members(left).size(), 24u);
}

TEST(SegmentContent, MeansAreExactMemberMeans) {
  std::mt19937_64 rng(2);
  cnn::FeatureMap f;
  f.level = 4;
  f.tensor = cnn::Tensor(5, 8, 8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : f.tensor.data) v = u(rng);
  const auto seg = segment_content(f, 3, 4);
  const Matrix m = f.as_matrix();
  for (std::size_t c = 0; c < seg.k; ++c) {
    const auto stats = linalg::moment_stats(linalg::gather_columns(m, seg.members(c)));
    for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(seg.means[c][r], stats.mean[r], 1e-6);
  }
}

LabelMap labels_of(std::vector<int> l, int h, int w, int level) {
  LabelMap m;
  m.height = h;
  m.width = w;
  m.level = level;
  m.image_height = h << level;
  m.image_width = w << level;
  m.labels = std::move(l);
  return m;
}

TEST(Masks, UniformSingleMaskIsWhite) {
  const auto mask = render_mask(labels_of(std::vector<int>(6, 0), 2, 3, 2), 0);
  EXPECT_EQ(mask.size(), 8u * 12u);
  EXPECT_TRUE(std::all_of(mask.begin(), mask.end(), [](auto v) { return v == 255; }));
}

TEST(Masks, HalvesAreComplementary) {
  const LabelMap l = labels_of({0, 1, 0, 1}, 2, 2, 1);
  const auto a = render_mask(l, 0), b = render_mask(l, 1);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i] + b[i], 255);
  EXPECT_EQ(a[0], 255);
  EXPECT_EQ(a[2], 0);  // pixel (0,2) lies in feature column 1
}

TEST(Masks, PartitionAndExport) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> d(0, 3);
  std::vector<int> l(5 * 7);
  for (int& v : l) v = d(rng);
  LabelMap map = labels_of(l, 5, 7, 3);
  map.image_height = 37;  // cropped image: not a multiple of 8
  map.image_width = 50;
  std::vector<int> sum(37 * 50, 0);
  for (int c = 0; c < 4; ++c) {
    const auto mask = render_mask(map, c);
    ASSERT_EQ(mask.size(), sum.size());
    for (std::size_t i = 0; i < mask.size(); ++i) sum[i] += mask[i] / 255;
  }
  EXPECT_TRUE(std::all_of(sum.begin(), sum.end(), [](int v) { return v == 1; }));

  TempDir dir("masks");
  const auto paths = export_masks(map, 4, dir.path(), "style_mask");
  ASSERT_EQ(paths.size(), 4u);
  EXPECT_EQ(paths[0].filename(), "style_mask1.png");
  const cnn::Image img = cnn::read_image(paths[2]);
  EXPECT_EQ(img.height(), 37);
  EXPECT_EQ(img.width(), 50);
}

TEST(ModelFiles, RoundTripIsBitExact) {
  std::vector<double> m0, m1;
  const Matrix f = two_gaussians(8, 600, 6, m0, m1);
  cnn::FeatureMap a, b;
  a.level = b.level = 4;
  a.tensor = cnn::Tensor(8, 20, 15);
  b.tensor = cnn::Tensor(8, 10, 30);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t j = 0; j < 300; ++j) {
      a.tensor.data[r * 300 + j] = f(r, j);
      b.tensor.data[r * 300 + j] = f(r, 300 + j);
    }
  a.source_height = 320;
  a.source_width = 240;
  b.source_height = 160;
  b.source_width = 480;
  SubStyleModel model = decompose_feature_maps({a, b}, {"a.png", "b.png"}, 3, 17);
  model.level = 4;
  model.preprocess = "caffe_bgr";
  ASSERT_EQ(model.label_maps.size(), 2u);
  EXPECT_EQ(model.provenance, (std::vector<std::string>{"a.png", "b.png"}));
  TempDir dir("model");
  save_model(model, dir / "m.json");
  EXPECT_TRUE(std::filesystem::exists(model_tensor_path(dir / "m.json")));
  EXPECT_EQ(load_model(dir / "m.json"), model);
}

TEST(ModelFiles, MissingAndCorruptFiles) {
  TempDir dir("badmodel");
  try {
    load_model(dir / "none.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
  std::ofstream(dir / "bad.json") << "{not json";
  try {
    load_model(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  }
}

}  // namespace
