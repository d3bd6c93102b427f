#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "substyle/cnn.hpp"
#include "substyle/linalg.hpp"

namespace substyle::testing {

using linalg::Matrix;
using linalg::MomentStats;

// Entries uniform in [lo, hi).
Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0);
// A * A^T / n + shift * I for a random A: full-rank symmetric PSD.
Matrix random_spd(std::size_t n, std::mt19937_64& rng, double shift = 0.1);
// Samples from N(mean, L L^T) for a random lower-triangular L; correlated channels.
Matrix correlated_gaussian(std::size_t c, std::size_t n, std::mt19937_64& rng,
                           const std::vector<double>& mean);
// Random stats with a well-conditioned covariance.
MomentStats random_stats(std::size_t c, std::mt19937_64& rng);

// Two-pass moments in long double, independent of the library.
struct RefMoments {
  std::vector<long double> mean;
  std::vector<long double> cov;  // c x c, divisor N
};
RefMoments reference_moments(const Matrix& f);
RefMoments reference_moments(const Matrix& f, const std::vector<std::size_t>& cols);

double max_abs_diff(const RefMoments& m, const MomentStats& target, bool cov);
// ||a - b||_F between a reference covariance and a stats covariance.
double cov_frobenius_diff(const RefMoments& m, const Matrix& cov);

// Roots of the characteristic polynomial for a symmetric 2x2 or 3x3
// matrix (closed form), descending.
std::vector<double> charpoly_eigenvalues(const std::vector<double>& m, std::size_t n);

// Amari index between a true mixing A (C x k) and an estimated unmixing
// W (k x C); 0 for a perfect recovery up to permutation and scale.
double amari_index(const Matrix& mixing, const Matrix& unmixing);

// Brute-force argmax over all pairs, ties to the lowest style index.
std::vector<std::size_t> brute_force_match(const std::vector<std::vector<float>>& content,
                                           const std::vector<std::vector<float>>& style);

// Fresh directory under the system temp dir; removed by the destructor.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Deterministic RGB test image: blurred colour blobs with a few hard edges.
cnn::Image synthetic_image(int height, int width, std::uint64_t seed);

int run_command(const std::string& cmd);
std::string shell_quote(const std::string& s);

}  // namespace substyle::testing
