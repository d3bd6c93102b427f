#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "substyle/error.hpp"

namespace substyle::linalg {

// Dense row-major float matrix. Feature sets are stored C x N: one row per
// channel, one column per spatial position.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  const std::vector<float>& values() const noexcept { return data_; }
  std::vector<float>& values() noexcept { return data_; }

  Matrix transposed() const;
  std::vector<float> column(std::size_t c) const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// First and second order statistics of a feature set; covariance uses the
// 1/N divisor.
struct MomentStats {
  std::vector<float> mean;
  Matrix cov;
  std::size_t count = 0;

  std::size_t dim() const noexcept { return mean.size(); }
  friend bool operator==(const MomentStats&, const MomentStats&) = default;
};

// Eigenpairs of a symmetric matrix with values above a cutoff, descending.
// `vectors` is dim x rank, row-major, one eigenvector per column.
struct EigenDecomp {
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::vector<double> values;
  std::vector<double> vectors;
  int sweeps = 0;

  double vector_entry(std::size_t row, std::size_t k) const {
    return vectors[row * rank + k];
  }
};

inline constexpr double kDefaultEigCutoff = 1e-5;

MomentStats moment_stats(const Matrix& features);

// Mean of columns only, accumulated in double.
std::vector<double> column_mean(const Matrix& features);

// Cyclic Jacobi on a symmetric matrix (odd-even transposition ordering). Pairs with
// eigenvalue <= cutoff are dropped.
EigenDecomp sym_eig(const Matrix& m, double cutoff = kDefaultEigCutoff);
EigenDecomp sym_eig(std::span<const double> m, std::size_t n,
                    double cutoff = kDefaultEigCutoff);

// E * diag(f(D)) * E^T in double, n x n row-major.
std::vector<double> spectral_function(const EigenDecomp& eig, double power);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

// C = A * B.
Matrix matmul(const Matrix& a, const Matrix& b);
// out = T * X + bias (broadcast over columns); T is n x n double row-major.
Matrix apply_affine(std::span<const double> transform, const Matrix& x,
                    std::span<const double> bias);

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> cols);
void scatter_columns(const Matrix& src, std::span<const std::size_t> cols,
                     Matrix& dst);
Matrix concat_columns(std::span<const Matrix> parts);

// Column-centered copy: X - mean.
Matrix centered(const Matrix& x, std::span<const double> mean);

double max_abs(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius(const Matrix& m);

}  // namespace substyle::linalg
