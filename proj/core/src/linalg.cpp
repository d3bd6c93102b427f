#include "substyle/linalg.hpp"

#include "dense.hpp"

#if defined(__AVX2__) || defined(__AVX512F__)
#include <immintrin.h>
#endif

#include <algorithm>
#include <cmath>
#include <string>

namespace substyle::linalg {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "matrix data length " + std::to_string(data_.size()) +
             " does not match " + std::to_string(rows_) + "x" +
             std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::vector<float> Matrix::column(std::size_t c) const {
  std::vector<float> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

std::vector<double> column_mean(const Matrix& features) {
  const std::size_t c = features.rows();
  const std::size_t n = features.cols();
  std::vector<double> mean(c, 0.0);
  if (n == 0) return mean;
  for (std::size_t i = 0; i < c; ++i) {
    double acc = 0.0;
    for (float v : features.row(i)) acc += v;
    mean[i] = acc / static_cast<double>(n);
  }
  return mean;
}

MomentStats moment_stats(const Matrix& features) {
  const std::size_t c = features.rows();
  const std::size_t n = features.cols();
  if (n == 0 || c == 0) {
    fail(ErrorKind::kNumeric, ErrorCode::kNoSamples, "no samples");
  }
  const std::vector<double> mean = column_mean(features);

  std::vector<double> centered(c * n);
  for (std::size_t i = 0; i < c; ++i) {
    const auto row = features.row(i);
    double* dst = centered.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] = row[j] - mean[i];
  }

  std::vector<double> cov(c * c, 0.0);
  {
    dense::ConstMap<double> x(centered.data(), c, n);
    dense::Map<double> out(cov.data(), c, c);
    out.selfadjointView<Eigen::Upper>().rankUpdate(x, 1.0 / static_cast<double>(n));
  }

  MomentStats stats;
  stats.count = n;
  stats.mean.resize(c);
  for (std::size_t i = 0; i < c; ++i) stats.mean[i] = static_cast<float>(mean[i]);
  stats.cov = Matrix(c, c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i; j < c; ++j) {
      const float v = static_cast<float>(cov[i * c + j]);
      stats.cov(i, j) = v;
      stats.cov(j, i) = v;
    }
  }
  return stats;
}

namespace {

// One sweep is n rounds of odd-even transposition: round r rotates the pairs
// at positions (k, k+1), k = r mod 2, r mod 2 + 2, ..., and swaps the two
// indices afterwards. Over a sweep every index pair meets exactly once, and
// all work touches adjacent rows/columns only.
// Expanded per-position coefficients of one round: for position j inside
// the paired range, out[j] = p[j] * row[j] + q[j] * row[j ^ 1].
struct RoundTransforms {
  const double* p;
  const double* q;
};

// (x, y) -> (s x + c y, c x - s y): the rotation that annihilates the pair,
// followed by the position swap.
inline void transform_adjacent(double* __restrict row, std::size_t first,
                               std::size_t n, RoundTransforms t) {
  double* __restrict base = row + first;
  const std::size_t len = ((n - first) / 2) * 2;
  std::size_t j = 0;
#if defined(__AVX512F__)
  for (; j + 8 <= len; j += 8) {
    const __m512d v = _mm512_loadu_pd(base + j);
    const __m512d swapped = _mm512_permute_pd(v, 0x55);
    const __m512d r = _mm512_fmadd_pd(
        _mm512_loadu_pd(t.p + j), v,
        _mm512_mul_pd(_mm512_loadu_pd(t.q + j), swapped));
    _mm512_storeu_pd(base + j, r);
  }
#elif defined(__AVX2__)
  for (; j + 4 <= len; j += 4) {
    const __m256d v = _mm256_loadu_pd(base + j);
    const __m256d swapped = _mm256_permute_pd(v, 0x5);
    const __m256d r = _mm256_fmadd_pd(
        _mm256_loadu_pd(t.p + j), v,
        _mm256_mul_pd(_mm256_loadu_pd(t.q + j), swapped));
    _mm256_storeu_pd(base + j, r);
  }
#endif
  for (; j < len; j += 2) {
    const double x = base[j];
    const double y = base[j + 1];
    base[j] = t.p[j] * x + t.q[j] * y;
    base[j + 1] = t.p[j + 1] * y + t.q[j + 1] * x;
  }
}

}  // namespace

EigenDecomp sym_eig(std::span<const double> input, std::size_t n,
                    double cutoff) {
  if (input.size() != n * n) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "sym_eig: data length does not match n*n");
  }
  double scale = 0.0;
  for (double v : input) scale = std::max(scale, std::abs(v));
  const double sym_tol = 1e-6 * std::max(1.0, scale);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(input[i * n + j] - input[j * n + i]) > sym_tol) {
        fail(ErrorKind::kNumeric, ErrorCode::kAsymmetric,
             "sym_eig: matrix is not symmetric at (" + std::to_string(i) +
                 "," + std::to_string(j) + ")");
      }
    }
  }

  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a[i * n + j] = 0.5 * (input[i * n + j] + input[j * n + i]);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  double total = 0.0;
  for (double x : a) total += x * x;
  const double norm = std::sqrt(total);
  auto off_diagonal = [&] {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) acc += a[i * n + j] * a[i * n + j];
    return std::sqrt(acc);
  };

  EigenDecomp out;
  out.dim = n;
  if (n == 0 || norm == 0.0) return out;

  const std::size_t pairs_per_round = n / 2;
  // Rotations of the current sweep, replayed onto V once the sweep is done.
  const std::size_t stride = 2 * pairs_per_round;
  std::vector<double> log_p(n * stride);
  std::vector<double> log_q(n * stride);
  auto round_log = [&](std::size_t round) {
    return RoundTransforms{log_p.data() + round * stride,
                           log_q.data() + round * stride};
  };
  std::vector<double> tc(pairs_per_round);
  std::vector<double> ts(pairs_per_round);
  constexpr int kMaxSweeps = 100;
  int sweep = 0;
  while (n > 1 && sweep < kMaxSweeps && off_diagonal() > 1e-10 * norm) {
    ++sweep;
    for (std::size_t round = 0; round < n; ++round) {
      const std::size_t first = round % 2;
      std::size_t count = 0;
      for (std::size_t k = first; k + 1 < n; k += 2, ++count) {
        const double apq = a[k * n + k + 1];
        const double app = a[k * n + k];
        const double aqq = a[(k + 1) * n + k + 1];
        // Entries invisible next to both diagonals are treated as zero.
        const double g = 100.0 * std::abs(apq);
        if (apq == 0.0 || (std::abs(app) + g == std::abs(app) &&
                           std::abs(aqq) + g == std::abs(aqq))) {
          tc[count] = 1.0;
          ts[count] = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double tan = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(tan * tan + 1.0);
        tc[count] = c;
        ts[count] = tan * c;
      }
      {
        double* p = log_p.data() + round * stride;
        double* q = log_q.data() + round * stride;
        for (std::size_t i = 0; i < count; ++i) {
          p[2 * i] = ts[i];
          q[2 * i] = tc[i];
          p[2 * i + 1] = -ts[i];
          q[2 * i + 1] = tc[i];
        }
      }
      const RoundTransforms t = round_log(round);

      // A <- G^T A G, two rows at a time; rows outside any pair only get the
      // column transform.
      if (first == 1) transform_adjacent(a.data(), first, n, t);
      std::size_t i = 0;
      for (std::size_t k = first; k + 1 < n; k += 2, ++i) {
        double* x = a.data() + k * n;
        double* y = a.data() + (k + 1) * n;
        transform_adjacent(x, first, n, t);
        transform_adjacent(y, first, n, t);
        const double c = tc[i];
        const double s = ts[i];
        for (std::size_t j = 0; j < n; ++j) {
          const double xj = x[j];
          const double yj = y[j];
          x[j] = s * xj + c * yj;
          y[j] = c * xj - s * yj;
        }
        x[k + 1] = 0.0;
        y[k] = 0.0;
      }
      const std::size_t tail = first + 2 * i;
      if (tail < n) transform_adjacent(a.data() + tail * n, first, n, t);
    }
    // Replay in row blocks so each round's coefficients are reused while hot.
    constexpr std::size_t kBlock = 32;
    for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
      const std::size_t r1 = std::min(n, r0 + kBlock);
      for (std::size_t round = 0; round < n; ++round) {
        const RoundTransforms t = round_log(round);
        for (std::size_t r = r0; r < r1; ++r)
          transform_adjacent(v.data() + r * n, round % 2, n, t);
      }
    }
  }

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i)
    if (a[i * n + i] > cutoff) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return a[x * n + x] > a[y * n + y];
  });

  out.rank = order.size();
  out.sweeps = sweep;
  out.values.resize(out.rank);
  out.vectors.resize(n * out.rank);
  for (std::size_t k = 0; k < out.rank; ++k) {
    const std::size_t col = order[k];
    out.values[k] = a[col * n + col];
    // Sign convention: largest-magnitude component positive.
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(v[i * n + col]) > std::abs(v[arg * n + col])) arg = i;
    const double sign = v[arg * n + col] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i)
      out.vectors[i * out.rank + k] = sign * v[i * n + col];
  }
  return out;
}

EigenDecomp sym_eig(const Matrix& m, double cutoff) {
  if (m.rows() != m.cols()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "sym_eig: matrix is not square");
  }
  std::vector<double> data(m.values().begin(), m.values().end());
  return sym_eig(data, m.rows(), cutoff);
}

std::vector<double> spectral_function(const EigenDecomp& eig, double power) {
  const std::size_t n = eig.dim;
  const std::size_t r = eig.rank;
  std::vector<double> scaled(n * r);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < r; ++k)
      scaled[i * r + k] = eig.vectors[i * r + k] * std::pow(eig.values[k], power);
  std::vector<double> out(n * n, 0.0);
  if (r == 0) return out;
  dense::Map<double>(out.data(), n, n).noalias() =
      dense::ConstMap<double>(scaled.data(), n, r) *
      dense::ConstMap<double>(eig.vectors.data(), n, r).transpose();
  return out;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::kConfig, ErrorCode::kLengthMismatch,
         "cosine_similarity: length mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    fail(ErrorKind::kNumeric, ErrorCode::kDegenerateMean, "degenerate mean");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "matmul: inner dimensions differ");
  }
  Matrix c(a.rows(), b.cols());
  if (a.empty() || b.empty()) return c;
  dense::Map<float>(c.data(), c.rows(), c.cols()).noalias() =
      dense::ConstMap<float>(a.data(), a.rows(), a.cols()) *
      dense::ConstMap<float>(b.data(), b.rows(), b.cols());
  return c;
}

Matrix apply_affine(std::span<const double> transform, const Matrix& x,
                    std::span<const double> bias) {
  const std::size_t n = x.rows();
  if (transform.size() != n * n || bias.size() != n) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "apply_affine: transform does not match feature dimension");
  }
  std::vector<float> t(transform.begin(), transform.end());
  Matrix out(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const float b = static_cast<float>(bias[i]);
    std::fill(out.row(i).begin(), out.row(i).end(), b);
  }
  if (x.cols() == 0 || n == 0) return out;
  dense::Map<float>(out.data(), n, x.cols()).noalias() +=
      dense::ConstMap<float>(t.data(), n, n) *
      dense::ConstMap<float>(x.data(), n, x.cols());
  return out;
}

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> cols) {
  Matrix out(m.rows(), cols.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
  }
  return out;
}

void scatter_columns(const Matrix& src, std::span<const std::size_t> cols,
                     Matrix& dst) {
  if (src.rows() != dst.rows() || src.cols() != cols.size()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "scatter_columns: shape mismatch");
  }
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const auto s = src.row(r);
    auto d = dst.row(r);
    for (std::size_t j = 0; j < cols.size(); ++j) d[cols[j]] = s[j];
  }
}

Matrix concat_columns(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Matrix& p : parts) {
    if (p.rows() != rows) {
      fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
           "concat_columns: row counts differ");
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    float* dst = out.row(r).data();
    for (const Matrix& p : parts) {
      const auto src = p.row(r);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

Matrix centered(const Matrix& x, std::span<const double> mean) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto src = x.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c)
      dst[c] = static_cast<float>(src[c] - mean[r]);
  }
  return out;
}

double max_abs(const Matrix& m) {
  double best = 0.0;
  for (float v : m.values()) best = std::max(best, static_cast<double>(std::abs(v)));
  return best;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "max_abs_diff: shape mismatch");
  }
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    best = std::max(best, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return best;
}

double frobenius(const Matrix& m) {
  double acc = 0.0;
  for (float v : m.values()) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

}  // namespace substyle::linalg
