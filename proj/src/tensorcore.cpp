#include "craftlora/tensorcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "craftlora/error.hpp"

namespace craftlora {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + ": " + shape(a) + " vs " + shape(b));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw Error(ErrorKind::ShapeMismatch,
                "value count " + std::to_string(values_.size()) + " does not match " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  values_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorKind::ShapeMismatch, "ragged initializer");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::size_t c) const {
  Matrix out(rows_, 1);
  for (std::size_t i = 0; i < rows_; ++i) out(i, 0) = (*this)(i, c);
  return out;
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
  return out;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Matrix::max_abs() const noexcept {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double Matrix::frobenius_sq() const noexcept {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
  for (double& v : values_) v *= s;
  return *this;
}

void Matrix::axpy(double s, const Matrix& other) {
  require_same_shape(*this, other, "axpy");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "matmul: " + shape(a) + " * " + shape(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "matmul_tn: " + shape(a) + "^T * " + shape(b));
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "matmul_nt: " + shape(a) + " * " + shape(b) + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "hconcat: " + shape(a) + " | " + shape(b));
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), orow.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), orow.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

double orthonormality_error(const Matrix& q) {
  Matrix gram = matmul_tn(q, q);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
  return gram.max_abs();
}

QrResult qr_decompose(const Matrix& b) {
  const std::size_t m = b.rows();
  const std::size_t n = b.cols();

  double max_norm = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += b(i, j) * b(i, j);
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  if (max_norm == 0.0 || !std::isfinite(max_norm)) {
    throw Error(ErrorKind::DegenerateInput, "qr_decompose: no column above rank tolerance");
  }
  const double tol = kRankTolerance * max_norm;

  // Reflectors H_k = I − 2 v_k v_kᵀ with v_k supported on rows k..m-1.
  std::vector<std::vector<double>> reflectors;
  std::vector<std::vector<double>> r_columns;  // transformed kept columns, first k+1 entries
  std::vector<std::size_t> kept;

  std::vector<double> x(m);
  for (std::size_t j = 0; j < n && kept.size() < m; ++j) {
    for (std::size_t i = 0; i < m; ++i) x[i] = b(i, j);
    for (std::size_t h = 0; h < reflectors.size(); ++h) {
      const auto& v = reflectors[h];
      double dot = 0.0;
      for (std::size_t i = h; i < m; ++i) dot += v[i] * x[i];
      for (std::size_t i = h; i < m; ++i) x[i] -= 2.0 * dot * v[i];
    }
    const std::size_t k = kept.size();
    double norm_sq = 0.0;
    for (std::size_t i = k; i < m; ++i) norm_sq += x[i] * x[i];
    const double norm = std::sqrt(norm_sq);
    if (norm < tol) continue;

    const double alpha = x[k] >= 0.0 ? -norm : norm;
    std::vector<double> v(m, 0.0);
    for (std::size_t i = k; i < m; ++i) v[i] = x[i];
    v[k] -= alpha;
    double vnorm_sq = 0.0;
    for (std::size_t i = k; i < m; ++i) vnorm_sq += v[i] * v[i];
    const double vnorm = std::sqrt(vnorm_sq);
    for (std::size_t i = k; i < m; ++i) v[i] /= vnorm;
    reflectors.push_back(std::move(v));

    std::vector<double> rc(k + 1);
    for (std::size_t i = 0; i < k; ++i) rc[i] = x[i];
    rc[k] = alpha;
    r_columns.push_back(std::move(rc));
    kept.push_back(j);
  }

  const std::size_t k = kept.size();
  Matrix q(m, k);
  for (std::size_t c = 0; c < k; ++c) q(c, c) = 1.0;
  for (std::size_t h = k; h-- > 0;) {
    const auto& v = reflectors[h];
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0;
      for (std::size_t i = h; i < m; ++i) dot += v[i] * q(i, c);
      if (dot == 0.0) continue;
      for (std::size_t i = h; i < m; ++i) q(i, c) -= 2.0 * dot * v[i];
    }
  }
  Matrix r(k, k);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i <= c; ++i) r(i, c) = r_columns[c][i];

  // Nonnegative diagonal: flip row i of R together with column i of Q.
  for (std::size_t i = 0; i < k; ++i) {
    if (r(i, i) >= 0.0) continue;
    for (std::size_t c = i; c < k; ++c) r(i, c) = -r(i, c);
    for (std::size_t row = 0; row < m; ++row) q(row, i) = -q(row, i);
  }
  return {std::move(q), std::move(r), std::move(kept)};
}

Matrix project_out(const Matrix& w0, const Matrix& q) {
  if (q.rows() != w0.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "project_out: Q " + shape(q) + " vs W " + shape(w0));
  }
  if (q.cols() == 0) return w0;
  const double err = orthonormality_error(q);
  if (!(err <= kOrthonormalityTolerance)) {
    throw Error(ErrorKind::NotOrthonormal,
                "project_out: ||QtQ - I|| = " + std::to_string(err));
  }
  Matrix coeff = matmul_tn(q, w0);
  return w0 - matmul(q, coeff);
}

Matrix low_rank_update(const Matrix& w0, const Matrix& b, const Matrix& a) {
  if (b.cols() != a.rows() || b.rows() != w0.rows() || a.cols() != w0.cols()) {
    throw Error(ErrorKind::ShapeMismatch,
                "low_rank_update: W " + shape(w0) + ", B " + shape(b) + ", A " + shape(a));
  }
  return w0 + matmul(b, a);
}

}  // namespace craftlora
