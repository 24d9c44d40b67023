#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace craftlora {

/// Dense row-major matrix of doubles. Zero-sized dimensions are allowed so that
/// an empty subspace basis (r = 0) can be represented.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  Matrix column(std::size_t c) const;
  Matrix transposed() const;

  bool all_finite() const noexcept;
  double max_abs() const noexcept;
  double frobenius_sq() const noexcept;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s) noexcept;

  /// this += s * other
  void axpy(double s, const Matrix& other);

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// [a | b]
Matrix hconcat(const Matrix& a, const Matrix& b);

double max_abs_diff(const Matrix& a, const Matrix& b);

/// ‖QᵀQ − I‖_∞ (max-entry norm).
double orthonormality_error(const Matrix& q);

struct QrResult {
  Matrix q;  // m × k, orthonormal columns
  Matrix r;  // k × k, upper triangular, nonnegative diagonal
  std::vector<std::size_t> kept_columns;  // indices into the input, size k
};

/// Householder QR. Columns whose residual norm is below 1e-10 × (largest column
/// norm of b) are dropped, so k ≤ min(m, n). Throws DegenerateInput when no
/// column survives.
QrResult qr_decompose(const Matrix& b);

/// W0 − Q·Qᵀ·W0. Q must have orthonormal columns (NotOrthonormal otherwise).
Matrix project_out(const Matrix& w0, const Matrix& q);

/// W0 + B·A
Matrix low_rank_update(const Matrix& w0, const Matrix& b, const Matrix& a);

inline constexpr double kRankTolerance = 1e-10;
inline constexpr double kOrthonormalityTolerance = 1e-6;

}  // namespace craftlora
