#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "craftlora/denoiser.hpp"
#include "craftlora/rng.hpp"
#include "craftlora/tensorcore.hpp"

namespace testutil {

using craftlora::CounterRng;
using craftlora::Matrix;

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

inline Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix m(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
  return m;
}

/// Number of singular values above `threshold`.
inline int svd_rank(const Matrix& m, double threshold = 1e-8) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  int r = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) r += svd.singularValues()(i) > threshold ? 1 : 0;
  return r;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

/// Orthonormal columns from Eigen's Householder QR.
inline Matrix random_orthonormal(std::size_t m, std::size_t r, CounterRng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(to_eigen(random_matrix(m, r, rng)));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, r);
  return from_eigen(q);
}

/// Orthogonal projector onto span(Q) via Eigen.
inline Eigen::MatrixXd projector(const Matrix& q) {
  const Eigen::MatrixXd e = to_eigen(q);
  return e * e.transpose();
}

inline craftlora::Denoiser small_net(std::size_t layers = 3, std::size_t hidden = 16, std::size_t side = 4) {
  craftlora::DenoiserArch a;
  a.image_height = side;
  a.image_width = side;
  a.hidden = hidden;
  a.layers = layers;
  return craftlora::Denoiser(a, craftlora::NoiseSchedule(50, 1e-4, 0.1));
}

/// Central difference relative error with a floor on the denominator.
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-6, std::max(std::abs(analytic), std::abs(numeric)));
}

}  // namespace testutil
