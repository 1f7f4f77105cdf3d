#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace hdpfl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Configuration for principal component pursuit. lambda/mu left unset
/// mean "auto": lambda = 1/sqrt(max(rows, cols)),
/// mu = rows*cols / (4 * entrywise l1 norm of M).
struct PcpConfig {
  std::optional<double> lambda;
  std::optional<double> mu;
  double tol = 1e-7;
  int max_iters = 500;
};

struct Decomposition {
  Matrix low_rank;
  Matrix sparse;
  int iters_used = 0;
  double final_residual = 0.0;
  bool converged = true;
  std::vector<double> residual_history;  // relative residual per iteration
};

/// Soft-thresholding: sgn(x) * max(|x| - tau, 0).
inline double shrink(double x, double tau) {
  double m = std::abs(x) - tau;
  return m > 0.0 ? (x < 0.0 ? -m : m) : 0.0;
}

inline Matrix shrink(const Matrix& m, double tau) {
  return m.unaryExpr([tau](double x) { return shrink(x, tau); });
}

namespace detail {

// Thin SVD of a tall matrix via the cols x cols Gram matrix. Returns
// singular values (descending) and right singular vectors V; the left
// factors are recovered as M*V*Sigma^-1 by the caller.
inline void gram_svd(const Matrix& m, Vector& sv, Matrix& v) {
  Matrix gram = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("svt: eigendecomposition failed");
  const int c = static_cast<int>(m.cols());
  sv.resize(c);
  v.resize(c, c);
  // SelfAdjointEigenSolver sorts ascending; flip to descending.
  for (int k = 0; k < c; ++k) {
    double ev = eig.eigenvalues()(c - 1 - k);
    sv(k) = ev > 0.0 ? std::sqrt(ev) : 0.0;
    v.col(k) = eig.eigenvectors().col(c - 1 - k);
  }
}

}  // namespace detail

/// Singular value thresholding: U * shrink(Sigma, tau) * V^T.
inline Matrix svt(const Matrix& m, double tau) {
  if (!m.allFinite()) throw std::runtime_error("svt: non-finite input");
  if (m.rows() >= m.cols()) {
    Vector sv;
    Matrix v;
    detail::gram_svd(m, sv, v);
    // L = sum_k max(sv_k - tau, 0)/sv_k * (M v_k) v_k^T
    Vector scale = Vector::Zero(sv.size());
    for (int k = 0; k < sv.size(); ++k)
      if (sv(k) > tau && sv(k) > 0.0) scale(k) = (sv(k) - tau) / sv(k);
    return m * (v * scale.asDiagonal() * v.transpose());
  }
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector sv = svd.singularValues();
  for (int k = 0; k < sv.size(); ++k) sv(k) = std::max(sv(k) - tau, 0.0);
  return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

/// Principal Component Pursuit by alternating directions: splits M into
/// low-rank L and sparse S by iterating
///   L <- D_{1/mu}(M - S - Y/mu)
///   S <- S_{lambda/mu}(M - L + Y/mu)
///   Y <- Y + mu (M - L - S)
/// until ||M - L - S||_F <= tol * ||M||_F.
inline Decomposition pcp_decompose(const Matrix& m, const PcpConfig& cfg = {}) {
  if (m.rows() < 1 || m.cols() < 1)
    throw std::invalid_argument("pcp_decompose: empty matrix");
  if (!m.allFinite())
    throw std::invalid_argument("pcp_decompose: non-finite input");
  if (cfg.tol <= 0.0 || cfg.max_iters < 1)
    throw std::invalid_argument("pcp_decompose: invalid config");
  if (cfg.lambda && *cfg.lambda <= 0.0)
    throw std::invalid_argument("pcp_decompose: lambda must be positive");
  if (cfg.mu && *cfg.mu <= 0.0)
    throw std::invalid_argument("pcp_decompose: mu must be positive");

  const double norm_m = m.norm();
  Decomposition out;
  if (norm_m == 0.0) {
    out.low_rank = Matrix::Zero(m.rows(), m.cols());
    out.sparse = Matrix::Zero(m.rows(), m.cols());
    out.iters_used = 1;
    return out;
  }

  const double lambda =
      cfg.lambda ? *cfg.lambda
                 : 1.0 / std::sqrt(static_cast<double>(std::max(m.rows(), m.cols())));
  const double mu =
      cfg.mu ? *cfg.mu
             : static_cast<double>(m.rows()) * static_cast<double>(m.cols()) /
                   (4.0 * m.cwiseAbs().sum());

  Matrix s = Matrix::Zero(m.rows(), m.cols());
  Matrix y = Matrix::Zero(m.rows(), m.cols());
  Matrix l;
  double residual = norm_m;
  int iter = 0;
  while (iter < cfg.max_iters) {
    ++iter;
    l = svt(m - s + y / mu, 1.0 / mu);
    s = shrink(m - l + y / mu, lambda / mu);
    Matrix gap = m - l - s;
    y += mu * gap;
    residual = gap.norm() / norm_m;
    out.residual_history.push_back(residual);
    if (residual <= cfg.tol) break;
  }
  out.low_rank = std::move(l);
  out.sparse = std::move(s);
  out.iters_used = iter;
  out.final_residual = residual;
  out.converged = residual <= cfg.tol;
  return out;
}

/// Per-column squared euclidean norms of S; the noise-energy estimate
/// sigma_hat_i^2 = ||S_{:,i}||^2.
inline std::vector<double> column_noise_energy(const Matrix& s) {
  std::vector<double> out(static_cast<std::size_t>(s.cols()));
  for (int i = 0; i < s.cols(); ++i) out[static_cast<std::size_t>(i)] = s.col(i).squaredNorm();
  return out;
}

struct BlockwiseResult {
  std::vector<double> estimates;
  bool converged = true;
};

/// Block-row variance estimation: runs PCP on the first q_blocks
/// contiguous row blocks of height p_prime, scales each block's column
/// energies by Q = floor(rows / p_prime) and averages elementwise.
/// Rows beyond Q * p_prime are discarded.
inline BlockwiseResult blockwise_noise_estimate(const Matrix& m, int p_prime,
                                                int q_blocks,
                                                const PcpConfig& cfg = {}) {
  const int rows = static_cast<int>(m.rows());
  const int cols = static_cast<int>(m.cols());
  if (p_prime > rows)
    throw std::invalid_argument("blockwise_noise_estimate: p_prime exceeds rows");
  if (p_prime < cols)
    throw std::invalid_argument("blockwise_noise_estimate: p_prime must be >= cols");
  const int q_total = rows / p_prime;
  if (q_blocks < 1 || q_blocks > q_total)
    throw std::invalid_argument("blockwise_noise_estimate: invalid q_blocks");

  BlockwiseResult out;
  out.estimates.assign(static_cast<std::size_t>(cols), 0.0);
  for (int b = 0; b < q_blocks; ++b) {
    Decomposition dec = pcp_decompose(m.middleRows(b * p_prime, p_prime), cfg);
    out.converged = out.converged && dec.converged;
    std::vector<double> energy = column_noise_energy(dec.sparse);
    for (int i = 0; i < cols; ++i)
      out.estimates[static_cast<std::size_t>(i)] +=
          static_cast<double>(q_total) * energy[static_cast<std::size_t>(i)];
  }
  for (double& e : out.estimates) e /= static_cast<double>(q_blocks);
  return out;
}

}  // namespace hdpfl
