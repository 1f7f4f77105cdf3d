#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "hdpfl/rng.hpp"

namespace hdpfl {

using ParamVector = Eigen::VectorXd;

struct DpSgdConfig {
  double clip_c = 3.0;
  double noise_scale_z = 0.0;
  int batch_b = 32;
  int local_epochs_k = 1;
  double step_size = 0.01;
  std::optional<int> logical_batch;  // gradient-accumulation target

  int effective_batch() const { return logical_batch.value_or(batch_b); }

  void validate() const {
    if (clip_c <= 0.0) throw std::invalid_argument("DpSgdConfig: clip_c must be positive");
    if (noise_scale_z < 0.0) throw std::invalid_argument("DpSgdConfig: negative noise scale");
    if (batch_b < 1) throw std::invalid_argument("DpSgdConfig: batch_b must be >= 1");
    if (local_epochs_k < 1) throw std::invalid_argument("DpSgdConfig: local_epochs_k must be >= 1");
    if (step_size < 0.0) throw std::invalid_argument("DpSgdConfig: negative step_size");
    if (logical_batch && *logical_batch % batch_b != 0)
      throw std::invalid_argument("DpSgdConfig: logical_batch must be a multiple of batch_b");
  }
};

/// Norm clipping: min(||v||, c) * v/||v||; the zero vector stays zero.
inline ParamVector clip(const ParamVector& g, double c) {
  double norm = g.norm();
  if (norm <= c || norm == 0.0) return g;
  return g * (c / norm);
}

/// Noisy batch gradient: (1/b) [ sum_j clip(g_j, c) + N(0, (c z)^2 I_p) ].
/// Rows of per_sample_grads are the raw per-sample gradients.
inline ParamVector noisy_batch_gradient(const Eigen::MatrixXd& per_sample_grads,
                                        const DpSgdConfig& cfg, Rng& rng) {
  cfg.validate();
  const int b = cfg.effective_batch();
  if (per_sample_grads.rows() != b)
    throw std::invalid_argument("noisy_batch_gradient: row count != batch size");
  const auto p = per_sample_grads.cols();
  ParamVector sum = ParamVector::Zero(p);
  for (int j = 0; j < b; ++j)
    sum += clip(per_sample_grads.row(j).transpose(), cfg.clip_c);
  if (cfg.noise_scale_z > 0.0) {
    std::normal_distribution<double> gauss(0.0, cfg.clip_c * cfg.noise_scale_z);
    for (Eigen::Index k = 0; k < p; ++k) sum(k) += gauss(rng);
  }
  return sum / static_cast<double>(b);
}

/// Per-sample gradient provider: rows are gradients at theta for the
/// given sample indices.
using GradFn = std::function<Eigen::MatrixXd(const ParamVector& theta,
                                             const std::vector<int>& indices)>;

/// One local round of DPSGD: K * ceil(N/B) noisy steps over shuffled
/// fixed-size batches (last batch wraparound-padded to size B), with
/// fresh Gaussian noise per step. Returns the model update
/// delta = theta_end - theta_start. When logical_batch is set, each
/// step's clipped sum is accumulated over micro-batches of batch_b
/// samples before a single noise draw.
inline ParamVector local_round(const ParamVector& theta_start, int n_samples,
                               const GradFn& per_sample_grads,
                               const DpSgdConfig& cfg, Rng& rng) {
  cfg.validate();
  if (n_samples < 1) throw std::invalid_argument("local_round: empty dataset");

  const int b = cfg.effective_batch();
  const int steps_per_epoch = (n_samples + b - 1) / b;
  const auto p = theta_start.size();
  const double noise_sd = cfg.clip_c * cfg.noise_scale_z;

  ParamVector theta = theta_start;
  std::vector<int> order(static_cast<std::size_t>(n_samples));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.local_epochs_k; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<int> batch(static_cast<std::size_t>(b));
      for (int j = 0; j < b; ++j)
        batch[static_cast<std::size_t>(j)] =
            order[static_cast<std::size_t>((step * b + j) % n_samples)];

      ParamVector sum = ParamVector::Zero(p);
      const int micro = cfg.batch_b;
      for (int off = 0; off < b; off += micro) {
        std::vector<int> chunk(batch.begin() + off,
                               batch.begin() + std::min(off + micro, b));
        Eigen::MatrixXd grads = per_sample_grads(theta, chunk);
        for (Eigen::Index j = 0; j < grads.rows(); ++j)
          sum += clip(grads.row(j).transpose(), cfg.clip_c);
      }
      if (noise_sd > 0.0) {
        std::normal_distribution<double> gauss(0.0, noise_sd);
        for (Eigen::Index k = 0; k < p; ++k) sum(k) += gauss(rng);
      }
      theta -= cfg.step_size / static_cast<double>(b) * sum;
    }
  }
  return theta - theta_start;
}

enum class ClippingRegime { Effective, Ineffective };

/// Variance of the noisy batch gradient. Effective regime (every sample
/// gradient exceeds c in norm) is exact:
///   (c^2 - ||G||^2)/b + p c^2 z^2 / b^2;
/// the ineffective regime returns the upper bound
///   sigma_g^2 + p c^2 z^2 / b^2.
inline double predicted_grad_variance(const DpSgdConfig& cfg, long p,
                                      ClippingRegime regime, double g_norm = 0.0,
                                      double sigma_g2 = 0.0) {
  cfg.validate();
  if (p < 1) throw std::invalid_argument("predicted_grad_variance: p must be >= 1");
  const double b = static_cast<double>(cfg.effective_batch());
  const double c = cfg.clip_c;
  const double z = cfg.noise_scale_z;
  const double dp_term = static_cast<double>(p) * c * c * z * z / (b * b);
  if (regime == ClippingRegime::Effective) {
    if (g_norm > c)
      throw std::invalid_argument("predicted_grad_variance: effective regime needs ||G|| <= c");
    return (c * c - g_norm * g_norm) / b + dp_term;
  }
  return sigma_g2 + dp_term;
}

/// Per-round update variance: sigma_i^2 = K * ceil(N/b) * eta^2 * sigma_g~^2.
inline double predicted_update_variance(const DpSgdConfig& cfg, long n_samples,
                                        double grad_variance) {
  cfg.validate();
  const long b = cfg.effective_batch();
  const long steps = static_cast<long>(cfg.local_epochs_k) * ((n_samples + b - 1) / b);
  return static_cast<double>(steps) * cfg.step_size * cfg.step_size * grad_variance;
}

}  // namespace hdpfl
