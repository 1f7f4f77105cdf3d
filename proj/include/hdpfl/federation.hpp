#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdpfl/accountant.hpp"
#include "hdpfl/data.hpp"
#include "hdpfl/dp_local.hpp"
#include "hdpfl/models.hpp"
#include "hdpfl/rng.hpp"
#include "hdpfl/rpca.hpp"

namespace hdpfl {

enum class StrategyKind { RobustHdp, WeiAvg, DpFedAvg, MinimumEpsilon, Oracle };

inline StrategyKind parse_strategy(const std::string& s) {
  if (s == "robust_hdp") return StrategyKind::RobustHdp;
  if (s == "wei_avg") return StrategyKind::WeiAvg;
  if (s == "dp_fed_avg") return StrategyKind::DpFedAvg;
  if (s == "minimum_epsilon") return StrategyKind::MinimumEpsilon;
  if (s == "oracle") return StrategyKind::Oracle;
  throw std::invalid_argument("unknown strategy: " + s);
}

inline std::string strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::RobustHdp: return "robust_hdp";
    case StrategyKind::WeiAvg: return "wei_avg";
    case StrategyKind::DpFedAvg: return "dp_fed_avg";
    case StrategyKind::MinimumEpsilon: return "minimum_epsilon";
    case StrategyKind::Oracle: return "oracle";
  }
  return "?";
}

struct ClientSpec {
  int id = 0;
  long dataset_size = 0;   // N_i
  int batch_b = 0;         // b_i
  double epsilon = 0.0;    // true privacy parameter, drives the noise
  double delta = 1e-4;
  double reported_epsilon = 0.0;  // what the server is told
  int local_epochs = 1;    // K_i
  double noise_scale = 0.0;  // z_i, calibrated from the true epsilon

  long steps_per_round() const {
    return static_cast<long>(local_epochs) *
           ((dataset_size + batch_b - 1) / batch_b);
  }
};

using WeightVector = Eigen::VectorXd;

inline void check_weights(const WeightVector& w) {
  if ((w.array() < 0.0).any() || std::abs(w.sum() - 1.0) > 1e-12)
    throw std::logic_error("weights must be nonnegative and sum to 1");
}

/// Uniform without-replacement participant subset of size ceil(fraction * n).
inline std::vector<int> sample_participants(int n, double fraction, Rng& rng) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("sample_participants: fraction out of range");
  int m = static_cast<int>(std::ceil(fraction * n));
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(m));
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Minimum-variance aggregation weights: w_i proportional to 1/sigma_i^2.
inline WeightVector oracle_weights(const std::vector<double>& sigma2) {
  WeightVector w(static_cast<long>(sigma2.size()));
  for (std::size_t i = 0; i < sigma2.size(); ++i) {
    if (sigma2[i] <= 0.0)
      throw std::invalid_argument("oracle_weights: sigma^2 must be positive");
    w(static_cast<long>(i)) = 1.0 / sigma2[i];
  }
  return w / w.sum();
}

/// Weights proportional to the clients' reported epsilon values.
inline WeightVector weiavg_weights(const std::vector<double>& reported_eps) {
  WeightVector w(static_cast<long>(reported_eps.size()));
  for (std::size_t i = 0; i < reported_eps.size(); ++i) {
    if (reported_eps[i] <= 0.0)
      throw std::invalid_argument("weiavg_weights: epsilon must be positive");
    w(static_cast<long>(i)) = reported_eps[i];
  }
  return w / w.sum();
}

/// Weights proportional to dataset sizes.
inline WeightVector dpfedavg_weights(const std::vector<long>& dataset_sizes) {
  WeightVector w(static_cast<long>(dataset_sizes.size()));
  for (std::size_t i = 0; i < dataset_sizes.size(); ++i) {
    if (dataset_sizes[i] < 1)
      throw std::invalid_argument("dpfedavg_weights: dataset size must be >= 1");
    w(static_cast<long>(i)) = static_cast<double>(dataset_sizes[i]);
  }
  return w / w.sum();
}

/// Minimum-epsilon baseline: every client noisies as if it held the
/// global minimum epsilon (z recalibrated); aggregation then weights by N.
inline std::vector<ClientSpec> minimum_epsilon_transform(std::vector<ClientSpec> clients,
                                                         long total_rounds) {
  if (clients.empty())
    throw std::invalid_argument("minimum_epsilon_transform: no clients");
  double min_eps = clients.front().epsilon;
  for (const auto& c : clients) min_eps = std::min(min_eps, c.epsilon);
  for (auto& c : clients) {
    c.epsilon = min_eps;
    c.noise_scale =
        calibrate_noise_scale({min_eps, c.delta},
                              {static_cast<double>(c.batch_b) / c.dataset_size,
                               c.steps_per_round(), total_rounds})
            .z;
  }
  return clients;
}

struct RobustHdpDiagnostics {
  std::vector<double> sigma2_hat;
  bool rpca_converged = true;
  bool degenerate_uniform = false;  // all estimates were zero
};

/// Robust-HDP weighting: estimates per-client noise energy from the
/// sparse part of the update matrix and weights by its inverse. Reads
/// only the update matrix, never any reported epsilon.
inline WeightVector robust_hdp_weights(const Matrix& updates, const PcpConfig& cfg,
                                       int p_prime, int q_blocks,
                                       RobustHdpDiagnostics* diag = nullptr) {
  if (updates.cols() < 2)
    throw std::invalid_argument("robust_hdp_weights: need >= 2 participants");
  BlockwiseResult est = blockwise_noise_estimate(updates, p_prime, q_blocks, cfg);
  const long m = updates.cols();
  double max_est = *std::max_element(est.estimates.begin(), est.estimates.end());
  WeightVector w(m);
  bool degenerate = max_est <= 0.0;
  if (degenerate) {
    w.setConstant(1.0 / static_cast<double>(m));
  } else {
    for (long i = 0; i < m; ++i) {
      double floored = std::max(est.estimates[static_cast<std::size_t>(i)],
                                1e-12 * max_est);
      w(i) = 1.0 / floored;
    }
    w /= w.sum();
  }
  if (diag) {
    diag->sigma2_hat = est.estimates;
    diag->rpca_converged = est.converged;
    diag->degenerate_uniform = degenerate;
  }
  return w;
}

/// Server update: theta + sum_i w_i * delta_i.
inline ParamVector aggregate(const ParamVector& theta, const Matrix& updates,
                             const WeightVector& w) {
  if (updates.rows() != theta.size() || updates.cols() != w.size())
    throw std::invalid_argument("aggregate: dimension mismatch");
  return theta + updates * w;
}

/// Average per-parameter noise variance of the aggregated update,
/// normalized by the learning rate: sum_i w_i^2 sigma_i^2 / (p eta^2).
inline double aggregated_noise_metric(const WeightVector& w,
                                      const std::vector<double>& sigma2, long p,
                                      double eta) {
  if (w.size() != static_cast<long>(sigma2.size()))
    throw std::invalid_argument("aggregated_noise_metric: length mismatch");
  double total = 0.0;
  for (long i = 0; i < w.size(); ++i)
    total += w(i) * w(i) * sigma2[static_cast<std::size_t>(i)];
  return total / (static_cast<double>(p) * eta * eta);
}

/// Step-size preconditions of the convergence guarantee, used as a
/// config diagnostic: eta <= 1/(6 beta max_i E_i) and
/// eta <= 1/(12 beta sqrt((1 + sum E_i)(sum E_i^4))).
inline bool step_size_ok(double eta, double beta, const std::vector<long>& local_steps) {
  if (beta <= 0.0 || local_steps.empty())
    throw std::invalid_argument("step_size_ok: invalid inputs");
  long max_e = 0;
  double sum_e = 0.0, sum_e4 = 0.0;
  for (long e : local_steps) {
    max_e = std::max(max_e, e);
    sum_e += static_cast<double>(e);
    sum_e4 += std::pow(static_cast<double>(e), 4.0);
  }
  return eta <= 1.0 / (6.0 * beta * static_cast<double>(max_e)) &&
         eta <= 1.0 / (12.0 * beta * std::sqrt((1.0 + sum_e) * sum_e4));
}

// --- the round loop -------------------------------------------------------

struct RoundRecord {
  int round = 0;
  std::vector<int> participants;
  WeightVector weights;
  std::vector<double> eps_spent;    // per participant
  std::vector<double> sigma2_true;  // per participant
  std::vector<double> sigma2_hat;   // per participant (robust_hdp only)
  double noise_metric = 0.0;
  bool rpca_converged = true;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

struct FederationSetup {
  std::vector<ClientSpec> clients;
  std::vector<Dataset> train;  // per client
  std::vector<Dataset> test;   // per client
  Model model;
  StrategyKind strategy = StrategyKind::RobustHdp;
  int rounds = 1;
  double fraction = 1.0;
  double clip_c = 3.0;
  double step_size = 0.01;
  PcpConfig rpca_cfg;
  int p_prime = 0;   // 0 means full matrix
  int q_blocks = 1;
  std::uint64_t seed = 0;
};

/// True per-round update variance of a client in the effective-clipping
/// regime, from the analytic formulas; the oracle strategy and metrics
/// rely on this.
inline double true_update_variance(const ClientSpec& c, double clip_c,
                                   double step_size, long p) {
  DpSgdConfig cfg;
  cfg.clip_c = clip_c;
  cfg.noise_scale_z = c.noise_scale;
  cfg.batch_b = c.batch_b;
  cfg.local_epochs_k = c.local_epochs;
  cfg.step_size = step_size;
  double grad_var =
      predicted_grad_variance(cfg, p, ClippingRegime::Effective, clip_c);
  return predicted_update_variance(cfg, c.dataset_size, grad_var);
}

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ParamVector theta;
  AccountantLedger ledger;
};

/// Runs E federated rounds: participant sampling, per-client DPSGD,
/// strategy weighting, aggregation, ledger update, evaluation. Client
/// randomness is keyed by (seed, client, round), so the strategy choice
/// never perturbs it.
inline ExperimentResult run_experiment(const FederationSetup& setup) {
  const std::size_t n = setup.clients.size();
  if (n == 0) throw std::invalid_argument("run_experiment: no clients");
  if (setup.train.size() != n || setup.test.size() != n)
    throw std::invalid_argument("run_experiment: client data mismatch");
  const long p = setup.model.param_count();

  ExperimentResult result{.records = {},
                          .theta = ParamVector::Zero(p),
                          .ledger = AccountantLedger(n)};
  for (std::size_t i = 0; i < n; ++i)
    result.ledger.deltas[i] = setup.clients[i].delta;

  Dataset eval;
  {
    long total = 0;
    for (const auto& t : setup.test) total += t.size();
    eval.features.resize(total, setup.test[0].dim());
    eval.labels.resize(total);
    long at = 0;
    for (const auto& t : setup.test) {
      eval.features.middleRows(at, t.size()) = t.features;
      eval.labels.segment(at, t.size()) = t.labels;
      at += t.size();
    }
  }

  for (int round = 0; round < setup.rounds; ++round) {
    RoundRecord rec;
    rec.round = round;
    Rng server_rng = make_rng(setup.seed, "server", static_cast<std::uint64_t>(round));
    rec.participants =
        sample_participants(static_cast<int>(n), setup.fraction, server_rng);
    const long m = static_cast<long>(rec.participants.size());

    Matrix updates(p, m);
    for (long j = 0; j < m; ++j) {
      const int id = rec.participants[static_cast<std::size_t>(j)];
      const ClientSpec& c = setup.clients[static_cast<std::size_t>(id)];
      const Dataset& local = setup.train[static_cast<std::size_t>(id)];
      DpSgdConfig cfg;
      cfg.clip_c = setup.clip_c;
      cfg.noise_scale_z = c.noise_scale;
      cfg.batch_b = c.batch_b;
      cfg.local_epochs_k = c.local_epochs;
      cfg.step_size = setup.step_size;
      Rng client_rng = make_rng(setup.seed, "client", static_cast<std::uint64_t>(id),
                                static_cast<std::uint64_t>(round));
      GradFn grads = [&](const ParamVector& theta, const std::vector<int>& idx) {
        return per_sample_gradients(setup.model, theta, local, idx);
      };
      updates.col(j) =
          local_round(result.theta, static_cast<int>(local.size()), grads, cfg,
                      client_rng);
    }

    std::vector<double> sigma2_true;
    std::vector<double> reported;
    std::vector<long> sizes;
    for (int id : rec.participants) {
      const ClientSpec& c = setup.clients[static_cast<std::size_t>(id)];
      sigma2_true.push_back(true_update_variance(c, setup.clip_c, setup.step_size, p));
      reported.push_back(c.reported_epsilon);
      sizes.push_back(c.dataset_size);
    }
    rec.sigma2_true = sigma2_true;

    switch (setup.strategy) {
      case StrategyKind::RobustHdp: {
        RobustHdpDiagnostics diag;
        int p_prime = setup.p_prime > 0 ? setup.p_prime : static_cast<int>(p);
        rec.weights =
            robust_hdp_weights(updates, setup.rpca_cfg, p_prime, setup.q_blocks, &diag);
        rec.sigma2_hat = diag.sigma2_hat;
        rec.rpca_converged = diag.rpca_converged;
        break;
      }
      case StrategyKind::WeiAvg:
        rec.weights = weiavg_weights(reported);
        break;
      case StrategyKind::DpFedAvg:
      case StrategyKind::MinimumEpsilon:
        // minimum_epsilon clients were transformed at setup time.
        rec.weights = dpfedavg_weights(sizes);
        break;
      case StrategyKind::Oracle:
        rec.weights = oracle_weights(sigma2_true);
        break;
    }
    check_weights(rec.weights);

    result.theta = aggregate(result.theta, updates, rec.weights);
    rec.noise_metric =
        aggregated_noise_metric(rec.weights, sigma2_true, p, setup.step_size);

    for (int id : rec.participants) {
      const ClientSpec& c = setup.clients[static_cast<std::size_t>(id)];
      // z = 0 means no privacy mechanism at all (non-private sanity runs).
      double spent =
          c.noise_scale == 0.0
              ? std::numeric_limits<double>::infinity()
              : epsilon_spent(static_cast<double>(c.batch_b) / c.dataset_size,
                              c.noise_scale, (round + 1) * c.steps_per_round(),
                              c.delta);
      result.ledger.record(static_cast<std::size_t>(id), round, spent);
      rec.eps_spent.push_back(spent);
    }

    rec.eval_loss = setup.model.loss(result.theta, eval);
    rec.eval_accuracy = setup.model.accuracy(result.theta, eval);
    result.records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace hdpfl
