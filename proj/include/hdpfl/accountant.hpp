#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace hdpfl {

struct PrivacyTarget {
  double epsilon;
  double delta;
};

struct AccountingInputs {
  double q;             // sampling ratio b/N
  long steps_per_round; // K * ceil(N/b)
  long total_rounds;    // E
};

/// Privacy spent by `steps` compositions of the subsampled Gaussian
/// mechanism with sampling ratio q and noise scale z, via the classical
/// moments upper bound minimized over integer orders 1..64. Conservative
/// by construction; at q = 1 falls back to plain Gaussian composition.
inline double epsilon_spent(double q, double z, long steps, double delta) {
  if (z <= 0.0) throw std::invalid_argument("epsilon_spent: z must be positive");
  if (steps < 1) throw std::invalid_argument("epsilon_spent: steps must be >= 1");
  if (q <= 0.0 || q > 1.0) throw std::invalid_argument("epsilon_spent: q out of range");
  if (delta <= 0.0 || delta >= 1.0)
    throw std::invalid_argument("epsilon_spent: delta out of range");

  const double log_inv_delta = std::log(1.0 / delta);
  // Per-order moment coefficient: eps(lambda) = a*lambda*(lambda+1)/lambda
  // ... i.e. (a*lambda*(lambda+1) + ln(1/delta)) / lambda with
  // a = steps*q^2/((1-q) z^2), or steps/(2 z^2) without subsampling.
  const double a = (q >= 1.0)
                       ? static_cast<double>(steps) / (2.0 * z * z)
                       : static_cast<double>(steps) * q * q / ((1.0 - q) * z * z);
  auto eps_at = [&](double lambda) {
    return (a * lambda * (lambda + 1.0) + log_inv_delta) / lambda;
  };
  double best = std::numeric_limits<double>::infinity();
  for (int lambda = 1; lambda <= 64; ++lambda) best = std::min(best, eps_at(lambda));
  // The unconstrained minimizer is lambda* = sqrt(ln(1/delta)/a); when the
  // noise is large it lands far beyond 64, so evaluate the two integers
  // around it as well.
  if (a > 0.0) {
    double star = std::sqrt(log_inv_delta / a);
    for (double lambda : {std::floor(star), std::ceil(star)})
      if (lambda >= 1.0) best = std::min(best, eps_at(lambda));
  }
  return best;
}

struct Calibration {
  double z;
  bool floor_clamped = false;  // target met even at the z = 0.3 floor
};

/// Smallest noise scale z in [0.3, 1000] whose spent epsilon over the
/// whole training run stays within the target; binary search, 60 bisections.
inline Calibration calibrate_noise_scale(const PrivacyTarget& target,
                                         const AccountingInputs& inputs) {
  if (target.epsilon <= 0.0)
    throw std::invalid_argument("calibrate_noise_scale: epsilon must be positive");
  if (inputs.steps_per_round < 1 || inputs.total_rounds < 1)
    throw std::invalid_argument("calibrate_noise_scale: invalid step counts");
  const long steps = inputs.steps_per_round * inputs.total_rounds;

  double lo = 0.3, hi = 1000.0;
  if (epsilon_spent(inputs.q, hi, steps, target.delta) > target.epsilon)
    throw std::runtime_error("calibrate_noise_scale: target infeasible at z = 1000");
  if (epsilon_spent(inputs.q, lo, steps, target.delta) <= target.epsilon)
    return {lo, true};

  for (int i = 0; i < 60; ++i) {
    double mid = 0.5 * (lo + hi);
    if (epsilon_spent(inputs.q, mid, steps, target.delta) <= target.epsilon)
      hi = mid;
    else
      lo = mid;
  }
  return {hi, false};
}

struct LedgerEntry {
  long round;
  double epsilon;
};

/// Per-client spent privacy over rounds. Single writer (the round loop).
struct AccountantLedger {
  std::vector<std::vector<LedgerEntry>> per_client;
  std::vector<double> deltas;

  explicit AccountantLedger(std::size_t n_clients = 0, double delta = 1e-4)
      : per_client(n_clients), deltas(n_clients, delta) {}

  void record(std::size_t client, long round, double eps) {
    auto& log = per_client.at(client);
    if (!log.empty() && eps < log.back().epsilon)
      throw std::logic_error("AccountantLedger: spent epsilon decreased");
    log.push_back({round, eps});
  }

  double spent(std::size_t client) const {
    const auto& log = per_client.at(client);
    return log.empty() ? 0.0 : log.back().epsilon;
  }
};

/// System-level guarantee under parallel composition over disjoint
/// client datasets: (max spent epsilon, max delta).
inline PrivacyTarget system_privacy(const AccountantLedger& ledger) {
  if (ledger.per_client.empty())
    throw std::invalid_argument("system_privacy: empty ledger");
  PrivacyTarget out{0.0, 0.0};
  for (std::size_t i = 0; i < ledger.per_client.size(); ++i) {
    out.epsilon = std::max(out.epsilon, ledger.spent(i));
    out.delta = std::max(out.delta, ledger.deltas[i]);
  }
  return out;
}

}  // namespace hdpfl
