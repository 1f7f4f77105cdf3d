#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hdpfl/models.hpp"
#include "hdpfl/rng.hpp"

namespace hdpfl {

// --- federated data splits ---------------------------------------------

struct IidSplit {};
struct ShardingSplit {
  int max_labels_per_client;
  int shards_per_client;
};
struct DirichletSplit {
  double alpha;
};

struct SplitSpec {
  std::variant<IidSplit, ShardingSplit, DirichletSplit> method;
  int n_clients;
};

/// Per-client sample indices. Disjoint; exhaustive for iid/dirichlet,
/// exhaustive up to shard rounding for sharding.
inline std::vector<std::vector<int>> split_indices(const Dataset& data,
                                                   const SplitSpec& spec, Rng& rng) {
  const int n = spec.n_clients;
  if (n < 1) throw std::invalid_argument("split: n_clients must be >= 1");
  const long total = data.size();
  if (total < n) throw std::invalid_argument("split: fewer samples than clients");

  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));

  if (std::holds_alternative<IidSplit>(spec.method)) {
    std::vector<int> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (long i = 0; i < total; ++i)
      out[static_cast<std::size_t>(i % n)].push_back(order[static_cast<std::size_t>(i)]);
    return out;
  }

  // Group indices by class for the label-skewed methods.
  const int classes = data.labels.maxCoeff() + 1;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(classes));
  for (long i = 0; i < total; ++i)
    by_class[static_cast<std::size_t>(data.labels(i))].push_back(static_cast<int>(i));

  if (auto* sh = std::get_if<ShardingSplit>(&spec.method)) {
    if (sh->shards_per_client < 1 || sh->max_labels_per_client < 1)
      throw std::invalid_argument("split: invalid sharding spec");
    const long n_shards = static_cast<long>(n) * sh->shards_per_client;
    if (n_shards > total) throw std::invalid_argument("split: more shards than samples");
    // Cut each class into equal shards so a shard never mixes labels.
    const long shards_per_class = n_shards / classes;
    if (shards_per_class < 1)
      throw std::invalid_argument("split: fewer shards than classes");
    struct Shard {
      int label;
      std::vector<int> idx;
    };
    std::vector<Shard> shards;
    for (int c = 0; c < classes; ++c) {
      auto& pool = by_class[static_cast<std::size_t>(c)];
      std::shuffle(pool.begin(), pool.end(), rng);
      const long sz = static_cast<long>(pool.size()) / shards_per_class;
      if (sz < 1) throw std::invalid_argument("split: class too small for sharding");
      for (long s = 0; s < shards_per_class; ++s)
        shards.push_back({c, std::vector<int>(pool.begin() + s * sz,
                                              pool.begin() + (s + 1) * sz)});
    }
    if (static_cast<long>(shards.size()) < n_shards)
      throw std::invalid_argument("split: shard rounding left too few shards");
    if (sh->shards_per_client <= sh->max_labels_per_client) {
      // A client holds at most shards_per_client single-label shards, so
      // the label cap holds by construction under any assignment.
      std::shuffle(shards.begin(), shards.end(), rng);
      for (int i = 0; i < n; ++i)
        for (int s = 0; s < sh->shards_per_client; ++s)
          for (int idx : shards[static_cast<std::size_t>(i * sh->shards_per_client + s)].idx)
            out[static_cast<std::size_t>(i)].push_back(idx);
      return out;
    }
    // More shards than the label cap: restrict each client to a random
    // label subset and deal shards within it.
    std::vector<std::vector<std::vector<int>*>> free_by_label(
        static_cast<std::size_t>(classes));
    for (auto& s : shards)
      free_by_label[static_cast<std::size_t>(s.label)].push_back(&s.idx);
    std::vector<int> label_order(static_cast<std::size_t>(classes));
    std::iota(label_order.begin(), label_order.end(), 0);
    for (int i = 0; i < n; ++i) {
      std::shuffle(label_order.begin(), label_order.end(), rng);
      int taken = 0, used_labels = 0;
      for (int li = 0; li < classes && taken < sh->shards_per_client; ++li) {
        if (used_labels >= sh->max_labels_per_client) break;
        auto& pool = free_by_label[static_cast<std::size_t>(label_order[static_cast<std::size_t>(li)])];
        bool used = false;
        while (!pool.empty() && taken < sh->shards_per_client) {
          for (int idx : *pool.back()) out[static_cast<std::size_t>(i)].push_back(idx);
          pool.pop_back();
          ++taken;
          used = true;
        }
        if (used) ++used_labels;
      }
      if (taken < sh->shards_per_client)
        throw std::invalid_argument("split: sharding spec infeasible under label cap");
    }
    return out;
  }

  const auto& dir = std::get<DirichletSplit>(spec.method);
  if (dir.alpha <= 0.0) throw std::invalid_argument("split: alpha must be positive");
  std::gamma_distribution<double> gamma(dir.alpha, 1.0);
  for (int c = 0; c < classes; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    std::shuffle(pool.begin(), pool.end(), rng);
    Eigen::VectorXd props(n);
    for (int i = 0; i < n; ++i) props(i) = std::max(gamma(rng), 1e-12);
    props /= props.sum();
    // Cumulative cut points over this class's samples.
    long start = 0;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += props(i);
      long end = (i == n - 1) ? static_cast<long>(pool.size())
                              : std::llround(acc * static_cast<double>(pool.size()));
      end = std::clamp(end, start, static_cast<long>(pool.size()));
      for (long j = start; j < end; ++j)
        out[static_cast<std::size_t>(i)].push_back(pool[static_cast<std::size_t>(j)]);
      start = end;
    }
  }
  for (const auto& client : out)
    if (client.empty())
      throw std::invalid_argument("split: a client received no samples");
  return out;
}

inline std::vector<Dataset> split(const Dataset& data, const SplitSpec& spec, Rng& rng) {
  std::vector<Dataset> out;
  for (auto& idx : split_indices(data, spec, rng)) {
    std::sort(idx.begin(), idx.end());
    out.push_back(data.subset(idx));
  }
  return out;
}

// --- synthetic data ------------------------------------------------------

/// Gaussian class clusters with pairwise mean distance class_separation
/// (orthonormal directions while d allows, random unit directions after).
inline Dataset generate_synthetic(long n_samples, int d, int classes,
                                  double class_separation, Rng& rng) {
  if (n_samples < 1 || d < 1 || classes < 2)
    throw std::invalid_argument("generate_synthetic: invalid sizes");
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::MatrixXd raw(d, classes);
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < d; ++k) raw(k, c) = gauss(rng);
  Eigen::MatrixXd means(d, classes);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, classes);
  for (int c = 0; c < classes; ++c) {
    Eigen::VectorXd dir =
        (c < d) ? Eigen::VectorXd(q.col(c)) : Eigen::VectorXd(raw.col(c).normalized());
    means.col(c) = class_separation / std::sqrt(2.0) * dir;
  }

  Dataset out;
  out.features.resize(n_samples, d);
  out.labels.resize(n_samples);
  std::uniform_int_distribution<int> pick(0, classes - 1);
  for (long i = 0; i < n_samples; ++i) {
    int c = pick(rng);
    out.labels(i) = c;
    for (int k = 0; k < d; ++k) out.features(i, k) = means(k, c) + gauss(rng);
  }
  return out;
}

// --- privacy-parameter and batch-size samplers ---------------------------

struct MixtureComponent {
  bool gaussian;     // otherwise uniform
  double a;          // mean / lower bound
  double b;          // variance / upper bound
  double weight;
};

struct PrivacyDistribution {
  std::string name;
  std::vector<MixtureComponent> components;
};

/// The named privacy-parameter mixtures Dist1..Dist9. The second Gaussian
/// parameter is read as a variance.
inline PrivacyDistribution privacy_distribution(const std::string& name) {
  auto g = [](double mean, double var, double w) {
    return MixtureComponent{true, mean, var, w};
  };
  auto u = [](double lo, double hi, double w) {
    return MixtureComponent{false, lo, hi, w};
  };
  if (name == "Dist1") return {name, {g(2.0, 1.0, 1.0)}};
  if (name == "Dist2") return {name, {g(0.2, 0.01, 0.2), g(1.0, 0.1, 0.6), g(5.0, 1.0, 0.2)}};
  if (name == "Dist3") return {name, {u(0.2, 5.0, 1.0)}};
  if (name == "Dist4") return {name, {g(0.2, 0.01, 0.2), g(0.5, 0.1, 0.6), g(2.0, 1.0, 0.2)}};
  if (name == "Dist5") return {name, {u(0.2, 2.0, 1.0)}};
  if (name == "Dist6") return {name, {g(0.2, 0.01, 0.3), g(0.5, 0.1, 0.5), g(1.0, 0.1, 0.2)}};
  if (name == "Dist7") return {name, {u(0.2, 1.0, 1.0)}};
  if (name == "Dist8") return {name, {g(0.2, 0.01, 0.6), g(0.5, 0.1, 0.4)}};
  if (name == "Dist9") return {name, {u(0.2, 0.5, 1.0)}};
  throw std::invalid_argument("unknown privacy distribution: " + name);
}

/// Draws n epsilon values from the mixture. Gaussian components are
/// rejection-resampled until the draw is >= 0.1 so epsilon stays inside
/// the accountant's bracket. component_out, when given, records which
/// mixture component produced each draw.
inline std::vector<double> sample_privacy_params(const PrivacyDistribution& dist,
                                                 int n, Rng& rng,
                                                 std::vector<int>* component_out = nullptr) {
  if (n < 1) throw std::invalid_argument("sample_privacy_params: n must be >= 1");
  double wsum = 0.0;
  for (const auto& c : dist.components) wsum += c.weight;
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("sample_privacy_params: weights must sum to 1");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double pick = unit(rng);
    std::size_t ci = 0;
    for (double acc = 0.0; ci < dist.components.size(); ++ci) {
      acc += dist.components[ci].weight;
      if (pick <= acc) break;
    }
    ci = std::min(ci, dist.components.size() - 1);
    const auto& comp = dist.components[ci];
    double eps;
    if (comp.gaussian) {
      const double sd = std::sqrt(comp.b);
      do {
        eps = comp.a + sd * gauss(rng);
      } while (eps < 0.1);
    } else {
      eps = comp.a + (comp.b - comp.a) * unit(rng);
    }
    out.push_back(eps);
    if (component_out) component_out->push_back(static_cast<int>(ci));
  }
  return out;
}

inline std::vector<int> sample_batch_sizes(const std::vector<int>& choices, int n,
                                           Rng& rng) {
  if (choices.empty()) throw std::invalid_argument("sample_batch_sizes: empty choices");
  std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(choices[pick(rng)]);
  return out;
}

}  // namespace hdpfl
