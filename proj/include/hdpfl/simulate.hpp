#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdpfl/config.hpp"
#include "hdpfl/federation.hpp"
#include "hdpfl/io.hpp"

namespace hdpfl {

struct MetricsRow {
  int round;
  int client;
  double weight;
  double sigma2_true;
  double sigma2_hat;  // NaN for strategies that do not estimate
  double eps_spent;
  double loss;
  double acc;
};

struct MetricsBundle {
  std::vector<MetricsRow> rows;
  nlohmann::json summary;
};

/// Builds the full federation from a resolved config: data generation,
/// per-client 80/20 train/test holdout, privacy sampling, calibration,
/// and the optional reported-epsilon adversary.
inline FederationSetup setup_federation(const ExperimentConfig& cfg) {
  FederationSetup setup;
  setup.model = cfg.model;
  setup.strategy = cfg.strategy;
  setup.rounds = cfg.rounds;
  setup.fraction = cfg.fraction;
  setup.clip_c = cfg.clip_c;
  setup.step_size = cfg.step_size;
  setup.rpca_cfg = cfg.rpca_cfg;
  setup.q_blocks = cfg.q_blocks;
  setup.seed = cfg.seed;

  Dataset full;
  if (cfg.synthetic) {
    Rng rng = make_rng(cfg.seed, "data");
    full = generate_synthetic(cfg.synthetic->n_samples, cfg.synthetic->d,
                              cfg.synthetic->classes, cfg.synthetic->separation, rng);
  } else {
    full = read_dataset_csv(*cfg.data_csv);
    setup.model.d = static_cast<int>(full.dim());
    setup.model.classes = full.labels.maxCoeff() + 1;
  }
  const long p = setup.model.param_count();
  setup.p_prime = cfg.p_prime > 0 ? cfg.p_prime
                                  : static_cast<int>(std::min<long>(p, 200000));

  Rng split_rng = make_rng(cfg.seed, "split");
  std::vector<Dataset> clients_data = split(full, cfg.split_spec, split_rng);

  // 80/20 per-client holdout, matching the 2400/600 ratio.
  for (int i = 0; i < cfg.n_clients; ++i) {
    const Dataset& local = clients_data[static_cast<std::size_t>(i)];
    std::vector<int> order(static_cast<std::size_t>(local.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng hold_rng = make_rng(cfg.seed, "holdout", static_cast<std::uint64_t>(i));
    std::shuffle(order.begin(), order.end(), hold_rng);
    long n_train = std::max<long>(1, (local.size() * 4) / 5);
    if (n_train == local.size() && local.size() > 1) n_train -= 1;
    std::vector<int> tr(order.begin(), order.begin() + n_train);
    std::vector<int> te(order.begin() + n_train, order.end());
    if (te.empty()) te = tr;  // degenerate single-sample client
    setup.train.push_back(local.subset(tr));
    setup.test.push_back(local.subset(te));
  }

  std::vector<double> eps = cfg.explicit_epsilons;
  if (cfg.privacy_dist) {
    Rng eps_rng = make_rng(cfg.seed, "privacy");
    eps = sample_privacy_params(privacy_distribution(*cfg.privacy_dist),
                                cfg.n_clients, eps_rng);
  }
  for (double& e : eps) e *= cfg.epsilon_scale;

  std::vector<int> batches;
  if (cfg.uniform_batch) {
    batches.assign(static_cast<std::size_t>(cfg.n_clients), *cfg.uniform_batch);
  } else {
    Rng b_rng = make_rng(cfg.seed, "batch");
    batches = sample_batch_sizes(cfg.batch_choices, cfg.n_clients, b_rng);
  }

  for (int i = 0; i < cfg.n_clients; ++i) {
    ClientSpec c;
    c.id = i;
    c.dataset_size = setup.train[static_cast<std::size_t>(i)].size();
    c.batch_b = std::min<int>(batches[static_cast<std::size_t>(i)],
                              static_cast<int>(c.dataset_size));
    c.epsilon = eps[static_cast<std::size_t>(i)];
    c.delta = cfg.delta;
    c.reported_epsilon = c.epsilon;
    c.local_epochs = cfg.local_epochs;
    try {
      c.noise_scale =
          calibrate_noise_scale({c.epsilon, c.delta},
                                {static_cast<double>(c.batch_b) / c.dataset_size,
                                 c.steps_per_round(), std::max(cfg.rounds, 1)})
              .z;
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("client " + std::to_string(i) +
                               ": " + e.what());
    }
    setup.clients.push_back(c);
  }

  if (cfg.adversary)
    setup.clients[static_cast<std::size_t>(cfg.adversary->client)].reported_epsilon =
        cfg.adversary->reported_epsilon;

  if (setup.strategy == StrategyKind::MinimumEpsilon)
    setup.clients = minimum_epsilon_transform(setup.clients, std::max(cfg.rounds, 1));
  return setup;
}

/// Runs the experiment and assembles the metrics bundle. For robust_hdp
/// the oracle weights are computed side by side and the per-round
/// weight gap is reported in the summary.
inline MetricsBundle simulate(const ExperimentConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  FederationSetup setup = setup_federation(cfg);
  ExperimentResult res = run_experiment(setup);

  MetricsBundle bundle;
  nlohmann::json rounds_summary = nlohmann::json::array();
  bool all_converged = true;
  for (const auto& rec : res.records) {
    for (std::size_t k = 0; k < rec.participants.size(); ++k) {
      MetricsRow row;
      row.round = rec.round;
      row.client = rec.participants[k];
      row.weight = rec.weights(static_cast<long>(k));
      row.sigma2_true = rec.sigma2_true[k];
      row.sigma2_hat = rec.sigma2_hat.empty()
                           ? std::numeric_limits<double>::quiet_NaN()
                           : rec.sigma2_hat[k];
      row.eps_spent = rec.eps_spent[k];
      row.loss = rec.eval_loss;
      row.acc = rec.eval_accuracy;
      bundle.rows.push_back(row);
    }
    all_converged = all_converged && rec.rpca_converged;
    nlohmann::json rj = {{"round", rec.round},
                         {"noise_metric", rec.noise_metric},
                         {"rpca_converged", rec.rpca_converged},
                         {"loss", rec.eval_loss},
                         {"accuracy", rec.eval_accuracy}};
    if (setup.strategy == StrategyKind::RobustHdp) {
      WeightVector oracle = oracle_weights(rec.sigma2_true);
      rj["oracle_linf_gap"] = (rec.weights - oracle).cwiseAbs().maxCoeff();
      rj["oracle_noise_metric"] = aggregated_noise_metric(
          oracle, rec.sigma2_true, setup.model.param_count(), setup.step_size);
    }
    rounds_summary.push_back(rj);
  }

  PrivacyTarget sys = system_privacy(res.ledger);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();

  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : setup.clients)
    clients.push_back({{"id", c.id},
                       {"dataset_size", c.dataset_size},
                       {"batch", c.batch_b},
                       {"epsilon", c.epsilon},
                       {"reported_epsilon", c.reported_epsilon},
                       {"delta", c.delta},
                       {"local_epochs", c.local_epochs},
                       {"noise_scale", c.noise_scale}});

  bundle.summary = {{"strategy", strategy_name(setup.strategy)},
                    {"rounds", rounds_summary},
                    {"clients", clients},
                    {"p", setup.model.param_count()},
                    {"step_size", setup.step_size},
                    {"final_accuracy",
                     res.records.empty() ? 0.0 : res.records.back().eval_accuracy},
                    {"final_loss",
                     res.records.empty() ? 0.0 : res.records.back().eval_loss},
                    {"rpca_all_converged", all_converged},
                    {"system_privacy",
                     {{"epsilon", sys.epsilon}, {"delta", sys.delta}}},
                    {"wall_time_seconds", wall}};
  return bundle;
}

inline void write_bundle(const MetricsBundle& bundle, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir + "/rounds.csv");
  if (!csv) throw std::runtime_error("cannot write " + out_dir + "/rounds.csv");
  csv << "round,client,weight,sigma2_true,sigma2_hat,eps_spent,loss,acc\n";
  for (const auto& r : bundle.rows)
    csv << r.round << ',' << r.client << ',' << fmt_double(r.weight) << ','
        << fmt_double(r.sigma2_true) << ',' << fmt_double(r.sigma2_hat) << ','
        << fmt_double(r.eps_spent) << ',' << fmt_double(r.loss) << ','
        << fmt_double(r.acc) << '\n';
  // Wall time varies run to run; keep it out of the deterministic artifact.
  nlohmann::json summary = bundle.summary;
  double wall = summary.value("wall_time_seconds", 0.0);
  summary.erase("wall_time_seconds");
  std::ofstream js(out_dir + "/summary.json");
  if (!js) throw std::runtime_error("cannot write " + out_dir + "/summary.json");
  js << summary.dump(2) << '\n';
  std::ofstream wt(out_dir + "/wall_time.json");
  wt << nlohmann::json{{"wall_time_seconds", wall}}.dump(2) << '\n';
}

inline MetricsBundle read_bundle(const std::string& dir) {
  MetricsBundle bundle;
  std::ifstream js(dir + "/summary.json");
  if (!js) throw std::runtime_error("cannot open " + dir + "/summary.json");
  js >> bundle.summary;
  std::ifstream csv(dir + "/rounds.csv");
  if (!csv) throw std::runtime_error("cannot open " + dir + "/rounds.csv");
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != 8) throw std::runtime_error(dir + "/rounds.csv: ragged row");
    MetricsRow r;
    r.round = std::stoi(cells[0]);
    r.client = std::stoi(cells[1]);
    r.weight = std::stod(cells[2]);
    r.sigma2_true = std::stod(cells[3]);
    r.sigma2_hat = std::stod(cells[4]);
    r.eps_spent = std::stod(cells[5]);
    r.loss = std::stod(cells[6]);
    r.acc = std::stod(cells[7]);
    bundle.rows.push_back(r);
  }
  return bundle;
}

struct WeightReport {
  std::string csv;        // per-client comparison table
  double oracle_linf_gap; // between the run's weights and the oracle
};

/// Side-by-side weight table for one round: the run's weights, the
/// oracle (from true sigma^2), weiavg (reported epsilon) and dpfedavg
/// (dataset size) recomputed from the bundle's client table.
inline WeightReport report_weights(const MetricsBundle& bundle, int round) {
  std::vector<const MetricsRow*> rows;
  for (const auto& r : bundle.rows)
    if (r.round == round) rows.push_back(&r);
  if (rows.empty())
    throw std::invalid_argument("report_weights: round " + std::to_string(round) +
                                " not in bundle");

  std::vector<double> sigma2, reported;
  std::vector<long> sizes;
  for (const auto* r : rows) {
    sigma2.push_back(r->sigma2_true);
    const auto& c = bundle.summary.at("clients").at(static_cast<std::size_t>(r->client));
    reported.push_back(c.at("reported_epsilon").get<double>());
    sizes.push_back(c.at("dataset_size").get<long>());
  }
  WeightVector w_oracle = oracle_weights(sigma2);
  WeightVector w_wei = weiavg_weights(reported);
  WeightVector w_dpfa = dpfedavg_weights(sizes);

  std::ostringstream csv;
  csv << "client,weight,w_oracle,w_weiavg,w_dpfedavg,sigma2_hat,sigma2_true\n";
  double gap = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto* r = rows[k];
    gap = std::max(gap, std::abs(r->weight - w_oracle(static_cast<long>(k))));
    csv << r->client << ',' << fmt_double(r->weight) << ','
        << fmt_double(w_oracle(static_cast<long>(k))) << ','
        << fmt_double(w_wei(static_cast<long>(k))) << ','
        << fmt_double(w_dpfa(static_cast<long>(k))) << ','
        << fmt_double(r->sigma2_hat) << ',' << fmt_double(r->sigma2_true) << '\n';
  }
  return {csv.str(), gap};
}

}  // namespace hdpfl
