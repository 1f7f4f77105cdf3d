// Command-line front end: simulate / rpca / calibrate / weights.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdpfl/accountant.hpp"
#include "hdpfl/config.hpp"
#include "hdpfl/io.hpp"
#include "hdpfl/rpca.hpp"
#include "hdpfl/simulate.hpp"

namespace {

int run_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& out_dir, bool print_config) {
  hdpfl::ExperimentConfig cfg = hdpfl::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (print_config) {
    std::cout << hdpfl::config_to_json(cfg).dump(2) << '\n';
    return 0;
  }
  hdpfl::MetricsBundle bundle = hdpfl::simulate(cfg);
  hdpfl::write_bundle(bundle, out_dir);
  std::cout << nlohmann::json{{"out", out_dir},
                              {"final_accuracy", bundle.summary.at("final_accuracy")},
                              {"system_privacy", bundle.summary.at("system_privacy")}}
                   .dump(2)
            << '\n';
  return 0;
}

int run_rpca(const std::string& input, const std::string& out_dir,
             const std::string& lambda, const std::string& mu, double tol,
             int max_iters, int p_prime, int q_blocks) {
  hdpfl::Matrix m = hdpfl::read_matrix_csv(input);
  hdpfl::PcpConfig cfg;
  cfg.tol = tol;
  cfg.max_iters = max_iters;
  if (lambda != "auto") cfg.lambda = std::stod(lambda);
  if (mu != "auto") cfg.mu = std::stod(mu);

  std::filesystem::create_directories(out_dir);
  hdpfl::Decomposition dec = hdpfl::pcp_decompose(m, cfg);
  hdpfl::write_matrix_csv(out_dir + "/L.csv", dec.low_rank);
  hdpfl::write_matrix_csv(out_dir + "/S.csv", dec.sparse);

  std::vector<double> energies;
  if (p_prime > 0) {
    energies = hdpfl::blockwise_noise_estimate(m, p_prime, q_blocks, cfg).estimates;
  } else {
    energies = hdpfl::column_noise_energy(dec.sparse);
  }
  std::ofstream out(out_dir + "/energies.json");
  out << nlohmann::json(energies).dump(2) << '\n';
  std::cout << nlohmann::json{{"iters", dec.iters_used},
                              {"residual", dec.final_residual},
                              {"converged", dec.converged}}
                   .dump(2)
            << '\n';
  return 0;
}

int run_calibrate(double epsilon, double delta, double q, long steps_per_round,
                  long rounds) {
  hdpfl::Calibration cal =
      hdpfl::calibrate_noise_scale({epsilon, delta}, {q, steps_per_round, rounds});
  double achieved =
      hdpfl::epsilon_spent(q, cal.z, steps_per_round * rounds, delta);
  std::cout << nlohmann::json{{"z", cal.z},
                              {"achieved_epsilon", achieved},
                              {"floor_clamped", cal.floor_clamped}}
                   .dump(2)
            << '\n';
  return 0;
}

int run_weights(const std::string& bundle_dir, int round) {
  hdpfl::MetricsBundle bundle = hdpfl::read_bundle(bundle_dir);
  hdpfl::WeightReport report = hdpfl::report_weights(bundle, round);
  std::string csv_path = bundle_dir + "/weights_round" + std::to_string(round) + ".csv";
  std::ofstream(csv_path) << report.csv;
  std::cout << nlohmann::json{{"csv", csv_path},
                              {"oracle_linf_gap", report.oracle_linf_gap}}
                   .dump(2)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous differentially private federated learning simulator"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "run a federated experiment");
  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool print_config = false;
  sim->add_option("--config", config_path, "JSON experiment config")->required();
  sim->add_option("--seed", seed, "override the config seed");
  sim->add_option("--out", out_dir, "output directory");
  sim->add_flag("--print-config", print_config, "echo the resolved config and exit");

  auto* rpca = app.add_subcommand("rpca", "low-rank + sparse decomposition of a CSV matrix");
  std::string input, rpca_out = "rpca_out", lambda = "auto", mu = "auto";
  double tol = 1e-7;
  int max_iters = 500, p_prime = 0, q_blocks = 1;
  rpca->add_option("--input", input, "matrix CSV, one row per line")->required();
  rpca->add_option("--out", rpca_out, "output directory");
  rpca->add_option("--lambda", lambda, "sparsity weight (number or auto)");
  rpca->add_option("--mu", mu, "augmented-Lagrangian parameter (number or auto)");
  rpca->add_option("--tol", tol, "relative Frobenius residual");
  rpca->add_option("--max-iters", max_iters, "iteration cap");
  rpca->add_option("--p-prime", p_prime, "block height for blockwise estimation (0 = full)");
  rpca->add_option("--q-blocks", q_blocks, "number of row blocks to decompose");

  auto* cal = app.add_subcommand("calibrate", "noise scale from a privacy target");
  double epsilon = 0.0, delta = 1e-4, q = 0.0;
  long steps_per_round = 1, rounds = 1;
  cal->add_option("--epsilon", epsilon)->required();
  cal->add_option("--delta", delta);
  cal->add_option("--q", q, "sampling ratio b/N")->required();
  cal->add_option("--steps-per-round", steps_per_round)->required();
  cal->add_option("--rounds", rounds)->required();

  auto* wts = app.add_subcommand("weights", "weight-comparison table for one round");
  std::string bundle_dir;
  int round = 0;
  wts->add_option("--bundle", bundle_dir, "simulate output directory")->required();
  wts->add_option("--round", round)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed()) return run_simulate(config_path, seed, out_dir, print_config);
    if (rpca->parsed())
      return run_rpca(input, rpca_out, lambda, mu, tol, max_iters, p_prime, q_blocks);
    if (cal->parsed()) return run_calibrate(epsilon, delta, q, steps_per_round, rounds);
    if (wts->parsed()) return run_weights(bundle_dir, round);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << '\n';
    return 1;
  }
  return 1;
}
