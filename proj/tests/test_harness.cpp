#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hdpfl/config.hpp"
#include "hdpfl/simulate.hpp"

using nlohmann::json;

namespace {

json base_config() {
  return json{
      {"n_clients", 6},
      {"rounds", 2},
      {"strategy", "robust_hdp"},
      {"seed", 7},
      {"model", {{"kind", "linear_softmax"}}},
      {"data",
       {{"synthetic",
         {{"n_samples", 900}, {"d", 79}, {"classes", 5}, {"separation", 4.0}}}}},
      {"split", {{"method", "iid"}}},
      {"privacy", {{"epsilons", {0.2, 0.3, 0.5, 0.8, 1.0, 0.25}}}},
      {"batch", {{"choices", {16, 32, 64, 128}}}},
  };
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name)
      : path((std::filesystem::temp_directory_path() / name).string()) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

double mean_noise_metric(const hdpfl::MetricsBundle& bundle) {
  double total = 0.0;
  const auto& rounds = bundle.summary.at("rounds");
  for (const auto& r : rounds) total += r.at("noise_metric").get<double>();
  return total / static_cast<double>(rounds.size());
}

}  // namespace

TEST_CASE("a minimal config picks up the documented defaults") {
  hdpfl::ExperimentConfig cfg = hdpfl::parse_config(base_config());
  CHECK(cfg.n_clients == 6);
  CHECK(cfg.fraction == 1.0);
  CHECK(cfg.delta == doctest::Approx(1e-4));
  CHECK(cfg.clip_c == doctest::Approx(3.0));
  CHECK(cfg.step_size == doctest::Approx(0.01));
  CHECK(cfg.local_epochs == 1);
  CHECK(cfg.q_blocks == 1);
  CHECK(cfg.p_prime == 0);  // resolved to min(p, 200000) at setup
  CHECK(cfg.epsilon_scale == doctest::Approx(1.0));

  json echoed = hdpfl::config_to_json(cfg);
  CHECK(echoed.at("clip").get<double>() == doctest::Approx(3.0));
  CHECK(echoed.at("delta").get<double>() == doctest::Approx(1e-4));
  CHECK(echoed.at("rpca").at("lambda") == "auto");
  // The echo round-trips through the parser to the same resolved config.
  hdpfl::ExperimentConfig again = hdpfl::parse_config(echoed);
  CHECK(hdpfl::config_to_json(again) == echoed);
}

TEST_CASE("config rejection names the offending field") {
  auto expect_error = [](json j, const std::string& field) {
    try {
      hdpfl::parse_config(j);
      FAIL_CHECK("expected rejection for field " << field);
    } catch (const hdpfl::ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };

  json j = base_config();
  j["strategy"] = "fed_prox";
  expect_error(j, "strategy");

  j = base_config();
  j["privacy"] = {{"epsilons", {1.0, 2.0}}};  // wrong length
  expect_error(j, "privacy.epsilons");

  j = base_config();
  j.erase("model");
  expect_error(j, "model");

  j = base_config();
  j["fraction"] = 1.5;
  expect_error(j, "fraction");

  j = base_config();
  j["model"] = {{"kind", "mlp"}};  // missing hidden width
  expect_error(j, "model.hidden");

  j = base_config();
  j["adversary"] = {{"client", 99}, {"reported_epsilon", 10.0}};
  expect_error(j, "adversary.client");

  j = base_config();
  j["privacy"] = {{"dist", "Dist42"}};
  expect_error(j, "privacy.dist");

  j = base_config();
  j["data"] = {{"csv", "no_such_file.csv"}};
  expect_error(j, "data.csv");
}

TEST_CASE("identical configs produce byte-identical artifacts") {
  hdpfl::ExperimentConfig cfg = hdpfl::parse_config(base_config());
  TempDir a("hdpfl_det_a"), b("hdpfl_det_b");
  hdpfl::write_bundle(hdpfl::simulate(cfg), a.path);
  hdpfl::write_bundle(hdpfl::simulate(cfg), b.path);
  CHECK(slurp(a.path + "/rounds.csv") == slurp(b.path + "/rounds.csv"));
  CHECK(slurp(a.path + "/summary.json") == slurp(b.path + "/summary.json"));
}

TEST_CASE("bundles round-trip through the on-disk format") {
  hdpfl::ExperimentConfig cfg = hdpfl::parse_config(base_config());
  hdpfl::MetricsBundle bundle = hdpfl::simulate(cfg);
  TempDir dir("hdpfl_rt");
  hdpfl::write_bundle(bundle, dir.path);
  hdpfl::MetricsBundle back = hdpfl::read_bundle(dir.path);
  REQUIRE(back.rows.size() == bundle.rows.size());
  for (std::size_t i = 0; i < bundle.rows.size(); ++i) {
    CHECK(back.rows[i].round == bundle.rows[i].round);
    CHECK(back.rows[i].client == bundle.rows[i].client);
    CHECK(back.rows[i].weight == bundle.rows[i].weight);
    CHECK(back.rows[i].sigma2_true == bundle.rows[i].sigma2_true);
  }
}

TEST_CASE("one metrics row per participant per round") {
  json j = base_config();
  j["rounds"] = 3;
  hdpfl::MetricsBundle bundle = hdpfl::simulate(hdpfl::parse_config(j));
  CHECK(bundle.rows.size() == 3u * 6u);  // full participation

  j["fraction"] = 0.5;
  hdpfl::MetricsBundle half = hdpfl::simulate(hdpfl::parse_config(j));
  CHECK(half.rows.size() == 3u * 3u);
}

TEST_CASE("the strategy sweep reproduces the noise-metric ordering") {
  // Wide epsilon spread and heterogeneous batches, as in the hardest
  // mixture settings: oracle lowest, minimum-epsilon highest.
  json j = base_config();
  j["privacy"] = {{"epsilons", {0.2, 0.2, 0.5, 0.5, 0.6, 1.0}}};
  std::map<std::string, double> metric;
  for (std::string s :
       {"oracle", "robust_hdp", "wei_avg", "dp_fed_avg", "minimum_epsilon"}) {
    j["strategy"] = s;
    metric[s] = mean_noise_metric(hdpfl::simulate(hdpfl::parse_config(j)));
  }
  CHECK(metric["oracle"] <= metric["robust_hdp"] * (1 + 1e-9));
  CHECK(metric["robust_hdp"] <= metric["wei_avg"]);
  CHECK(metric["robust_hdp"] <= metric["dp_fed_avg"]);
  CHECK(metric["robust_hdp"] <= metric["minimum_epsilon"]);
  CHECK(metric["minimum_epsilon"] >
        std::max(metric["wei_avg"], metric["dp_fed_avg"]));
}

TEST_CASE("a falsifying client cannot move robust_hdp but does move wei_avg") {
  json honest = base_config();
  json lying = honest;
  lying["adversary"] = {{"client", 2}, {"reported_epsilon", 50.0}};

  hdpfl::MetricsBundle h = hdpfl::simulate(hdpfl::parse_config(honest));
  hdpfl::MetricsBundle l = hdpfl::simulate(hdpfl::parse_config(lying));
  REQUIRE(h.rows.size() == l.rows.size());
  for (std::size_t i = 0; i < h.rows.size(); ++i) {
    CHECK(h.rows[i].weight == l.rows[i].weight);
    CHECK(h.rows[i].loss == l.rows[i].loss);
    CHECK(h.rows[i].acc == l.rows[i].acc);
  }

  honest["strategy"] = "wei_avg";
  lying["strategy"] = "wei_avg";
  hdpfl::MetricsBundle wh = hdpfl::simulate(hdpfl::parse_config(honest));
  hdpfl::MetricsBundle wl = hdpfl::simulate(hdpfl::parse_config(lying));
  bool weights_differ = false, outputs_differ = false;
  for (std::size_t i = 0; i < wh.rows.size(); ++i) {
    weights_differ = weights_differ || wh.rows[i].weight != wl.rows[i].weight;
    outputs_differ = outputs_differ || wh.rows[i].loss != wl.rows[i].loss;
  }
  CHECK(weights_differ);
  CHECK(outputs_differ);
}

TEST_CASE("summary system privacy matches the accountant") {
  hdpfl::ExperimentConfig cfg = hdpfl::parse_config(base_config());
  hdpfl::MetricsBundle bundle = hdpfl::simulate(cfg);
  double max_spent = 0.0;
  for (const auto& row : bundle.rows)
    if (row.round == cfg.rounds - 1) max_spent = std::max(max_spent, row.eps_spent);
  const auto& sys = bundle.summary.at("system_privacy");
  CHECK(sys.at("epsilon").get<double>() == doctest::Approx(max_spent));
  CHECK(sys.at("delta").get<double>() == doctest::Approx(1e-4));

  // Independent recomputation from the client table.
  for (const auto& c : bundle.summary.at("clients")) {
    double q = c.at("batch").get<double>() / c.at("dataset_size").get<double>();
    long spr = c.at("local_epochs").get<long>() *
               ((c.at("dataset_size").get<long>() + c.at("batch").get<long>() - 1) /
                c.at("batch").get<long>());
    double want = hdpfl::epsilon_spent(q, c.at("noise_scale").get<double>(),
                                       cfg.rounds * spr, c.at("delta").get<double>());
    for (const auto& row : bundle.rows)
      if (row.round == cfg.rounds - 1 && row.client == c.at("id").get<int>())
        CHECK(row.eps_spent == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("weight reports on a homogeneous run are uniform") {
  json j = base_config();
  j["strategy"] = "dp_fed_avg";
  j["n_clients"] = 5;
  j["privacy"] = {{"epsilons", {0.5, 0.5, 0.5, 0.5, 0.5}}};
  j["batch"] = {{"uniform", 32}};
  j["data"]["synthetic"]["n_samples"] = 1000;  // 200 per client
  hdpfl::MetricsBundle bundle = hdpfl::simulate(hdpfl::parse_config(j));
  hdpfl::WeightReport report = hdpfl::report_weights(bundle, 0);
  CHECK(report.oracle_linf_gap <= 1e-9);
  // Every strategy column is 0.2 for every client.
  std::istringstream lines(report.csv);
  std::string line;
  std::getline(lines, line);  // header
  int n_lines = 0;
  while (std::getline(lines, line)) {
    ++n_lines;
    auto cells = hdpfl::split_line(line);
    REQUIRE(cells.size() == 7);
    for (int col : {1, 2, 3, 4})
      CHECK(std::stod(cells[static_cast<std::size_t>(col)]) ==
            doctest::Approx(0.2).epsilon(1e-9));
  }
  CHECK(n_lines == 5);

  CHECK_THROWS_AS(hdpfl::report_weights(bundle, 99), std::invalid_argument);
}

TEST_CASE("sigma2_hat is populated only for the estimating strategy") {
  json j = base_config();
  hdpfl::MetricsBundle robust = hdpfl::simulate(hdpfl::parse_config(j));
  for (const auto& row : robust.rows) CHECK(std::isfinite(row.sigma2_hat));

  j["strategy"] = "dp_fed_avg";
  hdpfl::MetricsBundle plain = hdpfl::simulate(hdpfl::parse_config(j));
  for (const auto& row : plain.rows) CHECK(std::isnan(row.sigma2_hat));
}
