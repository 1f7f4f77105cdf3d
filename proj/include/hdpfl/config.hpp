#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdpfl/data.hpp"
#include "hdpfl/federation.hpp"
#include "hdpfl/rpca.hpp"

namespace hdpfl {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& field, const std::string& why)
      : std::runtime_error("config field '" + field + "': " + why) {}
};

struct SyntheticSpec {
  long n_samples = 4000;
  int d = 20;
  int classes = 5;
  double separation = 6.0;
};

struct AdversarySpec {
  int client = 0;
  double reported_epsilon = 0.0;
};

struct ExperimentConfig {
  int n_clients = 0;
  int rounds = 0;
  double fraction = 1.0;
  StrategyKind strategy = StrategyKind::RobustHdp;
  std::uint64_t seed = 0;

  Model model;
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::string> data_csv;
  SplitSpec split_spec{IidSplit{}, 0};

  std::optional<std::string> privacy_dist;  // Dist1..Dist9
  std::vector<double> explicit_epsilons;
  double epsilon_scale = 1.0;
  double delta = 1e-4;

  std::vector<int> batch_choices;  // sampled per client
  std::optional<int> uniform_batch;
  int local_epochs = 1;
  double clip_c = 3.0;
  double step_size = 0.01;

  PcpConfig rpca_cfg;
  int p_prime = 0;  // 0 = min(p, 200000), resolved at run time
  int q_blocks = 1;

  std::optional<AdversarySpec> adversary;
};

namespace detail {

inline const nlohmann::json& need(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(key, "missing");
  return j.at(key);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::need;
  ExperimentConfig cfg;
  cfg.n_clients = need(j, "n_clients").get<int>();
  if (cfg.n_clients < 1) throw ConfigError("n_clients", "must be >= 1");
  cfg.rounds = need(j, "rounds").get<int>();
  if (cfg.rounds < 0) throw ConfigError("rounds", "must be >= 0");
  cfg.fraction = j.value("fraction", 1.0);
  if (cfg.fraction <= 0.0 || cfg.fraction > 1.0)
    throw ConfigError("fraction", "must be in (0, 1]");
  try {
    cfg.strategy = parse_strategy(need(j, "strategy").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("strategy", e.what());
  }
  cfg.seed = j.value("seed", 0ULL);

  const auto& jm = need(j, "model");
  if (!jm.contains("kind") || !jm.at("kind").is_string())
    throw ConfigError("model.kind", "missing or not a string");
  std::string kind = jm.at("kind").get<std::string>();
  if (kind == "linear_softmax") {
    cfg.model.kind = ModelKind::LinearSoftmax;
  } else if (kind == "mlp") {
    cfg.model.kind = ModelKind::Mlp;
    cfg.model.hidden = jm.value("hidden", 0);
    if (cfg.model.hidden < 1) throw ConfigError("model.hidden", "must be >= 1");
  } else {
    throw ConfigError("model.kind", "expected linear_softmax or mlp");
  }

  const auto& jd = need(j, "data");
  if (jd.contains("synthetic")) {
    const auto& js = jd.at("synthetic");
    SyntheticSpec s;
    s.n_samples = js.value("n_samples", s.n_samples);
    s.d = js.value("d", s.d);
    s.classes = js.value("classes", s.classes);
    s.separation = js.value("separation", s.separation);
    if (s.n_samples < 1 || s.d < 1 || s.classes < 2)
      throw ConfigError("data.synthetic", "invalid sizes");
    cfg.synthetic = s;
    cfg.model.d = s.d;
    cfg.model.classes = s.classes;
  } else if (jd.contains("csv")) {
    cfg.data_csv = jd.at("csv").get<std::string>();
    if (!std::ifstream(*cfg.data_csv))
      throw ConfigError("data.csv", "file not readable: " + *cfg.data_csv);
  } else {
    throw ConfigError("data", "expected synthetic or csv");
  }

  const auto& jsp = need(j, "split");
  if (!jsp.contains("method") || !jsp.at("method").is_string())
    throw ConfigError("split.method", "missing or not a string");
  std::string method = jsp.at("method").get<std::string>();
  if (method == "iid") {
    cfg.split_spec.method = IidSplit{};
  } else if (method == "sharding") {
    ShardingSplit sh;
    sh.max_labels_per_client = jsp.value("max_labels", 0);
    sh.shards_per_client = jsp.value("shards_per_client", 0);
    if (sh.max_labels_per_client < 1) throw ConfigError("split.max_labels", "must be >= 1");
    if (sh.shards_per_client < 1)
      throw ConfigError("split.shards_per_client", "must be >= 1");
    cfg.split_spec.method = sh;
  } else if (method == "dirichlet") {
    DirichletSplit ds{jsp.value("alpha", 0.0)};
    if (ds.alpha <= 0.0) throw ConfigError("split.alpha", "must be > 0");
    cfg.split_spec.method = ds;
  } else {
    throw ConfigError("split.method", "expected iid, sharding or dirichlet");
  }
  cfg.split_spec.n_clients = cfg.n_clients;

  const auto& jp = need(j, "privacy");
  if (jp.contains("dist")) {
    cfg.privacy_dist = jp.at("dist").get<std::string>();
    try {
      privacy_distribution(*cfg.privacy_dist);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("privacy.dist", e.what());
    }
  } else if (jp.contains("epsilons")) {
    cfg.explicit_epsilons = jp.at("epsilons").get<std::vector<double>>();
    if (static_cast<int>(cfg.explicit_epsilons.size()) != cfg.n_clients)
      throw ConfigError("privacy.epsilons", "length must equal n_clients");
    for (double e : cfg.explicit_epsilons)
      if (e <= 0.0) throw ConfigError("privacy.epsilons", "values must be positive");
  } else {
    throw ConfigError("privacy", "expected dist or epsilons");
  }
  cfg.epsilon_scale = j.value("epsilon_scale", 1.0);
  if (cfg.epsilon_scale <= 0.0) throw ConfigError("epsilon_scale", "must be > 0");
  cfg.delta = j.value("delta", 1e-4);
  if (cfg.delta <= 0.0 || cfg.delta >= 1.0) throw ConfigError("delta", "must be in (0, 1)");

  const auto& jb = need(j, "batch");
  if (jb.contains("choices")) {
    cfg.batch_choices = jb.at("choices").get<std::vector<int>>();
    if (cfg.batch_choices.empty()) throw ConfigError("batch.choices", "empty");
    for (int b : cfg.batch_choices)
      if (b < 1) throw ConfigError("batch.choices", "values must be >= 1");
  } else if (jb.contains("uniform")) {
    cfg.uniform_batch = jb.at("uniform").get<int>();
    if (*cfg.uniform_batch < 1) throw ConfigError("batch.uniform", "must be >= 1");
  } else {
    throw ConfigError("batch", "expected choices or uniform");
  }

  cfg.local_epochs = j.value("local_epochs", 1);
  if (cfg.local_epochs < 1) throw ConfigError("local_epochs", "must be >= 1");
  cfg.clip_c = j.value("clip", 3.0);
  if (cfg.clip_c <= 0.0) throw ConfigError("clip", "must be > 0");
  cfg.step_size = j.value("step_size", 0.01);
  if (cfg.step_size <= 0.0) throw ConfigError("step_size", "must be > 0");

  if (j.contains("rpca")) {
    const auto& jr = j.at("rpca");
    cfg.p_prime = jr.value("p_prime", 0);
    cfg.q_blocks = jr.value("q_blocks", 1);
    cfg.rpca_cfg.tol = jr.value("tol", 1e-7);
    cfg.rpca_cfg.max_iters = jr.value("max_iters", 500);
    if (jr.contains("lambda") && jr.at("lambda").is_number())
      cfg.rpca_cfg.lambda = jr.at("lambda").get<double>();
    if (jr.contains("mu") && jr.at("mu").is_number())
      cfg.rpca_cfg.mu = jr.at("mu").get<double>();
    if (cfg.rpca_cfg.tol <= 0.0) throw ConfigError("rpca.tol", "must be > 0");
    if (cfg.rpca_cfg.max_iters < 1) throw ConfigError("rpca.max_iters", "must be >= 1");
    if (cfg.q_blocks < 1) throw ConfigError("rpca.q_blocks", "must be >= 1");
  }

  if (j.contains("adversary")) {
    const auto& ja = j.at("adversary");
    AdversarySpec a;
    a.client = ja.value("client", -1);
    a.reported_epsilon = ja.value("reported_epsilon", 0.0);
    if (a.client < 0 || a.client >= cfg.n_clients)
      throw ConfigError("adversary.client", "out of range");
    if (a.reported_epsilon <= 0.0)
      throw ConfigError("adversary.reported_epsilon", "must be > 0");
    cfg.adversary = a;
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

/// The resolved config, defaults filled in, as JSON (for --print-config).
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["n_clients"] = cfg.n_clients;
  j["rounds"] = cfg.rounds;
  j["fraction"] = cfg.fraction;
  j["strategy"] = strategy_name(cfg.strategy);
  j["seed"] = cfg.seed;
  j["model"]["kind"] = cfg.model.kind == ModelKind::Mlp ? "mlp" : "linear_softmax";
  if (cfg.model.kind == ModelKind::Mlp) j["model"]["hidden"] = cfg.model.hidden;
  if (cfg.synthetic) {
    j["data"]["synthetic"] = {{"n_samples", cfg.synthetic->n_samples},
                              {"d", cfg.synthetic->d},
                              {"classes", cfg.synthetic->classes},
                              {"separation", cfg.synthetic->separation}};
  } else {
    j["data"]["csv"] = *cfg.data_csv;
  }
  if (std::holds_alternative<IidSplit>(cfg.split_spec.method)) {
    j["split"]["method"] = "iid";
  } else if (auto* sh = std::get_if<ShardingSplit>(&cfg.split_spec.method)) {
    j["split"] = {{"method", "sharding"},
                  {"max_labels", sh->max_labels_per_client},
                  {"shards_per_client", sh->shards_per_client}};
  } else {
    j["split"] = {{"method", "dirichlet"},
                  {"alpha", std::get<DirichletSplit>(cfg.split_spec.method).alpha}};
  }
  if (cfg.privacy_dist)
    j["privacy"]["dist"] = *cfg.privacy_dist;
  else
    j["privacy"]["epsilons"] = cfg.explicit_epsilons;
  j["epsilon_scale"] = cfg.epsilon_scale;
  j["delta"] = cfg.delta;
  if (cfg.uniform_batch)
    j["batch"]["uniform"] = *cfg.uniform_batch;
  else
    j["batch"]["choices"] = cfg.batch_choices;
  j["local_epochs"] = cfg.local_epochs;
  j["clip"] = cfg.clip_c;
  j["step_size"] = cfg.step_size;
  j["rpca"] = {{"p_prime", cfg.p_prime},
               {"q_blocks", cfg.q_blocks},
               {"tol", cfg.rpca_cfg.tol},
               {"max_iters", cfg.rpca_cfg.max_iters}};
  j["rpca"]["lambda"] = cfg.rpca_cfg.lambda ? nlohmann::json(*cfg.rpca_cfg.lambda)
                                            : nlohmann::json("auto");
  j["rpca"]["mu"] =
      cfg.rpca_cfg.mu ? nlohmann::json(*cfg.rpca_cfg.mu) : nlohmann::json("auto");
  if (cfg.adversary)
    j["adversary"] = {{"client", cfg.adversary->client},
                      {"reported_epsilon", cfg.adversary->reported_epsilon}};
  return j;
}

}  // namespace hdpfl
