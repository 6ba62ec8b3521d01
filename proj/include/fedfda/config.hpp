#pragma once

// JSON experiment configuration: strict schema, defaults, validation and
// serialization back to JSON.

#include "fedfda/adaptation.hpp"
#include "fedfda/common.hpp"
#include "fedfda/datagen.hpp"
#include "fedfda/federation.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fedfda {

// Raised for anything wrong with the configuration itself (CLI exit code 1).
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

struct DatasetConfig {
  std::optional<std::string> csv_path;  // otherwise synthetic
  SyntheticTaskSpec synthetic{};
  BenchmarkSpec benchmark{};
  std::uint64_t split_seed = 0;
};

struct ExperimentConfig {
  DatasetConfig dataset{};
  FederationConfig federation{};
  std::string output_dir = "out";
};

namespace detail {

using Json = nlohmann::json;

template <typename... Parts>
[[noreturn]] void config_fail(Parts&&... parts) {
  std::ostringstream oss;
  (oss << ... << std::forward<Parts>(parts));
  throw ConfigError(oss.str());
}

inline void reject_unknown(const Json& obj, const std::string& where,
                           const std::set<std::string>& allowed) {
  if (!obj.is_object()) config_fail(where.empty() ? "config" : where, " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      config_fail("unknown key '", key, "'", where.empty() ? "" : " in '" + where + "'");
    }
  }
}

inline double get_number(const Json& obj, const char* key, const std::string& where, double fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number()) config_fail(where, ".", key, " must be a number");
  return v.get<double>();
}

inline long long get_int(const Json& obj, const char* key, const std::string& where, long long fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number_integer()) config_fail(where, ".", key, " must be an integer");
  return v.get<long long>();
}

inline std::string get_string(const Json& obj, const char* key, const std::string& where,
                              const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_string()) config_fail(where, ".", key, " must be a string");
  return v.get<std::string>();
}

inline bool get_bool(const Json& obj, const char* key, const std::string& where, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_boolean()) config_fail(where, ".", key, " must be a boolean");
  return v.get<bool>();
}

inline std::uint64_t get_seed(const Json& obj, const char* key, const std::string& where,
                              std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    config_fail(where.empty() ? "" : where + ".", key, " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

inline std::string lift_name(LiftKind k) { return k == LiftKind::identity ? "identity" : "tanh"; }

}  // namespace detail

/// Checks every range constraint; throws ConfigError naming the field.
inline void validate(const ExperimentConfig& c) {
  using detail::check;
  const auto& f = c.federation;
  const auto& s = c.dataset.synthetic;
  const auto& b = c.dataset.benchmark;
  check(f.q > 0.0 && f.q <= 1.0, "q out of (0,1]");
  check(f.rounds >= 0, "rounds must be >= 0");
  check(f.hyper.epochs >= 0, "local_epochs must be >= 0");
  check(f.hyper.lr >= 0.0 && std::isfinite(f.hyper.lr), "lr must be >= 0");
  check(f.hyper.momentum >= 0.0 && f.hyper.momentum < 1.0, "momentum out of [0,1)");
  check(f.hyper.weight_decay >= 0.0, "weight_decay must be >= 0");
  check(f.hyper.batch_size >= 1, "batch_size must be >= 1");
  check(f.hyper.grad_clip >= 0.0 && std::isfinite(f.hyper.grad_clip), "grad_clip must be >= 0");
  check(f.folds >= 2, "k must be >= 2");
  check(f.cov.epsilon > 0.0, "epsilon must be > 0");
  check(f.cov.min_corr_eig > 0.0, "min_corr_eig must be > 0");
  check(f.prior_floor > 0.0 && f.prior_floor < 1.0, "prior_floor out of (0,1)");
  check(f.feature_dim >= 1, "feature_dim must be >= 1");
  for (int h : f.hidden_dims) check(h >= 1, "hidden_dims entries must be >= 1");
  check(f.eval_every >= 1, "eval_every must be >= 1");
  check(b.num_clients >= 1, "num_clients must be >= 1");
  check(b.alpha > 0.0, "alpha must be > 0");
  check(b.scarcity > 0.0 && b.scarcity <= 1.0, "scarcity out of (0,1]");
  check(b.min_client_samples >= 2, "min_client_samples must be >= 2");
  check(s.num_classes >= 1, "num_classes must be >= 1");
  check(s.input_dim >= 1, "input_dim must be >= 1");
  check(s.latent_dim >= 1, "latent_dim must be >= 1");
  check(s.samples_per_class >= 1, "samples_per_class must be >= 1");
  check(s.separation >= 0.0, "separation must be >= 0");
  check(s.lift != LiftKind::identity || s.input_dim >= s.latent_dim,
        "identity lift needs input_dim >= latent_dim");
  check(!c.output_dir.empty(), "output_dir must not be empty");
}

inline ExperimentConfig config_from_json(const nlohmann::json& root) {
  using namespace detail;
  reject_unknown(root, "", {"dataset", "federation", "model", "pfedfda", "seed", "output_dir",
                            "eval_every"});
  if (!root.contains("dataset")) config_fail("missing required key 'dataset'");
  if (!root.contains("federation")) config_fail("missing required key 'federation'");

  ExperimentConfig c;
  auto& f = c.federation;

  const Json& ds = root.at("dataset");
  reject_unknown(ds, "dataset", {"synthetic", "csv", "alpha", "num_clients", "shift", "scarcity",
                                 "split_seed", "min_client_samples"});
  if (ds.contains("synthetic") && ds.contains("csv")) {
    config_fail("dataset: 'synthetic' and 'csv' are mutually exclusive");
  }
  if (ds.contains("csv")) c.dataset.csv_path = get_string(ds, "csv", "dataset", "");
  if (ds.contains("synthetic")) {
    const Json& syn = ds.at("synthetic");
    reject_unknown(syn, "dataset.synthetic", {"num_classes", "input_dim", "latent_dim",
                                              "samples_per_class", "separation", "lift_seed",
                                              "lift"});
    auto& s = c.dataset.synthetic;
    const std::string w = "dataset.synthetic";
    s.num_classes = static_cast<int>(get_int(syn, "num_classes", w, s.num_classes));
    s.input_dim = static_cast<int>(get_int(syn, "input_dim", w, s.input_dim));
    s.latent_dim = static_cast<int>(get_int(syn, "latent_dim", w, s.latent_dim));
    s.samples_per_class = static_cast<int>(get_int(syn, "samples_per_class", w, s.samples_per_class));
    s.separation = get_number(syn, "separation", w, s.separation);
    s.lift_seed = get_seed(syn, "lift_seed", w, s.lift_seed);
    const std::string lift = get_string(syn, "lift", w, lift_name(s.lift));
    if (lift == "tanh") {
      s.lift = LiftKind::tanh_affine;
    } else if (lift == "identity") {
      s.lift = LiftKind::identity;
    } else {
      config_fail("dataset.synthetic.lift must be 'tanh' or 'identity'");
    }
  }
  auto& b = c.dataset.benchmark;
  b.alpha = get_number(ds, "alpha", "dataset", b.alpha);
  b.num_clients = static_cast<int>(get_int(ds, "num_clients", "dataset", b.num_clients));
  b.scarcity = get_number(ds, "scarcity", "dataset", b.scarcity);
  b.min_client_samples =
      static_cast<int>(get_int(ds, "min_client_samples", "dataset", b.min_client_samples));
  if (ds.contains("shift")) {
    const Json& sh = ds.at("shift");
    reject_unknown(sh, "dataset.shift", {"enabled"});
    b.shift = get_bool(sh, "enabled", "dataset.shift", b.shift);
  }
  c.dataset.split_seed = get_seed(ds, "split_seed", "dataset", c.dataset.split_seed);

  const Json& fed = root.at("federation");
  reject_unknown(fed, "federation", {"algorithm", "rounds", "local_epochs", "q", "lr", "momentum",
                                     "weight_decay", "batch_size", "grad_clip"});
  if (!fed.contains("algorithm")) config_fail("missing required key 'federation.algorithm'");
  try {
    f.algorithm = parse_algorithm(get_string(fed, "algorithm", "federation", ""));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    config_fail(e.what());
  }
  f.rounds = static_cast<int>(get_int(fed, "rounds", "federation", f.rounds));
  f.hyper.epochs = static_cast<int>(get_int(fed, "local_epochs", "federation", f.hyper.epochs));
  f.q = get_number(fed, "q", "federation", f.q);
  f.hyper.lr = get_number(fed, "lr", "federation", f.hyper.lr);
  f.hyper.momentum = get_number(fed, "momentum", "federation", f.hyper.momentum);
  f.hyper.weight_decay = get_number(fed, "weight_decay", "federation", f.hyper.weight_decay);
  f.hyper.batch_size = static_cast<int>(get_int(fed, "batch_size", "federation", f.hyper.batch_size));
  f.hyper.grad_clip = get_number(fed, "grad_clip", "federation", f.hyper.grad_clip);

  if (root.contains("model")) {
    const Json& m = root.at("model");
    reject_unknown(m, "model", {"hidden_dims", "feature_dim"});
    if (m.contains("hidden_dims")) {
      const Json& h = m.at("hidden_dims");
      if (!h.is_array()) config_fail("model.hidden_dims must be an array of integers");
      f.hidden_dims.clear();
      for (const Json& v : h) {
        if (!v.is_number_integer()) config_fail("model.hidden_dims must be an array of integers");
        f.hidden_dims.push_back(v.get<int>());
      }
    }
    f.feature_dim = static_cast<int>(get_int(m, "feature_dim", "model", f.feature_dim));
  }

  if (root.contains("pfedfda")) {
    const Json& p = root.at("pfedfda");
    reject_unknown(p, "pfedfda", {"beta_mode", "k", "epsilon", "min_corr_eig", "prior_floor"});
    try {
      f.beta_mode = parse_beta_mode(get_string(p, "beta_mode", "pfedfda", to_string(f.beta_mode)));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      config_fail(e.what());
    }
    f.folds = static_cast<int>(get_int(p, "k", "pfedfda", f.folds));
    f.cov.epsilon = get_number(p, "epsilon", "pfedfda", f.cov.epsilon);
    f.cov.min_corr_eig = get_number(p, "min_corr_eig", "pfedfda", f.cov.min_corr_eig);
    f.prior_floor = get_number(p, "prior_floor", "pfedfda", f.prior_floor);
  }

  f.seed = get_seed(root, "seed", "", f.seed);
  c.output_dir = get_string(root, "output_dir", "", c.output_dir);
  f.eval_every = static_cast<int>(get_int(root, "eval_every", "", f.eval_every));
  validate(c);
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using detail::Json;
  const auto& f = c.federation;
  const auto& s = c.dataset.synthetic;
  const auto& b = c.dataset.benchmark;
  Json ds = {{"alpha", b.alpha},
             {"num_clients", b.num_clients},
             {"shift", {{"enabled", b.shift}}},
             {"scarcity", b.scarcity},
             {"split_seed", c.dataset.split_seed},
             {"min_client_samples", b.min_client_samples}};
  if (c.dataset.csv_path) {
    ds["csv"] = *c.dataset.csv_path;
  } else {
    ds["synthetic"] = {{"num_classes", s.num_classes},
                       {"input_dim", s.input_dim},
                       {"latent_dim", s.latent_dim},
                       {"samples_per_class", s.samples_per_class},
                       {"separation", s.separation},
                       {"lift_seed", s.lift_seed},
                       {"lift", detail::lift_name(s.lift)}};
  }
  return Json{
      {"dataset", ds},
      {"federation",
       {{"algorithm", to_string(f.algorithm)},
        {"rounds", f.rounds},
        {"local_epochs", f.hyper.epochs},
        {"q", f.q},
        {"lr", f.hyper.lr},
        {"momentum", f.hyper.momentum},
        {"weight_decay", f.hyper.weight_decay},
        {"batch_size", f.hyper.batch_size},
        {"grad_clip", f.hyper.grad_clip}}},
      {"model", {{"hidden_dims", f.hidden_dims}, {"feature_dim", f.feature_dim}}},
      {"pfedfda",
       {{"beta_mode", to_string(f.beta_mode)},
        {"k", f.folds},
        {"epsilon", f.cov.epsilon},
        {"min_corr_eig", f.cov.min_corr_eig},
        {"prior_floor", f.prior_floor}}},
      {"seed", f.seed},
      {"output_dir", c.output_dir},
      {"eval_every", f.eval_every}};
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    detail::config_fail("invalid JSON: ", e.what());
  }
  return config_from_json(root);
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) detail::config_fail("cannot open config file '", path, "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str());
}

}  // namespace fedfda
