#include "shf/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace shf {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw config_error("unknown key '" + it.key() + "' in " + where);
}

Vec number_or_array(const json& j, const std::string& where) {
  if (j.is_number()) return Vec::Constant(1, j.get<double>());
  if (j.is_array()) {
    Vec v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) {
      const auto& e = j[static_cast<std::size_t>(i)];
      if (!e.is_number()) throw config_error(where + " must be numeric");
      v(i) = e.get<double>();
    }
    return v;
  }
  throw config_error(where + " must be a number or an array of numbers");
}

}  // namespace

std::uint64_t config_hash(const std::string& json_text) {
  // canonical: nlohmann keeps keys sorted, so dump() is order-independent
  return fnv1a64(json::parse(json_text).dump());
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }

  reject_unknown(j, {"model", "data", "coreset", "flow", "train", "reference",
                     "eval", "output_dir"},
                 "config root");

  RunConfig cfg;

  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"kind", "c"}, "model");
    if (m.contains("kind")) cfg.model.kind = m["kind"];
    if (cfg.model.kind != "gaussian_location" && cfg.model.kind != "linreg" &&
        cfg.model.kind != "logreg")
      throw config_error("model.kind must be gaussian_location, linreg or logreg");
    if (m.contains("c")) cfg.model.c = m["c"];
    if (cfg.model.c <= 0) throw config_error("model.c must be positive");
  }

  if (!j.contains("data")) throw config_error("config requires a data section");
  {
    const auto& d = j["data"];
    reject_unknown(d, {"csv", "response", "header", "response_index",
                       "standardize", "synthetic"},
                   "data");
    const bool has_csv = d.contains("csv");
    const bool has_syn = d.contains("synthetic");
    if (has_csv == has_syn)
      throw config_error("data must specify exactly one of csv / synthetic");
    if (has_csv) {
      cfg.data.csv_path = d["csv"];
      if (d.contains("response")) cfg.data.csv.response_name = d["response"];
      if (d.contains("response_index")) {
        cfg.data.csv.response_index = d["response_index"];
        cfg.data.csv.response_name.clear();
      }
      if (d.contains("header")) cfg.data.csv.has_header = d["header"];
      if (d.contains("standardize"))
        cfg.data.csv.standardize_features = d["standardize"];
    } else {
      const auto& s = d["synthetic"];
      reject_unknown(s, {"n", "p", "d", "seed"}, "data.synthetic");
      cfg.data.synthetic = true;
      if (!s.contains("n")) throw config_error("data.synthetic requires n");
      cfg.data.n = s["n"];
      if (s.contains("p")) cfg.data.p = s["p"];
      if (s.contains("d")) cfg.data.p = s["d"];
      if (s.contains("seed")) cfg.data.seed = s["seed"];
      if (cfg.data.n < 1 || cfg.data.p < 1)
        throw config_error("synthetic data needs n >= 1 and p/d >= 1");
    }
  }

  if (j.contains("coreset")) {
    const auto& c = j["coreset"];
    reject_unknown(c, {"size", "seed", "balance"}, "coreset");
    if (c.contains("size")) cfg.coreset.size = c["size"];
    if (c.contains("seed")) cfg.coreset.seed = c["seed"];
    if (c.contains("balance")) cfg.coreset.balance = c["balance"];
    if (cfg.coreset.size < 1) throw config_error("coreset.size must be >= 1");
  }

  if (j.contains("flow")) {
    const auto& f = j["flow"];
    reject_unknown(f, {"kind", "n_blocks", "leapfrogs_per_block",
                       "initial_step_size", "step_size_overrides", "refreshment"},
                   "flow");
    if (f.contains("kind")) cfg.flow.kind = f["kind"];
    if (cfg.flow.kind != "shf" && cfg.flow.kind != "tempered")
      throw config_error("flow.kind must be shf or tempered");
    if (f.contains("n_blocks")) cfg.flow.n_blocks = f["n_blocks"];
    if (f.contains("leapfrogs_per_block"))
      cfg.flow.leapfrogs_per_block = f["leapfrogs_per_block"];
    if (cfg.flow.n_blocks < 1 || cfg.flow.leapfrogs_per_block < 1)
      throw config_error("flow needs n_blocks >= 1 and leapfrogs_per_block >= 1");
    if (f.contains("initial_step_size"))
      cfg.flow.initial_step_size = f["initial_step_size"];
    if (cfg.flow.initial_step_size <= 0)
      throw config_error("flow.initial_step_size must be positive");
    if (f.contains("step_size_overrides")) {
      for (const auto& o : f["step_size_overrides"]) {
        reject_unknown(o, {"dim", "value"}, "flow.step_size_overrides");
        if (!o.contains("dim") || !o.contains("value"))
          throw config_error("step size override needs dim and value");
        cfg.flow.step_size_overrides.emplace_back(o["dim"].get<Index>(),
                                                  o["value"].get<double>());
      }
    }
    if (f.contains("refreshment")) {
      const std::string r = f["refreshment"];
      if (r == "marginal")
        cfg.flow.refreshment = RefreshKind::marginal;
      else if (r == "conditional")
        cfg.flow.refreshment = RefreshKind::conditional;
      else
        throw config_error("flow.refreshment must be marginal or conditional");
    }
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, {"n_iters", "optimizer", "learning_rate", "adam_betas",
                       "adam_epsilon", "minibatch", "eval_every", "seed",
                       "warm_start_batch", "n_mc_eval", "elbo_draws_per_step",
                       "train_weights"},
                   "train");
    if (t.contains("n_iters")) cfg.train.n_iters = t["n_iters"];
    if (t.contains("optimizer")) {
      const std::string o = t["optimizer"];
      if (o == "adam")
        cfg.train.optimizer = Optimizer::adam;
      else if (o == "sgd")
        cfg.train.optimizer = Optimizer::sgd;
      else
        throw config_error("train.optimizer must be adam or sgd");
    }
    if (t.contains("learning_rate")) cfg.train.learning_rate = t["learning_rate"];
    if (t.contains("adam_betas")) {
      const auto& b = t["adam_betas"];
      if (!b.is_array() || b.size() != 2)
        throw config_error("train.adam_betas must be a pair");
      cfg.train.adam_betas = {b[0].get<double>(), b[1].get<double>()};
    }
    if (t.contains("adam_epsilon")) cfg.train.adam_epsilon = t["adam_epsilon"];
    if (t.contains("minibatch")) cfg.train.minibatch = t["minibatch"].get<Index>();
    if (t.contains("eval_every")) cfg.train.eval_every = t["eval_every"];
    if (t.contains("seed")) cfg.train.rng_seed = t["seed"];
    if (t.contains("warm_start_batch"))
      cfg.train.warm_start_batch = t["warm_start_batch"].get<Index>();
    if (t.contains("n_mc_eval")) cfg.train.n_mc_eval = t["n_mc_eval"].get<Index>();
    if (t.contains("elbo_draws_per_step"))
      cfg.train.elbo_draws_per_step = t["elbo_draws_per_step"];
    if (t.contains("train_weights")) cfg.train.train_weights = t["train_weights"];
  }

  if (j.contains("reference")) {
    const auto& r = j["reference"];
    reject_unknown(r, {"position_mean", "position_cov_diag"}, "reference");
    if (r.contains("position_mean"))
      cfg.reference.position_mean = number_or_array(r["position_mean"],
                                                    "reference.position_mean");
    if (r.contains("position_cov_diag"))
      cfg.reference.position_diag_cov =
          number_or_array(r["position_cov_diag"], "reference.position_cov_diag");
  }

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown(e, {"metrics", "n_samples", "seed", "reference_summary",
                       "step_trace_mc"},
                   "eval");
    if (e.contains("metrics"))
      cfg.eval.metrics = e["metrics"].get<std::vector<std::string>>();
    for (const auto& m : cfg.eval.metrics)
      if (m != "gaussian_kl" && m != "mean_err" && m != "cov_err" &&
          m != "energy" && m != "ksd" && m != "elbo")
        throw config_error("unknown metric '" + m + "'");
    if (e.contains("n_samples")) cfg.eval.n_samples = e["n_samples"].get<Index>();
    if (e.contains("seed")) cfg.eval.seed = e["seed"];
    if (e.contains("reference_summary"))
      cfg.eval.reference_summary = e["reference_summary"];
    if (e.contains("step_trace_mc"))
      cfg.eval.step_trace_mc = e["step_trace_mc"].get<Index>();
  }

  if (j.contains("output_dir")) cfg.output_dir = j["output_dir"];
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

RunInputs build_inputs(const RunConfig& cfg) {
  RunInputs inputs;
  if (cfg.data.synthetic) {
    if (cfg.model.kind == "gaussian_location")
      inputs.data = make_synthetic_gaussian(cfg.data.n, cfg.data.p, cfg.model.c,
                                            cfg.data.seed);
    else if (cfg.model.kind == "linreg")
      inputs.data = make_synthetic_linreg(cfg.data.n, cfg.data.p, cfg.data.seed);
    else
      inputs.data = make_synthetic_logreg(cfg.data.n, cfg.data.p, cfg.data.seed);
  } else {
    inputs.data = read_csv(cfg.data.csv_path, cfg.data.csv);
  }

  if (cfg.model.kind == "gaussian_location")
    inputs.model = make_gaussian_location(inputs.data, cfg.model.c);
  else if (cfg.model.kind == "linreg")
    inputs.model = make_linreg(inputs.data);
  else
    inputs.model = make_logreg(inputs.data);

  const Index d = inputs.model.dim;
  auto broadcast = [d](const Vec& v, double fallback) {
    if (v.size() == 0) return Vec::Constant(d, fallback).eval();
    if (v.size() == 1) return Vec::Constant(d, v(0)).eval();
    if (v.size() != d)
      throw config_error("reference vector length does not match dimension");
    return v;
  };
  inputs.reference.position_mean = broadcast(cfg.reference.position_mean, 0.0);
  inputs.reference.position_diag_cov =
      broadcast(cfg.reference.position_diag_cov, 1.0);
  inputs.reference.validate();
  return inputs;
}

TrainConfig build_train_config(const RunConfig& cfg, Index dim) {
  TrainConfig tc = cfg.train;
  tc.n_blocks = cfg.flow.n_blocks;
  tc.leapfrogs_per_block = cfg.flow.leapfrogs_per_block;
  tc.refresh_kind = cfg.flow.refreshment;
  Vec eps = Vec::Constant(dim, cfg.flow.initial_step_size);
  for (const auto& [i, v] : cfg.flow.step_size_overrides) {
    if (i < 0 || i >= dim)
      throw config_error("step size override dimension out of range");
    if (v <= 0) throw config_error("step size override must be positive");
    eps(i) = v;
  }
  tc.initial_step_sizes = eps;
  return tc;
}

}  // namespace shf
