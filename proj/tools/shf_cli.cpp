// Batch driver: data generation/ingestion, training, sampling, evaluation,
// and theory checks. Every command is a pure function of (config, seeds) to
// output bytes, modulo wall-time manifest fields.
#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "shf/baselines.hpp"
#include "shf/checkpoint.hpp"
#include "shf/config.hpp"
#include "shf/elbo.hpp"
#include "shf/theory.hpp"
#include "shf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

json vec_to_json(const Vec& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

void write_manifest(const std::string& path, const std::string& command,
                    std::uint64_t cfg_hash, const json& seeds,
                    double wall_time_s) {
  json m;
  m["artifact_version"] = kArtifactVersion;
  m["command"] = command;
  m["config_hash"] = cfg_hash;
  m["seeds"] = seeds;
  m["wall_time_s"] = wall_time_s;
  std::ofstream out(path);
  out << m.dump(2) << "\n";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string kind = "gaussian";
  Index n = 1000;
  Index dim = 2;
  double c = 1.0;
  std::uint64_t seed = 0;
  std::string out = "data.csv";
  bool no_header = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  json info;
  info["kind"] = a.kind;
  info["n"] = a.n;
  info["dim"] = a.dim;
  info["seed"] = a.seed;

  if (a.n == 0) {
    std::cerr << "gen-data: n = 0, writing a header-only file\n";
    std::ofstream out(a.out);
    if (!a.no_header) {
      for (Index j = 0; j < a.dim; ++j) out << "x" << (j + 1) << ",";
      out << "y\n";
    }
  } else if (a.kind == "gaussian") {
    Vec theta_star;
    Dataset data = make_synthetic_gaussian(a.n, a.dim, a.c, a.seed, &theta_star);
    info["c"] = a.c;
    info["theta_star"] = vec_to_json(theta_star);
    write_csv(a.out, data, !a.no_header);
  } else if (a.kind == "linreg") {
    Vec beta_star;
    double sigma2 = 0.0;
    Dataset data = make_synthetic_linreg(a.n, a.dim, a.seed, &beta_star, &sigma2);
    info["beta_star"] = vec_to_json(beta_star);
    info["sigma2_star"] = sigma2;
    write_csv(a.out, data, !a.no_header);
  } else if (a.kind == "logreg") {
    Vec beta_star;
    Dataset data = make_synthetic_logreg(a.n, a.dim, a.seed, &beta_star);
    info["beta_star"] = vec_to_json(beta_star);
    write_csv(a.out, data, !a.no_header);
  } else {
    throw config_error("unknown data kind: " + a.kind);
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json seeds;
  seeds["data"] = a.seed;
  write_manifest(a.out + ".manifest.json", "gen-data", fnv1a64(info.dump()),
                 seeds, wall);
  return kExitOk;
}

// -------------------------------------------------------------------- train

int run_single_training(const RunConfig& cfg, const std::string& cfg_text,
                        const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  RunInputs inputs = build_inputs(cfg);

  const Dataset* balance = cfg.coreset.balance ? &inputs.data : nullptr;
  Coreset coreset = select_coreset(inputs.data.n_rows(), cfg.coreset.size,
                                   cfg.coreset.seed, balance);
  TrainConfig tc = build_train_config(cfg, inputs.model.dim);

  Checkpoint ckpt;
  ckpt.coreset = coreset;
  ckpt.reference = inputs.reference;
  ckpt.config_hash = config_hash(cfg_text);
  ckpt.seed = tc.rng_seed;

  TrainTrace trace;
  if (cfg.flow.kind == "tempered") {
    auto [params, tr] = fit_tempered(inputs.model, coreset, inputs.reference, tc);
    ckpt.flow_kind = "tempered";
    ckpt.tempered = std::move(params);
    trace = std::move(tr);
  } else {
    auto [params, tr] = fit(inputs.model, coreset, inputs.reference, tc);
    ckpt.flow_kind = "shf";
    ckpt.params = std::move(params);
    trace = std::move(tr);
  }

  save_checkpoint((out_dir / "checkpoint.json").string(), ckpt);
  trace.write_csv((out_dir / "trace.csv").string());

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json seeds;
  seeds["train"] = tc.rng_seed;
  seeds["coreset"] = cfg.coreset.seed;
  seeds["data"] = cfg.data.seed;
  write_manifest((out_dir / "manifest.json").string(), "train",
                 config_hash(cfg_text), seeds, wall);
  std::cout << "trained " << cfg.flow.kind << " flow: best snapshot "
            << trace.best_snapshot_id << ", skipped steps "
            << trace.skipped_steps << ", outputs in " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              int replicates) {
  const std::string cfg_text = read_file(config_path);
  RunConfig cfg = parse_run_config(cfg_text);
  if (!out_override.empty()) cfg.output_dir = out_override;

  if (replicates <= 1)
    return run_single_training(cfg, cfg_text, cfg.output_dir);

  // independent seeded runs fanned out across workers
  std::vector<std::thread> workers;
  std::vector<int> codes(replicates, kExitOk);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned pool = std::min<unsigned>(hw, static_cast<unsigned>(replicates));
  std::atomic<int> next{0};
  for (unsigned w = 0; w < pool; ++w) {
    workers.emplace_back([&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= replicates) return;
        RunConfig rcfg = cfg;
        rcfg.train.rng_seed = cfg.train.rng_seed + i;
        rcfg.coreset.seed = cfg.coreset.seed + i;
        try {
          codes[i] = run_single_training(
              rcfg, cfg_text,
              fs::path(cfg.output_dir) / ("rep_" + std::to_string(i)));
        } catch (const std::exception& e) {
          std::cerr << "replicate " << i << " failed: " << e.what() << "\n";
          codes[i] = kExitNumerical;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (int c : codes)
    if (c != kExitOk) return c;
  return kExitOk;
}

// ------------------------------------------------------------------- sample

int cmd_sample(const std::string& ckpt_path, const std::string& config_path,
               Index n, std::uint64_t seed, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::string cfg_text = read_file(config_path);
  RunConfig cfg = parse_run_config(cfg_text);
  RunInputs inputs = build_inputs(cfg);
  const Index d = inputs.model.dim;

  std::ofstream os(out);
  if (!os) throw config_error("cannot open output: " + out);
  os.precision(17);
  for (Index j = 0; j < d; ++j) os << "theta" << (j + 1) << ",";
  os << "log_density\n";

  std::mt19937_64 rng(seed);
  for (Index i = 0; i < n; ++i) {
    const PhaseState initial = ckpt.reference.sample(rng);
    FlowOutput fo = ckpt.flow_kind == "tempered"
                        ? tempered_flow_forward(inputs.model, ckpt.coreset,
                                                ckpt.tempered, initial)
                        : forward(inputs.model, ckpt.params, ckpt.coreset, initial);
    // joint flow density at the pushed-forward point; momentum dropped
    const double ld = ckpt.reference.log_density(initial) - fo.log_jacobian;
    for (Index j = 0; j < d; ++j) os << fo.final_state.position(j) << ",";
    os << ld << "\n";
  }
  os.close();

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json seeds;
  seeds["sample"] = seed;
  write_manifest(out + ".manifest.json", "sample", ckpt.config_hash, seeds, wall);
  return kExitOk;
}

// --------------------------------------------------------------------- eval

GaussianSummary load_reference_summary(const std::string& path) {
  json j = json::parse(read_file(path));
  GaussianSummary s;
  const auto& mean = j.at("mean");
  s.mean.resize(static_cast<Index>(mean.size()));
  for (Index i = 0; i < s.mean.size(); ++i)
    s.mean(i) = mean[static_cast<std::size_t>(i)];
  const auto& cov = j.at("cov");
  const Index d = s.mean.size();
  s.covariance.resize(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index k = 0; k < d; ++k)
      s.covariance(i, k) =
          cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  return s;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path,
             const std::string& reference_path, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::string cfg_text = read_file(config_path);
  RunConfig cfg = parse_run_config(cfg_text);
  RunInputs inputs = build_inputs(cfg);
  const Index d = inputs.model.dim;

  // reference summary: closed form for the gaussian model, a file otherwise
  GaussianSummary ref;
  std::string ref_source;
  if (!reference_path.empty()) {
    ref = load_reference_summary(reference_path);
    ref_source = reference_path;
  } else if (cfg.model.kind == "gaussian_location") {
    ref = exact_gaussian_posteriors(inputs.data.features, cfg.model.c, {},
                                    Vec::Zero(0))
              .exact;
    ref_source = "closed-form";
  } else {
    throw config_error(
        "eval needs --reference <summary.json> for non-Gaussian models");
  }
  if (ref.dim() != d) throw config_error("reference dimension mismatch");

  const Index n_samples = cfg.eval.n_samples;
  std::mt19937_64 rng(cfg.eval.seed);
  Mat samples(n_samples, d);
  for (Index i = 0; i < n_samples; ++i) {
    const PhaseState initial = ckpt.reference.sample(rng);
    FlowOutput fo = ckpt.flow_kind == "tempered"
                        ? tempered_flow_forward(inputs.model, ckpt.coreset,
                                                ckpt.tempered, initial)
                        : forward(inputs.model, ckpt.params, ckpt.coreset, initial);
    samples.row(i) = fo.final_state.position.transpose();
  }

  json metrics;
  const GaussianSummary fitted = sample_summary(samples);
  for (const auto& name : cfg.eval.metrics) {
    if (name == "gaussian_kl") {
      metrics["gaussian_kl"] = gaussian_kl(fitted, ref);
    } else if (name == "mean_err" || name == "cov_err") {
      const auto [me, ce] = relative_errors(fitted, ref);
      metrics[name] = name == "mean_err" ? me : ce;
    } else if (name == "energy") {
      // reference samples drawn from the Gaussian reference summary
      Eigen::LLT<Mat> llt(ref.covariance);
      if (llt.info() != Eigen::Success)
        throw decomposition_error("reference covariance is not PD");
      const Mat chol = llt.matrixL();
      std::mt19937_64 rng2(split_seed(cfg.eval.seed, 1));
      std::normal_distribution<double> normal(0.0, 1.0);
      Mat ref_samples(n_samples, d);
      for (Index i = 0; i < n_samples; ++i) {
        Vec z(d);
        for (Index j = 0; j < d; ++j) z(j) = normal(rng2);
        ref_samples.row(i) = (ref.mean + chol * z).transpose();
      }
      metrics["energy"] = energy_distance(samples, ref_samples);
    } else if (name == "ksd") {
      auto score = [&](const Vec& theta) {
        Vec g = inputs.model.grad_log_prior(theta);
        for (Index nn = 0; nn < inputs.model.n_data; ++nn)
          g += inputs.model.grad_potential(nn, theta);
        return g;
      };
      metrics["ksd"] = ksd_imq(samples, score);
    } else if (name == "elbo") {
      if (ckpt.flow_kind == "tempered") {
        const auto [mean, se] = tempered_exact_elbo(
            inputs.model, ckpt.tempered, ckpt.coreset, ckpt.reference,
            cfg.train.n_mc_eval, split_seed(cfg.eval.seed, 2));
        metrics["elbo"] = mean;
        metrics["elbo_stderr"] = se;
      } else {
        const auto [mean, se] =
            exact_elbo(inputs.model, ckpt.params, ckpt.coreset, ckpt.reference,
                       cfg.train.n_mc_eval, split_seed(cfg.eval.seed, 2));
        metrics["elbo"] = mean;
        metrics["elbo_stderr"] = se;
      }
    }
  }

  json report;
  // per-step ELBO trace (sparse flows only; the tempered baseline has no
  // refreshment steps to annotate)
  if (ckpt.flow_kind == "shf") {
    auto trace = elbo_step_trace(inputs.model, ckpt.params, ckpt.coreset,
                                 ckpt.reference, cfg.eval.step_trace_mc,
                                 split_seed(cfg.eval.seed, 3));
    const std::string trace_path = out + ".elbo_steps.csv";
    std::ofstream ts(trace_path);
    ts.precision(17);
    ts << "step,kind,elbo,stderr\n";
    for (const auto& pt : trace)
      ts << pt.step_index << "," << pt.kind << "," << pt.elbo_mean << ","
         << pt.elbo_stderr << "\n";
    report["elbo_step_trace"] = trace_path;
  }

  report["metrics"] = metrics;
  report["n_samples"] = n_samples;
  report["seed"] = cfg.eval.seed;
  report["reference_source"] = ref_source;
  report["flow_kind"] = ckpt.flow_kind;
  report["artifact_version"] = kArtifactVersion;
  report["config_hash"] = ckpt.config_hash;
  report["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream os(out);
  os << report.dump(2) << "\n";
  std::cout << report["metrics"].dump(2) << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- theory

int cmd_theory(const std::string& check, double mu, double sigma, Index d,
               Index n, const std::string& m_list_str, Index trials,
               std::uint64_t seed, Index grid_n, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  json report;
  report["check_name"] = check;
  json config;
  bool pass = false;
  double margin = 0.0;

  if (check == "lower-bound") {
    auto res = tempered_kl_grid_search(mu, sigma, grid_n, grid_n, grid_n);
    auto unit = tempered_kl_grid_search(mu, sigma, grid_n, 1, 2 * grid_n, 1.0, 1.0);
    margin = res.margin;
    pass = res.margin >= -1e-9;
    config["mu"] = mu;
    config["sigma"] = sigma;
    config["grid_points"] = res.n_points;
    report["min_kl"] = res.min_kl;
    report["bound"] = res.bound;
    report["argmin"] = {{"t", res.argmin_t},
                        {"beta", res.argmin_beta},
                        {"gamma", res.argmin_gamma}};
    report["unit_beta_slice"] = {{"min_kl", unit.min_kl},
                                 {"margin", unit.margin},
                                 {"pass", unit.margin >= -1e-9}};
  } else if (check == "refresh-identity") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      Mat a(2 * d, 2 * d);
      for (Index i = 0; i < 2 * d; ++i)
        for (Index j = 0; j < 2 * d; ++j) a(i, j) = 0.4 * normal(rng);
      JointGaussian joint;
      joint.mean.resize(2 * d);
      for (Index i = 0; i < 2 * d; ++i) joint.mean(i) = normal(rng);
      joint.cov = a * a.transpose() + Mat::Identity(2 * d, 2 * d);
      GaussianSummary target{Vec::Zero(d), Mat::Identity(d, d)};
      auto rm = refresh_kl_identity_check(joint, target, RefreshCheckKind::marginal);
      auto rc =
          refresh_kl_identity_check(joint, target, RefreshCheckKind::conditional);
      worst = std::max({worst, std::abs(rm.lhs - rm.rhs),
                        std::abs(rc.lhs - rc.theta_kl)});
    }
    margin = 1e-10 - worst;
    pass = worst < 1e-10;
    config["d"] = d;
    config["seed"] = seed;
    report["worst_identity_gap"] = worst;
  } else if (check == "hull-curve") {
    std::vector<Index> m_list;
    std::stringstream ss(m_list_str);
    std::string tok;
    while (std::getline(ss, tok, ',')) m_list.push_back(std::stoll(tok));
    if (m_list.empty()) throw config_error("empty M list");
    auto curve = subsample_exactness_curve(d, n, m_list, trials, seed);
    json pts = json::array();
    bool monotone = true;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      pts.push_back({{"M", curve[i].m},
                     {"probability", curve[i].probability},
                     {"wilson_low", curve[i].wilson_low},
                     {"wilson_high", curve[i].wilson_high}});
      for (std::size_t j = i + 1; j < curve.size(); ++j)
        if (curve[i].wilson_low > curve[j].wilson_high) monotone = false;
    }
    report["curve"] = pts;
    pass = monotone;
    margin = monotone ? 0.0 : -1.0;
    config["d"] = d;
    config["N"] = n;
    config["trials"] = trials;
    config["seed"] = seed;
  } else if (check == "hull-kl") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Index bad = 0;
    for (Index trial = 0; trial < trials; ++trial) {
      const Index dd = 1 + trial % 3;
      const Index nn = 6;
      Mat points(nn, dd);
      for (Index i = 0; i < nn; ++i)
        for (Index j = 0; j < dd; ++j) points(i, j) = normal(rng);
      const Index m = 2 + trial % 3;
      std::vector<Index> idx;
      for (Index i = 0; i < m; ++i) idx.push_back(i);
      Mat sub = points.topRows(m);
      const Vec xbar = points.colwise().mean().transpose();
      const bool contains = hull_contains(sub, xbar);
      const double kl = optimal_coreset_kl(points, 1.0, idx).kl;
      if (contains && kl >= 1e-8) ++bad;
      if (!contains && kl < 1e-8) ++bad;
    }
    pass = bad == 0;
    margin = -static_cast<double>(bad);
    config["instances"] = trials;
    config["seed"] = seed;
    report["disagreements"] = bad;
  } else {
    throw config_error("unknown theory check: " + check);
  }

  report["status"] = pass ? "pass" : "fail";
  report["margin"] = margin;
  report["config"] = config;
  report["artifact_version"] = kArtifactVersion;
  report["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string text = report.dump(2);
  if (!out.empty()) {
    std::ofstream os(out);
    os << text << "\n";
  }
  std::cout << text << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse Hamiltonian flow driver"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  cmd_gen->add_option("--kind", gen.kind, "gaussian | linreg | logreg");
  cmd_gen->add_option("--n", gen.n, "number of rows");
  cmd_gen->add_option("--d,--p", gen.dim, "data dimension (features)");
  cmd_gen->add_option("--c", gen.c, "observation variance (gaussian kind)");
  cmd_gen->add_option("--seed", gen.seed, "rng seed");
  cmd_gen->add_option("--out", gen.out, "output CSV path");
  cmd_gen->add_flag("--no-header", gen.no_header, "omit the header row");

  std::string train_config, train_out;
  int replicates = 1;
  auto* cmd_tr = app.add_subcommand("train", "train a flow from a config file");
  cmd_tr->add_option("--config", train_config, "run config JSON")->required();
  cmd_tr->add_option("--output-dir", train_out, "override config output_dir");
  cmd_tr->add_option("--replicates", replicates,
                     "fan out k independent seeded runs");

  std::string sm_ckpt, sm_config, sm_out = "samples.csv";
  Index sm_n = 100;
  std::uint64_t sm_seed = 0;
  auto* cmd_sm = app.add_subcommand("sample", "draw from a trained flow");
  cmd_sm->add_option("--checkpoint", sm_ckpt, "checkpoint JSON")->required();
  cmd_sm->add_option("--config", sm_config, "run config JSON (data + model)")
      ->required();
  cmd_sm->add_option("--n", sm_n, "number of samples");
  cmd_sm->add_option("--seed", sm_seed, "rng seed");
  cmd_sm->add_option("--out", sm_out, "output CSV path");

  std::string ev_ckpt, ev_config, ev_ref, ev_out = "report.json";
  auto* cmd_ev = app.add_subcommand("eval", "evaluate a trained flow");
  cmd_ev->add_option("--checkpoint", ev_ckpt, "checkpoint JSON")->required();
  cmd_ev->add_option("--config", ev_config, "run config JSON")->required();
  cmd_ev->add_option("--reference", ev_ref,
                     "reference summary JSON (mean/cov); required for "
                     "non-Gaussian models");
  cmd_ev->add_option("--out", ev_out, "output report path");

  std::string th_check, th_mlist = "10,20,40,60", th_out;
  double th_mu = 3.0, th_sigma = 0.5;
  Index th_d = 2, th_n = 1024, th_trials = 200, th_grid = 50;
  std::uint64_t th_seed = 0;
  auto* cmd_th = app.add_subcommand("theory", "run a numerical theory check");
  cmd_th->add_option("--check", th_check,
                     "lower-bound | refresh-identity | hull-curve | hull-kl")
      ->required();
  cmd_th->add_option("--mu", th_mu, "initial center (lower-bound)");
  cmd_th->add_option("--sigma", th_sigma, "target std (lower-bound)");
  cmd_th->add_option("--d", th_d, "dimension");
  cmd_th->add_option("--N", th_n, "dataset size (hull-curve)");
  cmd_th->add_option("--M-list", th_mlist, "comma-separated subsample sizes");
  cmd_th->add_option("--trials", th_trials, "Monte-Carlo trials / instances");
  cmd_th->add_option("--seed", th_seed, "rng seed");
  cmd_th->add_option("--grid", th_grid, "grid points per axis (lower-bound)");
  cmd_th->add_option("--out", th_out, "write the JSON report here too");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) return cmd_gen_data(gen);
    if (cmd_tr->parsed()) return cmd_train(train_config, train_out, replicates);
    if (cmd_sm->parsed())
      return cmd_sample(sm_ckpt, sm_config, sm_n, sm_seed, sm_out);
    if (cmd_ev->parsed()) return cmd_eval(ev_ckpt, ev_config, ev_ref, ev_out);
    if (cmd_th->parsed())
      return cmd_theory(th_check, th_mu, th_sigma, th_d, th_n, th_mlist,
                        th_trials, th_seed, th_grid, th_out);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const invalid_parameter& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const invalid_data& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const divergence_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
