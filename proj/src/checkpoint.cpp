#include "shf/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace shf {

namespace {

using nlohmann::json;

json vec_to_json(const Vec& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vec vec_from_json(const json& arr) {
  Vec v(static_cast<Index>(arr.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = arr[static_cast<std::size_t>(i)];
  return v;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i)));
  return rows;
}

Mat mat_from_json(const json& rows) {
  const Index r = static_cast<Index>(rows.size());
  if (r == 0) return Mat(0, 0);
  const Index c = static_cast<Index>(rows[0].size());
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    m.row(i) = vec_from_json(rows[static_cast<std::size_t>(i)]).transpose();
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json j;
  j["version"] = ckpt.version;
  j["artifact_version"] = kArtifactVersion;
  j["flow_kind"] = ckpt.flow_kind;
  j["config_hash"] = ckpt.config_hash;
  j["seed"] = ckpt.seed;

  json coreset;
  coreset["indices"] = ckpt.coreset.indices;
  coreset["weights"] = vec_to_json(ckpt.coreset.weights);
  j["coreset"] = coreset;

  json ref;
  ref["position_mean"] = vec_to_json(ckpt.reference.position_mean);
  ref["position_diag_cov"] = vec_to_json(ckpt.reference.position_diag_cov);
  j["reference"] = ref;

  if (ckpt.flow_kind == "tempered") {
    json p;
    p["log_weights"] = vec_to_json(ckpt.tempered.log_weights);
    p["log_step_sizes"] = vec_to_json(ckpt.tempered.log_step_sizes);
    p["alphas"] = vec_to_json(ckpt.tempered.schedule.alphas);
    p["leapfrogs_per_block"] = ckpt.tempered.leapfrogs_per_block;
    j["tempered_params"] = p;
  } else {
    json p;
    p["log_weights"] = vec_to_json(ckpt.params.log_weights);
    p["log_step_sizes"] = vec_to_json(ckpt.params.log_step_sizes);
    p["leapfrogs_per_block"] = ckpt.params.leapfrogs_per_block;
    p["refresh_kind"] = ckpt.params.refresh_kind == RefreshKind::conditional
                            ? "conditional"
                            : "marginal";
    json refreshments = json::array();
    for (const auto& r : ckpt.params.refreshments) {
      json rr;
      rr["shift"] = vec_to_json(r.shift);
      rr["log_diag_precision"] = vec_to_json(r.log_diag_precision);
      refreshments.push_back(rr);
    }
    p["refreshments"] = refreshments;
    json conditional = json::array();
    for (const auto& c : ckpt.params.conditional) {
      json cc;
      cc["mu_theta"] = vec_to_json(c.mu_theta);
      cc["mu_rho"] = vec_to_json(c.mu_rho);
      cc["sigma_tt"] = mat_to_json(c.sigma_tt);
      cc["sigma_tr"] = mat_to_json(c.sigma_tr);
      cc["sigma_rr"] = mat_to_json(c.sigma_rr);
      conditional.push_back(cc);
    }
    p["conditional"] = conditional;
    j["params"] = p;
  }

  std::ofstream out(path);
  if (!out) throw invalid_parameter("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_parameter("cannot open checkpoint: " + path);
  json j;
  in >> j;
  Checkpoint ckpt;
  ckpt.version = j.at("version");
  if (ckpt.version != 1)
    throw invalid_parameter("unsupported checkpoint version " +
                            std::to_string(ckpt.version));
  ckpt.flow_kind = j.at("flow_kind");
  ckpt.config_hash = j.at("config_hash");
  ckpt.seed = j.at("seed");

  const auto& coreset = j.at("coreset");
  ckpt.coreset.indices =
      coreset.at("indices").get<std::vector<Index>>();
  ckpt.coreset.weights = vec_from_json(coreset.at("weights"));

  const auto& ref = j.at("reference");
  ckpt.reference.position_mean = vec_from_json(ref.at("position_mean"));
  ckpt.reference.position_diag_cov = vec_from_json(ref.at("position_diag_cov"));

  if (ckpt.flow_kind == "tempered") {
    const auto& p = j.at("tempered_params");
    ckpt.tempered.log_weights = vec_from_json(p.at("log_weights"));
    ckpt.tempered.log_step_sizes = vec_from_json(p.at("log_step_sizes"));
    ckpt.tempered.schedule.alphas = vec_from_json(p.at("alphas"));
    ckpt.tempered.leapfrogs_per_block = p.at("leapfrogs_per_block");
  } else if (ckpt.flow_kind == "shf") {
    const auto& p = j.at("params");
    ckpt.params.log_weights = vec_from_json(p.at("log_weights"));
    ckpt.params.log_step_sizes = vec_from_json(p.at("log_step_sizes"));
    ckpt.params.leapfrogs_per_block = p.at("leapfrogs_per_block");
    ckpt.params.refresh_kind = p.at("refresh_kind") == "conditional"
                                   ? RefreshKind::conditional
                                   : RefreshKind::marginal;
    for (const auto& rr : p.at("refreshments")) {
      MarginalRefresh r;
      r.shift = vec_from_json(rr.at("shift"));
      r.log_diag_precision = vec_from_json(rr.at("log_diag_precision"));
      ckpt.params.refreshments.push_back(std::move(r));
    }
    for (const auto& cc : p.at("conditional")) {
      ConditionalRefresh c;
      c.mu_theta = vec_from_json(cc.at("mu_theta"));
      c.mu_rho = vec_from_json(cc.at("mu_rho"));
      c.sigma_tt = mat_from_json(cc.at("sigma_tt"));
      c.sigma_tr = mat_from_json(cc.at("sigma_tr"));
      c.sigma_rr = mat_from_json(cc.at("sigma_rr"));
      ckpt.params.conditional.push_back(std::move(c));
    }
  } else {
    throw invalid_parameter("unknown flow kind: " + ckpt.flow_kind);
  }
  return ckpt;
}

}  // namespace shf
