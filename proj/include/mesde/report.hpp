#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "mesde/io.hpp"
#include "mesde/model.hpp"
#include "mesde/stage1.hpp"
#include "mesde/stage2.hpp"

namespace mesde {

using Json = nlohmann::ordered_json;

inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json json_vector(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(json_number(v[k]));
  return a;
}

inline Json json_matrix(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(json_vector(m.row(r).transpose()));
  return a;
}

inline Vec vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ConfigError(what + " must be an array of numbers");
    v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  return v;
}

inline Mat matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Mat m(rows, rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vec row = vector_from_json(j[static_cast<std::size_t>(r)], what);
    if (row.size() != rows) throw ConfigError(what + " must be square");
    m.row(r) = row.transpose();
  }
  return m;
}

inline Json params_json(const ParamSet& p) {
  return Json{{"eta", json_vector(p.eta)},
              {"theta_tau", json_vector(p.theta_tau)},
              {"mu", json_vector(p.mu)},
              {"sigma_r", json_matrix(p.sigma_r)}};
}

inline ParamSet params_from_json(const Json& j) {
  ParamSet p;
  p.eta = vector_from_json(j.at("eta"), "eta");
  p.theta_tau = vector_from_json(j.at("theta_tau"), "theta_tau");
  p.mu = vector_from_json(j.at("mu"), "mu");
  p.sigma_r = matrix_from_json(j.at("sigma_r"), "sigma_r");
  return p;
}

/// {name: value} over a list of names and values of equal length.
inline Json named(const std::vector<std::string>& names, const Vec& values) {
  Json o = Json::object();
  for (std::size_t k = 0; k < names.size() && k < static_cast<std::size_t>(values.size()); ++k)
    o[names[k]] = json_number(values[static_cast<Eigen::Index>(k)]);
  return o;
}

inline Json optim_json(const OptimResult& r) {
  return Json{{"value", json_number(r.value)},
              {"evaluations", r.n_evals},
              {"converged", r.converged},
              {"best_restart", r.restart_index}};
}

inline Json stage1_json(const Stage1Estimate& e, const ModelSpec& m) {
  Json j;
  j["eta"] = named(m.names.eta, e.eta_hat);
  j["theta_tau"] = named(m.names.theta_tau, e.theta_tau_hat);
  j["se_eta"] = named(m.names.eta, e.se_eta);
  j["se_theta_tau"] = named(m.names.theta_tau, e.se_theta);
  j["q11"] = json_matrix(e.q11_hat);
  j["i12"] = json_matrix(e.i12_hat);
  j["h11"] = json_number(e.h11_value);
  j["h12"] = json_number(e.h12_value);
  j["eta_known"] = e.eta_known;
  j["q11_singular"] = e.q11_singular;
  j["tau_family"] = m.tau_family.name();
  if (!e.eta_known) j["eta_optimizer"] = optim_json(e.eta_optim);
  j["theta_optimizer"] = optim_json(e.theta_optim);
  j["warnings"] = e.warnings;
  return j;
}

inline Json stage2_json(const Stage2Estimate& e, const ModelSpec& m) {
  Json j;
  j["mu"] = named(m.names.mu, e.mu_hat);
  j["sigma_r"] = json_matrix(e.sigma_r_hat);
  std::vector<std::string> names = m.names.mu;
  names.insert(names.end(), m.names.sigma_r.begin(), m.names.sigma_r.end());
  Vec est(e.mu_hat.size() + vech(e.sigma_r_hat).size());
  est << e.mu_hat, vech(e.sigma_r_hat);
  j["estimates"] = named(names, est);
  j["se"] = named(names, e.se);
  j["cov"] = json_matrix(e.cov_hat);
  j["h2"] = json_number(e.h2_value);
  j["boundary_flag"] = e.boundary_flag;
  j["dropped"] = e.dropped;
  j["optimizer"] = optim_json(e.optim);
  j["warnings"] = e.warnings;
  return j;
}

} // namespace mesde
