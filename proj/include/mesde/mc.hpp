#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <atomic>
#include <string>
#include <vector>

#include "json.hpp"

#include "mesde/errors.hpp"
#include "mesde/io.hpp"
#include "mesde/presets.hpp"
#include "mesde/simulate.hpp"
#include "mesde/stage1.hpp"
#include "mesde/stage2.hpp"

namespace mesde {

struct McCell {
  std::size_t N = 0;
  double T = 0.0;
  std::size_t n = 0;

  double h() const { return T / static_cast<double>(n); }
  std::string label() const {
    return "N=" + std::to_string(N) + ",T=" + io::format_double(T) + ",n=" + std::to_string(n);
  }
  bool operator==(const McCell&) const = default;
};

struct McDesign {
  std::string preset = "model1";
  Preset model = model1();
  std::vector<McCell> cells;
  std::size_t R = 100;
  double fine_step = 1e-4;
  std::uint64_t seed = 1;
  bool oracle = true;     ///< also fit theta_tau from the true tau_i
  bool stage2 = true;
  OptimOptions optim;
};

/// Grid N x T x {T / h}.
inline std::vector<McCell> grid_cells(const std::vector<std::size_t>& Ns, const std::vector<double>& Ts,
                                      const std::vector<double>& hs) {
  std::vector<McCell> out;
  for (double h : hs)
    for (double T : Ts)
      for (std::size_t N : Ns) out.push_back({N, T, static_cast<std::size_t>(std::llround(T / h))});
  return out;
}

/// Desk-scale design: R = 100 on the h = 0.005 grid. With `full`, R = 500 and
/// h in {0.005, 0.001}; the full design is a long-running job.
inline McDesign default_design(const std::string& preset_name, bool full = false) {
  McDesign d;
  d.preset = preset_name;
  d.model = preset(preset_name);
  d.fine_step = d.model.fine_step;
  d.R = full ? 500 : 100;
  d.cells = grid_cells({200, 500}, {5.0, 10.0}, full ? std::vector<double>{0.005, 0.001} : std::vector<double>{0.005});
  return d;
}

inline void validate(const McDesign& d) {
  if (d.R < 2) throw ConfigError("Monte Carlo design needs R >= 2");
  if (d.cells.empty()) throw ConfigError("Monte Carlo design has no cells");
  for (const auto& c : d.cells) {
    if (c.N == 0 || c.n == 0 || !(c.T > 0.0)) throw ConfigError("invalid cell " + c.label());
    if (c.h() < d.fine_step * (1.0 - 1e-9))
      throw ConfigError("cell " + c.label() + " has h below the fine step");
    (void)fine_steps_per_obs(c.h(), d.fine_step);
  }
  validate_model(d.model.model);
  validate_params(d.model.truth, d.model.model);
}

/// Column labels of one replication record: eta, theta_tau, theta_tau from
/// the true tau (suffix " [true tau]"), mu, vech(Sigma_r).
inline std::vector<std::string> mc_parameter_names(const McDesign& d) {
  const auto& m = d.model.model;
  std::vector<std::string> out = m.names.eta;
  out.insert(out.end(), m.names.theta_tau.begin(), m.names.theta_tau.end());
  if (d.oracle)
    for (const auto& s : m.names.theta_tau) out.push_back(s + " [true tau]");
  if (d.stage2) {
    out.insert(out.end(), m.names.mu.begin(), m.names.mu.end());
    out.insert(out.end(), m.names.sigma_r.begin(), m.names.sigma_r.end());
  }
  return out;
}

/// True values aligned with mc_parameter_names.
inline Vec mc_truth(const McDesign& d) {
  const auto& t = d.model.truth;
  std::vector<double> v = to_std(t.eta);
  for (double x : to_std(t.theta_tau)) v.push_back(x);
  if (d.oracle)
    for (double x : to_std(t.theta_tau)) v.push_back(x);
  if (d.stage2) {
    for (double x : to_std(t.mu)) v.push_back(x);
    for (double x : to_std(vech(t.sigma_r))) v.push_back(x);
  }
  return to_vec(v);
}

struct McReplication {
  std::size_t replication = 0;
  bool ok = false;
  Vec values;        ///< aligned with the parameter names; NaN when !ok
  std::string error;
};

struct McParameterSummary {
  std::string name;
  double truth = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;

  double mc_se() const { return count > 0 ? sd / std::sqrt(static_cast<double>(count)) : sd; }
};

struct McCellResult {
  McCell cell;
  std::vector<McReplication> replications;
  std::vector<McParameterSummary> summary;
  std::vector<std::size_t> failed;
};

struct McSummary {
  McDesign design;
  std::vector<std::string> parameters;
  std::vector<McCellResult> cells;
  std::vector<std::string> notes;

  const McCellResult& at(const McCell& c) const {
    for (const auto& r : cells)
      if (r.cell == c) return r;
    throw ConfigError("cell " + c.label() + " is not part of the design");
  }
  std::size_t index_of(const std::string& parameter) const {
    const auto it = std::find(parameters.begin(), parameters.end(), parameter);
    if (it == parameters.end()) throw ConfigError("unknown parameter '" + parameter + "'");
    return static_cast<std::size_t>(it - parameters.begin());
  }
};

/// Mean and sd (denominator R - 1) per column over the successful replications.
inline std::vector<McParameterSummary> summarize(const std::vector<McReplication>& reps,
                                                 const std::vector<std::string>& names, const Vec& truth) {
  std::vector<McParameterSummary> out(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    out[k].name = names[k];
    if (static_cast<std::size_t>(truth.size()) == names.size()) out[k].truth = truth[static_cast<Eigen::Index>(k)];
    std::vector<double> col;
    for (const auto& r : reps)
      if (r.ok) col.push_back(r.values[static_cast<Eigen::Index>(k)]);
    out[k].count = col.size();
    if (col.empty()) continue;
    const double cnt = static_cast<double>(col.size());
    const double mean = deterministic_sum(col) / cnt;
    std::vector<double> sq;
    sq.reserve(col.size());
    for (double v : col) sq.push_back((v - mean) * (v - mean));
    out[k].mean = mean;
    out[k].sd = col.size() > 1 ? std::sqrt(deterministic_sum(std::move(sq)) / (cnt - 1.0))
                               : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

/// Seed of replication r.
inline std::uint64_t replication_seed(std::uint64_t base, std::size_t r) {
  return stream_key({base, static_cast<std::uint64_t>(r)});
}

namespace detail {

/// One replication of every cell. Cells sharing T reuse one fine Euler path per
/// individual (recorded on every n of that T), and smaller N are prefixes.
inline std::vector<McReplication> run_replication(const McDesign& d, std::size_t r, std::size_t n_params) {
  const std::uint64_t seed = replication_seed(d.seed, r);
  const auto& model = d.model.model;
  std::vector<McReplication> out(d.cells.size());
  for (auto& rep : out) {
    rep.replication = r;
    rep.values = Vec::Constant(static_cast<Eigen::Index>(n_params), std::numeric_limits<double>::quiet_NaN());
  }
  std::vector<double> Ts;
  for (const auto& c : d.cells)
    if (std::find(Ts.begin(), Ts.end(), c.T) == Ts.end()) Ts.push_back(c.T);

  for (double T : Ts) {
    std::vector<std::size_t> idx;
    std::size_t max_N = 0;
    std::vector<std::size_t> ns;
    for (std::size_t k = 0; k < d.cells.size(); ++k)
      if (d.cells[k].T == T) {
        idx.push_back(k);
        max_N = std::max(max_N, d.cells[k].N);
        if (std::find(ns.begin(), ns.end(), d.cells[k].n) == ns.end()) ns.push_back(d.cells[k].n);
      }
    std::vector<RandomEffectDraw> effects;
    std::vector<PanelData> panels;
    try {
      panels = simulate_panel_grids(model, d.model.truth, max_N, T, ns, d.fine_step, seed, 1, &effects);
    } catch (const Error& e) {
      for (std::size_t k : idx) out[k].error = std::string("simulation: ") + e.what();
      continue;
    }
    for (std::size_t k : idx) {
      const McCell& cell = d.cells[k];
      auto& rep = out[k];
      try {
        const std::size_t g = static_cast<std::size_t>(std::find(ns.begin(), ns.end(), cell.n) - ns.begin());
        const PanelData panel = panels[g].head(cell.N);
        Stage1Options o1;
        o1.optim = d.optim;
        o1.optim.seed = stream_key({seed, cell.N, cell.n, 1});
        const auto s1 = run_stage1(panel, model, o1);
        std::vector<double> v = to_std(s1.eta_hat);
        for (double x : to_std(s1.theta_tau_hat)) v.push_back(x);
        if (d.oracle) {
          Vec taus(static_cast<Eigen::Index>(cell.N));
          for (std::size_t i = 0; i < cell.N; ++i) taus[static_cast<Eigen::Index>(i)] = effects[i].tau;
          OptimOptions oo = d.optim;
          oo.seed = stream_key({seed, cell.N, cell.n, 2});
          const auto oracle = fit_theta_tau(taus, model.tau_family, model.bounds.theta_tau, oo);
          for (double x : to_std(oracle.argmax)) v.push_back(x);
        }
        if (d.stage2 && model.p_phi() > 0) {
          const auto pairs = sufficient_stats_all(panel, model, s1.eta_hat, s1.tau_hat);
          Stage2Options o2;
          o2.optim = d.optim;
          o2.optim.seed = stream_key({seed, cell.N, cell.n, 3});
          const auto s2 = fit_drift(pairs, model.p_phi_r, model.bounds.mu, model.bounds.sigma_r_chol, o2);
          for (double x : to_std(s2.mu_hat)) v.push_back(x);
          for (double x : to_std(vech(s2.sigma_r_hat))) v.push_back(x);
        }
        rep.values = to_vec(v);
        rep.ok = rep.values.allFinite();
        if (!rep.ok) rep.error = "non-finite estimate";
      } catch (const Error& e) {
        rep.error = e.what();
      }
    }
  }
  return out;
}

} // namespace detail

/// Progress callback: (replications finished, total).
using McProgress = std::function<void(std::size_t, std::size_t)>;

/// Runs every replication of every cell. Replication r uses seed
/// stream_key(seed, r) and does not depend on the worker count; failed
/// replications are recorded and excluded from the summaries.
inline McSummary run_mc(const McDesign& design, unsigned workers = 1, const McProgress& progress = {}) {
  validate(design);
  McSummary out;
  out.design = design;
  out.parameters = mc_parameter_names(design);
  if (design.stage2 && design.model.model.p_phi() == 0) {
    out.design.stage2 = false;
    out.parameters = mc_parameter_names(out.design);
  }
  const Vec truth = mc_truth(out.design);
  std::vector<std::vector<McReplication>> by_rep(design.R);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  parallel_for(design.R, workers, [&](std::size_t r) {
    by_rep[r] = detail::run_replication(out.design, r, out.parameters.size());
    const std::size_t finished = ++done;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(finished, design.R);
    }
  });
  for (std::size_t k = 0; k < design.cells.size(); ++k) {
    McCellResult cr;
    cr.cell = design.cells[k];
    for (std::size_t r = 0; r < design.R; ++r) {
      cr.replications.push_back(by_rep[r][k]);
      if (!by_rep[r][k].ok) cr.failed.push_back(r);
    }
    cr.summary = summarize(cr.replications, out.parameters, truth);
    out.cells.push_back(std::move(cr));
  }
  if (design.preset == "model3" || design.preset == "3")
    for (const auto& c : design.cells)
      if (c.T == 10.0 && c.n == 2000) {
        out.notes.push_back("cell T=10 uses n = T/h = 2000 (h = 0.005); results labelled n=5000 for this "
                            "model elsewhere refer to the same grid");
        break;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// One row per cell, one "mean (sd)" column per parameter, three decimals.
inline std::string mc_table_csv(const McSummary& s) {
  std::vector<std::string> header = {"N", "T", "n", "replications", "failed"};
  header.insert(header.end(), s.parameters.begin(), s.parameters.end());
  std::string out = io::csv_row(header);
  for (const auto& c : s.cells) {
    std::vector<std::string> row = {std::to_string(c.cell.N), io::format_double(c.cell.T), std::to_string(c.cell.n),
                                    std::to_string(c.replications.size()), std::to_string(c.failed.size())};
    for (const auto& p : c.summary)
      row.push_back(io::format_fixed(p.mean, 3) + " (" + io::format_fixed(p.sd, 3) + ")");
    out += io::csv_row(row);
  }
  return out;
}

/// Long format (cell, parameter, replication, value) over successful replications.
inline std::string mc_boxplot_csv(const McSummary& s) {
  std::string out = io::csv_row({"cell", "parameter", "replication", "value"});
  for (const auto& c : s.cells)
    for (std::size_t k = 0; k < s.parameters.size(); ++k)
      for (const auto& r : c.replications)
        if (r.ok)
          out += io::csv_row({c.cell.label(), s.parameters[k], std::to_string(r.replication),
                              io::format_double(r.values[static_cast<Eigen::Index>(k)])});
  return out;
}

struct BoxplotRow {
  std::string cell;
  std::string parameter;
  std::size_t replication = 0;
  double value = 0.0;
  bool operator==(const BoxplotRow&) const = default;
};

inline std::vector<BoxplotRow> parse_boxplot_csv(std::string_view text) {
  const auto rows = io::parse_csv(text);
  if (rows.empty() || rows.front() != std::vector<std::string>{"cell", "parameter", "replication", "value"})
    throw ParseError("boxplot header must be cell,parameter,replication,value", 1, 1);
  std::vector<BoxplotRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 4) throw ParseError("expected 4 fields", r + 1, rows[r].size() + 1);
    const auto rep = io::parse_double(rows[r][2]);
    const auto val = io::parse_double(rows[r][3]);
    if (!rep) throw ParseError("bad replication index", r + 1, 3);
    if (!val) throw ParseError("bad value", r + 1, 4);
    out.push_back({rows[r][0], rows[r][1], static_cast<std::size_t>(*rep), *val});
  }
  return out;
}

inline nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json design_json(const McDesign& d) {
  nlohmann::ordered_json j;
  j["preset"] = d.preset;
  j["replications"] = d.R;
  j["fine_step"] = d.fine_step;
  j["seed"] = d.seed;
  j["oracle"] = d.oracle;
  j["stage2"] = d.stage2;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : d.cells) j["cells"].push_back({{"N", c.N}, {"T", c.T}, {"n", c.n}, {"h", c.h()}});
  j["initial_value"] = d.model.model.initial_law.description;
  j["truth"] = nlohmann::ordered_json::object();
  j["optimizer"] = {{"restarts", d.optim.restarts}, {"f_tol", d.optim.f_tol},     {"x_tol", d.optim.x_tol},
                    {"jitter", d.optim.jitter},     {"fd_scale", d.optim.fd_scale}, {"newton_polish", d.optim.newton_polish}};
  const auto names = parameter_names(d.model.model);
  const Vec flat = pack(d.model.truth);
  for (std::size_t k = 0; k < names.size(); ++k) j["truth"][names[k]] = flat[static_cast<Eigen::Index>(k)];
  return j;
}

/// Machine-readable twin of the table: design, summaries, failures and all
/// replication values.
inline nlohmann::ordered_json mc_json(const McSummary& s) {
  nlohmann::ordered_json j;
  j["design"] = design_json(s.design);
  j["parameters"] = s.parameters;
  j["notes"] = s.notes;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : s.cells) {
    nlohmann::ordered_json cj;
    cj["N"] = c.cell.N;
    cj["T"] = c.cell.T;
    cj["n"] = c.cell.n;
    cj["summary"] = nlohmann::ordered_json::array();
    for (const auto& p : c.summary)
      cj["summary"].push_back({{"parameter", p.name},
                               {"truth", number_or_null(p.truth)},
                               {"mean", number_or_null(p.mean)},
                               {"sd", number_or_null(p.sd)},
                               {"count", p.count}});
    cj["failures"] = nlohmann::ordered_json::array();
    for (const auto& r : c.replications)
      if (!r.ok) cj["failures"].push_back({{"replication", r.replication}, {"error", r.error}});
    cj["replications"] = nlohmann::ordered_json::array();
    for (const auto& r : c.replications) {
      nlohmann::ordered_json vals = nlohmann::ordered_json::array();
      for (Eigen::Index k = 0; k < r.values.size(); ++k) vals.push_back(number_or_null(r.values[k]));
      cj["replications"].push_back({{"replication", r.replication}, {"ok", r.ok}, {"values", vals}});
    }
    j["cells"].push_back(std::move(cj));
  }
  return j;
}

} // namespace mesde
