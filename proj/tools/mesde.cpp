// Command-line front end: simulate, fit, mc, report.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mesde/errors.hpp"
#include "mesde/io.hpp"
#include "mesde/mc.hpp"
#include "mesde/presets.hpp"
#include "mesde/report.hpp"
#include "mesde/simulate.hpp"
#include "mesde/stage1.hpp"
#include "mesde/stage2.hpp"

#ifndef MESDE_VERSION
#define MESDE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace mesde;

namespace {

/// Flag values as given on the command line; unset options stay empty.
struct Flags {
  std::string config;
  std::string model;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::size_t> N, n, R, predictive;
  std::optional<double> T, fine_step, h, scale, y0;
  std::string panel, input, stage2_method;
  std::vector<std::string> cells;
  bool full = false, force = false, no_oracle = false;
};

Json load_config(const std::string& path) {
  if (path.empty()) return Json::object();
  const auto text = io::read_file(path);
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config file " + path + " is not a JSON object");
  // A metadata file written by this tool carries the resolved config.
  if (j.contains("config") && j["config"].is_object()) return j["config"];
  return j;
}

/// Precedence: built-in defaults < config file < environment < flags.
Json resolve(const Flags& f, const std::string& command) {
  Json c = load_config(f.config);
  auto set_default = [&](const char* key, Json v) {
    if (!c.contains(key)) c[key] = std::move(v);
  };
  set_default("model", "model1");
  const Preset p = preset(f.model.empty() ? c["model"].get<std::string>() : f.model);
  set_default("seed", 1);
  set_default("workers", 1);
  set_default("out", "mesde_out");
  if (const char* w = std::getenv("MESDE_WORKERS")) {
    const auto v = io::parse_double(w);
    if (!v || *v < 0) throw ConfigError("MESDE_WORKERS must be a non-negative integer");
    c["workers"] = static_cast<unsigned>(*v);
  }
  if (const char* o = std::getenv("MESDE_OUTPUT_DIR")) c["out"] = o;

  if (!f.model.empty() && c["model"] != f.model) c.erase("truth");  // truth belongs to the config's model
  if (!f.model.empty()) c["model"] = f.model;
  if (!f.out.empty()) c["out"] = f.out;
  if (f.seed) c["seed"] = *f.seed;
  if (f.workers) c["workers"] = *f.workers;

  if (command == "simulate") {
    set_default("N", p.N);
    set_default("n", p.n);
    set_default("T", p.T);
    set_default("fine_step", p.fine_step);
    set_default("y0", p.model.initial_law.constant);
    set_default("truth", params_json(p.truth));
    if (f.N) c["N"] = *f.N;
    if (f.n) c["n"] = *f.n;
    if (f.T) c["T"] = *f.T;
    if (f.fine_step) c["fine_step"] = *f.fine_step;
    if (f.y0) c["y0"] = *f.y0;
  } else if (command == "fit") {
    set_default("scale", 1.0);
    set_default("predictive", 0);
    set_default("stage2_method", "full");
    if (!f.panel.empty()) c["panel"] = f.panel;
    if (f.h) c["h"] = *f.h;
    if (f.scale) c["scale"] = *f.scale;
    if (f.predictive) c["predictive"] = *f.predictive;
    if (!f.stage2_method.empty()) c["stage2_method"] = f.stage2_method;
    if (!c.contains("panel")) throw ConfigError("fit needs --panel");
  } else if (command == "mc") {
    const McDesign d = default_design(c["model"].get<std::string>(), f.full);
    set_default("R", d.R);
    set_default("fine_step", d.fine_step);
    set_default("oracle", true);
    set_default("truth", params_json(p.truth));
    if (!c.contains("cells")) {
      Json cells = Json::array();
      for (const auto& cell : d.cells) cells.push_back(Json::array({cell.N, cell.T, cell.n}));
      c["cells"] = cells;
    }
    if (f.R) c["R"] = *f.R;
    if (f.fine_step) c["fine_step"] = *f.fine_step;
    if (f.no_oracle) c["oracle"] = false;
    if (!f.cells.empty()) {
      Json cells = Json::array();
      for (const auto& s : f.cells) {
        const auto row = io::parse_csv(s);
        if (row.size() != 1 || row[0].size() != 3) throw ConfigError("--cell expects N,T,n, got '" + s + "'");
        const auto N = io::parse_double(row[0][0]), T = io::parse_double(row[0][1]), n = io::parse_double(row[0][2]);
        if (!N || !T || !n || *N < 1 || *n < 1 || !(*T > 0)) throw ConfigError("--cell expects N,T,n, got '" + s + "'");
        cells.push_back(Json::array({static_cast<std::size_t>(*N), *T, static_cast<std::size_t>(*n)}));
      }
      c["cells"] = cells;
    }
  }
  return c;
}

template <class T>
T get(const Json& c, const char* key) {
  try {
    return c.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config entry '") + key + "' is missing or has the wrong type");
  }
}

Json metadata(const std::string& command, const Json& config) {
  return Json{{"tool", "mesde"}, {"version", MESDE_VERSION}, {"command", command}, {"config", config}};
}

void write_json(const fs::path& path, const Json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

Preset configured_preset(const Json& c) {
  Preset p = preset(get<std::string>(c, "model"));
  if (c.contains("truth")) p.truth = params_from_json(c["truth"]);
  if (c.contains("y0")) p.model.initial_law = InitialLaw::fixed(get<double>(c, "y0"));
  return p;
}

int cmd_simulate(const Json& c) {
  Preset p = configured_preset(c);
  validate_model(p.model);
  SimConfig cfg;
  cfg.N = get<std::size_t>(c, "N");
  cfg.n = get<std::size_t>(c, "n");
  cfg.T = get<double>(c, "T");
  cfg.fine_step = get<double>(c, "fine_step");
  cfg.seed = get<std::uint64_t>(c, "seed");
  cfg.workers = get<unsigned>(c, "workers");
  validate(cfg);
  const auto sim = simulate_panel(p.model, p.truth, cfg);
  const fs::path out = get<std::string>(c, "out");
  io::write_atomic(out / "panel.csv", io::panel_to_csv(sim.panel));
  io::write_atomic(out / "effects.csv", io::effects_to_csv(sim.effects));
  Json meta = metadata("simulate", c);
  meta["design"] = {{"N", cfg.N}, {"n", cfg.n}, {"T", cfg.T}, {"h", cfg.h()}, {"fine_step", cfg.fine_step}};
  meta["initial_value"] = p.model.initial_law.description;
  meta["parameter_names"] = parameter_names(p.model);
  write_json(out / "metadata.json", meta);
  std::cout << "wrote " << sim.panel.N() << " trajectories x " << sim.panel.n() + 1 << " points to "
            << (out / "panel.csv").string() << "\n";
  return 0;
}

/// Type-7 sample quantile.
double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string bands_csv(const PanelData& data, const PanelData& sim) {
  std::string out = io::csv_row({"j", "t", "data_q025", "data_q50", "data_q975", "pred_q025", "pred_q50", "pred_q975"});
  for (std::size_t j = 0; j <= data.n(); ++j) {
    std::vector<double> a(data.N()), b(sim.N());
    for (std::size_t i = 0; i < data.N(); ++i) a[i] = data(i, j);
    for (std::size_t i = 0; i < sim.N(); ++i) b[i] = sim(i, j);
    std::vector<std::string> row = {std::to_string(j), io::format_double(data.time(j))};
    for (double q : {0.025, 0.5, 0.975}) row.push_back(io::format_double(quantile(a, q)));
    for (double q : {0.025, 0.5, 0.975}) row.push_back(io::format_double(quantile(b, q)));
    out += io::csv_row(row);
  }
  return out;
}

int cmd_fit(const Json& c) {
  Preset p = configured_preset(c);
  validate_model(p.model);
  const auto& model = p.model;
  std::optional<double> h;
  if (c.contains("h")) h = get<double>(c, "h");
  const PanelData panel = io::ingest_panel(get<std::string>(c, "panel"), get<double>(c, "scale"), h);
  const unsigned workers = get<unsigned>(c, "workers");
  const std::uint64_t seed = get<std::uint64_t>(c, "seed");

  Stage1Options o1;
  o1.workers = workers;
  o1.optim.seed = stream_key({seed, 1});
  const auto s1 = run_stage1(panel, model, o1);
  for (const auto& w : s1.warnings) std::cerr << "warning: " << w << "\n";

  const fs::path out = get<std::string>(c, "out");
  Json report;
  report["model"] = model.name;
  report["panel"] = {{"N", panel.N()}, {"n", panel.n()}, {"h", panel.h()}, {"T", panel.T()}};
  report["stage1"] = stage1_json(s1, model);

  std::string tau_csv = "id,tau_hat\n";
  for (std::size_t i = 0; i < panel.N(); ++i)
    tau_csv += std::to_string(i) + "," + io::format_double(s1.tau_hat[static_cast<Eigen::Index>(i)]) + "\n";
  io::write_atomic(out / "tau_hat.csv", tau_csv);

  std::optional<Stage2Estimate> s2;
  if (model.p_phi() > 0) {
    const auto pairs = sufficient_stats_all(panel, model, s1.eta_hat, s1.tau_hat, workers);
    Stage2Options o2;
    o2.optim.seed = stream_key({seed, 2});
    const auto method = get<std::string>(c, "stage2_method");
    if (method == "full")
      s2 = fit_drift(pairs, model.p_phi_r, model.bounds.mu, model.bounds.sigma_r_chol, o2);
    else if (method == "alternating")
      s2 = fit_drift_alternating(pairs, model.p_phi_r, model.bounds.sigma_r_chol, o2);
    else
      throw ConfigError("stage2_method must be 'full' or 'alternating'");
    for (const auto& w : s2->warnings) std::cerr << "warning: " << w << "\n";
    report["stage2"] = stage2_json(*s2, model);
    report["stage2"]["method"] = method;

    std::string b_csv = "id";
    for (const auto& name : model.names.mu) b_csv += "," + io::csv_quote("b_" + name);
    b_csv += ",flagged\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      b_csv += std::to_string(i);
      for (Eigen::Index k = 0; k < pairs[i].b_hat.size(); ++k) b_csv += "," + io::format_double(pairs[i].b_hat[k]);
      b_csv += pairs[i].flagged ? ",1\n" : ",0\n";
    }
    io::write_atomic(out / "b_hat.csv", b_csv);
  }

  const auto n_pred = get<std::size_t>(c, "predictive");
  if (n_pred > 0) {
    ParamSet fitted;
    fitted.eta = s1.eta_hat;
    fitted.theta_tau = s1.theta_tau_hat;
    fitted.mu = s2 ? s2->mu_hat : Vec(0);
    fitted.sigma_r = s2 ? s2->sigma_r_hat : Mat(0, 0);
    ModelSpec sim_model = model;
    sim_model.initial_law = InitialLaw::fixed(panel.values().col(0).mean());
    const double steps = std::ceil(panel.h() / 1e-4 - 1e-9);
    SimConfig cfg{n_pred, panel.n(), panel.T(), panel.h() / steps, stream_key({seed, 3}), workers};
    const auto sim = simulate_panel(sim_model, fitted, cfg);
    io::write_atomic(out / "predictive.csv", io::panel_to_csv(sim.panel));
    io::write_atomic(out / "predictive_bands.csv", bands_csv(panel, sim.panel));
    report["predictive"] = {{"trajectories", n_pred}, {"fine_step", cfg.fine_step},
                            {"initial_value", sim_model.initial_law.constant}};
  }
  write_json(out / "fit.json", report);
  write_json(out / "metadata.json", metadata("fit", c));

  std::cout << "eta_hat:";
  for (Eigen::Index k = 0; k < s1.eta_hat.size(); ++k) std::cout << " " << io::format_double(s1.eta_hat[k]);
  std::cout << "\ntheta_tau_hat:";
  for (Eigen::Index k = 0; k < s1.theta_tau_hat.size(); ++k) std::cout << " " << io::format_double(s1.theta_tau_hat[k]);
  if (s2) {
    std::cout << "\nmu_hat:";
    for (Eigen::Index k = 0; k < s2->mu_hat.size(); ++k) std::cout << " " << io::format_double(s2->mu_hat[k]);
    std::cout << "\nsigma_r_hat (vech):";
    const Vec v = vech(s2->sigma_r_hat);
    for (Eigen::Index k = 0; k < v.size(); ++k) std::cout << " " << io::format_double(v[k]);
  }
  std::cout << "\nreport: " << (out / "fit.json").string() << "\n";
  return 0;
}

int cmd_mc(const Json& c, bool force) {
  McDesign d;
  d.preset = get<std::string>(c, "model");
  d.model = configured_preset(c);
  d.R = get<std::size_t>(c, "R");
  d.fine_step = get<double>(c, "fine_step");
  d.seed = get<std::uint64_t>(c, "seed");
  d.oracle = get<bool>(c, "oracle");
  d.cells.clear();
  for (const auto& cell : c.at("cells")) {
    if (!cell.is_array() || cell.size() != 3) throw ConfigError("each cell must be [N, T, n]");
    d.cells.push_back({cell[0].get<std::size_t>(), cell[1].get<double>(), cell[2].get<std::size_t>()});
  }
  const fs::path out = get<std::string>(c, "out");
  for (const char* name : {"summary.json", "table.csv", "boxplot.csv"})
    if (fs::exists(out / name) && !force)
      throw ConfigError("output " + (out / name).string() + " already exists; pass --force to overwrite");

  const unsigned workers = get<unsigned>(c, "workers");
  const auto summary = run_mc(d, workers, [](std::size_t done, std::size_t total) {
    std::cerr << "\rreplications " << done << "/" << total << std::flush;
    if (done == total) std::cerr << "\n";
  });
  io::write_atomic(out / "table.csv", mc_table_csv(summary));
  io::write_atomic(out / "boxplot.csv", mc_boxplot_csv(summary));
  write_json(out / "summary.json", mc_json(summary));
  Json meta = metadata("mc", c);
  write_json(out / "metadata.json", meta);
  std::cout << mc_table_csv(summary);
  for (const auto& note : summary.notes) std::cout << "note: " << note << "\n";
  return 0;
}

int cmd_report(const std::string& input) {
  if (input.empty()) throw ConfigError("report needs --input");
  const Json j = Json::parse(io::read_file(input), nullptr, false);
  if (j.is_discarded()) throw DataError(input + " is not valid JSON");
  if (j.contains("cells") && j.contains("parameters")) {
    std::vector<std::string> header = {"N", "T", "n", "replications", "failed"};
    for (const auto& p : j["parameters"]) header.push_back(p.get<std::string>());
    std::cout << io::csv_row(header);
    for (const auto& cell : j["cells"]) {
      std::vector<std::string> row = {std::to_string(cell["N"].get<std::size_t>()),
                                      io::format_double(cell["T"].get<double>()),
                                      std::to_string(cell["n"].get<std::size_t>()),
                                      std::to_string(cell["replications"].size()),
                                      std::to_string(cell["failures"].size())};
      for (const auto& s : cell["summary"]) {
        const double mean = s["mean"].is_null() ? std::nan("") : s["mean"].get<double>();
        const double sd = s["sd"].is_null() ? std::nan("") : s["sd"].get<double>();
        row.push_back(io::format_fixed(mean, 3) + " (" + io::format_fixed(sd, 3) + ")");
      }
      std::cout << io::csv_row(row);
    }
    for (const auto& note : j.value("notes", Json::array())) std::cout << "note: " << note.get<std::string>() << "\n";
    return 0;
  }
  if (j.contains("stage1")) {
    std::cout << "parameter,estimate,se\n";
    auto print = [](const Json& est, const Json& se) {
      for (const auto& [name, v] : est.items()) {
        const std::string sev = se.contains(name) && !se[name].is_null() ? io::format_double(se[name].get<double>()) : "";
        std::cout << io::csv_quote(name) << "," << (v.is_null() ? "" : io::format_double(v.get<double>())) << ","
                  << sev << "\n";
      }
    };
    print(j["stage1"]["eta"], j["stage1"]["se_eta"]);
    print(j["stage1"]["theta_tau"], j["stage1"]["se_theta_tau"]);
    if (j.contains("stage2")) print(j["stage2"]["estimates"], j["stage2"]["se"]);
    return 0;
  }
  throw DataError(input + " is neither an mc summary nor a fit report");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and two-stage estimation for mixed-effects SDE panels"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config (a metadata.json from an earlier run also works)");
    sub->add_option("--model", f.model, "model preset: model1, model2, model3, neuronal, bm, atan, ou");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "base seed");
    sub->add_option("--workers", f.workers, "worker threads (0 = all cores)");
  };

  auto* sim = app.add_subcommand("simulate", "simulate a panel from a preset");
  common(sim);
  sim->add_option("--N", f.N, "number of individuals");
  sim->add_option("--n", f.n, "observation steps per individual");
  sim->add_option("--T", f.T, "time horizon");
  sim->add_option("--fine-step", f.fine_step, "Euler step (must divide T/n)");
  sim->add_option("--y0", f.y0, "initial value Y_i(0)");

  auto* fit = app.add_subcommand("fit", "estimate all parameters from a panel CSV");
  common(fit);
  fit->add_option("--panel", f.panel, "panel CSV (wide id,t0..tn or long id,t,y)");
  fit->add_option("--step", f.h, "observation step h for wide files");
  fit->add_option("--scale", f.scale, "multiply every observation by this factor");
  fit->add_option("--predictive", f.predictive, "simulate this many trajectories from the fitted model");
  fit->add_option("--stage2-method", f.stage2_method, "full or alternating");

  auto* mc = app.add_subcommand("mc", "Monte Carlo study");
  common(mc);
  mc->add_option("--R", f.R, "replications");
  mc->add_option("--cell", f.cells, "design cell N,T,n (repeatable)");
  mc->add_option("--fine-step", f.fine_step, "Euler step");
  mc->add_flag("--full", f.full, "full grid: R=500, h in {0.005, 0.001} (long running)");
  mc->add_flag("--no-oracle", f.no_oracle, "skip the theta_tau fit from the true tau_i");
  mc->add_flag("--force", f.force, "overwrite existing outputs");

  auto* rep = app.add_subcommand("report", "print a table from an mc summary.json or a fit.json");
  rep->add_option("--input", f.input, "summary.json or fit.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(resolve(f, "simulate"));
    if (fit->parsed()) return cmd_fit(resolve(f, "fit"));
    if (mc->parsed()) return cmd_mc(resolve(f, "mc"), f.force);
    if (rep->parsed()) return cmd_report(f.input);
  } catch (const mesde::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: bad configuration: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
