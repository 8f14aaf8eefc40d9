#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppkit/ascii_grid.hpp"
#include "ppkit/covar.hpp"
#include "ppkit/fit.hpp"
#include "ppkit/geojson.hpp"
#include "ppkit/geom.hpp"
#include "ppkit/grf.hpp"
#include "ppkit/io_util.hpp"
#include "ppkit/kernel.hpp"
#include "ppkit/ripley.hpp"
#include "ppkit/sim.hpp"
#include "ppkit/svg.hpp"

namespace ppkit {

// One JSON config document drives a batch run; the document is copied into
// the output directory for provenance. Identity projection (planar-km input)
// is used for rect windows: lon/lat columns then hold km directly.
struct RunConfig {
  nlohmann::json doc;
  std::string out_dir;
  std::uint64_t seed = 0;

  static RunConfig load(const std::string& path,
                        const std::optional<std::string>& out_override,
                        const std::optional<std::uint64_t>& seed_override) {
    RunConfig c;
    c.doc = nlohmann::json::parse(read_text_file(path));
    if (out_override) c.doc["out"] = *out_override;
    if (seed_override) c.doc["seed"] = *seed_override;
    if (!c.doc.contains("out"))
      throw std::runtime_error("config: missing 'out' output directory");
    if (!c.doc.contains("seed"))
      throw std::runtime_error("config: missing 'seed' (stochastic commands require one)");
    c.out_dir = c.doc["out"].get<std::string>();
    c.seed = c.doc["seed"].get<std::uint64_t>();
    return c;
  }

  const nlohmann::json& require(const std::string& key) const {
    if (!doc.contains(key))
      throw std::runtime_error("config: missing required key '" + key + "'");
    return doc.at(key);
  }

  std::string out_path(const std::string& name) const {
    return (std::filesystem::path(out_dir) / name).string();
  }
};

namespace detail {

inline Projection identity_projection() {
  return Projection{0.0, 0.0, 180.0 / kPi};
}

struct Domain {
  std::shared_ptr<const Window> window;
  Projection proj;
  GridSpec grid;
};

inline Domain load_domain(const RunConfig& cfg) {
  const auto& w = cfg.require("window");
  Domain d;
  if (w.contains("geojson")) {
    auto pw = window_from_geojson(w.at("geojson").get<std::string>());
    d.window = std::make_shared<const Window>(std::move(pw.window));
    d.proj = pw.projection;
  } else if (w.contains("rect")) {
    const auto r = w.at("rect");
    if (!r.is_array() || r.size() != 4)
      throw std::runtime_error("config: window.rect must be [x0,y0,x1,y1] km");
    d.window = std::make_shared<const Window>(
        Window::rect(r[0].get<double>(), r[1].get<double>(),
                     r[2].get<double>(), r[3].get<double>()));
    d.proj = identity_projection();
  } else {
    throw std::runtime_error("config: window needs 'geojson' or 'rect'");
  }
  int nx = 64, ny = 64;
  if (cfg.doc.contains("grid")) {
    nx = cfg.doc["grid"].value("nx", 64);
    ny = cfg.doc["grid"].value("ny", 64);
  }
  d.grid = GridSpec::cover(*d.window, nx, ny);
  return d;
}

// Event ingestion: load, filter by group/specificity, then apply the
// dedup/jitter policy so downstream patterns are simple.
struct PreparedGroup {
  std::string label;
  PointPattern pattern;
  std::size_t removed_duplicates = 0;
};

inline std::vector<PreparedGroup> load_groups(const RunConfig& cfg,
                                              const Domain& dom) {
  const std::string events_path = cfg.require("events").get<std::string>();
  const LoadedEvents loaded =
      load_events(events_path, *dom.window, dom.proj);
  const SpecFilter spec =
      SpecFilter::parse(cfg.doc.value("specificity", std::string("any")));
  std::vector<std::string> groups;
  if (cfg.doc.contains("groups"))
    for (const auto& g : cfg.doc["groups"])
      groups.push_back(g.get<std::string>());

  const std::string policy = cfg.doc.value("dedup", std::string("jitter"));
  const double jitter_sd = cfg.doc.value("jitter_sd_deg", 1e-6);

  auto prepare = [&](const std::string& label,
                     const std::optional<std::string>& group,
                     std::uint64_t sub) {
    EventTable t = filter_events(loaded.table, group, spec);
    PreparedGroup out;
    out.label = label;
    if (policy == "jitter") {
      t = jitter_events(t, jitter_sd, Rng(cfg.seed).substream(sub).seed());
      out.pattern = to_pattern(t, dom.proj, dom.window);
      out.pattern.simple = true;
    } else if (policy == "drop") {
      auto dedup = deduplicate(to_pattern(t, dom.proj, dom.window));
      out.pattern = std::move(dedup.pattern);
      out.removed_duplicates = dedup.removed;
    } else if (policy == "none") {
      out.pattern = to_pattern(t, dom.proj, dom.window);
      auto probe = deduplicate(out.pattern);
      if (probe.removed > 0)
        throw std::runtime_error(
            "events contain " + std::to_string(probe.removed) +
            " duplicate locations; set dedup to 'jitter' or 'drop'");
      out.pattern.simple = true;
    } else {
      throw std::runtime_error("config: dedup must be jitter|drop|none");
    }
    return out;
  };

  std::vector<PreparedGroup> out;
  if (groups.empty()) {
    out.push_back(prepare("all", std::nullopt, 1000));
  } else {
    for (std::size_t i = 0; i < groups.size(); ++i)
      out.push_back(prepare(groups[i], groups[i], 1000 + i));
  }
  return out;
}

// Covariate stack assembly: rasters (optionally log1p), distance-to-city,
// lon/lat and their interaction, standardized at the end.
inline std::shared_ptr<const CovariateStack> build_stack(const RunConfig& cfg,
                                                         const Domain& dom) {
  CovariateStack stack;
  stack.grid = dom.grid;
  bool any = false;
  if (cfg.doc.contains("rasters")) {
    for (const auto& r : cfg.doc["rasters"]) {
      const auto grid_file = read_ascii_grid(r.at("path").get<std::string>());
      stack.add(raster_to_layer(grid_file, r.at("name").get<std::string>(),
                                dom.grid, dom.proj, r.value("log1p", false)));
      any = true;
    }
  }
  if (cfg.doc.contains("cities")) {
    const auto cities = load_cities(cfg.doc["cities"].get<std::string>());
    stack.add(mdis_layer(dom.grid, cities, dom.proj));
    any = true;
  }
  if (cfg.doc.value("coords", false)) {
    stack.add(coordinate_layer(dom.grid, dom.proj, true));
    stack.add(coordinate_layer(dom.grid, dom.proj, false));
    any = true;
  }
  if (!any) return nullptr;
  CovariateStack standardized = standardize(stack);
  if (cfg.doc.value("coords", false)) {
    standardized.add(interaction_layer(standardized, "lon", "lat"));
  }
  return std::make_shared<const CovariateStack>(std::move(standardized));
}

inline std::string kresult_csv(const KResult& k) {
  std::ostringstream out;
  out << "r,khat,mean,lo,hi\n";
  for (std::size_t i = 0; i < k.r.size(); ++i) {
    out << fmt_double(k.r[i]) << ',';
    out << (i < k.khat.size() ? fmt_double(k.khat[i]) : std::string()) << ',';
    out << (i < k.mean.size() ? fmt_double(k.mean[i]) : std::string()) << ',';
    out << (i < k.lo.size() ? fmt_double(k.lo[i]) : std::string()) << ',';
    out << (i < k.hi.size() ? fmt_double(k.hi[i]) : std::string()) << '\n';
  }
  return out.str();
}

inline std::vector<double> config_radii(const RunConfig& cfg, const Window& w) {
  int n_radii = 64;
  double r_max = 0.0;
  if (cfg.doc.contains("k")) {
    n_radii = cfg.doc["k"].value("n_radii", 64);
    r_max = cfg.doc["k"].value("r_max", 0.0);
  }
  if (r_max <= 0.0) return default_radii(w, n_radii);
  std::vector<double> r(n_radii);
  for (int i = 0; i < n_radii; ++i)
    r[i] = r_max * static_cast<double>(i) / (n_radii - 1);
  return r;
}

// Direction of the maximum departure from the simulation mean.
inline std::string departure_direction(const KResult& k, bool cross) {
  double best = 0.0;
  double signed_dep = 0.0;
  for (std::size_t i = 0; i < k.r.size(); ++i) {
    const double d = k.khat[i] - k.mean[i];
    if (std::abs(d) > best) {
      best = std::abs(d);
      signed_dep = d;
    }
  }
  if (signed_dep > 0.0) return cross ? "attraction" : "clustering";
  if (signed_dep < 0.0) return cross ? "repulsion" : "dispersion";
  return "none";
}

inline void write_config_echo(const RunConfig& cfg) {
  write_text_file(cfg.out_path("config.json"), cfg.doc.dump(2) + "\n");
}

inline McmcConfig mcmc_from_config(const RunConfig& cfg, bool bivariate) {
  McmcConfig m = McmcConfig::desk();
  if (cfg.doc.contains("mcmc")) {
    const auto& j = cfg.doc["mcmc"];
    const std::string preset = j.value("preset", std::string("desk"));
    if (preset == "paper")
      m = bivariate ? McmcConfig::paper_bivariate()
                    : McmcConfig::paper_univariate();
    else if (preset != "desk")
      throw std::runtime_error("config: mcmc.preset must be desk|paper");
    m.burn_in = j.value("burn_in", m.burn_in);
    m.thin = j.value("thin", m.thin);
    m.n_samples = j.value("n_samples", m.n_samples);
    m.latent_step = j.value("latent_step", m.latent_step);
    m.beta_step = j.value("beta_step", m.beta_step);
    m.cov_step = j.value("cov_step", m.cov_step);
    m.beta_prior_var = j.value("beta_prior_var", m.beta_prior_var);
    m.log_sigma_prior_var = j.value("log_sigma_prior_var", m.log_sigma_prior_var);
    m.log_phi_prior_var = j.value("log_phi_prior_var", m.log_phi_prior_var);
  }
  m.seed = cfg.seed;
  return m;
}

inline std::vector<std::string> beta_names(
    const std::shared_ptr<const CovariateStack>& stack) {
  std::vector<std::string> names{"intercept"};
  if (stack)
    for (const auto& l : stack->layers) names.push_back(l.name);
  return names;
}

inline std::string posterior_csv(const PosteriorSamples& s,
                                 const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "draw";
  for (int j = 0; j < s.processes; ++j)
    for (const auto& n : names) out << ",beta" << (j + 1) << '_' << n;
  const std::size_t n_comp = s.draws.front().sigma.size();
  for (std::size_t k = 0; k < n_comp; ++k)
    out << ",sigma" << (k + 1) << ",phi" << (k + 1);
  out << '\n';
  for (std::size_t t = 0; t < s.draws.size(); ++t) {
    out << (t + 1);
    for (int j = 0; j < s.processes; ++j)
      for (double b : s.draws[t].beta[j]) out << ',' << fmt_double(b);
    for (std::size_t k = 0; k < n_comp; ++k)
      out << ',' << fmt_double(s.draws[t].sigma[k]) << ','
          << fmt_double(s.draws[t].phi[k]);
    out << '\n';
  }
  return out.str();
}

// Equal-tailed summary (median, 2.5%, 97.5%) in the Table 2/3 layout.
inline nlohmann::json posterior_summary(const PosteriorSamples& s,
                                        const std::vector<std::string>& names) {
  auto summarize = [](std::vector<double> v) {
    nlohmann::json j;
    j["median"] = quantile_nearest(v, 0.5);
    j["lower"] = quantile_nearest(v, 0.025);
    j["upper"] = quantile_nearest(v, 0.975);
    return j;
  };
  nlohmann::json out;
  for (int j = 0; j < s.processes; ++j) {
    nlohmann::json proc;
    for (std::size_t col = 0; col < names.size(); ++col) {
      std::vector<double> v(s.draws.size());
      for (std::size_t t = 0; t < s.draws.size(); ++t)
        v[t] = s.draws[t].beta[j][col];
      proc[names[col]] = summarize(std::move(v));
    }
    out["coefficients"]["process" + std::to_string(j + 1)] = proc;
  }
  const std::size_t n_comp = s.draws.front().sigma.size();
  const std::vector<std::string> comp_names =
      n_comp == 1 ? std::vector<std::string>{"process1"}
                  : std::vector<std::string>{"process1", "process2", "common"};
  for (std::size_t k = 0; k < n_comp; ++k) {
    std::vector<double> vs(s.draws.size()), vp(s.draws.size());
    for (std::size_t t = 0; t < s.draws.size(); ++t) {
      vs[t] = s.draws[t].sigma[k];
      vp[t] = s.draws[t].phi[k];
    }
    out["covariance"][comp_names[k]]["sigma"] = summarize(std::move(vs));
    out["covariance"][comp_names[k]]["phi"] = summarize(std::move(vp));
  }
  return out;
}

inline PosteriorSamples parse_posterior_csv(const std::string& text,
                                            const GridSpec& grid, int sign) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("posterior CSV: empty file");
  const auto header = split_csv(line);
  std::vector<std::vector<std::size_t>> beta_cols;  // per process
  std::vector<std::size_t> sigma_cols, phi_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string& h = header[i];
    if (h.rfind("beta", 0) == 0) {
      const std::size_t proc = static_cast<std::size_t>(h[4] - '1');
      if (beta_cols.size() <= proc) beta_cols.resize(proc + 1);
      beta_cols[proc].push_back(i);
    } else if (h.rfind("sigma", 0) == 0) {
      sigma_cols.push_back(i);
    } else if (h.rfind("phi", 0) == 0) {
      phi_cols.push_back(i);
    }
  }
  if (beta_cols.empty() || sigma_cols.empty() ||
      sigma_cols.size() != phi_cols.size())
    throw std::runtime_error("posterior CSV: unrecognized header");
  PosteriorSamples s;
  s.processes = static_cast<int>(beta_cols.size());
  s.sign = sign;
  s.grid = grid;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    ParamDraw d;
    for (const auto& cols : beta_cols) {
      std::vector<double> b;
      for (auto c : cols) b.push_back(parse_double(f.at(c), "beta"));
      d.beta.push_back(std::move(b));
    }
    for (auto c : sigma_cols) d.sigma.push_back(parse_double(f.at(c), "sigma"));
    for (auto c : phi_cols) d.phi.push_back(parse_double(f.at(c), "phi"));
    s.draws.push_back(std::move(d));
  }
  if (s.draws.empty()) throw std::runtime_error("posterior CSV: no draws");
  return s;
}

}  // namespace detail

// ---- diagnose: K / cross-K diagnostics with CSR envelopes ----

inline void cmd_diagnose(const RunConfig& cfg) {
  const auto dom = detail::load_domain(cfg);
  const auto groups = detail::load_groups(cfg, dom);
  const auto radii = detail::config_radii(cfg, *dom.window);
  int n_sim = 200;
  double level = 0.95, bandwidth_cfg = 0.0;
  if (cfg.doc.contains("k")) {
    n_sim = cfg.doc["k"].value("n_sim", 200);
    level = cfg.doc["k"].value("level", 0.95);
    bandwidth_cfg = cfg.doc["k"].value("bandwidth", 0.0);
  }

  nlohmann::json report;
  std::vector<IntensityField> fields;
  std::vector<double> bandwidths;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    if (g.pattern.size() < 2)
      throw std::runtime_error("diagnose: group '" + g.label +
                               "' has fewer than 2 events");
    const double h =
        bandwidth_cfg > 0.0 ? bandwidth_cfg : default_bandwidth(g.pattern);
    const auto field = kernel_intensity(g.pattern, h, dom.grid);
    const auto khat = k_inhom(g.pattern, field.point_values, radii);
    const auto env =
        poisson_envelope(field, dom.window, h, n_sim, radii, level,
                         Rng(cfg.seed).substream(10 + gi).seed());
    const auto test = csr_test(khat, env.curves);
    const KResult k = env.to_kresult(khat);
    write_text_file(cfg.out_path("k_" + g.label + ".csv"),
                    detail::kresult_csv(k));
    write_text_file(cfg.out_path("k_" + g.label + ".svg"),
                    kresult_svg(k, "inhomogeneous K: " + g.label));
    nlohmann::json entry;
    entry["n"] = g.pattern.size();
    entry["bandwidth_km"] = h;
    entry["p_value"] = test.p_value;
    entry["statistic"] = test.statistic;
    const bool reject = test.p_value <= 1.0 - level;
    entry["reject_csr"] = reject;
    entry["verdict"] = reject ? "reject CSR (" +
                                    detail::departure_direction(k, false) + ")"
                              : "fail to reject CSR";
    report["k"][g.label] = entry;
    fields.push_back(field);
    bandwidths.push_back(h);
  }

  if (groups.size() == 2) {
    const auto l1 = fields[0].point_values;
    const auto l2 = fields[1].point_values;
    const auto khat =
        cross_k_inhom(groups[0].pattern, groups[1].pattern, l1, l2, radii);
    const auto env = cross_poisson_envelope(
        fields[0], fields[1], dom.window, bandwidths[0], bandwidths[1], n_sim,
        radii, level, Rng(cfg.seed).substream(99).seed());
    const auto test = csr_test(khat, env.curves);
    const KResult k = env.to_kresult(khat, KResult::Cross);
    const std::string label = groups[0].label + "_" + groups[1].label;
    write_text_file(cfg.out_path("k_cross_" + label + ".csv"),
                    detail::kresult_csv(k));
    write_text_file(cfg.out_path("k_cross_" + label + ".svg"),
                    kresult_svg(k, "cross K: " + label));
    nlohmann::json entry;
    entry["p_value"] = test.p_value;
    entry["statistic"] = test.statistic;
    const bool reject = test.p_value <= 1.0 - level;
    entry["reject_independence"] = reject;
    entry["verdict"] =
        reject ? "reject independence (" + detail::departure_direction(k, true) + ")"
               : "fail to reject independence";
    report["cross"][label] = entry;
  }

  write_text_file(cfg.out_path("report.json"), report.dump(2) + "\n");
  detail::write_config_echo(cfg);
}

// ---- simulate: LGCP / Poisson pattern generation ----

namespace detail {

inline LgcpModel model_from_config(const RunConfig& cfg, const Domain& dom,
                                   std::shared_ptr<const CovariateStack> stack,
                                   double sigma, double phi) {
  const auto& m = cfg.require("model");
  LgcpModel model;
  model.grid = dom.grid;
  model.covariates = std::move(stack);
  if (m.contains("beta")) {
    for (const auto& row : m.at("beta")) {
      std::vector<double> b;
      for (const auto& v : row) b.push_back(v.get<double>());
      model.beta.push_back(std::move(b));
    }
  } else {
    model.beta = {{0.0}};
  }
  if (m.contains("lmc")) {
    const auto& l = m.at("lmc");
    LmcParams p;
    p.w1 = {l.at("sigma_w1").get<double>(), l.at("phi_w1").get<double>()};
    p.w2 = {l.at("sigma_w2").get<double>(), l.at("phi_w2").get<double>()};
    p.w = {l.at("sigma_w").get<double>(), l.at("phi_w").get<double>()};
    p.sign = cfg.doc.value("sign", -1);
    model.lmc = p;
    if (model.beta.size() == 1) model.beta.push_back(model.beta[0]);
  } else {
    model.cov = ExpCovParams{sigma, phi};
  }
  return model;
}

}  // namespace detail

inline void cmd_simulate(const RunConfig& cfg) {
  const auto dom = detail::load_domain(cfg);
  auto stack = detail::build_stack(cfg, dom);
  const auto& m = cfg.require("model");

  if (m.contains("lattice")) {
    // Parameter lattice: one panel per (sigma, phi) pair, Fig. A.1 style.
    std::vector<double> sigmas, phis;
    for (const auto& v : m.at("lattice").at("sigma"))
      sigmas.push_back(v.get<double>());
    for (const auto& v : m.at("lattice").at("phi"))
      phis.push_back(v.get<double>());
    std::vector<FieldPanel> panels;
    nlohmann::json counts;
    std::size_t idx = 0;
    for (double sigma : sigmas)
      for (double phi : phis) {
        const auto model =
            detail::model_from_config(cfg, dom, stack, sigma, phi);
        const auto sim = simulate_lgcp(model, dom.window,
                                       Rng(cfg.seed).substream(idx).seed());
        const std::string tag =
            "s" + fmt_double(sigma, 6) + "_p" + fmt_double(phi, 6);
        write_text_file(
            cfg.out_path("events_" + tag + ".csv"),
            events_to_csv(pattern_to_events(sim.pattern, dom.proj)));
        write_ascii_grid(cfg.out_path("field_" + tag + ".asc"),
                         values_to_ascii(dom.grid, sim.field.values));
        FieldPanel panel;
        panel.label = "sigma=" + fmt_double(sigma, 6) +
                      " phi=" + fmt_double(phi, 6);
        panel.grid = dom.grid;
        panel.values = sim.field.values;
        panel.points = sim.pattern.points;
        panels.push_back(std::move(panel));
        counts[tag] = sim.pattern.size();
        ++idx;
      }
    write_text_file(cfg.out_path("panels.svg"),
                    field_panels_svg(panels, static_cast<int>(phis.size())));
    nlohmann::json summary;
    summary["counts"] = counts;
    write_text_file(cfg.out_path("summary.json"), summary.dump(2) + "\n");
  } else if (m.contains("lmc")) {
    const auto model = detail::model_from_config(cfg, dom, stack, 0.0, 1.0);
    const auto sim =
        simulate_bivariate_lgcp(model, dom.window, Rng(cfg.seed).substream(0).seed());
    EventTable all = pattern_to_events(sim.pattern1, dom.proj, "1");
    const EventTable t2 = pattern_to_events(sim.pattern2, dom.proj, "2");
    for (std::size_t i = 0; i < t2.rows.size(); ++i) {
      all.rows.push_back(t2.rows[i]);
      all.rows.back().id = std::to_string(sim.pattern1.size() + i + 1);
    }
    write_text_file(cfg.out_path("events.csv"), events_to_csv(all));
    write_ascii_grid(cfg.out_path("field_e1.asc"),
                     values_to_ascii(dom.grid, sim.fields.e1.values));
    write_ascii_grid(cfg.out_path("field_e2.asc"),
                     values_to_ascii(dom.grid, sim.fields.e2.values));
    nlohmann::json summary;
    summary["n1"] = sim.pattern1.size();
    summary["n2"] = sim.pattern2.size();
    write_text_file(cfg.out_path("summary.json"), summary.dump(2) + "\n");
  } else {
    const double sigma = m.value("sigma", 1.0);
    const double phi = m.value("phi", 1.0);
    const auto model = detail::model_from_config(cfg, dom, stack, sigma, phi);
    const auto sim =
        simulate_lgcp(model, dom.window, Rng(cfg.seed).substream(0).seed());
    write_text_file(cfg.out_path("events.csv"),
                    events_to_csv(pattern_to_events(sim.pattern, dom.proj)));
    write_ascii_grid(cfg.out_path("field.asc"),
                     values_to_ascii(dom.grid, sim.field.values));
    nlohmann::json summary;
    summary["n"] = sim.pattern.size();
    write_text_file(cfg.out_path("summary.json"), summary.dump(2) + "\n");
  }
  detail::write_config_echo(cfg);
}

// ---- fit: minimum contrast then MCMC ----

inline void cmd_fit(const RunConfig& cfg) {
  const auto dom = detail::load_domain(cfg);
  const auto groups = detail::load_groups(cfg, dom);
  if (groups.empty() || groups.size() > 2)
    throw std::runtime_error("fit: need one group (univariate) or two (bivariate)");
  auto stack = detail::build_stack(cfg, dom);
  const bool bivariate = groups.size() == 2;

  // MCM per pattern against a homogeneous mean intensity; phi-hat centers the
  // log-phi prior and sets the grid-resolution warning threshold.
  const auto radii = detail::config_radii(cfg, *dom.window);
  nlohmann::json mcm_json;
  std::vector<MomentFit> mcm;
  for (const auto& g : groups) {
    IntensityField flat;
    flat.grid = dom.grid;
    flat.values.assign(dom.grid.cell_count(), 0.0);
    const double lam =
        static_cast<double>(g.pattern.size()) / dom.window->area;
    for (std::size_t c = 0; c < flat.values.size(); ++c)
      if (dom.grid.mask[c]) flat.values[c] = lam;
    const MomentFit fit =
        min_contrast(g.pattern, flat, radii[1], radii.back());
    nlohmann::json j;
    j["sigma"] = fit.sigma;
    j["phi_km"] = fit.phi;
    j["contrast"] = fit.contrast;
    j["on_boundary"] = fit.on_boundary;
    mcm_json[g.label] = j;
    mcm.push_back(fit);
  }
  write_text_file(cfg.out_path("mcm.json"), mcm_json.dump(2) + "\n");

  McmcConfig mc = detail::mcmc_from_config(cfg, bivariate);
  if (bivariate) {
    const double lp1 = std::log(mcm[0].phi), lp2 = std::log(mcm[1].phi);
    mc.log_phi_prior_mean = {lp1, lp2, 0.5 * (lp1 + lp2)};
    mc.mcm_phi_hint = std::min(mcm[0].phi, mcm[1].phi);
  } else {
    mc.log_phi_prior_mean = {std::log(mcm[0].phi)};
    mc.mcm_phi_hint = mcm[0].phi;
  }

  const PosteriorSamples samples =
      bivariate ? fit_bivariate(groups[0].pattern, groups[1].pattern, stack,
                                dom.grid, cfg.doc.value("sign", -1), mc)
                : fit_univariate(groups[0].pattern, stack, dom.grid, mc);

  const auto names = detail::beta_names(stack);
  write_text_file(cfg.out_path("posterior.csv"),
                  detail::posterior_csv(samples, names));
  write_text_file(cfg.out_path("summary.json"),
                  detail::posterior_summary(samples, names).dump(2) + "\n");
  nlohmann::json trace;
  trace["acceptance"] = samples.acceptance;
  trace["warnings"] = samples.warnings;
  trace["draws"] = samples.draws.size();
  write_text_file(cfg.out_path("trace.json"), trace.dump(2) + "\n");
  detail::write_config_echo(cfg);
}

// ---- report: posterior products ----

inline void cmd_report(const RunConfig& cfg) {
  const auto dom = detail::load_domain(cfg);
  const auto& rep = cfg.require("report");
  const int sign = cfg.doc.value("sign", -1);
  const auto samples_a = detail::parse_posterior_csv(
      read_text_file(rep.at("posterior").get<std::string>()), dom.grid, sign);
  const auto radii = detail::config_radii(cfg, *dom.window);

  const auto curves = posterior_correlation_curves(samples_a, radii);
  for (const auto& band : curves) {
    std::ostringstream csv;
    csv << "r,median,lo,hi\n";
    for (std::size_t i = 0; i < band.r.size(); ++i)
      csv << fmt_double(band.r[i]) << ',' << fmt_double(band.median[i]) << ','
          << fmt_double(band.lo[i]) << ',' << fmt_double(band.hi[i]) << '\n';
    write_text_file(cfg.out_path("corr_" + band.name + ".csv"), csv.str());
    write_text_file(cfg.out_path("corr_" + band.name + ".svg"),
                    curve_band_svg(band.r, band.median, band.lo, band.hi,
                                   band.name));
  }

  auto stack = detail::build_stack(cfg, dom);
  if (rep.contains("posterior_b")) {
    const auto samples_b = detail::parse_posterior_csv(
        read_text_file(rep.at("posterior_b").get<std::string>()), dom.grid,
        sign);
    // Model B uses the same covariates aggregated to a coarse grid and
    // broadcast back, when report.coarse is given; otherwise the same stack.
    auto stack_b = stack;
    if (rep.contains("coarse") && stack) {
      const int cnx = rep.at("coarse").value("nx", 8);
      const int cny = rep.at("coarse").value("ny", 8);
      GridSpec coarse = GridSpec::cover(*dom.window, cnx, cny);
      stack_b = std::make_shared<const CovariateStack>(
          refine(aggregate(*stack, coarse), dom.grid));
    }
    LgcpModel ma, mb;
    ma.grid = dom.grid;
    ma.covariates = stack;
    mb.grid = dom.grid;
    mb.covariates = stack_b;
    const int n_sim = rep.value("n_sim", 500);
    const auto maps = intensity_ratio_map(samples_a, ma, samples_b, mb, n_sim,
                                          Rng(cfg.seed).substream(7).seed());
    for (std::size_t j = 0; j < maps.size(); ++j) {
      const std::string tag = "ratio_p" + std::to_string(j + 1);
      write_ascii_grid(cfg.out_path(tag + ".asc"),
                       values_to_ascii(dom.grid, maps[j].median));
      std::vector<double> flags(maps[j].flag.size(), 0.0);
      for (std::size_t c = 0; c < flags.size(); ++c)
        flags[c] = maps[j].flag[c] == '+' ? 1.0
                   : maps[j].flag[c] == 'x' ? 2.0
                                            : 0.0;
      write_ascii_grid(cfg.out_path(tag + "_flags.asc"),
                       values_to_ascii(dom.grid, flags));
    }
  }

  if (samples_a.processes == 2 && rep.value("fitted_cross_k", false)) {
    LgcpModel model;
    model.grid = dom.grid;
    model.covariates = stack;
    model.beta.assign(2, std::vector<double>(detail::beta_names(stack).size(), 0.0));
    model.lmc = samples_a.lmc_at(0);
    const int n_sim = rep.value("n_sim", 180);
    const KResult k =
        fitted_cross_k(samples_a, model, dom.window, n_sim, radii,
                       Rng(cfg.seed).substream(8).seed());
    write_text_file(cfg.out_path("fitted_cross_k.csv"),
                    detail::kresult_csv(k));
    write_text_file(cfg.out_path("fitted_cross_k.svg"),
                    kresult_svg(k, "fitted cross K"));
  }
  detail::write_config_echo(cfg);
}

}  // namespace ppkit
