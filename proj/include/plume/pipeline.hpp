#pragma once

// Stage runner: each stage reads upstream artifacts, writes its outputs into a staging
// directory with a manifest (config hash, upstream manifest hashes, output hashes) and
// publishes it by rename. A stage whose manifest still matches is skipped.

#include <algorithm>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "plume/aodmap.hpp"
#include "plume/artifacts.hpp"
#include "plume/campaign.hpp"
#include "plume/config.hpp"
#include "plume/diagnostics.hpp"
#include "plume/inversion.hpp"
#include "plume/io.hpp"
#include "plume/studies.hpp"

#ifndef PLUME_VERSION
#define PLUME_VERSION "0.0.0"
#endif

namespace plume::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr const char* kToolVersion = "plume " PLUME_VERSION;

struct Context {
  config::PipelineConfig cfg;
  int jobs = 1;
  bool force = false;
  std::set<std::string> diagnose_what{"mass-loss", "mahalanobis", "reaction-rates", "rank"};
  std::ostream* log = &std::cerr;

  fs::path dir(const std::string& relative) const {
    const fs::path p(relative);
    return p.is_absolute() ? p : fs::path(cfg.paths.work_dir) / p;
  }
};

struct Stage {
  std::string name;
  std::string config::Paths::*path;
  std::vector<std::string> inputs;    // required upstream stages
  std::vector<std::string> sections;  // config sections hashed into the manifest
  bool optional_inputs = false;       // report: every upstream stage is optional
};

inline const std::vector<Stage>& stages() {
  using P = config::Paths;
  static const std::vector<Stage> s{
      {"gen-data", &P::data, {}, {"datagen"}},
      {"fit-rbf", &P::fits, {"gen-data"}, {"rbf"}},
      {"reduce-wind", &P::wind, {"gen-data", "fit-rbf"}, {"windreduce"}},
      {"train", &P::train, {"gen-data", "fit-rbf", "reduce-wind"}, {"flowmap"}},
      {"fit-aod", &P::model, {"fit-rbf", "train"}, {"aodmap"}},
      {"build-noise", &P::noise, {"gen-data", "reduce-wind", "fit-aod"}, {"inversion"}},
      {"invert", &P::inversion, {"gen-data", "fit-rbf", "fit-aod", "build-noise"}, {"inversion"}},
      {"diagnose", &P::diagnostics, {"gen-data", "fit-rbf", "reduce-wind"}, {"diagnostics", "flowmap", "inversion"}},
      {"report", &P::report,
       {"gen-data", "fit-rbf", "reduce-wind", "train", "fit-aod", "build-noise", "invert", "diagnose"}, {}, true},
  };
  return s;
}

inline const Stage& stage(const std::string& name) {
  for (const auto& s : stages()) if (s.name == name) return s;
  throw ConfigError("unknown stage '" + name + "'");
}

inline fs::path stage_dir(const Context& ctx, const std::string& name) { return ctx.dir(ctx.cfg.paths.*(stage(name).path)); }

// ---- manifests -------------------------------------------------------------------------

inline std::string config_hash(const Context& ctx, const Stage& s) {
  const json full = config::to_json(ctx.cfg);
  json part = json::object();
  part["seed"] = full["seed"];
  for (const auto& sec : s.sections) part[sec] = full[sec];
  if (s.name == "diagnose") part["what"] = std::vector<std::string>(ctx.diagnose_what.begin(), ctx.diagnose_what.end());
  return io::hash_text(io::dump(part));
}

inline std::vector<std::string> list_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "manifest.json") out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline json output_hashes(const fs::path& dir) {
  json out = json::object();
  for (const auto& f : list_files(dir)) out[f] = io::hash_file(dir / f);
  return out;
}

/// Hashes of the upstream manifests. Required inputs must exist.
inline json input_hashes(const Context& ctx, const Stage& s) {
  json out = json::object();
  for (const auto& in : s.inputs) {
    const fs::path m = stage_dir(ctx, in) / "manifest.json";
    if (!fs::exists(m)) {
      if (s.optional_inputs) continue;
      throw DataError("stage '" + s.name + "' needs the output of stage '" + in + "' (" + m.string() +
                      " not found); run `plume " + in + "` first");
    }
    const json up = io::read_json(m);
    if (up.value("outputs", json::object()) != output_hashes(stage_dir(ctx, in))) {
      throw DataError("outputs of stage '" + in + "' were modified after its manifest was written; rerun `plume " + in +
                      " --force`");
    }
    out[in] = io::hash_file(m);
  }
  return out;
}

inline json make_manifest(const Context& ctx, const Stage& s, const json& inputs, const fs::path& out_dir) {
  return {{"stage", s.name},
          {"tool_version", kToolVersion},
          {"config_hash", config_hash(ctx, s)},
          {"inputs", inputs},
          {"outputs", output_hashes(out_dir)}};
}

/// Empty string if the stage output at `dir` is current; otherwise the reason it is stale.
inline std::string staleness(const Context& ctx, const Stage& s, const json& inputs, const fs::path& dir) {
  const fs::path m = dir / "manifest.json";
  if (!fs::exists(m)) return "no manifest";
  json j;
  try {
    j = io::read_json(m);
  } catch (const DataError& e) {
    return e.what();
  }
  if (j.value("tool_version", "") != kToolVersion) return "tool version changed";
  if (j.value("config_hash", "") != config_hash(ctx, s)) return "config changed";
  if (j.value("inputs", json::object()) != inputs) return "upstream artifacts changed";
  if (j.value("outputs", json::object()) != output_hashes(dir)) return "outputs were modified";
  return "";
}

struct ChainReport {
  bool ok = true;
  std::vector<std::string> problems;
  std::vector<std::string> verified;
};

/// Checks every present manifest: outputs hash to their recorded values and recorded
/// input hashes equal the current upstream manifests.
inline ChainReport verify_chain(const Context& ctx) {
  ChainReport r;
  for (const auto& s : stages()) {
    const fs::path dir = stage_dir(ctx, s.name), m = dir / "manifest.json";
    if (!fs::exists(m)) continue;
    const json j = io::read_json(m);
    bool ok = true;
    if (j.value("outputs", json::object()) != output_hashes(dir)) {
      r.problems.push_back(s.name + ": outputs do not match the manifest");
      ok = false;
    }
    const json inputs = j.value("inputs", json::object());
    for (const auto& [in, h] : inputs.items()) {
      const fs::path up = stage_dir(ctx, in) / "manifest.json";
      if (!fs::exists(up)) {
        r.problems.push_back(s.name + ": upstream stage '" + in + "' has no manifest");
        ok = false;
      } else if (io::hash_file(up) != h.get<std::string>()) {
        r.problems.push_back(s.name + ": upstream stage '" + in + "' changed since this stage ran");
        ok = false;
      }
    }
    if (ok) r.verified.push_back(s.name);
    r.ok = r.ok && ok;
  }
  return r;
}

// ---- shared helpers --------------------------------------------------------------------

struct Campaign {
  datagen::RawDataset ds;
  CampaignFits fits;
  wind::WindReduction wind;
  std::vector<flow::Sample> samples;
};

inline Campaign load_campaign(const Context& ctx, bool with_wind = true) {
  Campaign c;
  c.ds = art::load_dataset(stage_dir(ctx, "gen-data"));
  c.fits = art::load_fits(stage_dir(ctx, "fit-rbf"), c.ds);
  if (with_wind) {
    c.wind = art::load_wind(stage_dir(ctx, "reduce-wind"), c.ds);
    c.samples = make_samples(c.ds, c.fits, c.wind.coords);
  }
  return c;
}

inline std::vector<double> vec(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline double rel_l2(const std::vector<double>& a, std::span<const double> b) { return diag::relative_l2(a, b); }

/// Concatenated wind coordinates over the first n_days days (Mahalanobis feature vector).
inline Vec stacked_wind(const wind::TrajectoryWind& w, int n_days) {
  const auto days = wind::concat_days(w);
  if (static_cast<int>(days.size()) < n_days) throw DataError("wind series shorter than the observation window");
  const Eigen::Index d = days[0].size();
  Vec out(d * n_days);
  for (int k = 0; k < n_days; ++k) out.segment(k * d, d) = days[static_cast<std::size_t>(k)];
  return out;
}

// ---- stage bodies ----------------------------------------------------------------------

inline void run_gen_data(const Context& ctx, const fs::path& out) {
  const auto ds = datagen::build_campaign(ctx.cfg.datagen, ctx.jobs);
  art::save_dataset(out, ds);
}

inline void run_fit_rbf(const Context& ctx, const fs::path& out) {
  const auto ds = art::load_dataset(stage_dir(ctx, "gen-data"));
  const auto fits = fit_campaign(ds, static_cast<std::size_t>(ctx.cfg.rbf.n_rbf), ctx.jobs, ctx.cfg.rbf.fit);
  art::save_fits(out, ds, fits, ctx.cfg.rbf);
}

inline void run_reduce_wind(const Context& ctx, const fs::path& out) {
  const auto c = load_campaign(ctx, false);
  const auto red = wind::reduce_wind(c.ds, CampaignFits::coords(c.fits.so2), ctx.cfg.windreduce, ctx.jobs);
  art::save_wind(out, c.ds, red, ctx.cfg.windreduce);
}

inline flow::TrainOptions train_options(const Context& ctx) {
  auto o = ctx.cfg.flowmap;
  o.seed = ctx.cfg.derive(o.seed);
  return o;
}

inline void run_train(const Context& ctx, const fs::path& out) {
  const auto c = load_campaign(ctx);
  const auto tr = select(c.ds, c.samples, datagen::Split::kTrain), va = select(c.ds, c.samples, datagen::Split::kValidation);
  auto base = flow::make_params(ctx.cfg.rbf.n_rbf, ctx.cfg.windreduce.rank);
  base.molar_so2 = c.ds.config.molar_mass_so2;
  base.molar_sulfate = c.ds.config.molar_mass_sulfate;
  base.dt = c.ds.config.dt_days;
  base.rho0 = flow::initial_mass_ratio(tr);
  const auto res = flow::train(tr, va, base, train_options(ctx));
  if (res.aborted) throw NumericalError("flow map training diverged: " + res.message);
  json history{{"train_loss", res.train_loss},       {"val_loss", res.val_loss},
               {"initial_loss", res.initial_loss},   {"initial_val_loss", res.initial_val_loss},
               {"best_epoch", res.best_epoch},       {"clamp_events", res.clamp_events},
               {"message", res.message}};
  json err = json::object();
  err["train"] = diag::prediction_error(res.params, c.ds, c.samples, datagen::Split::kTrain);
  if (!va.empty()) err["validation"] = diag::prediction_error(res.params, c.ds, c.samples, datagen::Split::kValidation);
  io::write_json(out / "flowmap.json", {{"params", art::flow_json(res.params)},
                                        {"history", history},
                                        {"prediction_error", err},
                                        {"n_train", tr.size()},
                                        {"n_validation", va.size()}});
}

inline flow::FlowMapParams load_trained_flow(const Context& ctx) {
  const fs::path file = stage_dir(ctx, "train") / "flowmap.json";
  if (!fs::exists(file)) throw DataError("missing " + file.string() + " (produced by stage 'train')");
  const json j = io::read_json(file);
  return art::flow_from_json(io::get<json>(j, "params", file.string()), file.string());
}

inline void run_fit_aod(const Context& ctx, const fs::path& out) {
  const auto ds = art::load_dataset(stage_dir(ctx, "gen-data"));
  const auto fits = art::load_fits(stage_dir(ctx, "fit-rbf"), ds);
  std::vector<aod::Vec> s, q, sv, qv;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto split = ds.trajectories[i].split;
    if (split == datagen::Split::kTest) continue;
    for (std::size_t k = 0; k < fits.sulfate[i].size(); ++k) {
      (split == datagen::Split::kTrain ? s : sv).push_back(fits.sulfate[i][k].coords.to_vector());
      (split == datagen::Split::kTrain ? q : qv).push_back(fits.aod[i][k].coords.to_vector());
    }
  }
  inv::Models m{load_trained_flow(ctx), aod::fit(s, q, ctx.cfg.aodmap.rank_tol), ctx.cfg.rbf.fit.domain};
  m.aod.shape_min = ctx.cfg.aodmap.shape_min;
  double worst = 0.0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    const Vec pred = aod::apply(m.aod, sv[i]).q;
    worst = std::max(worst, ((pred - qv[i]).cwiseAbs().array() / qv[i].cwiseAbs().array().max(1e-300)).maxCoeff());
  }
  json j = art::model_json(m);
  j["aod_validation_max_rel_error"] = sv.empty() ? json(nullptr) : json(worst);
  io::write_json(out / "model.json", j);
}

inline inv::ObservationOperator observation_operator(const Context& ctx) {
  return inv::ObservationOperator::uniform(ctx.cfg.inversion.n_obs, ctx.cfg.inversion.n_days, ctx.cfg.rbf.fit.domain.period);
}

inline void run_build_noise(const Context& ctx, const fs::path& out) {
  const auto ds = art::load_dataset(stage_dir(ctx, "gen-data"));
  const auto red = art::load_wind(stage_dir(ctx, "reduce-wind"), ds);
  const auto m = art::load_model(stage_dir(ctx, "fit-aod") / "model.json");
  const auto& ic = ctx.cfg.inversion;
  art::NoiseModel n;
  n.obs = observation_operator(ctx);
  n.sigma_noise = ic.sigma_noise;
  n.prior = inv::default_prior(ic.prior, ctx.cfg.rbf.n_rbf);
  n.grid_lon = ds.grid.lon;
  n.bae_estimator = ic.bae_estimator;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.trajectories[i].split != datagen::Split::kTrain) continue;
    n.ensemble.push_back(wind::concat_days(red.coords[i]));
    n.ensemble_names.push_back(ds.trajectories[i].name());
  }
  n.background = inv::estimate_background(ds.split(datagen::Split::kTrain), ds.grid, n.obs);
  if (ic.bae_estimator == "sampled") {
    n.bae = inv::estimate_bae_sampled(m, n.obs, [&](Rng& rng) { return n.prior.draw(rng); }, n.ensemble, ic.bae_samples,
                                      ctx.cfg.derive(mix_seed(ic.seed, 0xbae)), ctx.jobs);
  } else {
    n.bae = inv::estimate_bae(m, n.obs, n.prior.mean, n.ensemble, ctx.jobs);
  }
  // Fails early (NumericalError) if the assembled covariance is not SPD.
  inv::BaeLikelihood::assemble(n.background, n.bae, n.sigma_noise);
  art::save_noise(out, n);
}

// ---- inversion -------------------------------------------------------------------------

struct Truth {
  std::string name;
  std::vector<double> so2_day0;  // raw field on the model grid
  Vec fit_r0;                    // RBF fit of day 0
  // Raw fields for the fan figure: [species][day index] on the model grid.
  std::vector<std::vector<std::vector<double>>> fields;
};

inline std::vector<int> fan_days(int n_days) {
  std::vector<int> d{1, (n_days + 1) / 2, n_days};
  d.erase(std::unique(d.begin(), d.end()), d.end());
  return d;
}

/// Per-wind predictions at r0 for the fan figure: [species][day][member] fields.
inline std::vector<std::vector<std::vector<std::vector<double>>>> fan(const inv::Models& m, const art::NoiseModel& n,
                                                                      const Vec& r0, int jobs) {
  const auto days = fan_days(n.obs.n_days);
  std::vector<std::vector<std::vector<std::vector<double>>>> out(
      3, std::vector<std::vector<std::vector<double>>>(days.size(), std::vector<std::vector<double>>(n.ensemble.size())));
  parallel_for(n.ensemble.size(), jobs, [&](std::size_t e) {
    const auto& w = n.ensemble[e];
    const auto ro = flow::rollout(m.flow, r0, inv::WindSeries(w.begin(), w.begin() + n.obs.n_days));
    for (std::size_t d = 0; d < days.size(); ++d) {
      const auto k = static_cast<std::size_t>(days[d]);
      const Vec q = aod::apply(m.aod, ro.s[k]).q;
      const Vec* states[3] = {&ro.r[k], &ro.s[k], &q};
      for (int sp = 0; sp < 3; ++sp) out[static_cast<std::size_t>(sp)][d][e] = inv::decode(*states[sp], n.grid_lon, m.domain);
    }
  });
  return out;
}

inline json start_json(const inv::StartReport& s) {
  return {{"start", vec(s.start)},     {"r0", vec(s.r0)},       {"objective", s.objective},
          {"iterations", s.iterations}, {"evaluations", s.evaluations}, {"converged", s.converged},
          {"failed", s.failed},         {"message", s.message},  {"trace", s.trace}};
}

struct InversionResult {
  json report;
  std::vector<std::vector<std::vector<std::vector<double>>>> fan;
};

/// MAP + Laplace + ablations for one observation vector.
inline InversionResult invert_one(const inv::Models& m, const art::NoiseModel& n, const art::Observations& o,
                                  const config::InversionConfig& ic, std::uint64_t seed, int jobs, const Truth* truth) {
  if (o.n_days != n.obs.n_days || o.lon != n.obs.lon) {
    throw DataError("observations do not match the noise model's observation operator (longitudes / days)");
  }
  inv::MapOptions mo;
  mo.starts = ic.starts;
  mo.seed = seed;
  mo.shape_min = ic.shape_min;
  mo.lbfgs = ic.lbfgs;
  mo.jobs = jobs;
  const auto problem = [&](bool background, bool bae) {
    return inv::InverseProblem{&m, n.obs, n.ensemble, inv::BaeLikelihood::assemble(n.background, n.bae, n.sigma_noise, background, bae),
                               n.prior, o.data, true};
  };
  const auto full = problem(true, true);
  const auto map = inv::map_estimate(full, mo);
  const auto lap = inv::posterior_laplace(full, map.r0, ic.laplace_rel_step);
  const auto decoded = inv::decode(map.r0, n.grid_lon, m.domain);
  json r{{"map", {{"r0", vec(map.r0)}, {"objective", map.objective}, {"best_start", map.best}}},
         {"decoded_map", decoded},
         {"starts", json::array()},
         {"laplace",
          {{"mean", vec(lap.mean)},
           {"covariance", io::to_json(lap.covariance)},
           {"sd", vec(lap.covariance.diagonal().cwiseSqrt())},
           {"regularized", lap.regularized},
           {"eigenvalue_floor", lap.floor}}},
         {"prior", {{"mean", vec(n.prior.mean)}, {"sd", vec(n.prior.cov.diagonal().cwiseSqrt())}}},
         {"observations", {{"trajectory", o.trajectory}, {"n", o.data.size()}, {"sigma_obs", o.sigma_obs}}}};
  for (const auto& s : map.starts) r["starts"].push_back(start_json(s));
  json samples = json::array();
  for (const auto& s : lap.sample(static_cast<std::size_t>(ic.posterior_samples), mix_seed(seed, 0x1a9))) samples.push_back(vec(s));
  r["posterior_samples"] = samples;
  if (truth) {
    r["truth"] = {{"trajectory", truth->name}, {"fit_r0", vec(truth->fit_r0)}, {"so2_day0", truth->so2_day0}};
    r["rel_l2"] = rel_l2(decoded, truth->so2_day0);
  }
  r["ablation"] = json::array();
  if (ic.ablation) {
    const std::pair<const char*, std::pair<bool, bool>> variants[] = {{"no-bae", {true, false}},
                                                                      {"no-background-no-bae", {false, false}}};
    for (const auto& [name, flags] : variants) {
      json a{{"name", name}, {"use_background", flags.first}, {"use_bae", flags.second}};
      try {
        const auto res = inv::map_estimate(problem(flags.first, flags.second), mo);
        a["r0"] = vec(res.r0);
        a["objective"] = res.objective;
        const auto dec = inv::decode(res.r0, n.grid_lon, m.domain);
        a["decoded_map"] = dec;
        if (truth) a["rel_l2"] = rel_l2(dec, truth->so2_day0);
      } catch (const NumericalError& e) {
        a["failure"] = e.what();
      }
      r["ablation"].push_back(a);
    }
  }
  return {r, fan(m, n, map.r0, jobs)};
}

inline void save_fan(const fs::path& dir, const std::string& name,
                     const std::vector<std::vector<std::vector<std::vector<double>>>>& f) {
  std::vector<double> flat;
  for (const auto& sp : f) for (const auto& d : sp) for (const auto& e : d) flat.insert(flat.end(), e.begin(), e.end());
  const std::size_t n_lon = f.empty() || f[0].empty() || f[0][0].empty() ? 0 : f[0][0][0].size();
  io::write_array(dir, name, flat, {f.size(), f.empty() ? 0 : f[0].size(), f.empty() || f[0].empty() ? 0 : f[0][0].size(), n_lon},
                  {{"dims", {"species", "day", "member", "lon"}}, {"species", {"so2", "sulfate", "aod"}}});
}

inline void run_invert(const Context& ctx, const fs::path& out) {
  const auto ds = art::load_dataset(stage_dir(ctx, "gen-data"));
  const auto fits = art::load_fits(stage_dir(ctx, "fit-rbf"), ds);
  const auto m = art::load_model(stage_dir(ctx, "fit-aod") / "model.json");
  const auto n = art::load_noise(stage_dir(ctx, "build-noise"));
  const auto& ic = ctx.cfg.inversion;
  const std::size_t n_lon = ds.grid.n_lon();
  json entries = json::array();
  double worst = 0.0;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& t = ds.trajectories[i];
    if (t.split != datagen::Split::kTest) continue;
    art::Observations o;
    o.data = inv::synthesize_observations(t, ds.grid, n.obs, ic.sigma_obs, ctx.cfg.derive(mix_seed(ic.obs_seed, static_cast<std::uint64_t>(t.id))));
    o.lon = n.obs.lon;
    o.n_days = n.obs.n_days;
    o.sigma_obs = ic.sigma_obs;
    o.trajectory = t.name();
    io::write_json(out / "obs" / (t.name() + ".json"), art::observations_json(o));
    Truth truth;
    truth.name = t.name();
    const auto d0 = datagen::day_slice(t.alpha_v, n_lon, 0);
    truth.so2_day0.assign(d0.begin(), d0.end());
    truth.fit_r0 = fits.so2[i][0].coords.to_vector();
    auto res = invert_one(m, n, o, ic, ctx.cfg.derive(ic.seed), ctx.jobs, &truth);
    res.report["ensemble"] = t.ensemble;
    res.report["mass_tg"] = t.mass_tg;
    worst = std::max(worst, res.report["rel_l2"].get<double>());
    save_fan(out, "fan_" + t.name(), res.fan);
    std::vector<double> truth_fields;
    const std::vector<double>* raw[3] = {&t.alpha_v, &t.beta_v, &t.rho_v};
    for (const auto* f : raw) {
      for (int d : fan_days(n.obs.n_days)) {
        const auto s = datagen::day_slice(*f, n_lon, static_cast<std::size_t>(d));
        truth_fields.insert(truth_fields.end(), s.begin(), s.end());
      }
    }
    io::write_array(out, "fan_truth_" + t.name(), truth_fields, {3, fan_days(n.obs.n_days).size(), n_lon},
                    {{"dims", {"species", "day", "lon"}}});
    entries.push_back(res.report);
  }
  if (entries.empty()) throw DataError("invert: the dataset has no test trajectories");
  io::write_json(out / "report.json", {{"trajectories", entries},
                                       {"fan_days", fan_days(n.obs.n_days)},
                                       {"grid_lon", n.grid_lon},
                                       {"n_ensemble", n.ensemble.size()},
                                       {"max_rel_l2", worst}});
}

// ---- diagnostics -----------------------------------------------------------------------

inline json rate_summary_json(const study::RateSummary& s) {
  return {{"mean_std", s.mean_std}, {"band_lo", s.band_lo}, {"band_hi", s.band_hi}, {"band_mean", s.band_mean}, {"undefined", s.undefined}};
}

inline void run_diagnose(const Context& ctx, const fs::path& out) {
  const auto c = load_campaign(ctx);
  const auto& dc = ctx.cfg.diagnostics;
  const auto& what = ctx.diagnose_what;
  json summary = json::object();

  if (what.count("mass-loss")) {
    std::vector<std::vector<std::string>> rows;
    double raw_dev = 0.0, fit_dev = 0.0;
    for (std::size_t i = 0; i < c.ds.trajectories.size(); ++i) {
      const auto curve = diag::mass_loss_curve(c.ds.trajectories[i], c.ds.config, c.fits.so2[i], c.fits.sulfate[i]);
      for (std::size_t d = 0; d < curve.raw.size(); ++d) {
        rows.push_back({c.ds.trajectories[i].name(), std::to_string(d), io::csv_number(curve.raw[d]), io::csv_number(curve.fit[d])});
        raw_dev = std::max(raw_dev, std::abs(curve.raw[d] - 1.0));
        fit_dev = std::max(fit_dev, std::abs(curve.fit[d] - 1.0));
      }
    }
    io::write_csv(out / "mass_loss.csv", {"trajectory", "day", "raw_ratio", "fit_ratio"}, rows);
    summary["mass_loss"] = {{"max_raw_deviation", raw_dev}, {"max_fit_deviation", fit_dev}, {"bound", 0.15},
                            {"within_bound", fit_dev <= 0.15}};
  }

  if (what.count("mahalanobis")) {
    const int nd = ctx.cfg.inversion.n_days;
    std::vector<Vec> train;
    for (std::size_t i = 0; i < c.ds.trajectories.size(); ++i) {
      if (c.ds.trajectories[i].split == datagen::Split::kTrain) train.push_back(stacked_wind(c.wind.coords[i], nd));
    }
    std::vector<std::vector<std::string>> rows;
    json d = json::object();
    for (std::size_t i = 0; i < c.ds.trajectories.size(); ++i) {
      const auto& t = c.ds.trajectories[i];
      const double dist = diag::mahalanobis(train, stacked_wind(c.wind.coords[i], nd), dc.mahalanobis_tol);
      rows.push_back({t.name(), datagen::split_name(t.split), std::to_string(t.ensemble), io::csv_number(dist)});
      if (t.split == datagen::Split::kTest) d[t.name()] = dist;
    }
    io::write_csv(out / "mahalanobis.csv", {"trajectory", "split", "ensemble", "distance"}, rows);
    summary["mahalanobis"] = {{"test", d}, {"n_train", train.size()}, {"dimension", train.empty() ? 0 : train[0].size()},
                              {"reference", {{"ens09", 1530}, {"ens10", 6372}}}};
  }

  if (what.count("reaction-rates")) {
    auto opt = dc.rates;
    opt.seed = ctx.cfg.derive(opt.seed);
    const auto st = study::reaction_rate_study(c.ds, c.samples, train_options(ctx), opt, ctx.jobs);
    std::vector<std::vector<std::string>> rows, bands;
    json cells = json::array();
    for (const auto& cell : st.cells) {
      for (std::size_t k = 0; k < cell.networks.size(); ++k) {
        const auto& nw = cell.networks[k];
        rows.push_back({std::to_string(cell.depth), std::to_string(cell.width), std::to_string(nw.seed),
                        io::csv_number(nw.schedule.learning_rate), io::csv_number(nw.schedule.decay), io::csv_number(nw.mean_std),
                        k == cell.best_network ? "1" : "0", nw.failure});
      }
      cells.push_back({{"depth", cell.depth}, {"width", cell.width}, {"best", cell.best}, {"best_network", cell.best_network}});
    }
    const auto add_band = [&](const std::string& label, const study::RateSummary& s) {
      for (std::size_t k = 0; k < s.band_lo.size(); ++k) {
        bands.push_back({label, std::to_string(k), io::csv_number(s.band_lo[k]), io::csv_number(s.band_hi[k]), io::csv_number(s.band_mean[k])});
      }
    };
    add_band("training", st.training);
    json best = json::object();
    for (int depth : dc.rates.depths) {
      if (const auto* cell = study::best_of_depth(st, depth)) {
        add_band("depth" + std::to_string(depth), cell->best_summary);
        best[std::to_string(depth)] = {{"width", cell->width}, {"mean_std", cell->best}, {"summary", rate_summary_json(cell->best_summary)}};
      }
    }
    io::write_csv(out / "rate_table.csv", {"depth", "width", "seed", "learning_rate", "decay", "mean_lambda_std", "best", "failure"}, rows);
    io::write_csv(out / "rate_bands.csv", {"series", "step", "lo", "hi", "mean"}, bands);
    json ordering = nullptr;
    const auto* shallow = study::best_of_depth(st, 0);
    const auto* deep = study::best_of_depth(st, 2);
    if (shallow && deep) ordering = shallow->best <= deep->best;
    json box{{"r0_lo", vec(st.box.r0_lo)}, {"r0_hi", vec(st.box.r0_hi)}, {"wind_lo", vec(st.box.wind_lo)},
             {"wind_hi", vec(st.box.wind_hi)}, {"r0_source", st.box.r0_source}, {"wind_source", st.box.wind_source}};
    summary["reaction_rates"] = {{"cells", cells},
                                 {"best_by_depth", best},
                                 {"training", rate_summary_json(st.training)},
                                 {"sampling_box", box},
                                 {"n_samples", st.n_samples},
                                 {"depth_ordering_holds", ordering},
                                 {"reference_depth0_width7", study::RateStudy::kReferenceDepth0Width7},
                                 {"schedules", config::to_json(ctx.cfg)["diagnostics"]["rates"]["schedules"]}};
  }

  if (what.count("rank")) {
    const auto rs = study::rank_study(c.ds, c.fits, c.wind, dc.rank.ranks, dc.rank.seeds, train_options(ctx),
                                      ctx.cfg.derive(dc.rank.seed), ctx.jobs);
    std::vector<std::vector<std::string>> rows;
    json table = json::array();
    for (const auto& row : rs.rows) {
      for (std::size_t s = 0; s < row.errors.size(); ++s) {
        rows.push_back({std::to_string(row.rank), std::to_string(s), io::csv_number(row.errors[s]), row.failures[s]});
      }
      table.push_back({{"rank", row.rank}, {"mean", row.mean}, {"errors", row.errors}});
    }
    io::write_csv(out / "rank_table.csv", {"rank", "seed", "validation_error", "failure"}, rows);
    summary["rank"] = {{"table", table}, {"argmin", rs.best_rank}, {"singular_values", rs.singular_values}};
  }
  io::write_json(out / "diagnostics.json", summary);
}

}  // namespace plume::pipeline
