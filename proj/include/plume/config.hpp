#pragma once

// Pipeline configuration: every module's options in one JSON document, with defaults,
// strict key checking and derived per-stage seeds.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "plume/datagen.hpp"
#include "plume/error.hpp"
#include "plume/flowmap.hpp"
#include "plume/inversion.hpp"
#include "plume/optim.hpp"
#include "plume/rbf.hpp"
#include "plume/studies.hpp"
#include "plume/windreduce.hpp"

namespace plume::config {

using json = nlohmann::json;

struct Paths {
  std::string work_dir = "plume-run";
  std::string data = "data";
  std::string fits = "fits";
  std::string wind = "wind";
  std::string train = "train";
  std::string model = "model";
  std::string noise = "noise";
  std::string inversion = "inversion";
  std::string diagnostics = "diagnostics";
  std::string report = "report";
};

struct RbfConfig {
  int n_rbf = 1;
  rbf::FitOptions fit;
};

struct AodConfig {
  double rank_tol = 1e-12;
  double shape_min = 1e-3;
};

struct InversionConfig {
  int n_obs = 72;
  int n_days = 9;
  double sigma_obs = 0.012;
  double sigma_noise = 0.01;
  std::uint64_t obs_seed = 11;
  inv::PriorConfig prior;
  std::string bae_estimator = "prior-mean";  // or "sampled"
  int bae_samples = 200;
  int starts = 8;
  std::uint64_t seed = 3;
  double shape_min = 1e-3;
  optim::LbfgsOptions lbfgs;
  double laplace_rel_step = 1e-4;
  int posterior_samples = 200;
  bool ablation = true;
};

struct RankStudyConfig {
  std::vector<int> ranks{2, 4, 5, 7};
  int seeds = 5;
  std::uint64_t seed = 42;
};

struct DiagnosticsConfig {
  RankStudyConfig rank;
  study::RateStudyOptions rates;
  double mahalanobis_tol = 1e-10;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  Paths paths;
  datagen::SimulationConfig datagen;
  RbfConfig rbf;
  wind::WindOptions windreduce;
  flow::TrainOptions flowmap;
  AodConfig aodmap;
  InversionConfig inversion;
  DiagnosticsConfig diagnostics;

  /// Stage seed derived from the global seed. Global seed 0 keeps the module seeds as given.
  std::uint64_t derive(std::uint64_t module_seed) const { return seed == 0 ? module_seed : mix_seed(seed, module_seed); }

  void validate() const;
};

namespace detail {

/// Binds struct fields to JSON keys in one place for both directions.
class Binder {
 public:
  Binder(json& j, bool reading, std::string where) : j_(j), reading_(reading), where_(std::move(where)) {
    if (reading_ && !j_.is_object()) throw ConfigError(where_ + ": expected an object");
    if (!reading_ && j_.is_null()) j_ = json::object();
  }

  /// Rejects keys that no field claimed.
  void finish() const {
    if (!reading_) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

  template <class T>
  void operator()(const char* key, T& value) {
    seen_.insert(key);
    if (!reading_) {
      j_[key] = value;
      return;
    }
    if (!j_.contains(key)) return;
    try {
      value = j_.at(key).template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type (expected " + type_name<T>() + ")");
    }
  }

  template <class Fn>
  void section(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (reading_ && !j_.contains(key)) return;
    json& child = j_[key];
    Binder b(child, reading_, where_ + "." + key);
    fn(b);
    b.finish();
  }

  bool reading() const { return reading_; }
  json& raw(const char* key) {
    seen_.insert(key);
    return j_[key];
  }
  bool has(const char* key) const { return j_.contains(key); }
  const std::string& where() const { return where_; }

 private:
  template <class T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "boolean";
    else if constexpr (std::is_integral_v<T>) return "integer";
    else if constexpr (std::is_floating_point_v<T>) return "number";
    else if constexpr (std::is_same_v<T, std::string>) return "string";
    else return "array";
  }

  json& j_;
  bool reading_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void bind(Binder& b, PipelineConfig& c) {
  b("seed", c.seed);
  b.section("paths", [&](Binder& p) {
    p("work_dir", c.paths.work_dir);
    p("data", c.paths.data);
    p("fits", c.paths.fits);
    p("wind", c.paths.wind);
    p("train", c.paths.train);
    p("model", c.paths.model);
    p("noise", c.paths.noise);
    p("inversion", c.paths.inversion);
    p("diagnostics", c.paths.diagnostics);
    p("report", c.paths.report);
  });
  b.section("datagen", [&](Binder& d) {
    auto& s = c.datagen;
    d("n_lon", s.n_lon);
    d("n_lat", s.n_lat);
    d("n_alt", s.n_alt);
    d("n_days", s.n_days);
    d("dt_days", s.dt_days);
    d("injection_masses_tg", s.injection_masses_tg);
    d("test_masses_tg", s.test_masses_tg);
    d("ensemble_seeds", s.ensemble_seeds);
    d("n_train_ensembles", s.n_train_ensembles);
    d("n_validation_ensembles", s.n_validation_ensembles);
    d("n_test_ensembles", s.n_test_ensembles);
    d("volcano_lon_deg", s.volcano_lon_deg);
    d("initial_width_deg", s.initial_width_deg);
    d("reaction_rate_per_day", s.reaction_rate_per_day);
    d("spinup_days", s.spinup_days);
    d("diffusion_deg2_per_day", s.diffusion_deg2_per_day);
    d("base_wind_deg_per_day", s.base_wind_deg_per_day);
    d("wind_shear", s.wind_shear);
    d("wind_lat_factor", s.wind_lat_factor);
    d("wind_noise", s.wind_noise);
    d("plume_lofting_levels", s.plume_lofting_levels);
    d("background_aod_mean", s.background_aod_mean);
    d("background_aod_std", s.background_aod_std);
    d("aod_per_gram", s.aod_per_gram);
    d("so2_threshold_g", s.so2_threshold_g);
    d("molar_mass_so2", s.molar_mass_so2);
    d("molar_mass_sulfate", s.molar_mass_sulfate);
  });
  b.section("rbf", [&](Binder& r) {
    r("n_rbf", c.rbf.n_rbf);
    r("period", c.rbf.fit.domain.period);
    r("truncation", c.rbf.fit.domain.truncation);
    r("max_outer", c.rbf.fit.max_outer);
    r("inner_steps", c.rbf.fit.inner_steps);
    r("rel_tol", c.rbf.fit.rel_tol);
    r("shape_min", c.rbf.fit.shape_min);
    r("shape_max", c.rbf.fit.shape_max);
  });
  b.section("windreduce", [&](Binder& w) {
    w("tau", c.windreduce.tau);
    w("rank", c.windreduce.rank);
    w("grid_points", c.windreduce.grid_points);
    w("bandwidth", c.windreduce.bandwidth);
  });
  b.section("flowmap", [&](Binder& f) {
    auto& o = c.flowmap;
    f("lookahead", o.lookahead);
    f("epochs", o.epochs);
    f("optimizer", o.optimizer);
    f("learning_rate", o.learning_rate);
    f("decay", o.decay);
    f("seed", o.seed);
    f("hidden", o.hidden);
    f("monotone_center", o.monotone_center);
    f("init_bias", o.init_bias);
    f("divergence_factor", o.divergence_factor);
  });
  b.section("aodmap", [&](Binder& a) {
    a("rank_tol", c.aodmap.rank_tol);
    a("shape_min", c.aodmap.shape_min);
  });
  b.section("inversion", [&](Binder& i) {
    auto& v = c.inversion;
    i("n_obs", v.n_obs);
    i("n_days", v.n_days);
    i("sigma_obs", v.sigma_obs);
    i("sigma_noise", v.sigma_noise);
    i("obs_seed", v.obs_seed);
    i.section("prior", [&](Binder& p) {
      p("mass_tg", v.prior.mass_tg);
      p("center_deg", v.prior.center_deg);
      p("width_deg", v.prior.width_deg);
      p("center_std_deg", v.prior.center_std_deg);
      p("shape_rel_std", v.prior.shape_rel_std);
      p("coeff_rel_std", v.prior.coeff_rel_std);
    });
    i("bae_estimator", v.bae_estimator);
    i("bae_samples", v.bae_samples);
    i("starts", v.starts);
    i("seed", v.seed);
    i("shape_min", v.shape_min);
    i.section("lbfgs", [&](Binder& l) {
      l("memory", v.lbfgs.memory);
      l("max_iterations", v.lbfgs.max_iterations);
      l("max_backtracks", v.lbfgs.max_backtracks);
      l("armijo", v.lbfgs.armijo);
      l("gtol", v.lbfgs.gtol);
      l("ftol", v.lbfgs.ftol);
    });
    i("laplace_rel_step", v.laplace_rel_step);
    i("posterior_samples", v.posterior_samples);
    i("ablation", v.ablation);
  });
  b.section("diagnostics", [&](Binder& d) {
    auto& v = c.diagnostics;
    d.section("rank", [&](Binder& r) {
      r("ranks", v.rank.ranks);
      r("seeds", v.rank.seeds);
      r("seed", v.rank.seed);
    });
    d.section("rates", [&](Binder& r) {
      r("depths", v.rates.depths);
      r("widths", v.rates.widths);
      r("seeds_per_schedule", v.rates.seeds_per_schedule);
      r("n_samples", v.rates.n_samples);
      r("seed", v.rates.seed);
      json& sched = r.raw("schedules");
      if (r.reading()) {
        if (!sched.is_null()) {
          if (!sched.is_array()) throw ConfigError(r.where() + ".schedules: expected an array");
          v.rates.schedules.clear();
          for (const auto& s : sched) {
            if (!s.is_object() || !s.contains("learning_rate") || !s.contains("decay") || s.size() != 2) {
              throw ConfigError(r.where() + ".schedules: each entry needs exactly learning_rate and decay");
            }
            try {
              v.rates.schedules.push_back({s.at("learning_rate").get<double>(), s.at("decay").get<double>()});
            } catch (const json::exception&) {
              throw ConfigError(r.where() + ".schedules: learning_rate and decay must be numbers");
            }
          }
        }
      } else {
        sched = json::array();
        for (const auto& s : v.rates.schedules) sched.push_back({{"learning_rate", s.learning_rate}, {"decay", s.decay}});
      }
    });
    d("mahalanobis_tol", v.mahalanobis_tol);
  });
}

}  // namespace detail

inline json to_json(const PipelineConfig& c) {
  json j = json::object();
  PipelineConfig copy = c;
  detail::Binder b(j, false, "config");
  detail::bind(b, copy);
  return j;
}

inline void PipelineConfig::validate() const {
  datagen.validate();
  if (rbf.n_rbf < 1) throw ConfigError("rbf.n_rbf must be >= 1");
  if (!(rbf.fit.shape_min > 0.0) || !(rbf.fit.shape_max > rbf.fit.shape_min)) throw ConfigError("rbf shape bounds are invalid");
  if (!(windreduce.tau >= 0.0)) throw ConfigError("windreduce.tau must be >= 0");
  if (windreduce.rank < 1) throw ConfigError("windreduce.rank must be >= 1");
  if (windreduce.grid_points < 2) throw ConfigError("windreduce.grid_points must be >= 2");
  if (flowmap.lookahead < 1) throw ConfigError("flowmap.lookahead must be >= 1");
  if (flowmap.epochs < 0) throw ConfigError("flowmap.epochs must be >= 0");
  if (flowmap.optimizer != "adam" && flowmap.optimizer != "gd") throw ConfigError("flowmap.optimizer must be 'adam' or 'gd'");
  if (!(flowmap.learning_rate > 0.0)) throw ConfigError("flowmap.learning_rate must be > 0");
  const auto& v = inversion;
  if (v.n_obs < 1) throw ConfigError("inversion.n_obs must be >= 1");
  if (v.n_days < 1 || v.n_days > datagen.n_days - 1) {
    throw ConfigError("inversion.n_days must lie in [1, datagen.n_days - 1]");
  }
  if (!(v.sigma_obs >= 0.0)) throw ConfigError("inversion.sigma_obs must be >= 0");
  if (!(v.sigma_noise > 0.0)) throw ConfigError("inversion.sigma_noise must be > 0");
  if (v.bae_estimator != "prior-mean" && v.bae_estimator != "sampled") {
    throw ConfigError("inversion.bae_estimator must be 'prior-mean' or 'sampled'");
  }
  if (v.starts < 1) throw ConfigError("inversion.starts must be >= 1");
  if (v.posterior_samples < 0) throw ConfigError("inversion.posterior_samples must be >= 0");
  if (!(v.laplace_rel_step > 0.0)) throw ConfigError("inversion.laplace_rel_step must be > 0");
  if (diagnostics.rank.seeds < 1 || diagnostics.rank.ranks.empty()) throw ConfigError("diagnostics.rank needs ranks and seeds >= 1");
  for (int r : diagnostics.rank.ranks) if (r < 1) throw ConfigError("diagnostics.rank.ranks must be >= 1");
  const auto& r = diagnostics.rates;
  if (r.n_samples < 1 || r.depths.empty() || r.widths.empty() || r.schedules.empty() || r.seeds_per_schedule < 1) {
    throw ConfigError("diagnostics.rates needs depths, widths, schedules, seeds_per_schedule >= 1 and n_samples >= 1");
  }
  for (int d : r.depths) if (d < 0) throw ConfigError("diagnostics.rates.depths must be >= 0");
  for (int w : r.widths) if (w < 1) throw ConfigError("diagnostics.rates.widths must be >= 1");
}

inline PipelineConfig from_json(json j) {
  PipelineConfig c;
  detail::Binder b(j, true, "config");
  detail::bind(b, c);
  b.finish();
  return c;
}

/// Defaults overlaid with the file (if any), then PLUME_SEED, then validated.
inline PipelineConfig load(const std::string& path) {
  PipelineConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
      j = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
      throw ConfigError("cannot parse config file " + path + ": " + e.what());
    }
    c = from_json(std::move(j));
  }
  if (const char* env = std::getenv("PLUME_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') throw ConfigError(std::string("PLUME_SEED is not a non-negative integer: ") + env);
    c.seed = v;
  }
  c.validate();
  return c;
}

}  // namespace plume::config
