#pragma once

// Synthetic source-tagged transport campaign: a 1D periodic advection-diffusion-reaction
// surrogate for the SO2 -> sulfate -> AOD chain, driven by seeded pseudo-3D zonal winds.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "plume/error.hpp"
#include "plume/parallel.hpp"
#include "plume/random.hpp"

namespace plume::datagen {

enum class Split { kTrain, kValidation, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split label '" + s + "'");
}

struct SimulationConfig {
  int n_lon = 144;
  int n_lat = 6;
  int n_alt = 5;
  int n_days = 10;  // N_t + 1
  double dt_days = 1.0;

  std::vector<double> injection_masses_tg{3.0, 5.0, 7.0, 13.0, 15.0};
  std::vector<double> test_masses_tg{10.0};
  std::vector<std::uint64_t> ensemble_seeds{101, 102, 103, 104, 105, 106, 107, 108, 109, 110};
  int n_train_ensembles = 7;
  int n_validation_ensembles = 1;
  int n_test_ensembles = 2;

  double volcano_lon_deg = 120.0;
  double initial_width_deg = 8.0;  // Gaussian standard deviation of the day-0 SO2 bump
  double reaction_rate_per_day = 0.055;
  double spinup_days = 0.65;  // in-place reaction time before day 0
  double diffusion_deg2_per_day = 2.0;

  double base_wind_deg_per_day = 12.0;  // westward speed
  double wind_shear = 0.5;              // fractional speed change from bottom to top level
  double wind_lat_factor = 0.1;         // fractional slowdown at the latitude band edge
  double wind_noise = 0.75;             // deg/day scale of the seeded perturbation
  double plume_lofting_levels = 0.6;    // altitude shift (levels) per e-fold of mass vs 10 Tg

  double background_aod_mean = 0.02;
  double background_aod_std = 0.01;
  double aod_per_gram = 1e-11;  // column AOD per gram of sulfate
  double so2_threshold_g = 100.0;

  double molar_mass_so2 = 64.066;
  double molar_mass_sulfate = 96.06;

  void validate() const {
    if (n_lon < 64) throw ConfigError("n_lon must be >= 64");
    if (n_lat < 1 || n_alt < 1) throw ConfigError("n_lat and n_alt must be >= 1");
    if (n_days < 2) throw ConfigError("n_days must be >= 2");
    if (!(dt_days > 0.0)) throw ConfigError("dt_days must be > 0");
    for (double m : injection_masses_tg) if (!(m > 0.0)) throw ConfigError("injection masses must be > 0");
    for (double m : test_masses_tg) if (!(m > 0.0)) throw ConfigError("test masses must be > 0");
    // Zero is allowed so pure-transport configurations can be built.
    if (reaction_rate_per_day < 0.0 || reaction_rate_per_day >= 1.0) {
      throw ConfigError("reaction_rate_per_day must lie in [0,1)");
    }
    if (diffusion_deg2_per_day < 0.0) throw ConfigError("diffusion must be non-negative");
    if (!(initial_width_deg > 0.0)) throw ConfigError("initial_width_deg must be > 0");
    if (spinup_days < 0.0) throw ConfigError("spinup_days must be >= 0");
    if (background_aod_std < 0.0 || background_aod_mean < 0.0) throw ConfigError("background AOD stats must be >= 0");
    if (!(molar_mass_so2 > 0.0 && molar_mass_sulfate > 0.0)) throw ConfigError("molar masses must be > 0");
    if (n_train_ensembles < 1 || n_validation_ensembles < 0 || n_test_ensembles < 0) {
      throw ConfigError("split ensemble counts must be non-negative (train >= 1)");
    }
  }

  std::size_t required_seeds() const {
    return static_cast<std::size_t>(n_train_ensembles + n_validation_ensembles + n_test_ensembles);
  }
};

/// Longitude/latitude/altitude grids plus the per-(lat,alt) column measure. The measure
/// sums to one, so column integration of a unit field returns one.
struct Grid {
  std::vector<double> lon;  // degrees in [0, 360)
  std::vector<double> lat;  // degrees
  std::vector<double> alt;  // level index units (0..n_alt-1)
  std::vector<double> column_measure;  // [lat][alt]

  std::size_t n_lon() const { return lon.size(); }
  std::size_t n_column() const { return lat.size() * alt.size(); }
  double dlon() const { return 360.0 / static_cast<double>(lon.size()); }

  static Grid make(const SimulationConfig& cfg) {
    Grid g;
    g.lon.resize(static_cast<std::size_t>(cfg.n_lon));
    for (int i = 0; i < cfg.n_lon; ++i) g.lon[static_cast<std::size_t>(i)] = 360.0 * i / cfg.n_lon;
    g.lat.resize(static_cast<std::size_t>(cfg.n_lat));
    for (int j = 0; j < cfg.n_lat; ++j) {
      g.lat[static_cast<std::size_t>(j)] = cfg.n_lat == 1 ? 0.0 : -30.0 + 60.0 * (j + 0.5) / cfg.n_lat;
    }
    g.alt.resize(static_cast<std::size_t>(cfg.n_alt));
    for (int k = 0; k < cfg.n_alt; ++k) g.alt[static_cast<std::size_t>(k)] = k;
    g.column_measure.assign(g.n_column(), 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < g.lat.size(); ++j) {
      for (std::size_t k = 0; k < g.alt.size(); ++k) {
        const double w = std::cos(g.lat[j] * std::numbers::pi / 180.0);
        g.column_measure[j * g.alt.size() + k] = w;
        total += w;
      }
    }
    for (auto& m : g.column_measure) m /= total;
    return g;
  }
};

/// One simulated (ensemble, source) pair. 1D fields are [day][lon]; 3D fields are
/// [day][lon][lat][alt], all row-major.
struct Trajectory {
  int id = 0;
  int ensemble = 0;  // 1-based ensemble number
  std::uint64_t seed = 0;
  double mass_tg = 0.0;
  Split split = Split::kTrain;

  std::vector<double> alpha_v;     // SO2, grams per longitude cell
  std::vector<double> beta_v;      // sulfate, grams per longitude cell
  std::vector<double> rho_v;       // volcanic AOD
  std::vector<double> rho_b;       // background AOD
  std::vector<double> omega;       // zonal wind, deg/day (negative = westward)
  std::vector<double> alpha_v_3d;  // SO2 density per unit column measure

  std::string name() const {
    return "ens" + std::to_string(ensemble) + "_m" + std::to_string(static_cast<int>(std::lround(mass_tg * 1000.0))) + "gg";
  }
};

struct RawDataset {
  SimulationConfig config;
  Grid grid;
  std::vector<Trajectory> trajectories;

  std::vector<const Trajectory*> split(Split s) const {
    std::vector<const Trajectory*> out;
    for (const auto& t : trajectories) if (t.split == s) out.push_back(&t);
    return out;
  }
};

inline std::span<const double> day_slice(const std::vector<double>& field, std::size_t n_lon, std::size_t day) {
  return std::span<const double>(field).subspan(day * n_lon, n_lon);
}

/// Integrates a [lon][lat][alt] field over latitude and altitude with the column measure.
inline std::vector<double> column_integrate(std::span<const double> field_3d, std::size_t n_lon,
                                            std::span<const double> column_measure) {
  const std::size_t nc = column_measure.size();
  if (nc == 0 || field_3d.size() != n_lon * nc) {
    throw DataError("column_integrate: field size " + std::to_string(field_3d.size()) + " does not match " +
                    std::to_string(n_lon) + " x " + std::to_string(nc));
  }
  std::vector<double> out(n_lon, 0.0);
  for (std::size_t i = 0; i < n_lon; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < nc; ++c) s += field_3d[i * nc + c] * column_measure[c];
    out[i] = s;
  }
  return out;
}

namespace detail {

/// Circular shift of a real periodic signal by `shift` grid cells using the DFT
/// (exact for band-limited signals; the mean is untouched).
inline void spectral_shift(std::vector<double>& f, double shift) {
  const std::size_t n = f.size();
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> cos_t(n), sin_t(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double ang = two_pi * static_cast<double>(j) / static_cast<double>(n);
    cos_t[j] = std::cos(ang);
    sin_t[j] = std::sin(ang);
  }
  std::vector<std::complex<double>> spec(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (k * i) % n;
      re += f[i] * cos_t[j];
      im -= f[i] * sin_t[j];
    }
    spec[k] = {re, im};
  }
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double ang = -two_pi * static_cast<double>(k) * shift / static_cast<double>(n);
    if (2 * k == n) {
      spec[k] *= std::cos(ang);
    } else {
      spec[k] *= std::complex<double>(std::cos(ang), std::sin(ang));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double v = spec[0].real();
    for (std::size_t k = 1; k <= n / 2; ++k) {
      const std::size_t j = (k * i) % n;
      const double term = spec[k].real() * cos_t[j] - spec[k].imag() * sin_t[j];
      v += (2 * k == n) ? term : 2.0 * term;
    }
    f[i] = v / static_cast<double>(n);
  }
}

/// Explicit three-point diffusion step; `nu` = D dt / dx^2 <= 0.5 keeps it monotone.
inline void diffuse(std::vector<double>& f, double nu) {
  const std::size_t n = f.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double l = f[(i + n - 1) % n], r = f[(i + 1) % n];
    out[i] = f[i] + nu * (l - 2.0 * f[i] + r);
  }
  f.swap(out);
}

/// Seeded smooth wind perturbation: an ensemble-wide drift plus low-wavenumber zonal
/// modes, both evolving as random walks so ensemble spread grows with time.
struct WindState {
  double drift = 0.0;
  double amp[3][2]{};
};

inline std::vector<double> make_wind(const SimulationConfig& cfg, const Grid& grid, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x77696e64));
  const std::size_t n_lon = grid.n_lon(), n_lat = grid.lat.size(), n_alt = grid.alt.size();
  const std::size_t per_day = n_lon * n_lat * n_alt;
  std::vector<double> omega(per_day * static_cast<std::size_t>(cfg.n_days));
  WindState st;
  for (int d = 0; d < cfg.n_days; ++d) {
    st.drift += rng.normal() * 0.5;
    for (auto& mode : st.amp) {
      for (double& v : mode) v = 0.8 * v + 0.6 * rng.normal();
    }
    const double growth = 0.3 + 0.7 * static_cast<double>(d) / std::max(1, cfg.n_days - 1);
    for (std::size_t i = 0; i < n_lon; ++i) {
      const double x = grid.lon[i] * std::numbers::pi / 180.0;
      double pert = st.drift;
      for (int j = 0; j < 3; ++j) {
        pert += (st.amp[j][0] * std::cos((j + 1) * x) + st.amp[j][1] * std::sin((j + 1) * x)) / (j + 1.0);
      }
      pert *= cfg.wind_noise * growth;
      for (std::size_t la = 0; la < n_lat; ++la) {
        const double lat_frac = grid.lat[la] / 30.0;
        for (std::size_t al = 0; al < n_alt; ++al) {
          const double alt_frac = n_alt == 1 ? 0.0 : static_cast<double>(al) / (n_alt - 1.0) - 0.5;
          const double speed = cfg.base_wind_deg_per_day * (1.0 + cfg.wind_shear * alt_frac) *
                               (1.0 - cfg.wind_lat_factor * lat_frac * lat_frac);
          // Perturbation is modulated mildly by altitude so localized PDFs change shape.
          const double mod = 1.0 + 0.3 * alt_frac;
          omega[static_cast<std::size_t>(d) * per_day + (i * n_lat + la) * n_alt + al] = -speed + pert * mod;
        }
      }
    }
  }
  return omega;
}

/// Normalized (lat, alt) SO2 profile: sum(profile * measure) == 1. Larger injections loft higher.
inline std::vector<double> plume_profile(const SimulationConfig& cfg, const Grid& grid, double mass_tg) {
  const std::size_t n_lat = grid.lat.size(), n_alt = grid.alt.size();
  const double alt_center = 0.5 * (n_alt - 1.0) + cfg.plume_lofting_levels * std::log(mass_tg / 10.0);
  std::vector<double> p(n_lat * n_alt);
  double total = 0.0;
  for (std::size_t la = 0; la < n_lat; ++la) {
    for (std::size_t al = 0; al < n_alt; ++al) {
      const double dl = grid.lat[la] / 12.0;
      const double da = (static_cast<double>(al) - alt_center) / 1.2;
      const double v = std::exp(-0.5 * (dl * dl + da * da));
      p[la * n_alt + al] = v;
      total += v * grid.column_measure[la * n_alt + al];
    }
  }
  for (auto& v : p) v /= total;
  return p;
}

inline std::vector<double> make_background(const SimulationConfig& cfg, const Grid& grid, std::uint64_t seed) {
  Rng rng(seed);
  constexpr int kModes = 4;
  const std::size_t n_lon = grid.n_lon();
  double coef[kModes][2];
  for (auto& c : coef) {
    c[0] = rng.normal() / std::sqrt(static_cast<double>(kModes));
    c[1] = rng.normal() / std::sqrt(static_cast<double>(kModes));
  }
  std::vector<double> out(n_lon * static_cast<std::size_t>(cfg.n_days));
  const double phi = 0.8, innov = std::sqrt(1.0 - phi * phi) / std::sqrt(static_cast<double>(kModes));
  for (int d = 0; d < cfg.n_days; ++d) {
    if (d > 0) {
      for (auto& c : coef) {
        c[0] = phi * c[0] + innov * rng.normal();
        c[1] = phi * c[1] + innov * rng.normal();
      }
    }
    for (std::size_t i = 0; i < n_lon; ++i) {
      const double x = grid.lon[i] * std::numbers::pi / 180.0;
      double z = 0.0;
      for (int j = 0; j < kModes; ++j) z += coef[j][0] * std::cos((j + 1) * x) + coef[j][1] * std::sin((j + 1) * x);
      out[static_cast<std::size_t>(d) * n_lon + i] = std::max(0.0, cfg.background_aod_mean + cfg.background_aod_std * z);
    }
  }
  return out;
}

}  // namespace detail

/// Simulates one trajectory for a given ensemble seed and source mass.
inline Trajectory simulate(const SimulationConfig& cfg, const Grid& grid, std::uint64_t ensemble_seed,
                           double mass_tg, const std::vector<double>& omega) {
  const std::size_t n_lon = grid.n_lon(), nc = grid.n_column();
  const std::size_t n_days = static_cast<std::size_t>(cfg.n_days);
  const double dx = grid.dlon();
  const double nu = cfg.diffusion_deg2_per_day * cfg.dt_days / (dx * dx);
  if (nu > 0.5) {
    throw NumericalError("datagen stability violation: diffusion number D*dt/dx^2 = " + std::to_string(nu) +
                         " exceeds 0.5; refine the grid or reduce the diffusion");
  }

  Trajectory t;
  t.seed = ensemble_seed;
  t.mass_tg = mass_tg;
  t.omega = omega;
  t.alpha_v.assign(n_days * n_lon, 0.0);
  t.beta_v.assign(n_days * n_lon, 0.0);
  t.rho_v.assign(n_days * n_lon, 0.0);
  t.alpha_v_3d.assign(n_days * n_lon * nc, 0.0);

  const double mass_g = mass_tg * 1e12;
  const double sigma = cfg.initial_width_deg;
  std::vector<double> so2(n_lon), sulfate(n_lon);
  double norm = 0.0;
  for (std::size_t i = 0; i < n_lon; ++i) {
    const double d = std::remainder(grid.lon[i] - cfg.volcano_lon_deg, 360.0);
    so2[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    norm += so2[i];
  }
  const double stoich = cfg.molar_mass_sulfate / cfg.molar_mass_so2;
  const double spin = std::exp(cfg.reaction_rate_per_day * cfg.spinup_days) - 1.0;
  for (std::size_t i = 0; i < n_lon; ++i) {
    so2[i] *= mass_g / norm;
    sulfate[i] = so2[i] * spin * stoich;
  }

  const std::vector<double> profile = detail::plume_profile(cfg, grid, mass_tg);
  const double decay = std::exp(-cfg.reaction_rate_per_day * cfg.dt_days);

  for (std::size_t day = 0; day < n_days; ++day) {
    for (std::size_t i = 0; i < n_lon; ++i) {
      t.alpha_v[day * n_lon + i] = so2[i];
      t.beta_v[day * n_lon + i] = sulfate[i];
      t.rho_v[day * n_lon + i] = cfg.aod_per_gram * sulfate[i];
      for (std::size_t c = 0; c < nc; ++c) t.alpha_v_3d[(day * n_lon + i) * nc + c] = so2[i] * profile[c];
    }
    if (day + 1 == n_days) break;

    // The plume moves with the wind averaged over the cells it occupies (SO2 above the
    // threshold), each weighted by the longitudinal SO2 amount.
    const double* w = omega.data() + day * n_lon * nc;
    const double* a3 = t.alpha_v_3d.data() + day * n_lon * nc;
    double num = 0.0, den = 0.0, num_all = 0.0, den_all = 0.0;
    for (std::size_t i = 0; i < n_lon; ++i) {
      for (std::size_t c = 0; c < nc; ++c) {
        num_all += so2[i] * profile[c] * grid.column_measure[c] * w[i * nc + c];
        den_all += so2[i] * profile[c] * grid.column_measure[c];
        if (a3[i * nc + c] >= cfg.so2_threshold_g) {
          num += so2[i] * w[i * nc + c];
          den += so2[i];
        }
      }
    }
    const double speed = den > 0.0 ? num / den : (den_all > 0.0 ? num_all / den_all : 0.0);
    const double shift_cells = speed * cfg.dt_days / dx;
    detail::spectral_shift(so2, shift_cells);
    detail::spectral_shift(sulfate, shift_cells);
    if (nu > 0.0) {
      detail::diffuse(so2, nu);
      detail::diffuse(sulfate, nu);
    }
    for (std::size_t i = 0; i < n_lon; ++i) {
      so2[i] = std::max(0.0, so2[i]);
      sulfate[i] = std::max(0.0, sulfate[i]);
      const double next = so2[i] * decay;
      sulfate[i] += (so2[i] - next) * stoich;
      so2[i] = next;
    }
  }
  return t;
}

/// All configured source magnitudes for one ensemble seed. Pure in (config, seed).
inline std::vector<Trajectory> generate_ensemble(const SimulationConfig& cfg, std::uint64_t ensemble_seed,
                                                 const std::vector<double>& masses_tg) {
  cfg.validate();
  const Grid grid = Grid::make(cfg);
  const std::vector<double> omega = detail::make_wind(cfg, grid, ensemble_seed);
  std::vector<Trajectory> out;
  for (std::size_t j = 0; j < masses_tg.size(); ++j) {
    Trajectory t = simulate(cfg, grid, ensemble_seed, masses_tg[j], omega);
    t.rho_b = detail::make_background(cfg, grid, mix_seed(ensemble_seed, 0x62670000 + j));
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<Trajectory> generate_ensemble(const SimulationConfig& cfg, std::uint64_t ensemble_seed) {
  return generate_ensemble(cfg, ensemble_seed, cfg.injection_masses_tg);
}

/// Train / validation / test campaign: the first n_train seeds at every injection mass,
/// the next n_validation seeds at the same masses, and the last n_test seeds at the
/// held-out test masses.
inline RawDataset build_campaign(const SimulationConfig& cfg, int jobs = 1) {
  cfg.validate();
  if (cfg.ensemble_seeds.size() < cfg.required_seeds()) {
    throw ConfigError("campaign needs " + std::to_string(cfg.required_seeds()) + " ensemble seeds, got " +
                      std::to_string(cfg.ensemble_seeds.size()));
  }
  RawDataset ds;
  ds.config = cfg;
  ds.grid = Grid::make(cfg);
  struct Job {
    int ensemble;
    Split split;
    const std::vector<double>* masses;
  };
  std::vector<Job> plan;
  int e = 0;
  for (int i = 0; i < cfg.n_train_ensembles; ++i) plan.push_back({++e, Split::kTrain, &cfg.injection_masses_tg});
  for (int i = 0; i < cfg.n_validation_ensembles; ++i) plan.push_back({++e, Split::kValidation, &cfg.injection_masses_tg});
  for (int i = 0; i < cfg.n_test_ensembles; ++i) plan.push_back({++e, Split::kTest, &cfg.test_masses_tg});

  std::vector<std::vector<Trajectory>> results(plan.size());
  parallel_for(plan.size(), jobs, [&](std::size_t i) {
    results[i] = generate_ensemble(cfg, cfg.ensemble_seeds[static_cast<std::size_t>(plan[i].ensemble - 1)], *plan[i].masses);
  });
  int id = 0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    for (auto& t : results[i]) {
      t.id = id++;
      t.ensemble = plan[i].ensemble;
      t.split = plan[i].split;
      ds.trajectories.push_back(std::move(t));
    }
  }
  return ds;
}

/// Total sulfur moles sum_x (alpha / M_alpha + beta / M_beta) on a given day.
inline double sulfur_moles(const Trajectory& t, std::size_t n_lon, std::size_t day, const SimulationConfig& cfg) {
  double s = 0.0;
  for (std::size_t i = 0; i < n_lon; ++i) {
    s += t.alpha_v[day * n_lon + i] / cfg.molar_mass_so2 + t.beta_v[day * n_lon + i] / cfg.molar_mass_sulfate;
  }
  return s;
}

}  // namespace plume::datagen
