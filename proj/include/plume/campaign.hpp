#pragma once

// Reduced campaign: RBF fits of the tagged fields for every trajectory, and assembly of
// flow-map training samples from fits and wind coordinates.

#include <span>
#include <vector>

#include "plume/datagen.hpp"
#include "plume/flowmap.hpp"
#include "plume/parallel.hpp"
#include "plume/rbf.hpp"
#include "plume/windreduce.hpp"

namespace plume {

/// Fits per trajectory and day: so2[traj][day] etc.
struct CampaignFits {
  std::vector<std::vector<rbf::FitResult>> so2;
  std::vector<std::vector<rbf::FitResult>> sulfate;
  std::vector<std::vector<rbf::FitResult>> aod;

  static std::vector<std::vector<rbf::Coords>> coords(const std::vector<std::vector<rbf::FitResult>>& fits) {
    std::vector<std::vector<rbf::Coords>> out;
    for (const auto& series : fits) {
      std::vector<rbf::Coords> c;
      for (const auto& f : series) c.push_back(f.coords);
      out.push_back(std::move(c));
    }
    return out;
  }
};

inline std::vector<std::vector<double>> split_days(const std::vector<double>& field, std::size_t n_lon, int n_days) {
  std::vector<std::vector<double>> days;
  for (int d = 0; d < n_days; ++d) {
    const auto s = datagen::day_slice(field, n_lon, static_cast<std::size_t>(d));
    days.emplace_back(s.begin(), s.end());
  }
  return days;
}

/// Time series fit with centers made continuous across the seam.
inline std::vector<rbf::FitResult> fit_series(const std::vector<double>& field, const datagen::Grid& grid, int n_days,
                                              std::size_t n_rbf, const rbf::FitOptions& opt) {
  auto fits = rbf::fit_timeseries(split_days(field, grid.n_lon(), n_days), grid.lon, n_rbf, opt);
  std::vector<rbf::Coords> c;
  for (const auto& f : fits) c.push_back(f.coords);
  rbf::unwrap_centers(c);
  for (std::size_t k = 0; k < fits.size(); ++k) fits[k].coords = c[k];
  return fits;
}

inline CampaignFits fit_campaign(const datagen::RawDataset& ds, std::size_t n_rbf, int jobs = 1,
                                 const rbf::FitOptions& opt = {}) {
  const std::size_t n = ds.trajectories.size();
  CampaignFits out;
  out.so2.resize(n);
  out.sulfate.resize(n);
  out.aod.resize(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto& t = ds.trajectories[i];
    out.so2[i] = fit_series(t.alpha_v, ds.grid, ds.config.n_days, n_rbf, opt);
    out.sulfate[i] = fit_series(t.beta_v, ds.grid, ds.config.n_days, n_rbf, opt);
    out.aod[i] = fit_series(t.rho_v, ds.grid, ds.config.n_days, n_rbf, opt);
  });
  return out;
}

inline flow::Sample make_sample(const datagen::Trajectory& t, const std::vector<rbf::FitResult>& so2,
                                const std::vector<rbf::FitResult>& sulfate, const wind::TrajectoryWind& w) {
  flow::Sample s;
  s.id = t.name();
  s.ensemble = t.ensemble;
  s.mass_tg = t.mass_tg;
  for (const auto& f : so2) s.r.push_back(f.coords.to_vector());
  for (const auto& f : sulfate) s.s.push_back(f.coords.to_vector());
  s.w = wind::concat_days(w);
  return s;
}

inline std::vector<flow::Sample> make_samples(const datagen::RawDataset& ds, const CampaignFits& fits,
                                              const std::vector<wind::TrajectoryWind>& winds) {
  std::vector<flow::Sample> out;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    out.push_back(make_sample(ds.trajectories[i], fits.so2[i], fits.sulfate[i], winds[i]));
  }
  return out;
}

inline std::vector<const flow::Sample*> select(const datagen::RawDataset& ds, const std::vector<flow::Sample>& samples,
                                               datagen::Split split) {
  std::vector<const flow::Sample*> out;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.trajectories[i].split == split) out.push_back(&samples[i]);
  }
  return out;
}

}  // namespace plume
