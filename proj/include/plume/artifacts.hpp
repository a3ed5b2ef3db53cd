#pragma once

// On-disk formats of the pipeline artifacts: dataset directory, RBF fit tables, wind
// reduction, flow-map / AOD-map model file and the noise model.

#include <map>
#include <string>
#include <vector>

#include "plume/aodmap.hpp"
#include "plume/campaign.hpp"
#include "plume/config.hpp"
#include "plume/datagen.hpp"
#include "plume/flowmap.hpp"
#include "plume/inversion.hpp"
#include "plume/io.hpp"
#include "plume/windreduce.hpp"

namespace plume::art {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---- dataset ---------------------------------------------------------------------------

struct FieldSpec {
  const char* name;
  std::vector<double> datagen::Trajectory::*member;
  bool three_d;
  const char* units;
};

inline const std::vector<FieldSpec>& field_specs() {
  static const std::vector<FieldSpec> specs{
      {"alpha_v", &datagen::Trajectory::alpha_v, false, "g per longitude cell"},
      {"beta_v", &datagen::Trajectory::beta_v, false, "g per longitude cell"},
      {"rho_v", &datagen::Trajectory::rho_v, false, "1"},
      {"rho_b", &datagen::Trajectory::rho_b, false, "1"},
      {"omega", &datagen::Trajectory::omega, true, "deg/day"},
      {"alpha_v_3d", &datagen::Trajectory::alpha_v_3d, true, "g per unit column measure"},
  };
  return specs;
}

inline json datagen_json(const datagen::SimulationConfig& c) {
  config::PipelineConfig p;
  p.datagen = c;
  return config::to_json(p)["datagen"];
}

inline datagen::SimulationConfig datagen_from_json(const json& j, const std::string& where) {
  try {
    return config::from_json(json{{"datagen", j}}).datagen;
  } catch (const ConfigError& e) {
    throw DataError(where + ": " + e.what());
  }
}

inline void save_dataset(const fs::path& dir, const datagen::RawDataset& ds) {
  const auto& cfg = ds.config;
  const std::size_t nd = static_cast<std::size_t>(cfg.n_days), nl = ds.grid.n_lon();
  json list = json::array();
  for (const auto& t : ds.trajectories) {
    json fields = json::object();
    for (const auto& f : field_specs()) {
      std::vector<std::size_t> shape{nd, nl};
      json dims = {"day", "lon"};
      if (f.three_d) {
        shape.push_back(ds.grid.lat.size());
        shape.push_back(ds.grid.alt.size());
        dims = {"day", "lon", "lat", "alt"};
      }
      const json meta{{"dims", dims},       {"units", f.units},   {"ensemble", t.ensemble},
                      {"mass_tg", t.mass_tg}, {"split", datagen::split_name(t.split)}, {"field", f.name}};
      io::write_array(dir / t.name(), f.name, t.*(f.member), shape, meta);
      fields[f.name] = t.name() + "/" + f.name;
    }
    list.push_back({{"name", t.name()},
                    {"id", t.id},
                    {"ensemble", t.ensemble},
                    {"seed", t.seed},
                    {"mass_tg", t.mass_tg},
                    {"split", datagen::split_name(t.split)},
                    {"fields", fields}});
  }
  io::write_json(dir / "campaign.json", {{"config", datagen_json(cfg)}, {"trajectories", list}, {"n_trajectories", list.size()}});
}

inline datagen::RawDataset load_dataset(const fs::path& dir) {
  const fs::path file = dir / "campaign.json";
  if (!fs::exists(file)) throw DataError("missing " + file.string() + " (produced by stage 'gen-data')");
  const json j = io::read_json(file);
  const std::string where = file.string();
  datagen::RawDataset ds;
  if (!j.contains("config")) throw DataError(where + ": missing field 'config'");
  ds.config = datagen_from_json(j["config"], where);
  ds.grid = datagen::Grid::make(ds.config);
  const std::size_t n2 = static_cast<std::size_t>(ds.config.n_days) * ds.grid.n_lon();
  const std::size_t n3 = n2 * ds.grid.n_column();
  for (const auto& e : io::get<json>(j, "trajectories", where)) {
    datagen::Trajectory t;
    t.id = io::get<int>(e, "id", where);
    t.ensemble = io::get<int>(e, "ensemble", where);
    t.seed = io::get<std::uint64_t>(e, "seed", where);
    t.mass_tg = io::get<double>(e, "mass_tg", where);
    t.split = datagen::split_from_name(io::get<std::string>(e, "split", where));
    const auto name = io::get<std::string>(e, "name", where);
    for (const auto& f : field_specs()) {
      auto a = io::read_array(dir / name, f.name);
      if (a.data.size() != (f.three_d ? n3 : n2)) throw DataError((dir / name / f.name).string() + ": unexpected size");
      t.*(f.member) = std::move(a.data);
    }
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

// ---- RBF fits --------------------------------------------------------------------------

inline const char* const kSpecies[] = {"so2", "sulfate", "aod"};

template <class Fits>
auto& species(Fits& f, int s) {
  return s == 0 ? f.so2 : s == 1 ? f.sulfate : f.aod;
}

inline void save_fits(const fs::path& dir, const datagen::RawDataset& ds, const CampaignFits& fits,
                      const config::RbfConfig& cfg) {
  std::vector<std::vector<std::string>> rows;
  json residual = json::object();
  for (int s = 0; s < 3; ++s) {
    double worst = 0.0;
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
      const auto& series = species(fits, s)[i];
      for (std::size_t d = 0; d < series.size(); ++d) {
        worst = std::max(worst, series[d].residual);
        for (std::size_t l = 0; l < series[d].coords.terms.size(); ++l) {
          const auto& t = series[d].coords.terms[l];
          rows.push_back({ds.trajectories[i].name(), kSpecies[s], std::to_string(d), std::to_string(l), io::csv_number(t.center),
                          io::csv_number(t.shape), io::csv_number(t.coeff), io::csv_number(series[d].residual),
                          std::to_string(series[d].iterations), series[d].unidentifiable ? "1" : "0"});
        }
      }
    }
    residual[kSpecies[s]] = worst;
  }
  io::write_csv(dir / "fits.csv", {"trajectory", "species", "day", "l", "x", "a", "c", "residual", "iterations", "unidentifiable"},
                rows);
  io::write_json(dir / "fits.json", {{"n_rbf", cfg.n_rbf},
                                     {"n_trajectories", ds.trajectories.size()},
                                     {"n_days", ds.config.n_days},
                                     {"species", {"so2", "sulfate", "aod"}},
                                     {"max_residual", residual},
                                     {"period", cfg.fit.domain.period}});
}

inline CampaignFits load_fits(const fs::path& dir, const datagen::RawDataset& ds) {
  const fs::path file = dir / "fits.csv";
  if (!fs::exists(file)) throw DataError("missing " + file.string() + " (produced by stage 'fit-rbf')");
  const json meta = io::read_json(dir / "fits.json");
  const int n_rbf = io::get<int>(meta, "n_rbf", (dir / "fits.json").string());
  const auto csv = io::read_csv(file);
  const std::string where = file.string();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) index[ds.trajectories[i].name()] = i;
  CampaignFits out;
  const std::size_t nd = static_cast<std::size_t>(ds.config.n_days);
  for (int s = 0; s < 3; ++s) {
    species(out, s).assign(ds.trajectories.size(), std::vector<rbf::FitResult>(nd));
    for (auto& series : species(out, s)) {
      for (std::size_t d = 0; d < nd; ++d) {
        series[d].coords.terms.resize(static_cast<std::size_t>(n_rbf));
        series[d].coords.day = static_cast<int>(d);
      }
    }
  }
  const std::size_t c_tr = csv.column("trajectory", where), c_sp = csv.column("species", where), c_d = csv.column("day", where),
                    c_l = csv.column("l", where), c_x = csv.column("x", where), c_a = csv.column("a", where),
                    c_c = csv.column("c", where), c_r = csv.column("residual", where), c_it = csv.column("iterations", where),
                    c_u = csv.column("unidentifiable", where);
  std::size_t expected = 0;
  for (const auto& row : csv.rows) {
    const auto it = index.find(row[c_tr]);
    if (it == index.end()) throw DataError(where + ": unknown trajectory '" + row[c_tr] + "'");
    int s = -1;
    for (int k = 0; k < 3; ++k) if (row[c_sp] == kSpecies[k]) s = k;
    if (s < 0) throw DataError(where + ": unknown species '" + row[c_sp] + "'");
    const auto d = static_cast<std::size_t>(io::parse_number(row[c_d], where));
    const auto l = static_cast<std::size_t>(io::parse_number(row[c_l], where));
    if (d >= nd || l >= static_cast<std::size_t>(n_rbf)) throw DataError(where + ": day or term index out of range");
    auto& fit = species(out, s)[it->second][d];
    fit.coords.terms[l] = {io::parse_number(row[c_x], where), io::parse_number(row[c_a], where), io::parse_number(row[c_c], where)};
    fit.residual = io::parse_number(row[c_r], where);
    fit.iterations = static_cast<int>(io::parse_number(row[c_it], where));
    fit.unidentifiable = row[c_u] == "1";
    ++expected;
  }
  if (expected != 3 * ds.trajectories.size() * nd * static_cast<std::size_t>(n_rbf)) {
    throw DataError(where + ": fit table does not cover every trajectory, species, day and term");
  }
  return out;
}

// ---- wind reduction --------------------------------------------------------------------

inline void save_wind(const fs::path& dir, const datagen::RawDataset& ds, const wind::WindReduction& red,
                      const wind::WindOptions& opt) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"trajectory", "day", "l"};
  const int rank = red.basis.rank;
  for (int k = 0; k < rank; ++k) header.push_back("w" + std::to_string(k + 1));
  std::vector<double> pdfs, bandwidths;
  std::size_t n_days = 0, n_l = 0;
  for (std::size_t i = 0; i < red.coords.size(); ++i) {
    n_days = red.coords[i].size();
    for (std::size_t d = 0; d < red.coords[i].size(); ++d) {
      n_l = red.coords[i][d].size();
      for (std::size_t l = 0; l < red.coords[i][d].size(); ++l) {
        std::vector<std::string> row{ds.trajectories[i].name(), std::to_string(d), std::to_string(l)};
        for (Eigen::Index k = 0; k < red.coords[i][d][l].size(); ++k) row.push_back(io::csv_number(red.coords[i][d][l][k]));
        rows.push_back(std::move(row));
        const auto& pdf = red.pdfs[i][d][l];
        pdfs.insert(pdfs.end(), pdf.density.begin(), pdf.density.end());
        bandwidths.push_back(pdf.bandwidth);
      }
    }
  }
  io::write_csv(dir / "coords.csv", header, rows);
  io::write_array(dir, "pdfs", pdfs, {red.coords.size(), n_days, n_l, red.grid.n}, {{"dims", {"trajectory", "day", "l", "point"}}});
  io::write_array(dir, "bandwidths", bandwidths, {red.coords.size(), n_days, n_l});
  io::write_array(dir, "basis_mean", std::vector<double>(red.basis.mean.data(), red.basis.mean.data() + red.basis.mean.size()));
  io::write_matrix(dir, "basis_components", red.basis.components);
  io::write_array(dir, "singular_values",
                  std::vector<double>(red.basis.singular_values.data(),
                                      red.basis.singular_values.data() + red.basis.singular_values.size()));
  const double total = red.basis.singular_values.squaredNorm();
  json explained = json::array();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(red.basis.singular_values.size(), 10); ++k) {
    acc += red.basis.singular_values[k] * red.basis.singular_values[k];
    explained.push_back(total > 0 ? acc / total : 0.0);
  }
  io::write_json(dir / "wind.json", {{"tau", opt.tau},
                                     {"rank", rank},
                                     {"grid", {{"lo", red.grid.lo}, {"hi", red.grid.hi}, {"n", red.grid.n}}},
                                     {"n_trajectories", red.coords.size()},
                                     {"n_days", n_days},
                                     {"n_rbf", n_l},
                                     {"cumulative_explained_variance", explained}});
}

inline wind::WindReduction load_wind(const fs::path& dir, const datagen::RawDataset& ds) {
  const fs::path meta_file = dir / "wind.json";
  if (!fs::exists(meta_file)) throw DataError("missing " + meta_file.string() + " (produced by stage 'reduce-wind')");
  const std::string where = meta_file.string();
  const json meta = io::read_json(meta_file);
  wind::WindReduction red;
  red.tau = io::get<double>(meta, "tau", where);
  const json g = io::get<json>(meta, "grid", where);
  red.grid = {io::get<double>(g, "lo", where), io::get<double>(g, "hi", where), io::get<std::size_t>(g, "n", where)};
  red.basis.rank = io::get<int>(meta, "rank", where);
  const auto n_days = io::get<std::size_t>(meta, "n_days", where), n_l = io::get<std::size_t>(meta, "n_rbf", where);
  const auto n_traj = io::get<std::size_t>(meta, "n_trajectories", where);
  if (n_traj != ds.trajectories.size()) throw DataError(where + ": trajectory count does not match the dataset");
  red.basis.mean = io::vec_from_json(io::read_array(dir, "basis_mean").data);
  red.basis.components = io::read_matrix(dir, "basis_components");
  red.basis.singular_values = io::vec_from_json(io::read_array(dir, "singular_values").data);
  const auto pdfs = io::read_array(dir, "pdfs");
  const auto bw = io::read_array(dir, "bandwidths");
  if (pdfs.data.size() != n_traj * n_days * n_l * red.grid.n || bw.data.size() != n_traj * n_days * n_l) {
    throw DataError((dir / "pdfs.json").string() + ": shape does not match wind.json");
  }
  red.pdfs.assign(n_traj, std::vector<std::vector<wind::WindPdf>>(n_days, std::vector<wind::WindPdf>(n_l)));
  red.coords.assign(n_traj, wind::TrajectoryWind(n_days, std::vector<Vec>(n_l, Vec::Zero(red.basis.rank))));
  std::size_t o = 0;
  for (std::size_t i = 0; i < n_traj; ++i) {
    for (std::size_t d = 0; d < n_days; ++d) {
      for (std::size_t l = 0; l < n_l; ++l, ++o) {
        auto& pdf = red.pdfs[i][d][l];
        pdf.grid = red.grid;
        pdf.bandwidth = bw.data[o];
        pdf.density.assign(pdfs.data.begin() + static_cast<std::ptrdiff_t>(o * red.grid.n),
                           pdfs.data.begin() + static_cast<std::ptrdiff_t>((o + 1) * red.grid.n));
      }
    }
  }
  const fs::path cfile = dir / "coords.csv";
  const auto csv = io::read_csv(cfile);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) index[ds.trajectories[i].name()] = i;
  if (csv.rows.size() != n_traj * n_days * n_l || csv.header.size() != 3 + static_cast<std::size_t>(red.basis.rank)) {
    throw DataError(cfile.string() + ": table shape does not match wind.json");
  }
  for (const auto& row : csv.rows) {
    const auto it = index.find(row[0]);
    if (it == index.end()) throw DataError(cfile.string() + ": unknown trajectory '" + row[0] + "'");
    const auto d = static_cast<std::size_t>(io::parse_number(row[1], cfile.string()));
    const auto l = static_cast<std::size_t>(io::parse_number(row[2], cfile.string()));
    if (d >= n_days || l >= n_l) throw DataError(cfile.string() + ": index out of range");
    Vec& w = red.coords[it->second][d][l];
    for (int k = 0; k < red.basis.rank; ++k) w[k] = io::parse_number(row[3 + static_cast<std::size_t>(k)], cfile.string());
  }
  return red;
}

// ---- flow map and AOD map --------------------------------------------------------------

inline json flow_json(const flow::FlowMapParams& p) {
  json w = json::array(), b = json::array();
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    w.push_back(io::to_json(p.weights[i]));
    b.push_back(io::to_json(p.biases[i]));
  }
  return {{"architecture", p.hidden.empty() ? "linear-min0" : "tanh-mlp-min0"},
          {"n_rbf", p.n_rbf},
          {"n_wind", p.n_wind},
          {"hidden", p.hidden},
          {"weights_row_major", w},
          {"biases", b},
          {"dt", p.dt},
          {"molar_so2", p.molar_so2},
          {"molar_sulfate", p.molar_sulfate},
          {"rho0", p.rho0},
          {"shape_min", p.shape_min},
          {"monotone_center", p.monotone_center},
          {"in_mean", io::to_json(p.in_mean)},
          {"in_std", io::to_json(p.in_std)},
          {"out_scale", io::to_json(p.out_scale)},
          {"r_scale", io::to_json(p.r_scale)},
          {"s_scale", io::to_json(p.s_scale)}};
}

inline flow::FlowMapParams flow_from_json(const json& j, const std::string& where) {
  try {
    auto p = flow::make_params(io::get<int>(j, "n_rbf", where), io::get<int>(j, "n_wind", where),
                               io::get<std::vector<int>>(j, "hidden", where));
    const auto w = io::get<json>(j, "weights_row_major", where), b = io::get<json>(j, "biases", where);
    if (w.size() != p.weights.size() || b.size() != p.biases.size()) throw DataError(where + ": layer count mismatch");
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      const Mat m = io::mat_from_json(w[i]);
      const Vec v = io::vec_from_json(b[i]);
      if (m.rows() != p.weights[i].rows() || m.cols() != p.weights[i].cols() || v.size() != p.biases[i].size()) {
        throw DataError(where + ": layer " + std::to_string(i) + " has the wrong shape");
      }
      p.weights[i] = m;
      p.biases[i] = v;
    }
    p.dt = io::get<double>(j, "dt", where);
    p.molar_so2 = io::get<double>(j, "molar_so2", where);
    p.molar_sulfate = io::get<double>(j, "molar_sulfate", where);
    p.rho0 = io::get<double>(j, "rho0", where);
    p.shape_min = io::get<double>(j, "shape_min", where);
    p.monotone_center = io::get<bool>(j, "monotone_center", where);
    p.in_mean = io::vec_from_json(j.at("in_mean"));
    p.in_std = io::vec_from_json(j.at("in_std"));
    p.out_scale = io::vec_from_json(j.at("out_scale"));
    p.r_scale = io::vec_from_json(j.at("r_scale"));
    p.s_scale = io::vec_from_json(j.at("s_scale"));
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw DataError(where + ": malformed flow map: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(where + ": " + e.what());
  }
}

inline json aod_json(const aod::AodMapParams& a) {
  return {{"L_row_major", io::to_json(a.L)},
          {"r_squared", io::to_json(a.r_squared)},
          {"train_rmse", a.train_rmse},
          {"n_samples", a.n_samples},
          {"shape_min", a.shape_min}};
}

inline aod::AodMapParams aod_from_json(const json& j, const std::string& where) {
  try {
    aod::AodMapParams a;
    a.L = io::mat_from_json(j.at("L_row_major"));
    a.r_squared = io::vec_from_json(j.at("r_squared"));
    a.train_rmse = io::get<double>(j, "train_rmse", where);
    a.n_samples = io::get<std::size_t>(j, "n_samples", where);
    a.shape_min = io::get<double>(j, "shape_min", where);
    if (a.L.rows() != a.L.cols()) throw DataError(where + ": AOD map must be square");
    return a;
  } catch (const json::exception& e) {
    throw DataError(where + ": malformed AOD map: " + e.what());
  }
}

inline json model_json(const inv::Models& m) {
  return {{"flowmap", flow_json(m.flow)},
          {"aodmap", aod_json(m.aod)},
          {"domain", {{"period", m.domain.period}, {"truncation", m.domain.truncation}}}};
}

inline inv::Models load_model(const fs::path& file) {
  if (!fs::exists(file)) throw DataError("missing " + file.string() + " (produced by stage 'fit-aod')");
  const json j = io::read_json(file);
  const std::string where = file.string();
  inv::Models m;
  m.flow = flow_from_json(io::get<json>(j, "flowmap", where), where);
  m.aod = aod_from_json(io::get<json>(j, "aodmap", where), where);
  const json d = io::get<json>(j, "domain", where);
  m.domain.period = io::get<double>(d, "period", where);
  m.domain.truncation = io::get<int>(d, "truncation", where);
  if (m.aod.L.rows() != m.flow.state_dim()) throw DataError(where + ": AOD map size does not match the flow map");
  return m;
}

// ---- noise model -----------------------------------------------------------------------

struct NoiseModel {
  inv::ObservationOperator obs;
  double sigma_noise = 0.01;
  inv::Moments background;
  inv::Moments bae;
  inv::Prior prior;
  std::vector<inv::WindSeries> ensemble;
  std::vector<std::string> ensemble_names;
  std::vector<double> grid_lon;
  std::string bae_estimator;
};

inline void save_noise(const fs::path& dir, const NoiseModel& n) {
  const auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  io::write_array(dir, "background_mean", vec(n.background.mean));
  io::write_matrix(dir, "background_cov", n.background.cov);
  io::write_array(dir, "bae_mean", vec(n.bae.mean));
  io::write_matrix(dir, "bae_cov", n.bae.cov);
  std::vector<double> winds;
  const std::size_t days = n.ensemble.empty() ? 0 : n.ensemble[0].size();
  const std::size_t dim = days ? static_cast<std::size_t>(n.ensemble[0][0].size()) : 0;
  for (const auto& series : n.ensemble) {
    if (series.size() != days) throw DataError("noise model: wind series of unequal length");
    for (const auto& w : series) winds.insert(winds.end(), w.data(), w.data() + w.size());
  }
  io::write_array(dir, "winds", winds, {n.ensemble.size(), days, dim}, {{"dims", {"member", "day", "coordinate"}}});
  io::write_json(dir / "noise.json", {{"obs", {{"lon", n.obs.lon}, {"n_days", n.obs.n_days}}},
                                      {"sigma_noise", n.sigma_noise},
                                      {"prior", {{"mean", io::to_json(n.prior.mean)}, {"cov", io::to_json(n.prior.cov)}}},
                                      {"ensemble", n.ensemble_names},
                                      {"grid_lon", n.grid_lon},
                                      {"bae_estimator", n.bae_estimator},
                                      {"trace_background", n.background.cov.trace()},
                                      {"trace_bae", n.bae.cov.trace()}});
}

inline NoiseModel load_noise(const fs::path& dir) {
  const fs::path file = dir / "noise.json";
  if (!fs::exists(file)) throw DataError("missing " + file.string() + " (produced by stage 'build-noise')");
  const std::string where = file.string();
  const json j = io::read_json(file);
  NoiseModel n;
  try {
    const json o = io::get<json>(j, "obs", where);
    n.obs.lon = io::get<std::vector<double>>(o, "lon", where);
    n.obs.n_days = io::get<int>(o, "n_days", where);
    n.obs.validate();
    n.sigma_noise = io::get<double>(j, "sigma_noise", where);
    const json p = io::get<json>(j, "prior", where);
    n.prior = inv::Prior::make(io::vec_from_json(p.at("mean")), io::mat_from_json(p.at("cov")));
    n.ensemble_names = io::get<std::vector<std::string>>(j, "ensemble", where);
    n.grid_lon = io::get<std::vector<double>>(j, "grid_lon", where);
    n.bae_estimator = io::get<std::string>(j, "bae_estimator", where);
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  n.background = {io::vec_from_json(io::read_array(dir, "background_mean").data), io::read_matrix(dir, "background_cov")};
  n.bae = {io::vec_from_json(io::read_array(dir, "bae_mean").data), io::read_matrix(dir, "bae_cov")};
  const auto w = io::read_array(dir, "winds");
  if (w.shape.size() != 3) throw DataError((dir / "winds.json").string() + ": expected 3 dimensions");
  std::size_t o = 0;
  for (std::size_t i = 0; i < w.shape[0]; ++i) {
    inv::WindSeries s;
    for (std::size_t d = 0; d < w.shape[1]; ++d, o += w.shape[2]) {
      s.push_back(Eigen::Map<const Vec>(w.data.data() + o, static_cast<Eigen::Index>(w.shape[2])));
    }
    n.ensemble.push_back(std::move(s));
  }
  const auto size = static_cast<Eigen::Index>(n.obs.size());
  if (n.background.mean.size() != size || n.bae.mean.size() != size || n.background.cov.rows() != size ||
      n.bae.cov.rows() != size) {
    throw DataError(where + ": covariance blocks do not match the observation operator");
  }
  return n;
}

// ---- observations ----------------------------------------------------------------------

struct Observations {
  Vec data;
  std::vector<double> lon;
  int n_days = 0;
  double sigma_obs = 0.0;
  std::string trajectory;  // source trajectory for synthetic data, empty otherwise
};

inline json observations_json(const Observations& o) {
  return {{"data", io::to_json(o.data)}, {"lon", o.lon}, {"n_days", o.n_days}, {"sigma_obs", o.sigma_obs},
          {"trajectory", o.trajectory}, {"layout", "day-major"}};
}

inline Observations load_observations(const fs::path& file) {
  const json j = io::read_json(file);
  const std::string where = file.string();
  Observations o;
  o.data = io::vec_from_json(io::get<json>(j, "data", where));
  o.lon = io::get<std::vector<double>>(j, "lon", where);
  o.n_days = io::get<int>(j, "n_days", where);
  if (j.contains("sigma_obs")) o.sigma_obs = io::get<double>(j, "sigma_obs", where);
  if (j.contains("trajectory")) o.trajectory = io::get<std::string>(j, "trajectory", where);
  if (o.data.size() != static_cast<Eigen::Index>(o.lon.size()) * o.n_days) {
    throw DataError(where + ": data length must equal n_days x number of longitudes");
  }
  return o;
}

}  // namespace plume::art
