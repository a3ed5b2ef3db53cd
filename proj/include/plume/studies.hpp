#pragma once

// Architecture studies: wind PCA rank vs validation error, and reaction-rate spread vs
// network depth and width.

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "plume/campaign.hpp"
#include "plume/diagnostics.hpp"
#include "plume/flowmap.hpp"
#include "plume/parallel.hpp"
#include "plume/random.hpp"
#include "plume/windreduce.hpp"

namespace plume::study {

using Vec = Eigen::VectorXd;

struct RankRow {
  int rank = 0;
  std::vector<double> errors;  // per seed; NaN for a failed run
  std::vector<std::string> failures;
  double mean = 0.0;
};

struct RankStudy {
  std::vector<RankRow> rows;
  int best_rank = 0;
  std::vector<double> singular_values;
};

/// For each rank, trains `n_seeds` single-layer flow maps on re-projected winds and records
/// the validation prediction error.
inline RankStudy rank_study(const datagen::RawDataset& ds, const CampaignFits& fits, const wind::WindReduction& red,
                            const std::vector<int>& ranks, int n_seeds, const flow::TrainOptions& base_opt,
                            std::uint64_t seed, int jobs = 1) {
  RankStudy out;
  out.singular_values.assign(red.basis.singular_values.data(),
                             red.basis.singular_values.data() + std::min<Eigen::Index>(red.basis.singular_values.size(), 20));
  out.rows.resize(ranks.size());
  struct Job {
    std::size_t row;
    int seed;
  };
  std::vector<Job> jobs_list;
  std::vector<std::vector<flow::Sample>> samples(ranks.size());
  for (std::size_t r = 0; r < ranks.size(); ++r) {
    out.rows[r].rank = ranks[r];
    out.rows[r].errors.assign(static_cast<std::size_t>(n_seeds), std::numeric_limits<double>::quiet_NaN());
    out.rows[r].failures.assign(static_cast<std::size_t>(n_seeds), "");
    samples[r] = make_samples(ds, fits, wind::reproject(red, ranks[r]));
    for (int s = 0; s < n_seeds; ++s) jobs_list.push_back({r, s});
  }
  parallel_for(jobs_list.size(), jobs, [&](std::size_t j) {
    const auto [r, s] = jobs_list[j];
    auto& row = out.rows[r];
    const auto tr = select(ds, samples[r], datagen::Split::kTrain);
    const auto va = select(ds, samples[r], datagen::Split::kValidation);
    auto base = flow::make_params(static_cast<int>(tr.front()->r[0].size() / 3), ranks[r]);
    base.rho0 = flow::initial_mass_ratio(tr);
    auto opt = base_opt;
    opt.hidden.clear();
    opt.seed = mix_seed(seed, static_cast<std::uint64_t>(ranks[r]) * 1000 + static_cast<std::uint64_t>(s));
    try {
      const auto res = flow::train(tr, va, base, opt);
      if (res.aborted) throw NumericalError(res.message);
      row.errors[static_cast<std::size_t>(s)] = diag::prediction_error(res.params, ds, samples[r], datagen::Split::kValidation);
    } catch (const Error& e) {
      row.failures[static_cast<std::size_t>(s)] = e.what();
    }
  });
  double best = std::numeric_limits<double>::infinity();
  for (auto& row : out.rows) {
    double sum = 0.0;
    int n = 0;
    for (double e : row.errors) {
      if (std::isfinite(e)) {
        sum += e;
        ++n;
      }
    }
    row.mean = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    if (n && row.mean < best) {
      best = row.mean;
      out.best_rank = row.rank;
    }
  }
  return out;
}

/// Uniform sampling box for the reaction-rate study.
struct SamplingBox {
  Vec r0_lo, r0_hi;      // from validation initial coordinates, widened by 10% of each value
  Vec wind_lo, wind_hi;  // componentwise range of all training wind coordinates
  std::string r0_source = "validation";
  std::string wind_source = "train";
};

inline SamplingBox sampling_box(const std::vector<const flow::Sample*>& validation,
                                const std::vector<const flow::Sample*>& train, double widen = 0.1) {
  if (validation.empty() || train.empty()) throw DataError("sampling box needs validation and training samples");
  SamplingBox b;
  b.r0_lo = b.r0_hi = validation.front()->r[0];
  for (const auto* s : validation) {
    b.r0_lo = b.r0_lo.cwiseMin(s->r[0]);
    b.r0_hi = b.r0_hi.cwiseMax(s->r[0]);
  }
  b.r0_lo -= widen * b.r0_lo.cwiseAbs();
  b.r0_hi += widen * b.r0_hi.cwiseAbs();
  b.wind_lo = b.wind_hi = train.front()->w.front();
  for (const auto* s : train) {
    for (const auto& w : s->w) {
      b.wind_lo = b.wind_lo.cwiseMin(w);
      b.wind_hi = b.wind_hi.cwiseMax(w);
    }
  }
  return b;
}

struct RateSample {
  Vec r0;
  std::vector<Vec> winds;
};

inline std::vector<RateSample> draw_rate_samples(const SamplingBox& box, int n_samples, int n_steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RateSample> out(static_cast<std::size_t>(n_samples));
  const auto uniform_vec = [&](const Vec& lo, const Vec& hi) {
    Vec v(lo.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo[i], hi[i]);
    return v;
  };
  for (auto& s : out) {
    s.r0 = uniform_vec(box.r0_lo, box.r0_hi);
    for (int k = 0; k < n_steps; ++k) s.winds.push_back(uniform_vec(box.wind_lo, box.wind_hi));
  }
  return out;
}

struct RateSummary {
  double mean_std = 0.0;  // mean over samples of the per-sample lambda standard deviation
  std::vector<double> band_lo, band_hi, band_mean;  // per step over samples
  std::size_t undefined = 0;
};

/// Summarizes lambda series given per-sample SO2 mass trajectories.
inline RateSummary summarize_rates(const std::vector<std::vector<double>>& masses) {
  RateSummary out;
  double sum = 0.0;
  int n = 0;
  for (const auto& m : masses) {
    const auto r = diag::reaction_rate(m);
    out.undefined += r.n_undefined();
    if (out.band_lo.empty()) {
      out.band_lo.assign(r.lambda.size(), std::numeric_limits<double>::infinity());
      out.band_hi.assign(r.lambda.size(), -std::numeric_limits<double>::infinity());
      out.band_mean.assign(r.lambda.size(), 0.0);
    }
    for (std::size_t i = 0; i < r.lambda.size(); ++i) {
      if (!r.defined[i]) continue;
      out.band_lo[i] = std::min(out.band_lo[i], r.lambda[i]);
      out.band_hi[i] = std::max(out.band_hi[i], r.lambda[i]);
      out.band_mean[i] += r.lambda[i] / static_cast<double>(masses.size());
    }
    const double sd = r.stddev();
    if (std::isfinite(sd)) {
      sum += sd;
      ++n;
    }
  }
  out.mean_std = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
  return out;
}

/// SO2 total masses along a flow-map rollout.
inline std::vector<double> rollout_masses(const flow::FlowMapParams& p, const RateSample& s) {
  const auto ro = flow::rollout(p, s.r0, s.winds);
  std::vector<double> m;
  for (const auto& r : ro.r) m.push_back(rbf::total_mass(rbf::Coords::from_vector(r)));
  return m;
}

struct Schedule {
  double learning_rate;
  double decay;
};

/// Three learning-rate schedules per cell (not specified by the source study).
inline std::vector<Schedule> default_schedules() { return {{0.03, 0.99}, {0.01, 0.995}, {0.1, 0.98}}; }

struct RateNetwork {
  int seed = 0;
  Schedule schedule{};
  double mean_std = std::numeric_limits<double>::quiet_NaN();
  std::string failure;
};

struct RateCell {
  int depth = 0;
  int width = 0;
  std::vector<RateNetwork> networks;
  double best = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_network = 0;
  RateSummary best_summary;
};

struct RateStudy {
  std::vector<RateCell> cells;
  RateSummary training;  // from raw training SO2 masses
  SamplingBox box;
  int n_samples = 0;
  // Reference values from the source study (E3SM), reported for context only.
  static constexpr double kReferenceDepth0Width7 = 0.000716;
};

struct RateStudyOptions {
  std::vector<int> depths{0, 1, 2};
  std::vector<int> widths{7, 14, 21};
  int seeds_per_schedule = 2;
  std::vector<Schedule> schedules = default_schedules();
  int n_samples = 1000;
  std::uint64_t seed = 17;
};

inline RateStudy reaction_rate_study(const datagen::RawDataset& ds, const std::vector<flow::Sample>& samples,
                                     const flow::TrainOptions& base_opt, const RateStudyOptions& opt, int jobs = 1) {
  const auto tr = select(ds, samples, datagen::Split::kTrain);
  const auto va = select(ds, samples, datagen::Split::kValidation);
  RateStudy out;
  out.box = sampling_box(va, tr);
  out.n_samples = opt.n_samples;
  const int n_steps = tr.front()->n_steps();
  const auto draws = draw_rate_samples(out.box, opt.n_samples, n_steps, mix_seed(opt.seed, 1));

  std::vector<std::vector<double>> train_masses;
  for (const auto* t : ds.split(datagen::Split::kTrain)) {
    std::vector<double> m;
    for (int d = 0; d < ds.config.n_days; ++d) {
      const auto s = datagen::day_slice(t->alpha_v, ds.grid.n_lon(), static_cast<std::size_t>(d));
      m.push_back(std::accumulate(s.begin(), s.end(), 0.0));
    }
    train_masses.push_back(std::move(m));
  }
  out.training = summarize_rates(train_masses);

  for (int depth : opt.depths) {
    for (int width : depth == 0 ? std::vector<int>{opt.widths.front()} : opt.widths) {
      RateCell cell;
      cell.depth = depth;
      cell.width = width;
      for (std::size_t sc = 0; sc < opt.schedules.size(); ++sc) {
        for (int s = 0; s < opt.seeds_per_schedule; ++s) cell.networks.push_back({s, opt.schedules[sc]});
      }
      out.cells.push_back(std::move(cell));
    }
  }
  struct Job {
    std::size_t cell, net;
  };
  std::vector<Job> job_list;
  for (std::size_t c = 0; c < out.cells.size(); ++c) {
    for (std::size_t n = 0; n < out.cells[c].networks.size(); ++n) job_list.push_back({c, n});
  }
  std::vector<std::vector<RateSummary>> summaries(out.cells.size());
  for (std::size_t c = 0; c < out.cells.size(); ++c) summaries[c].resize(out.cells[c].networks.size());
  const int n_wind = static_cast<int>(tr.front()->w.front().size()) / static_cast<int>(tr.front()->r[0].size() / 3);
  parallel_for(job_list.size(), jobs, [&](std::size_t j) {
    const auto [c, n] = job_list[j];
    auto& cell = out.cells[c];
    auto& net = cell.networks[n];
    auto base = flow::make_params(static_cast<int>(tr.front()->r[0].size() / 3), n_wind);
    base.rho0 = flow::initial_mass_ratio(tr);
    auto topt = base_opt;
    topt.hidden.assign(static_cast<std::size_t>(cell.depth), cell.width);
    topt.learning_rate = net.schedule.learning_rate;
    topt.decay = net.schedule.decay;
    topt.seed = mix_seed(opt.seed, j + 100);
    try {
      const auto res = flow::train(tr, va, base, topt);
      if (res.aborted) throw NumericalError(res.message);
      std::vector<std::vector<double>> masses;
      for (const auto& d : draws) masses.push_back(rollout_masses(res.params, d));
      summaries[c][n] = summarize_rates(masses);
      net.mean_std = summaries[c][n].mean_std;
    } catch (const Error& e) {
      net.failure = e.what();
    }
  });
  for (std::size_t c = 0; c < out.cells.size(); ++c) {
    auto& cell = out.cells[c];
    for (std::size_t n = 0; n < cell.networks.size(); ++n) {
      const double v = cell.networks[n].mean_std;
      if (std::isfinite(v) && !(v >= cell.best)) {
        cell.best = v;
        cell.best_network = n;
      }
    }
    if (std::isfinite(cell.best)) cell.best_summary = summaries[c][cell.best_network];
  }
  return out;
}

/// Best (lowest mean lambda-std) cell of a given depth, or nullptr.
inline const RateCell* best_of_depth(const RateStudy& s, int depth) {
  const RateCell* best = nullptr;
  for (const auto& c : s.cells) {
    if (c.depth == depth && std::isfinite(c.best) && (!best || c.best < best->best)) best = &c;
  }
  return best;
}

}  // namespace plume::study
