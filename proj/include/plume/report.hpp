#pragma once

// Report stage: summary.md and SVG figures from whichever upstream artifacts exist.

#include <cmath>
#include <map>
#include <optional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "plume/pipeline.hpp"
#include "plume/svg.hpp"

namespace plume::pipeline {

namespace report_detail {

inline const char* kGrey = "#808080";
inline const char* kTruth = "#d62728";
inline const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#d62728"};

inline std::string fmt(double v, const char* f = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::vector<double> iota(std::size_t n, double start = 0.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + static_cast<double>(i);
  return v;
}

inline bool has(const Context& ctx, const std::string& stage) { return fs::exists(stage_dir(ctx, stage) / "manifest.json"); }

inline double gauss_pdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace report_detail

/// Loaded fan arrays: [species][day][member][lon].
inline std::vector<std::vector<std::vector<std::vector<double>>>> load_fan(const fs::path& dir, const std::string& name) {
  const auto a = io::read_array(dir, name);
  if (a.shape.size() != 4) throw DataError((dir / name).string() + ": expected 4 dimensions");
  std::vector<std::vector<std::vector<std::vector<double>>>> f(a.shape[0]);
  std::size_t o = 0;
  for (auto& sp : f) {
    sp.resize(a.shape[1]);
    for (auto& d : sp) {
      d.resize(a.shape[2]);
      for (auto& e : d) {
        e.assign(a.data.begin() + static_cast<std::ptrdiff_t>(o), a.data.begin() + static_cast<std::ptrdiff_t>(o + a.shape[3]));
        o += a.shape[3];
      }
    }
  }
  return f;
}

inline void run_report(const Context& ctx, const fs::path& out) {
  using namespace report_detail;
  std::ostringstream md;
  std::vector<std::string> figures, notes;
  const auto emit = [&](const std::string& file, const svg::Figure& fig) {
    io::write_text(out / file, svg::render(fig));
    figures.push_back(file);
  };
  md << "# Synthetic plume inversion report\n\n";

  std::optional<datagen::RawDataset> ds;
  std::optional<CampaignFits> fits;
  std::optional<wind::WindReduction> red;
  if (has(ctx, "gen-data")) ds = art::load_dataset(stage_dir(ctx, "gen-data"));
  if (ds && has(ctx, "fit-rbf")) fits = art::load_fits(stage_dir(ctx, "fit-rbf"), *ds);
  if (ds && has(ctx, "reduce-wind")) red = art::load_wind(stage_dir(ctx, "reduce-wind"), *ds);

  if (ds) {
    md << "## Campaign\n\n";
    md << "- trajectories: " << ds->trajectories.size() << " (train " << ds->split(datagen::Split::kTrain).size() << ", validation "
       << ds->split(datagen::Split::kValidation).size() << ", test " << ds->split(datagen::Split::kTest).size() << ")\n";
    md << "- grid: " << ds->grid.n_lon() << " longitudes x " << ds->grid.lat.size() << " latitudes x " << ds->grid.alt.size()
       << " levels, " << ds->config.n_days << " days\n\n";
  } else {
    notes.push_back("dataset missing: campaign figures skipped");
  }

  // Plume vs fit for the first training trajectory.
  if (ds && fits) {
    const std::size_t i = 0;
    const auto& t = ds->trajectories[i];
    svg::Figure fig{"SO2 column and single-RBF fit, " + t.name(), 1, 3, 340, 240, {}};
    for (int d : {0, ds->config.n_days / 2, ds->config.n_days - 1}) {
      svg::Panel p{"day " + std::to_string(d), "longitude (deg)", "SO2 (g per cell)", {}, {}};
      const auto raw = datagen::day_slice(t.alpha_v, ds->grid.n_lon(), static_cast<std::size_t>(d));
      p.series.push_back({ds->grid.lon, {raw.begin(), raw.end()}, "#000000", 1.5, 1.0, "", "", "raw"});
      p.series.push_back({ds->grid.lon, rbf::eval_basis(fits->so2[i][static_cast<std::size_t>(d)].coords, ctx.cfg.rbf.fit.domain, ds->grid.lon),
                          kTruth, 1.5, 1.0, "5,3", "", "fit"});
      p.xmin = 0;
      p.xmax = 360;
      fig.panels.push_back(p);
    }
    emit("plume_vs_fit.svg", fig);
  } else {
    notes.push_back("RBF fits missing: plume-vs-fit figure skipped");
  }

  // Localized wind PDFs and scree plot.
  if (ds && red) {
    svg::Figure fig{"Plume-localized zonal-wind PDFs", 1, 2, 380, 260, {}};
    std::size_t test_i = 0;
    for (std::size_t i = 0; i < ds->trajectories.size(); ++i) if (ds->trajectories[i].split == datagen::Split::kTest) { test_i = i; break; }
    std::vector<double> gx(red->grid.n);
    for (std::size_t j = 0; j < gx.size(); ++j) gx[j] = red->grid.at(j);
    for (std::size_t i : {std::size_t{0}, test_i}) {
      svg::Panel p{ds->trajectories[i].name(), "zonal wind (deg/day)", "density", {}, {}};
      for (std::size_t d = 0; d < red->pdfs[i].size(); ++d) {
        p.series.push_back({gx, red->pdfs[i][d][0].density, kPalette[d % 10], 1.2, 0.9, "", "",
                            d == 0 || d + 1 == red->pdfs[i].size() ? "day " + std::to_string(d) : ""});
      }
      fig.panels.push_back(p);
    }
    emit("wind_pdfs.svg", fig);

    svg::Figure scree{"Wind PDF principal components", 1, 1, 420, 280, {}};
    svg::Panel p{"singular values", "component", "singular value", {}, {}};
    p.log_y = true;
    const auto n = std::min<Eigen::Index>(red->basis.singular_values.size(), 20);
    std::vector<double> sv(red->basis.singular_values.data(), red->basis.singular_values.data() + n);
    p.series.push_back({iota(sv.size(), 1), sv, "#1f77b4", 3, 1.0, "", "", "", true});
    p.series.push_back({iota(sv.size(), 1), sv, "#1f77b4", 1, 0.6});
    const double k = red->basis.rank + 0.5;
    p.series.push_back({{k, k}, {sv.back() > 0 ? sv.back() : 1e-12, sv.front()}, kTruth, 1, 1.0, "4,3", "", "rank " + std::to_string(red->basis.rank)});
    scree.panels.push_back(p);
    emit("scree.svg", scree);
  } else {
    notes.push_back("wind reduction missing: PDF and scree figures skipped");
  }

  // Mass loss and diagnostics.
  json dj;
  if (has(ctx, "diagnose")) dj = io::read_json(stage_dir(ctx, "diagnose") / "diagnostics.json");
  const fs::path ddir = stage_dir(ctx, "diagnose");
  if (fs::exists(ddir / "mass_loss.csv")) {
    const auto csv = io::read_csv(ddir / "mass_loss.csv");
    svg::Figure fig{"Relative sulfur mass S(t)/S(0)", 1, 1, 460, 300, {}};
    svg::Panel p{"all trajectories", "day", "S(t)/S(0)", {}, {}};
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> fit_curves;
    std::vector<std::string> order;
    for (const auto& row : csv.rows) {
      if (!fit_curves.count(row[0])) order.push_back(row[0]);
      fit_curves[row[0]].first.push_back(io::parse_number(row[1], "mass_loss.csv"));
      fit_curves[row[0]].second.push_back(io::parse_number(row[3], "mass_loss.csv"));
    }
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& c = fit_curves[order[k]];
      p.series.push_back({c.first, c.second, kGrey, 1, 0.5, "", "", k == 0 ? "RBF fits" : ""});
    }
    if (!order.empty()) {
      const auto& x = fit_curves[order[0]].first;
      p.series.push_back({x, std::vector<double>(x.size(), 1.0), "#000000", 1.5, 1.0, "4,3", "", "raw (conserved)"});
      p.series.push_back({x, std::vector<double>(x.size(), 0.85), kTruth, 1, 1.0, "2,2", "", "15% bound"});
    }
    p.ymin = 0.8;
    p.ymax = 1.05;
    fig.panels.push_back(p);
    emit("mass_loss.svg", fig);
  } else {
    notes.push_back("mass-loss table missing: figure skipped");
  }

  if (has(ctx, "train")) {
    const json tj = io::read_json(stage_dir(ctx, "train") / "flowmap.json");
    const auto& h = tj["history"];
    const auto tl = h["train_loss"].get<std::vector<double>>(), vl = h["val_loss"].get<std::vector<double>>();
    svg::Figure fig{"Flow-map training", 1, 1, 460, 300, {}};
    svg::Panel p{"look-ahead loss", "epoch", "loss", {}, {}};
    p.log_y = true;
    p.series.push_back({iota(tl.size(), 1), tl, "#1f77b4", 1.5, 1.0, "", "", "train"});
    if (!vl.empty()) p.series.push_back({iota(vl.size(), 1), vl, "#ff7f0e", 1.5, 1.0, "", "", "validation"});
    fig.panels.push_back(p);
    emit("training_loss.svg", fig);
    md << "## Flow map\n\n";
    md << "- epochs: " << tl.size() << ", best epoch " << h["best_epoch"].get<int>() << "\n";
    md << "- loss: initial " << fmt(h["initial_loss"].get<double>()) << ", final " << fmt(tl.empty() ? NAN : tl.back()) << "\n";
    for (const auto& [k, v] : tj["prediction_error"].items()) md << "- " << k << " prediction rel. l2 error: " << fmt(v.get<double>()) << "\n";
    md << "\n";
  } else {
    notes.push_back("training history missing: loss figure skipped");
  }

  // Inversion figures.
  if (has(ctx, "invert")) {
    const fs::path idir = stage_dir(ctx, "invert");
    const json rj = io::read_json(idir / "report.json");
    const auto lon = rj["grid_lon"].get<std::vector<double>>();
    const auto days = rj["fan_days"].get<std::vector<int>>();
    md << "## Inversion\n\n";
    md << "| trajectory | MAP x | MAP a | MAP c | rel. l2 (SO2 day 0) |";
    for (const auto& a : rj["trajectories"][0]["ablation"]) md << " " << a["name"].get<std::string>() << " |";
    md << "\n|---|---|---|---|---|";
    for (std::size_t k = 0; k < rj["trajectories"][0]["ablation"].size(); ++k) md << "---|";
    md << "\n";
    svg::Figure fields{"Decoded MAP vs truth (day 0 SO2)", 1, static_cast<int>(rj["trajectories"].size()), 380, 260, {}};
    for (const auto& t : rj["trajectories"]) {
      const std::string name = t["truth"]["trajectory"].get<std::string>();
      const auto r0 = t["map"]["r0"].get<std::vector<double>>();
      md << "| " << name << " | " << fmt(r0[0]) << " | " << fmt(r0[1]) << " | " << fmt(r0[2]) << " | " << fmt(t["rel_l2"].get<double>()) << " |";
      for (const auto& a : t["ablation"]) md << " " << (a.contains("rel_l2") ? fmt(a["rel_l2"].get<double>()) : std::string("failed")) << " |";
      md << "\n";

      svg::Panel p{name, "longitude (deg)", "SO2 (g per cell)", {}, {}};
      p.series.push_back({lon, t["truth"]["so2_day0"].get<std::vector<double>>(), kTruth, 1.5, 1.0, "5,3", "", "truth"});
      p.series.push_back({lon, t["decoded_map"].get<std::vector<double>>(), "#000000", 1.5, 1.0, "", "", "MAP (BAE)"});
      std::size_t k = 0;
      for (const auto& a : t["ablation"]) {
        if (a.contains("decoded_map")) {
          p.series.push_back({lon, a["decoded_map"].get<std::vector<double>>(), kPalette[k], 1, 0.8, "", "", a["name"].get<std::string>()});
        }
        ++k;
      }
      p.xmin = 0;
      p.xmax = 360;
      fields.panels.push_back(p);

      // Prediction fan: SO2 / sulfate / AOD rows, observed days as columns.
      const auto f = load_fan(idir, "fan_" + name);
      const auto truth = io::read_array(idir, "fan_truth_" + name);
      const char* species[] = {"SO2", "sulfate", "AOD"};
      svg::Figure fan{"Predictions at the MAP point under training winds, " + name, 3, static_cast<int>(days.size()), 320, 220, {}};
      for (std::size_t sp = 0; sp < 3; ++sp) {
        for (std::size_t d = 0; d < days.size(); ++d) {
          svg::Panel q{std::string(species[sp]) + ", day " + std::to_string(days[d]), "longitude (deg)", species[sp], {}, {}};
          for (const auto& member : f[sp][d]) q.series.push_back({lon, member, kGrey, 0.8, 0.6, "", "fan"});
          const auto off = static_cast<std::ptrdiff_t>((sp * days.size() + d) * lon.size());
          q.series.push_back({lon, {truth.data.begin() + off, truth.data.begin() + off + static_cast<std::ptrdiff_t>(lon.size())}, kTruth, 1.5,
                              1.0, "5,3", "truth", "truth"});
          q.xmin = 0;
          q.xmax = 360;
          fan.panels.push_back(q);
        }
      }
      emit("prediction_fan_" + name + ".svg", fan);

      // Prior and Laplace posterior marginals, plus decoded posterior samples.
      svg::Figure pp{"Prior and Laplace posterior, " + name, 2, 2, 360, 240, {}};
      const auto pm = t["prior"]["mean"].get<std::vector<double>>(), ps = t["prior"]["sd"].get<std::vector<double>>();
      const auto lm = t["laplace"]["mean"].get<std::vector<double>>(), ls = t["laplace"]["sd"].get<std::vector<double>>();
      const auto tr = t["truth"]["fit_r0"].get<std::vector<double>>();
      const char* labels[] = {"center x (deg)", "shape a (1/deg)", "coefficient c"};
      for (std::size_t k2 = 0; k2 < 3 && k2 < pm.size(); ++k2) {
        svg::Panel q{labels[k2], labels[k2], "density", {}, {}};
        const double lo = std::min(pm[k2] - 3 * ps[k2], lm[k2] - 4 * ls[k2]), hi = std::max(pm[k2] + 3 * ps[k2], lm[k2] + 4 * ls[k2]);
        std::vector<double> x(241), yp(241), yl(241);
        for (std::size_t j = 0; j < x.size(); ++j) {
          x[j] = lo + (hi - lo) * static_cast<double>(j) / 240.0;
          yp[j] = gauss_pdf(x[j], pm[k2], ps[k2]);
          yl[j] = gauss_pdf(x[j], lm[k2], ls[k2]);
        }
        double top = 0;
        for (double v : yl) top = std::max(top, v);
        for (double v : yp) top = std::max(top, v);
        q.series.push_back({x, yp, "#1f77b4", 1.5, 1.0, "", "prior", "prior"});
        q.series.push_back({x, yl, "#ff7f0e", 1.5, 1.0, "", "posterior", "Laplace"});
        q.series.push_back({{tr[k2], tr[k2]}, {0, top}, kTruth, 1.2, 1.0, "5,3", "truth", "truth (fit)"});
        pp.panels.push_back(q);
      }
      svg::Panel q{"decoded day-0 SO2", "longitude (deg)", "SO2 (g per cell)", {}, {}};
      std::size_t shown = 0;
      for (const auto& s : t["posterior_samples"]) {
        if (shown++ >= 50) break;
        q.series.push_back({lon, inv::decode(io::vec_from_json(s), lon, ctx.cfg.rbf.fit.domain), kGrey, 0.6, 0.4, "", "sample", shown == 1 ? "posterior samples" : ""});
      }
      q.series.push_back({lon, inv::decode(io::vec_from_json(t["prior"]["mean"]), lon, ctx.cfg.rbf.fit.domain), "#1f77b4", 1.2, 1.0, "", "", "prior mean"});
      q.series.push_back({lon, t["decoded_map"].get<std::vector<double>>(), "#ff7f0e", 1.5, 1.0, "", "", "MAP"});
      q.series.push_back({lon, t["truth"]["so2_day0"].get<std::vector<double>>(), kTruth, 1.5, 1.0, "5,3", "truth", "truth"});
      q.xmin = 0;
      q.xmax = 360;
      pp.panels.push_back(q);
      emit("prior_posterior_" + name + ".svg", pp);
    }
    emit("map_fields.svg", fields);
    md << "\nWorst decoded MAP error over the test trajectories: " << fmt(rj["max_rel_l2"].get<double>()) << "\n\n";
  } else {
    notes.push_back("inversion report missing: fan, posterior and MAP figures skipped");
  }

  if (dj.contains("rank")) {
    const auto& r = dj["rank"];
    svg::Figure fig{"Wind-rank study", 1, 1, 460, 300, {}};
    svg::Panel p{"validation prediction error", "wind rank N_w", "rel. l2 error", {}, {}};
    std::vector<double> rx, ry, mx, my;
    for (const auto& row : r["table"]) {
      for (const auto& e : row["errors"]) {
        if (e.is_null()) continue;
        rx.push_back(row["rank"].get<double>());
        ry.push_back(e.get<double>());
      }
      mx.push_back(row["rank"].get<double>());
      my.push_back(row["mean"].get<double>());
    }
    p.series.push_back({rx, ry, kGrey, 2.5, 0.8, "", "", "seeds", true});
    p.series.push_back({mx, my, "#1f77b4", 1.5, 1.0, "", "", "mean"});
    fig.panels.push_back(p);
    emit("rank_study.svg", fig);
    md << "## Wind-rank study\n\n| rank | mean error | per-seed errors |\n|---|---|---|\n";
    for (const auto& row : r["table"]) {
      md << "| " << row["rank"].get<int>() << " | " << fmt(row["mean"].get<double>()) << " |";
      for (const auto& e : row["errors"]) md << " " << (e.is_null() ? std::string("failed") : fmt(e.get<double>()));
      md << " |\n";
    }
    md << "\nargmin rank: " << r["argmin"].get<int>() << "\n\n";
  } else {
    notes.push_back("rank study missing: figure skipped");
  }

  if (dj.contains("reaction_rates")) {
    const auto& rr = dj["reaction_rates"];
    std::vector<std::pair<std::string, json>> series{{"training data", rr["training"]}};
    for (const auto& [depth, v] : rr["best_by_depth"].items()) {
      series.emplace_back(depth + " hidden layer(s), width " + std::to_string(v["width"].get<int>()), v["summary"]);
    }
    svg::Figure fig{"Reaction-rate bands (min/max over samples)", 1, static_cast<int>(series.size()), 300, 260, {}};
    for (std::size_t k = 0; k < series.size(); ++k) {
      const auto& s = series[k].second;
      const auto lo = s["band_lo"].get<std::vector<double>>(), hi = s["band_hi"].get<std::vector<double>>();
      svg::Panel p{series[k].first, "step n", "lambda_n", {}, {}};
      p.bands.push_back({iota(lo.size()), lo, hi, kPalette[k], 0.3, "band"});
      p.series.push_back({iota(lo.size()), s["band_mean"].get<std::vector<double>>(), kPalette[k], 1.5, 1.0, "", "", "mean"});
      fig.panels.push_back(p);
    }
    emit("rate_bands.svg", fig);
    md << "## Reaction-rate study\n\n| depth | width | best mean lambda std |\n|---|---|---|\n";
    for (const auto& c : rr["cells"]) {
      md << "| " << c["depth"].get<int>() << " | " << c["width"].get<int>() << " | "
         << (c["best"].is_null() ? std::string("failed") : fmt(c["best"].get<double>())) << " |\n";
    }
    md << "\n- training data mean lambda std: " << fmt(rr["training"]["mean_std"].get<double>()) << "\n";
    md << "- depth ordering (0 layers <= 2 layers): "
       << (rr["depth_ordering_holds"].is_null() ? "n/a" : rr["depth_ordering_holds"].get<bool>() ? "holds" : "violated") << "\n";
    md << "- reference value from the E3SM study for 0 layers, width 7: " << fmt(rr["reference_depth0_width7"].get<double>())
       << " (context only; not reproducible on synthetic data)\n\n";
  } else {
    notes.push_back("reaction-rate study missing: band figure skipped");
  }

  if (dj.contains("mahalanobis")) {
    md << "## Wind Mahalanobis distance\n\n";
    for (const auto& [k, v] : dj["mahalanobis"]["test"].items()) md << "- " << k << ": " << fmt(v.get<double>()) << "\n";
    md << "\n";
  }
  if (dj.contains("mass_loss")) {
    md << "## Mass loss\n\n- max |S_fit(t)/S_fit(0) - 1|: " << fmt(dj["mass_loss"]["max_fit_deviation"].get<double>())
       << "\n- max |S_raw(t)/S_raw(0) - 1|: " << fmt(dj["mass_loss"]["max_raw_deviation"].get<double>()) << "\n\n";
  }

  md << "## Figures\n\n";
  for (const auto& f : figures) md << "- " << f << "\n";
  if (!notes.empty()) {
    md << "\n## Notes\n\n";
    for (const auto& n : notes) md << "- " << n << "\n";
  }
  io::write_text(out / "summary.md", md.str());
  io::write_json(out / "figures.json", {{"figures", figures}, {"notes", notes}});
}

}  // namespace plume::pipeline
