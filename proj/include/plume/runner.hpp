#pragma once

// Stage dispatch: manifest check, staged write, publish.

#include <functional>
#include <string>

#include "plume/pipeline.hpp"
#include "plume/report.hpp"

namespace plume::pipeline {

inline std::function<void(const Context&, const fs::path&)> body(const std::string& name) {
  if (name == "gen-data") return run_gen_data;
  if (name == "fit-rbf") return run_fit_rbf;
  if (name == "reduce-wind") return run_reduce_wind;
  if (name == "train") return run_train;
  if (name == "fit-aod") return run_fit_aod;
  if (name == "build-noise") return run_build_noise;
  if (name == "invert") return run_invert;
  if (name == "diagnose") return run_diagnose;
  if (name == "report") return run_report;
  throw ConfigError("unknown stage '" + name + "'");
}

/// Runs one stage unless its manifest is current. Returns true if the stage ran.
inline bool run_stage(const Context& ctx, const std::string& name) {
  const Stage& s = stage(name);
  const fs::path dir = stage_dir(ctx, name);
  const json inputs = input_hashes(ctx, s);
  const std::string stale = staleness(ctx, s, inputs, dir);
  if (stale.empty() && !ctx.force) {
    *ctx.log << "[" << name << "] up to date (" << dir.string() << ")\n";
    return false;
  }
  if (fs::exists(dir / "manifest.json") && !stale.empty()) {
    *ctx.log << "[" << name << "] warning: existing output is stale (" << stale << "); rerunning\n";
  }
  *ctx.log << "[" << name << "] running\n";
  io::AtomicDir tmp(dir);
  body(name)(ctx, tmp.path());
  io::write_json(tmp.path() / "manifest.json", make_manifest(ctx, s, inputs, tmp.path()));
  tmp.commit();
  *ctx.log << "[" << name << "] wrote " << dir.string() << "\n";
  return true;
}

inline void run_all(const Context& ctx) {
  for (const auto& s : stages()) run_stage(ctx, s.name);
}

}  // namespace plume::pipeline
