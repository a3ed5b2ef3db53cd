#pragma once

// Command line front end. `run_cli` is the whole tool; main() only forwards to it.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "plume/runner.hpp"

namespace plume::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Options {
  std::string config;
  std::string work_dir;
  int jobs = 1;
  bool force = false;
  std::string data, fits, wind, out;
  std::optional<int> n_rbf, rank, lookahead, starts;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> what;
  std::string model, noise_model, obs;
  bool dump = false;
};

inline std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

inline pipeline::Context make_context(const Options& o, const std::string& stage, std::ostream& log) {
  pipeline::Context ctx;
  ctx.cfg = config::load(o.config);
  ctx.log = &log;
  auto& c = ctx.cfg;
  if (!o.work_dir.empty()) c.paths.work_dir = o.work_dir;
  if (!o.data.empty()) c.paths.data = absolute(o.data);
  if (!o.fits.empty()) c.paths.fits = absolute(o.fits);
  if (!o.wind.empty()) c.paths.wind = absolute(o.wind);
  if (!o.out.empty()) {
    if (stage.empty()) throw ConfigError("--out names a single stage's output directory");
    c.paths.*(pipeline::stage(stage).path) = absolute(o.out);
  }
  if (o.n_rbf) c.rbf.n_rbf = *o.n_rbf;
  if (o.tau) c.windreduce.tau = *o.tau;
  if (o.rank) c.windreduce.rank = *o.rank;
  if (o.lookahead) c.flowmap.lookahead = *o.lookahead;
  if (o.starts) c.inversion.starts = *o.starts;
  if (o.seed) c.seed = *o.seed;
  if (o.jobs < 1) throw ConfigError("--jobs must be >= 1");
  ctx.jobs = o.jobs;
  ctx.force = o.force;
  if (!o.what.empty()) ctx.diagnose_what = {o.what.begin(), o.what.end()};
  c.validate();
  return ctx;
}

/// Inversion of a user-supplied observation file against existing model artifacts.
/// Writes a single report JSON and no manifest.
inline void invert_standalone(const Options& o, std::ostream& log) {
  if (o.model.empty() || o.noise_model.empty() || o.out.empty()) {
    throw ConfigError("invert with --obs also needs --model, --noise-model and --out");
  }
  auto cfg = config::load(o.config);
  if (o.starts) cfg.inversion.starts = *o.starts;
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  const auto m = art::load_model(o.model);
  const fs::path nm(o.noise_model);
  const auto n = art::load_noise(fs::is_directory(nm) ? nm : nm.parent_path());
  const auto obs = art::load_observations(o.obs);
  const auto res = pipeline::invert_one(m, n, obs, cfg.inversion, cfg.derive(cfg.inversion.seed), o.jobs, nullptr);
  const fs::path out(o.out);
  const fs::path tmp = out.string() + ".tmp";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_json(tmp, res.report);
  fs::rename(tmp, out);
  log << "invert: wrote " << out.string() << "\n";
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Volcanic plume source inversion on a synthetic aerosol campaign", "plume"};
  app.set_version_flag("--version", std::string(pipeline::kToolVersion));
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "JSON config file (comments allowed); defaults otherwise");
    s->add_option("--work-dir", o.work_dir, "root directory for stage outputs");
    s->add_option("--jobs", o.jobs, "worker threads; results do not depend on this");
    s->add_option("--seed", o.seed, "global seed (overrides config and PLUME_SEED)");
  };
  const auto stage_opts = [&](CLI::App* s) {
    common(s);
    s->add_flag("--force", o.force, "rerun even when the manifest is current");
    s->add_option("--data", o.data, "dataset directory");
    s->add_option("--fits", o.fits, "RBF fit directory");
    s->add_option("--wind", o.wind, "wind reduction directory");
    s->add_option("--out", o.out, "output directory of this stage");
  };

  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  const std::pair<const char*, const char*> descr[] = {
      {"gen-data", "generate the synthetic ensemble campaign"},
      {"fit-rbf", "fit periodized Gaussian RBFs to every plume snapshot"},
      {"reduce-wind", "localized zonal-wind PDFs and their principal components"},
      {"train", "train the reduced flow map"},
      {"fit-aod", "fit the AOD map and bundle the forward model"},
      {"build-noise", "background and approximation-error noise model"},
      {"invert", "MAP and Laplace inversion of test observations"},
      {"diagnose", "mass loss, wind Mahalanobis distances, rate and rank studies"},
      {"report", "summary and SVG figures"},
  };
  for (const auto& [name, text] : descr) {
    auto* s = app.add_subcommand(name, text);
    stage_opts(s);
    stage_cmds.emplace_back(name, s);
  }
  auto find = [&](const std::string& n) {
    for (auto& [k, s] : stage_cmds) if (k == n) return s;
    return static_cast<CLI::App*>(nullptr);
  };
  find("fit-rbf")->add_option("--nrbf", o.n_rbf, "RBFs per snapshot");
  find("reduce-wind")->add_option("--tau", o.tau, "localization threshold (g)");
  find("reduce-wind")->add_option("--rank", o.rank, "wind PCA rank");
  find("train")->add_option("--P", o.lookahead, "look-ahead depth");
  find("invert")->add_option("--starts", o.starts, "multistart count");
  find("invert")->add_option("--model", o.model, "model.json (standalone mode)");
  find("invert")->add_option("--noise-model", o.noise_model, "noise model directory or its noise.json (standalone mode)");
  find("invert")->add_option("--obs", o.obs, "observation JSON; enables standalone mode");
  find("diagnose")
      ->add_option("--what", o.what, "subset of diagnostics")
      ->check(CLI::IsMember({"mass-loss", "mahalanobis", "reaction-rates", "rank"}));

  auto* all = app.add_subcommand("run-all", "run every stage in order, skipping current ones");
  common(all);
  all->add_flag("--force", o.force, "rerun every stage");
  auto* verify = app.add_subcommand("verify", "check the manifest hash chain");
  common(verify);
  auto* cfg_cmd = app.add_subcommand("config", "show the effective configuration");
  cfg_cmd->add_option("--config", o.config, "JSON config file");
  cfg_cmd->add_flag("--dump", o.dump, "print the configuration as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << pipeline::kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "plume: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (cfg_cmd->parsed()) {
      const auto c = config::load(o.config);
      out << io::dump(config::to_json(c));
      return 0;
    }
    if (all->parsed()) {
      pipeline::run_all(make_context(o, "", err));
      return 0;
    }
    if (verify->parsed()) {
      const auto r = pipeline::verify_chain(make_context(o, "", err));
      for (const auto& v : r.verified) out << "ok      " << v << "\n";
      for (const auto& p : r.problems) out << "PROBLEM " << p << "\n";
      return r.ok ? 0 : static_cast<int>(ExitCode::kData);
    }
    for (auto& [name, s] : stage_cmds) {
      if (!s->parsed()) continue;
      if (name == "invert" && !o.obs.empty()) {
        invert_standalone(o, err);
        return 0;
      }
      pipeline::run_stage(make_context(o, name, err), name);
      return 0;
    }
  } catch (const Error& e) {
    err << "plume: error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const json::exception& e) {
    err << "plume: error: malformed JSON: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const fs::filesystem_error& e) {
    err << "plume: error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}

}  // namespace plume::cli
