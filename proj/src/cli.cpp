#include "search_nne/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "search_nne/artifact.hpp"
#include "search_nne/config.hpp"
#include "search_nne/estimate.hpp"
#include "search_nne/mc_study.hpp"
#include "search_nne/panel_io.hpp"
#include "search_nne/parallel.hpp"

namespace search_nne {

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream os(tmp);
    if (!os) throw Error("cannot open " + tmp + " for writing");
    os << text;
    if (!os) throw Error("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move output to " + path);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Per-block means and sds applied to standardized synthetic attributes.
void apply_units(AttributeBlock& x, const nlohmann::json& units) {
  StrictObject o(units, "units");
  std::vector<double> mp, sp, ma, sa, mc, sc;
  o.optional("prod_mean", mp);
  o.optional("prod_sd", sp);
  o.optional("ads_mean", ma);
  o.optional("ads_sd", sa);
  o.optional("cons_mean", mc);
  o.optional("cons_sd", sc);
  o.finish();
  auto apply = [](Eigen::MatrixXd& m, const std::vector<double>& mean, const std::vector<double>& sd,
                  const char* what) {
    if (!mean.empty() && mean.size() != static_cast<std::size_t>(m.cols()))
      throw ConfigError(std::string("units.") + what + "_mean: wrong length");
    if (!sd.empty() && sd.size() != static_cast<std::size_t>(m.cols()))
      throw ConfigError(std::string("units.") + what + "_sd: wrong length");
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      if (!sd.empty()) {
        if (!(sd[k] > 0.0)) throw ConfigError(std::string("units.") + what + "_sd: must be positive");
        m.col(k) *= sd[k];
      }
      if (!mean.empty()) m.col(k).array() += mean[k];
    }
  };
  apply(x.prod, mp, sp, "prod");
  apply(x.ads, ma, sa, "ads");
  apply(x.cons, mc, sc, "cons");
}

struct SynthSpec {
  Dims dims;
  Theta theta;
  std::uint64_t seed = 1;
  nlohmann::json units;
};

Dataset synth_attributes(const Dims& dims, std::uint64_t seed, const nlohmann::json& units) {
  if (dims.d_prod < 0 || dims.d_ads < 0 || dims.d_cons < 0 || dims.J < 1 || dims.n < 1)
    throw ConfigError("dims: counts must be nonnegative and J, n positive");
  Rng rng(derive_seed(seed, 0xa77));
  Dataset d;
  d.x = draw_attributes(dims, rng);
  d.names = AttributeNames::defaults(dims);
  if (!units.is_null()) apply_units(d.x, units);
  return d;
}

int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 std::optional<std::uint64_t> seed, int threads, const std::string& training_out,
                 const std::string& training_in, std::ostream& out) {
  PretrainConfig cfg = read_json_file(config_path).get<PretrainConfig>();
  if (seed) cfg.seed = *seed;
  cfg.threads = resolve_threads(threads ? threads : cfg.threads);
  const auto t0 = std::chrono::steady_clock::now();
  auto log = [&](const std::string& s) { out << s << std::endl; };
  std::optional<TrainingSet> set;
  if (!training_in.empty()) {
    set = read_training_set(training_in);
    if (set->size() != cfg.examples)
      throw ConfigError("training set " + training_in + " has " + std::to_string(set->size()) +
                        " examples; config asks for " + std::to_string(cfg.examples));
  } else if (!training_out.empty()) {
    GeneratorOptions opts;
    opts.threads = cfg.threads;
    set = generate_training_set(cfg.examples, cfg.prior, layout_for(cfg.prior.maxima(), cfg.penalties),
                                cfg.seed, opts);
    write_training_set(*set, training_out);
    char buf[160];
    std::snprintf(buf, sizeof buf, "generated %zu examples; drop rate %.3f; saved to ", set->size(),
                  set->stats.drop_rate());
    log(buf + training_out);
  }
  const EstimatorArtifact a = pretrain(cfg, set ? &*set : nullptr, log);
  save_artifact(a, out_path);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "drop rate %.4f; net validation loss %.6f; tree validation loss %.6f; wall time %.1f s",
                a.generation.drop_rate(), a.summary.validation_loss, a.trees.validation_loss, elapsed(t0));
  log(buf);
  log("artifact written to " + out_path);
  return kExitOk;
}

int cmd_estimate(const std::string& panel_path, const std::string& artifact_path, int bootstrap,
                 std::uint64_t seed, int threads, const std::string& out_path, bool force,
                 std::ostream& out, std::ostream& err) {
  const EstimatorArtifact a = load_artifact(artifact_path);
  const PanelData panel = read_panel_csv_file(panel_path);
  const auto t0 = std::chrono::steady_clock::now();
  EstimateOptions opts;
  opts.force = force;
  opts.seed = seed;
  opts.threads = resolve_threads(threads);
  EstimateReport report = estimate(panel.data, a, opts);
  if (bootstrap > 0) report.bootstrap = bootstrap_se(panel.data, a, bootstrap, seed, opts);
  report.seconds = elapsed(t0);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  const std::string text = report_json(report).dump(2) + "\n";
  if (out_path.empty())
    out << text;
  else
    write_text(out_path, text);
  return kExitOk;
}

int cmd_mc_study(const std::string& config_path, const std::string& artifact_path,
                 std::optional<std::uint64_t> seed, int threads, const std::string& out_path,
                 std::ostream& out) {
  const nlohmann::json j = read_json_file(config_path);
  StrictObject o(j, "mc-study");
  std::string panel_path;
  Dims dims;
  Theta truth;
  McStudyOptions opts;
  std::uint64_t attribute_seed = 1;
  nlohmann::json units;
  o.optional("panel", panel_path);
  o.optional("dims", dims);
  o.optional("attribute_seed", attribute_seed);
  o.optional("units", units);
  o.required("theta", truth);
  o.optional("reps", opts.reps);
  o.optional("estimators", opts.estimators);
  o.optional("smle", opts.smle);
  o.optional("seed", opts.seed);
  o.finish();
  if (seed) opts.seed = *seed;
  opts.threads = resolve_threads(threads);
  if (panel_path.empty() == !j.contains("dims"))
    throw ConfigError("mc-study: give exactly one of 'panel' and 'dims'");
  const Dataset panel = panel_path.empty() ? synth_attributes(dims, attribute_seed, units)
                                           : read_panel_csv_file(panel_path).data;
  try {
    check_dims(truth, panel.dims());
  } catch (const ContractViolation&) {
    throw ConfigError("mc-study: theta dimensions do not match the panel attributes");
  }
  std::optional<EstimatorArtifact> artifact;
  if (!artifact_path.empty()) artifact = load_artifact(artifact_path);
  const McResult r = run_mc_study(panel, truth, opts, artifact ? &*artifact : nullptr);
  print_mc_table(out, r);
  if (!out_path.empty()) {
    std::ostringstream csv;
    write_mc_csv(csv, r);
    write_text(out_path, csv.str());
  }
  return kExitOk;
}

int cmd_inspect(const std::string& artifact_path, std::ostream& out) {
  const EstimatorArtifact a = load_artifact(artifact_path);
  nlohmann::json meta = artifact_metadata(a);
  meta["layout"].erase("slots");
  meta["summary"].erase("history");
  out << meta.dump(2) << '\n';
  return kExitOk;
}

int cmd_gen_synth(const std::string& config_path, std::optional<std::uint64_t> seed,
                  const std::string& out_path, std::ostream& out) {
  const nlohmann::json j = read_json_file(config_path);
  StrictObject o(j, "gen-synth");
  SynthSpec spec;
  o.required("dims", spec.dims);
  o.required("theta", spec.theta);
  o.optional("seed", spec.seed);
  o.optional("units", spec.units);
  o.finish();
  if (seed) spec.seed = *seed;
  Dataset d = synth_attributes(spec.dims, spec.seed, spec.units);
  try {
    check_dims(spec.theta, spec.dims);
  } catch (const ContractViolation&) {
    throw ConfigError("gen-synth: theta dimensions do not match dims");
  }
  d.y = simulate_panel(spec.theta, d.x, derive_seed(spec.seed, 0x0c));
  if (out_path.empty()) {
    write_panel_csv(out, d);
  } else {
    write_panel_csv_file(out_path, d);
    const Rates r = rates(d.y);
    char buf[160];
    std::snprintf(buf, sizeof buf, "wrote %d consumers x %d products; buy rate %.4f, search rate %.4f\n",
                  spec.dims.n, spec.dims.J, r.buy_rate, r.search_rate);
    out << buf;
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pretrained neural-net estimator for sequential search models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config, out_path, artifact, panel, training_out, training_in;
  std::uint64_t seed_value = 1;
  int threads = 0, bootstrap = 0;
  bool force = false;

  auto* pre = app.add_subcommand("pretrain", "Generate examples, train net and trees, write an artifact");
  pre->add_option("--config", config, "JSON pretraining config")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out_path, "Artifact path")->required();
  auto* pre_seed = pre->add_option("--seed", seed_value, "Overrides the config seed");
  pre->add_option("--threads", threads, "Worker threads (default $SEARCH_NNE_THREADS or 1)");
  pre->add_option("--training-out", training_out, "Also save the generated training set");
  pre->add_option("--training-in", training_in, "Reuse a saved training set")->check(CLI::ExistingFile);

  auto* est = app.add_subcommand("estimate", "Estimate a panel with a pretrained artifact");
  est->add_option("panel", panel, "Panel CSV")->required()->check(CLI::ExistingFile);
  est->add_option("--artifact", artifact, "Artifact path")->required()->check(CLI::ExistingFile);
  est->add_option("--bootstrap", bootstrap, "Bootstrap replicates (0 for none)")->check(CLI::NonNegativeNumber);
  est->add_option("--seed", seed_value, "Seed for bootstrap and splitting");
  est->add_option("--threads", threads, "Worker threads");
  est->add_option("--out", out_path, "Report path (default stdout)");
  est->add_flag("--force", force, "Silence rate-threshold warnings");

  auto* mc = app.add_subcommand("mc-study", "Monte Carlo study of NNE and smoothed SMLE");
  mc->add_option("--config", config, "JSON study config")->required()->check(CLI::ExistingFile);
  mc->add_option("--artifact", artifact, "Artifact for nne rows")->check(CLI::ExistingFile);
  auto* mc_seed = mc->add_option("--seed", seed_value, "Overrides the config seed");
  mc->add_option("--threads", threads, "Worker threads");
  mc->add_option("--out", out_path, "CSV table path");

  auto* ins = app.add_subcommand("inspect-artifact", "Print artifact metadata as JSON");
  ins->add_option("artifact", artifact, "Artifact path")->required()->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("gen-synth", "Write a simulated panel CSV");
  gen->add_option("--config", config, "JSON spec with dims, theta, seed, units")->required()->check(CLI::ExistingFile);
  auto* gen_seed = gen->add_option("--seed", seed_value, "Overrides the config seed");
  gen->add_option("--out", out_path, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }
  auto opt_seed = [&](CLI::Option* o) {
    return o->count() ? std::optional<std::uint64_t>(seed_value) : std::nullopt;
  };
  try {
    if (*pre) return cmd_pretrain(config, out_path, opt_seed(pre_seed), threads, training_out, training_in, out);
    if (*est) return cmd_estimate(panel, artifact, bootstrap, seed_value, threads, out_path, force, out, err);
    if (*mc) return cmd_mc_study(config, artifact, opt_seed(mc_seed), threads, out_path, out);
    if (*ins) return cmd_inspect(artifact, out);
    if (*gen) return cmd_gen_synth(config, opt_seed(gen_seed), out_path, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IncompatibleArtifact& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CorruptArtifact& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace search_nne
