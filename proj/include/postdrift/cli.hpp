#pragma once

// Command-line front end. Every command writes its outputs plus a run
// manifest (`<out>.manifest.json`, or `<dir>/manifest.json` for generate)
// recording the argument vector, working directory, resolved configuration,
// inputs and outputs. `replay` re-executes a manifest.
//
// Exit codes: 0 success, 2 configuration error, 3 fit non-convergence,
// 4 data error, 1 anything else.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "postdrift/postdrift.hpp"

namespace postdrift::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kNonConverged = 3, kDataError = 4 };

/// Thrown when a fit does not converge and the caller did not allow it.
class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;
using nlohmann::json;

inline bool is_preset(const std::string& name) {
  return name == "intercept" || name == "mains" || name == "full" || name == "mains-nointercept" ||
         name == "full-nointercept";
}

/// Accepts a preset name (intercept, mains, full, optionally suffixed with
/// "-nointercept") or a path to a FeatureMap JSON file.
inline FeatureMap resolve_map(const std::string& name, Eigen::Index d) {
  const auto dim = static_cast<int>(d);
  if (name == "intercept") return FeatureMap::intercept_only();
  if (name == "mains") return FeatureMap::mains(dim);
  if (name == "full") return FeatureMap::full(dim);
  if (name == "mains-nointercept") return FeatureMap::mains(dim, false);
  if (name == "full-nointercept") return FeatureMap::full(dim, false);
  const auto j = jsonutil::read_file(name);
  try {
    return j.get<FeatureMap>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

inline Penalty penalty_for(double lambda) {
  if (lambda < 0.0) throw ConfigError("--lambda: must be >= 0");
  return lambda > 0.0 ? Penalty::l1(lambda) : Penalty::none();
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::optional<std::uint64_t> seed;
};

inline void write_manifest(const fs::path& path, const Manifest& m, double seconds) {
  json j{{"command", m.command},
         {"argv", m.argv},
         {"cwd", fs::current_path().string()},
         {"config", m.config},
         {"inputs", m.inputs},
         {"outputs", m.outputs},
         {"seed", m.seed ? json(*m.seed) : json(nullptr)},
         {"tool_version", kVersion},
         {"wall_clock_seconds", seconds}};
  csv::write_atomic(path, j.dump(2) + "\n");
}

inline void write_json(const fs::path& path, const json& j) { csv::write_atomic(path, j.dump(2) + "\n"); }

inline fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

/// Reads a model file; returns either a source model or a transfer model.
struct LoadedModel {
  std::optional<SourceModel> source;
  std::optional<TransferModel> transfer;
};

inline LoadedModel load_model(const fs::path& path) {
  const auto j = jsonutil::read_file(path);
  LoadedModel m;
  const auto type = j.value("type", std::string("source_model"));
  if (type == "transfer_model") m.transfer = transfer_model_from_json(j);
  else if (type == "source_model") m.source = source_model_from_json(j);
  else throw ConfigError(path.string() + ": unknown model type '" + type + "'");
  return m;
}

inline json source_model_document(const SourceModel& model) {
  json j = to_json(model);
  j["type"] = "source_model";
  return j;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

namespace detail {

struct Options {
  std::string config, out, data, map = "mains", source, probs, target, shift_map = "mains", model, manifest;
  double lambda = 0.0;
  double eps = kDefaultClampEps;
  bool balanced = false, standardize = false, allow_nonconverged = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_override;
  unsigned jobs = 0;
};

inline void require_converged(const FitReport& report, bool allow, const std::string& what) {
  if (!report.converged && !allow)
    throw NonConvergence(what + " did not converge: " + report.message +
                         " (pass --allow-nonconverged to keep the result)");
}

inline Manifest cmd_generate(const Options& o) {
  const auto j = jsonutil::read_file(o.config);
  jsonutil::object_at(j, "config");
  jsonutil::reject_unknown(j, "", {"sim", "domains"});
  SimConfig sim = j.contains("sim") ? sim_config_from_json(j.at("sim"), "sim") : SimConfig{};
  if (o.seed) sim.seed = *o.seed;
  std::vector<Domain> domains{Domain::source, Domain::target};
  if (j.contains("domains")) {
    const auto& d = j.at("domains");
    if (!d.is_array()) throw ConfigError("domains: expected an array");
    domains.clear();
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (!d[k].is_string()) throw ConfigError("domains[" + std::to_string(k) + "]: expected a string");
      try {
        domains.push_back(parse_domain(d[k].get<std::string>()));
      } catch (const ConfigError& e) {
        throw ConfigError("domains[" + std::to_string(k) + "]: " + e.what());
      }
    }
  }
  fs::create_directories(o.out);
  Manifest m;
  m.config = {{"sim", to_json(sim)}, {"domains", json::array()}};
  m.inputs = {o.config};
  m.seed = sim.seed;
  for (auto d : domains) {
    const auto path = fs::path(o.out) / (std::string(to_string(d)) + ".csv");
    write_dataset_csv(path, generate(sim, d));
    m.config["domains"].push_back(std::string(to_string(d)));
    m.outputs.push_back(path.string());
  }
  return m;
}

inline Manifest cmd_fit_source(const Options& o) {
  Dataset data = read_dataset_csv(o.data);
  if (o.balanced) data.w = balanced_weights(data.y);
  const auto map = resolve_map(o.map, data.dim());
  FitOptions fo;
  fo.standardize = o.standardize;
  auto fit = fit_logistic(data, map, penalty_for(o.lambda), {}, fo);
  require_converged(fit.report, o.allow_nonconverged, "source fit");
  write_json(o.out, source_model_document(fit.model));
  Manifest m;
  m.config = {{"map", map},
              {"lambda", o.lambda},
              {"balanced_weights", o.balanced},
              {"standardize", o.standardize},
              {"report",
               {{"converged", fit.report.converged},
                {"iterations", fit.report.iterations},
                {"objective", fit.report.objective},
                {"kkt_residual", fit.report.kkt_residual}}}};
  m.inputs = {o.data};
  if (!is_preset(o.map)) m.inputs.push_back(o.map);
  m.outputs = {o.out};
  return m;
}

inline Manifest cmd_fit_transfer(const Options& o) {
  if (o.source.empty() == o.probs.empty()) throw ConfigError("fit-transfer: pass exactly one of --source or --probs");
  const Dataset target = read_dataset_csv(o.target);
  SourceModel source = o.probs.empty() ? [&] {
    auto loaded = load_model(o.source);
    if (!loaded.source) throw ConfigError(o.source + ": expected a source model");
    return *loaded.source;
  }()
                                       : load_external_probabilities(o.probs);
  const auto shift_map = resolve_map(o.shift_map, target.dim());
  auto fit = fit_transfer(source, target, shift_map, penalty_for(o.lambda), o.eps);
  require_converged(fit.report, o.allow_nonconverged, "transfer fit");
  write_json(o.out, to_json(fit.model));
  Manifest m;
  m.config = {{"shift_map", shift_map},
              {"lambda", o.lambda},
              {"clamp_eps", o.eps},
              {"report",
               {{"converged", fit.report.converged},
                {"iterations", fit.report.iterations},
                {"objective", fit.report.objective},
                {"kkt_residual", fit.report.kkt_residual}}}};
  m.inputs = {o.probs.empty() ? o.source : o.probs, o.target};
  if (!is_preset(o.shift_map)) m.inputs.push_back(o.shift_map);
  m.outputs = {o.out};
  return m;
}

struct Scored {
  Eigen::VectorXd prob;
  Eigen::VectorXi label;
};

inline Scored score(const LoadedModel& model, const Dataset& data) {
  Scored s;
  if (model.transfer) {
    s.prob = model.transfer->predict_target_proba(data);
    s.label = model.transfer->classify(data);
  } else {
    s.prob = model.source->predict_proba(data);
    s.label = s.prob.unaryExpr([](double p) { return p > 0.5 ? 1 : 0; });
  }
  return s;
}

inline Manifest cmd_predict(const Options& o) {
  const auto model = load_model(o.model);
  const Dataset data = read_dataset_csv(o.data, false);
  const auto s = score(model, data);
  std::string text = "row_id,prob,label\n";
  for (Eigen::Index i = 0; i < data.size(); ++i)
    text += data.row_id(i) + "," + csv::format_double(s.prob(i)) + "," + std::to_string(s.label(i)) + "\n";
  csv::write_atomic(o.out, text);
  Manifest m;
  m.inputs = {o.model, o.data};
  m.outputs = {o.out};
  return m;
}

inline Manifest cmd_evaluate(const Options& o) {
  const auto model = load_model(o.model);
  const Dataset data = read_dataset_csv(o.data);
  data.require_binary();
  const auto s = score(model, data);
  const Eigen::VectorXi labels = data.y.cast<int>();
  write_json(o.out, to_json(evaluate(labels, s.label, s.prob)));
  Manifest m;
  m.inputs = {o.model, o.data};
  m.outputs = {o.out};
  return m;
}

inline Manifest cmd_sweep(const Options& o) {
  auto config = experiment_config_from_json(jsonutil::read_file(o.config));
  if (o.seed) config.base.seed = *o.seed;
  if (o.lambda_override) config.penalty = penalty_for(*o.lambda_override);
  config.jobs = o.jobs;
  const auto result = run_sweep(config);
  const auto csv_path = with_suffix(o.out, ".csv");
  const auto json_path = with_suffix(o.out, ".json");
  csv::write_atomic(csv_path, sweep_csv(result));
  write_json(json_path, to_json(result));
  Manifest m;
  m.config = to_json(config);
  m.inputs = {o.config};
  m.outputs = {csv_path.string(), json_path.string()};
  m.seed = config.base.seed;
  return m;
}

inline Manifest cmd_rate_check(const Options& o) {
  auto config = rate_check_config_from_json(jsonutil::read_file(o.config));
  if (o.seed) config.base.seed = *o.seed;
  config.jobs = o.jobs;
  const auto result = rate_check(config);
  const auto csv_path = with_suffix(o.out, ".csv");
  const auto json_path = with_suffix(o.out, ".json");
  csv::write_atomic(csv_path, rate_check_csv(result));
  write_json(json_path, to_json(result));
  Manifest m;
  m.config = to_json(config);
  m.inputs = {o.config};
  m.outputs = {csv_path.string(), json_path.string()};
  m.seed = config.base.seed;
  return m;
}

/// Re-executes the argument vector stored in a manifest from its recorded
/// working directory, optionally redirecting the output path.
inline int cmd_replay(const Options& o, std::ostream& out, std::ostream& err) {
  const auto j = jsonutil::read_file(o.manifest);
  if (!j.contains("argv") || !j.at("argv").is_array()) throw ConfigError(o.manifest + ": missing argv");
  auto argv = j.at("argv").get<std::vector<std::string>>();
  if (!o.out.empty()) {
    const auto redirected = fs::absolute(o.out).string();
    bool replaced = false;
    for (std::size_t k = 0; k + 1 < argv.size(); ++k)
      if (argv[k] == "--out") {
        argv[k + 1] = redirected;
        replaced = true;
      }
    if (!replaced) argv.insert(argv.end(), {"--out", redirected});
  }
  const auto saved = fs::current_path();
  if (j.contains("cwd") && j.at("cwd").is_string()) fs::current_path(j.at("cwd").get<std::string>());
  int code = kFailure;
  try {
    code = run(argv, out, err);
  } catch (...) {
    fs::current_path(saved);
    throw;
  }
  fs::current_path(saved);
  return code;
}

}  // namespace detail

/// Runs one command; `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  detail::Options o;
  CLI::App app{"Linear posterior-drift transfer learning toolkit", "postdrift"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Simulate source/target datasets");
  gen->add_option("--config", o.config, "JSON with {sim: {...}, domains: [...]}")->required();
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--seed", o.seed, "Override sim.seed");

  auto* fsrc = app.add_subcommand("fit-source", "Fit a (penalized) logistic source model");
  fsrc->add_option("--data", o.data, "Dataset CSV")->required();
  fsrc->add_option("--map", o.map, "Feature map preset (intercept|mains|full[-nointercept]) or JSON file");
  fsrc->add_option("--lambda", o.lambda, "L1 penalty (0 = unpenalized)");
  fsrc->add_flag("--balanced-weights", o.balanced, "Weight rows by inverse class proportion");
  fsrc->add_flag("--standardize", o.standardize, "Z-score penalized columns while fitting");
  fsrc->add_flag("--allow-nonconverged", o.allow_nonconverged, "Write the model even if the fit did not converge");
  fsrc->add_option("--out", o.out, "Model JSON")->required();

  auto* ftr = app.add_subcommand("fit-transfer", "Estimate the linear shift on target data");
  ftr->add_option("--source", o.source, "Source model JSON");
  ftr->add_option("--probs", o.probs, "External probabilities CSV (row_id,probability)");
  ftr->add_option("--target", o.target, "Target dataset CSV")->required();
  ftr->add_option("--shift-map", o.shift_map, "Shift feature map preset or JSON file");
  ftr->add_option("--lambda", o.lambda, "L1 penalty on the shift (0 = unpenalized)");
  ftr->add_option("--eps", o.eps, "Probability clamp before the logit");
  ftr->add_flag("--allow-nonconverged", o.allow_nonconverged, "Write the model even if the fit did not converge");
  ftr->add_option("--out", o.out, "Transfer model JSON")->required();

  auto* pred = app.add_subcommand("predict", "Write row_id,prob,label for a feature CSV");
  pred->add_option("--model", o.model, "Source or transfer model JSON")->required();
  pred->add_option("--data", o.data, "Feature CSV (y optional)")->required();
  pred->add_option("--out", o.out, "Predictions CSV")->required();

  auto* eval = app.add_subcommand("evaluate", "Classification metrics of a model on labelled data");
  eval->add_option("--model", o.model, "Source or transfer model JSON")->required();
  eval->add_option("--data", o.data, "Labelled dataset CSV")->required();
  eval->add_option("--out", o.out, "Metrics JSON")->required();

  auto* sweep = app.add_subcommand("sweep", "Run a one-parameter simulation sweep");
  sweep->add_option("--config", o.config, "Experiment config JSON")->required();
  sweep->add_option("--out", o.out, "Output prefix (writes .csv and .json)")->required();
  sweep->add_option("--seed", o.seed, "Override base.seed");
  sweep->add_option("--lambda", o.lambda_override, "Override the penalty");
  sweep->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");

  auto* rate = app.add_subcommand("rate-check", "Log-log slope of error against target sample size");
  rate->add_option("--config", o.config, "Rate-check config JSON")->required();
  rate->add_option("--out", o.out, "Output prefix (writes .csv and .json)")->required();
  rate->add_option("--seed", o.seed, "Override base.seed");
  rate->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");

  auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest");
  replay->add_option("--manifest", o.manifest, "Manifest JSON")->required();
  replay->add_option("--out", o.out, "Redirect the output path");

  std::vector<std::string> argv_storage{"postdrift"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (replay->parsed()) return detail::cmd_replay(o, out, err);

    const auto start = std::chrono::steady_clock::now();
    Manifest m;
    fs::path manifest_path;
    if (gen->parsed()) {
      m = detail::cmd_generate(o);
      manifest_path = fs::path(o.out) / "manifest.json";
    } else {
      if (fsrc->parsed()) m = detail::cmd_fit_source(o);
      else if (ftr->parsed()) m = detail::cmd_fit_transfer(o);
      else if (pred->parsed()) m = detail::cmd_predict(o);
      else if (eval->parsed()) m = detail::cmd_evaluate(o);
      else if (sweep->parsed()) m = detail::cmd_sweep(o);
      else if (rate->parsed()) m = detail::cmd_rate_check(o);
      manifest_path = with_suffix(o.out, ".manifest.json");
    }
    m.command = app.get_subcommands().front()->get_name();
    m.argv = args;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(manifest_path, m, seconds);
    for (const auto& path : m.outputs) out << path << "\n";
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NonConvergence& e) {
    err << "error: " << e.what() << "\n";
    return kNonConverged;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::domain_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace postdrift::cli
