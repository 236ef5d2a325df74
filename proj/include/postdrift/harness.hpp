#pragma once

// Experiment runner for the simulation study.
//
// Each replicate draws source and target training sets plus a fresh target
// test set, fits the requested models and scores them against the test
// labels (accuracy) and the true target probabilities (excess risk).
// Replicates run on a worker pool; results are written into slots indexed
// by (sweep value, replicate) and folded in that order, so the output does
// not depend on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "postdrift/dataset.hpp"
#include "postdrift/error.hpp"
#include "postdrift/features.hpp"
#include "postdrift/json_util.hpp"
#include "postdrift/logistic.hpp"
#include "postdrift/metrics.hpp"
#include "postdrift/source_model.hpp"
#include "postdrift/synth.hpp"
#include "postdrift/transfer.hpp"

namespace postdrift {

// ---------------------------------------------------------------------------
// Worker pool

/// Runs body(i) for i in [0, count) on up to `jobs` threads (0 = hardware
/// concurrency). The first exception thrown by any task is rethrown.
template <typename Body>
void parallel_for(std::size_t count, unsigned jobs, Body&& body) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(jobs);
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Model roster

enum class ModelKind { source_main, source_full, target_main, target_full, transfer, transfer_main, ideal };

inline constexpr ModelKind kAllModels[] = {ModelKind::source_main, ModelKind::source_full, ModelKind::target_main,
                                           ModelKind::target_full, ModelKind::transfer,    ModelKind::transfer_main,
                                           ModelKind::ideal};

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::source_main: return "source.main";
    case ModelKind::source_full: return "source.full";
    case ModelKind::target_main: return "target.main";
    case ModelKind::target_full: return "target.full";
    case ModelKind::transfer: return "transfer";
    case ModelKind::transfer_main: return "transfer.main";
    case ModelKind::ideal: return "ideal";
  }
  return "ideal";
}

inline ModelKind parse_model(std::string_view s) {
  for (auto k : kAllModels)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown model '" + std::string(s) + "'");
}

enum class SweepParam { m, n, delta, xi, d };

inline std::string_view to_string(SweepParam p) {
  switch (p) {
    case SweepParam::m: return "m";
    case SweepParam::n: return "n";
    case SweepParam::delta: return "delta";
    case SweepParam::xi: return "xi";
    case SweepParam::d: return "d";
  }
  return "m";
}

inline SweepParam parse_sweep_param(std::string_view s) {
  if (s == "m") return SweepParam::m;
  if (s == "n") return SweepParam::n;
  if (s == "delta") return SweepParam::delta;
  if (s == "xi") return SweepParam::xi;
  if (s == "d") return SweepParam::d;
  throw ConfigError("unknown sweep parameter '" + std::string(s) + "' (expected m, n, delta, xi or d)");
}

struct ExperimentConfig {
  SimConfig base;
  SweepParam parameter = SweepParam::delta;
  std::vector<double> values{2.0};
  std::vector<ModelKind> models{std::begin(kAllModels), std::end(kAllModels)};
  int replicates = 50;
  Penalty penalty;
  std::int64_t test_size = 20000;
  unsigned jobs = 0;

  /// Base config with the swept parameter set to `value`.
  SimConfig at(double value) const {
    SimConfig c = base;
    switch (parameter) {
      case SweepParam::m: c.m = static_cast<std::int64_t>(value); break;
      case SweepParam::n: c.n = static_cast<std::int64_t>(value); break;
      case SweepParam::delta: c.delta = value; break;
      case SweepParam::xi: c.xi = value; break;
      case SweepParam::d: c.d = static_cast<int>(value); break;
    }
    return c;
  }

  void validate() const {
    base.validate();
    if (replicates < 1) throw ConfigError("replicates: must be >= 1");
    if (values.empty()) throw ConfigError("sweep.values: must not be empty");
    if (models.empty()) throw ConfigError("models: must not be empty");
    if (test_size < 1) throw ConfigError("test_size: must be >= 1");
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double v = values[k];
      const std::string where = "sweep.values[" + std::to_string(k) + "]";
      const bool integral = parameter == SweepParam::m || parameter == SweepParam::n || parameter == SweepParam::d;
      if (!std::isfinite(v)) throw ConfigError(where + ": must be finite");
      if (integral && (v < 1.0 || v != std::floor(v))) throw ConfigError(where + ": must be a positive integer");
      if (!integral && v < 0.0) throw ConfigError(where + ": must be non-negative");
    }
  }
};

inline nlohmann::json penalty_to_json(const Penalty& p) {
  return nlohmann::json{{"kind", p.kind == Penalty::Kind::l1 ? "l1" : "none"}, {"lambda", p.lambda}};
}

inline Penalty penalty_from_json(const nlohmann::json& j, const std::string& path) {
  using namespace jsonutil;
  if (j.is_number()) {
    const double lambda = j.get<double>();
    if (lambda < 0.0) throw ConfigError(path + ": lambda must be >= 0");
    return lambda > 0.0 ? Penalty::l1(lambda) : Penalty::none();
  }
  object_at(j, path);
  reject_unknown(j, path, {"kind", "lambda"});
  const auto kind = get_string(j, path, "kind", "l1");
  const double lambda = get_double(j, path, "lambda", 0.0);
  if (kind == "none") return Penalty::none();
  if (kind != "l1") throw ConfigError(join(path, "kind") + ": expected 'none' or 'l1'");
  if (lambda < 0.0) throw ConfigError(join(path, "lambda") + ": must be >= 0");
  return Penalty::l1(lambda);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json models = nlohmann::json::array();
  for (auto m : c.models) models.push_back(std::string(to_string(m)));
  return nlohmann::json{{"base", to_json(c.base)},
                        {"sweep", {{"parameter", std::string(to_string(c.parameter))}, {"values", c.values}}},
                        {"models", models},
                        {"replicates", c.replicates},
                        {"penalty", penalty_to_json(c.penalty)},
                        {"test_size", c.test_size}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using namespace jsonutil;
  object_at(j, "config");
  reject_unknown(j, "", {"base", "sweep", "models", "replicates", "penalty", "test_size"});
  ExperimentConfig c;
  if (j.contains("base")) c.base = sim_config_from_json(j.at("base"), "base");
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    object_at(s, "sweep");
    reject_unknown(s, "sweep", {"parameter", "values"});
    try {
      c.parameter = parse_sweep_param(get_string(s, "sweep", "parameter", "delta"));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("sweep.parameter: ") + e.what());
    }
    if (s.contains("values")) {
      const auto& v = s.at("values");
      if (!v.is_array()) throw ConfigError("sweep.values: expected an array of numbers");
      c.values.clear();
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (!v[k].is_number()) throw ConfigError("sweep.values[" + std::to_string(k) + "]: expected a number");
        c.values.push_back(v[k].get<double>());
      }
    }
  }
  if (j.contains("models")) {
    const auto& v = j.at("models");
    if (!v.is_array()) throw ConfigError("models: expected an array of model names");
    c.models.clear();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const std::string where = "models[" + std::to_string(k) + "]";
      if (!v[k].is_string()) throw ConfigError(where + ": expected a string");
      try {
        c.models.push_back(parse_model(v[k].get<std::string>()));
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
  }
  c.replicates = static_cast<int>(get_int(j, "", "replicates", c.replicates, 1));
  if (j.contains("penalty")) c.penalty = penalty_from_json(j.at("penalty"), "penalty");
  c.test_size = get_int(j, "", "test_size", c.test_size, 1);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// One replicate

struct ModelOutcome {
  ModelKind model = ModelKind::ideal;
  bool ok = true;
  double accuracy = 0.0;
  double excess_risk = 0.0;
};

/// Fits and scores every requested model on replicate `replicate` of `cfg`.
inline std::vector<ModelOutcome> run_replicate(const SimConfig& cfg, const std::vector<ModelKind>& models,
                                               std::uint64_t replicate, const Penalty& penalty,
                                               std::int64_t test_size) {
  const Dataset source = generate(cfg, Domain::source, replicate);
  const Dataset target = generate(cfg, Domain::target, replicate);
  RandomStream test_rng(cfg.seed, StreamTag::test, replicate);
  const Dataset test = sample_domain(cfg, Domain::target, test_rng, test_size);

  Eigen::VectorXd eta_test(test.size());
  for (Eigen::Index i = 0; i < test.size(); ++i)
    eta_test(i) = true_probability(cfg, Domain::target, test.X.row(i).transpose());

  const auto mains = FeatureMap::mains(cfg.d);
  const auto full = FeatureMap::full(cfg.d);
  std::optional<SourceFit> source_main, source_full;
  auto get_source_main = [&]() -> const SourceFit& {
    if (!source_main) source_main = fit_logistic(source, mains, penalty);
    return *source_main;
  };
  auto get_source_full = [&]() -> const SourceFit& {
    if (!source_full) source_full = fit_logistic(source, full, penalty);
    return *source_full;
  };

  auto score = [&](ModelKind kind, bool ok, const Eigen::VectorXi& pred) {
    ModelOutcome out{kind, ok, 0.0, 0.0};
    if (!ok) return out;
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) hits += pred(i) == static_cast<int>(test.y(i)) ? 1 : 0;
    out.accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
    out.excess_risk = excess_risk_on_sample(eta_test, pred).value;
    return out;
  };
  auto coef_predictions = [&](const SourceModel& m) {
    return Eigen::VectorXi(m.predict_proba(test).unaryExpr([](double p) { return p > 0.5 ? 1 : 0; }));
  };
  auto target_fit = [&](const FeatureMap& map) {
    if (target.size() == 0) return std::optional<SourceFit>();
    return std::optional<SourceFit>(fit_logistic(target, map, penalty));
  };

  std::vector<ModelOutcome> outcomes;
  for (auto kind : models) {
    switch (kind) {
      case ModelKind::source_main:
      case ModelKind::source_full: {
        const auto& fit = kind == ModelKind::source_main ? get_source_main() : get_source_full();
        outcomes.push_back(score(kind, fit.report.converged, coef_predictions(fit.model)));
        break;
      }
      case ModelKind::target_main:
      case ModelKind::target_full: {
        const auto fit = target_fit(kind == ModelKind::target_main ? mains : full);
        const bool ok = fit && fit->report.converged;
        outcomes.push_back(score(kind, ok, ok ? coef_predictions(fit->model) : Eigen::VectorXi()));
        break;
      }
      case ModelKind::transfer:
      case ModelKind::transfer_main: {
        const auto& src = kind == ModelKind::transfer ? get_source_full() : get_source_main();
        bool ok = src.report.converged && target.size() > 0;
        Eigen::VectorXi pred;
        if (ok) {
          const auto fit = fit_transfer(src.model, target, mains, penalty);
          ok = fit.report.converged;
          if (ok) pred = fit.model.classify(test);
        }
        outcomes.push_back(score(kind, ok, pred));
        break;
      }
      case ModelKind::ideal: {
        Eigen::VectorXi pred = eta_test.unaryExpr([](double p) { return p > 0.5 ? 1 : 0; });
        outcomes.push_back(score(kind, true, pred));
        break;
      }
    }
  }
  return outcomes;
}

// ---------------------------------------------------------------------------
// Sweeps

struct ResultRow {
  SweepParam parameter = SweepParam::delta;
  double value = 0.0;
  ModelKind model = ModelKind::ideal;
  double mean_acc = std::nan("");
  double se_acc = std::nan("");
  double mean_excess_risk = std::nan("");
  double se_excess_risk = std::nan("");
  int replicates = 0;  // replicates included in the means
  int failed = 0;      // replicates excluded for non-convergence
  bool flagged = false;  // more than 20% of replicates failed
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ResultRow> rows;

  const ResultRow& row(double value, ModelKind model) const {
    for (const auto& r : rows)
      if (r.value == value && r.model == model) return r;
    throw ConfigError("ExperimentResult: no row for model '" + std::string(to_string(model)) + "'");
  }
};

inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(v.size()))};
}

inline ExperimentResult run_sweep(const ExperimentConfig& config) {
  config.validate();
  const auto n_values = config.values.size();
  const auto reps = static_cast<std::size_t>(config.replicates);
  std::vector<std::vector<ModelOutcome>> slots(n_values * reps);
  parallel_for(slots.size(), config.jobs, [&](std::size_t task) {
    const auto v = task / reps;
    const auto r = task % reps;
    slots[task] = run_replicate(config.at(config.values[v]), config.models, r, config.penalty, config.test_size);
  });

  ExperimentResult result;
  result.config = config;
  for (std::size_t v = 0; v < n_values; ++v) {
    for (std::size_t k = 0; k < config.models.size(); ++k) {
      std::vector<double> acc, excess;
      int failed = 0;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& o = slots[v * reps + r][k];
        if (!o.ok) {
          ++failed;
          continue;
        }
        acc.push_back(o.accuracy);
        excess.push_back(o.excess_risk);
      }
      ResultRow row;
      row.parameter = config.parameter;
      row.value = config.values[v];
      row.model = config.models[k];
      std::tie(row.mean_acc, row.se_acc) = mean_and_se(acc);
      std::tie(row.mean_excess_risk, row.se_excess_risk) = mean_and_se(excess);
      row.replicates = static_cast<int>(acc.size());
      row.failed = failed;
      row.flagged = static_cast<double>(failed) > 0.2 * static_cast<double>(config.replicates);
      result.rows.push_back(row);
    }
  }
  return result;
}

inline std::string sweep_csv(const ExperimentResult& result) {
  auto num = [](double v) { return std::isfinite(v) ? csv::format_double(v) : std::string(); };
  std::string out = "sweep_param,sweep_value,model,mean_acc,se_acc,mean_excess_risk,se_excess_risk,replicates,flagged\n";
  for (const auto& r : result.rows) {
    out += std::string(to_string(r.parameter)) + "," + csv::format_double(r.value) + "," +
           std::string(to_string(r.model)) + "," + num(r.mean_acc) + "," + num(r.se_acc) + "," +
           num(r.mean_excess_risk) + "," + num(r.se_excess_risk) + "," + std::to_string(r.replicates) + "," +
           (r.flagged ? "1" : "0") + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const ExperimentResult& result) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"sweep_param", std::string(to_string(r.parameter))},
                    {"sweep_value", r.value},
                    {"model", std::string(to_string(r.model))},
                    {"mean_acc", num(r.mean_acc)},
                    {"se_acc", num(r.se_acc)},
                    {"mean_excess_risk", num(r.mean_excess_risk)},
                    {"se_excess_risk", num(r.se_excess_risk)},
                    {"replicates", r.replicates},
                    {"failed", r.failed},
                    {"flagged", r.flagged}});
  }
  return nlohmann::json{{"config", to_json(result.config)}, {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Rate-slope check: log-log regression of estimation error (or excess risk)
// on the target sample size, with the source regression function known.

enum class RateKind { beta_error, excess_risk };

inline std::string_view to_string(RateKind k) { return k == RateKind::beta_error ? "beta_error" : "excess_risk"; }

inline RateKind parse_rate_kind(std::string_view s) {
  if (s == "beta_error") return RateKind::beta_error;
  if (s == "excess_risk") return RateKind::excess_risk;
  throw ConfigError("unknown rate kind '" + std::string(s) + "' (expected beta_error or excess_risk)");
}

struct RateCheckConfig {
  SimConfig base;  // base.link should be logit for the oracle source to be exact
  RateKind kind = RateKind::beta_error;
  std::vector<std::int64_t> grid{200, 800, 3200, 12800, 51200};
  int replicates = 30;
  int bootstrap = 1000;
  unsigned jobs = 0;

  void validate() const {
    base.validate();
    if (grid.size() < 4) throw ConfigError("grid: at least 4 sample sizes are required");
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (grid[k] < 1) throw ConfigError("grid[" + std::to_string(k) + "]: must be >= 1");
      if (k > 0 && grid[k] <= grid[k - 1])
        throw ConfigError("grid: sample sizes must be strictly increasing (a degenerate grid has no slope)");
    }
    if (replicates < 1) throw ConfigError("replicates: must be >= 1");
    if (bootstrap < 0) throw ConfigError("bootstrap: must be >= 0");
    if (kind == RateKind::excess_risk && base.n_mc < 1) throw ConfigError("base.n_mc: must be >= 1");
  }
};

inline nlohmann::json to_json(const RateCheckConfig& c) {
  return nlohmann::json{{"base", to_json(c.base)},
                        {"kind", std::string(to_string(c.kind))},
                        {"grid", c.grid},
                        {"replicates", c.replicates},
                        {"bootstrap", c.bootstrap}};
}

inline RateCheckConfig rate_check_config_from_json(const nlohmann::json& j) {
  using namespace jsonutil;
  object_at(j, "config");
  reject_unknown(j, "", {"base", "kind", "grid", "replicates", "bootstrap"});
  RateCheckConfig c;
  if (j.contains("base")) c.base = sim_config_from_json(j.at("base"), "base");
  try {
    c.kind = parse_rate_kind(get_string(j, "", "kind", "beta_error"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("kind: ") + e.what());
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (!g.is_array()) throw ConfigError("grid: expected an array of integers");
    c.grid.clear();
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!g[k].is_number_integer()) throw ConfigError("grid[" + std::to_string(k) + "]: expected an integer");
      c.grid.push_back(g[k].get<std::int64_t>());
    }
  }
  c.replicates = static_cast<int>(get_int(j, "", "replicates", c.replicates, 1));
  c.bootstrap = static_cast<int>(get_int(j, "", "bootstrap", c.bootstrap, 0));
  c.validate();
  return c;
}

struct RatePoint {
  std::int64_t n = 0;
  double mean = std::nan("");
  double se = std::nan("");
  int replicates = 0;
  int failed = 0;
  std::vector<double> values;  // per converged replicate
};

struct RateCheckResult {
  RateCheckConfig config;
  std::vector<RatePoint> points;
  double slope = std::nan("");
  double intercept = std::nan("");
  double band_low = std::nan("");  // 2.5% bootstrap quantile of the slope
  double band_high = std::nan(""); // 97.5% bootstrap quantile
};

/// Ordinary least-squares line through (x_k, y_k); returns {slope, intercept}.
inline std::pair<double, double> least_squares_line(const std::vector<double>& x, const std::vector<double>& y) {
  const auto k = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw ConfigError("rate_check: degenerate regression (all grid values identical)");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

inline RateCheckResult rate_check(const RateCheckConfig& config) {
  config.validate();
  const auto reps = static_cast<std::size_t>(config.replicates);
  const auto n_grid = config.grid.size();
  std::vector<std::optional<double>> slots(n_grid * reps);
  const auto shift_map = FeatureMap::mains(config.base.d);
  const auto oracle = oracle_source_model(config.base);
  const Eigen::VectorXd beta_true = true_shift(config.base);

  parallel_for(slots.size(), config.jobs, [&](std::size_t task) {
    const auto g = task / reps;
    const auto r = task % reps;
    SimConfig cfg = config.base;
    cfg.n = config.grid[g];
    const Dataset target = generate(cfg, Domain::target, r);
    const auto fit = fit_transfer(oracle, target, shift_map);
    if (!fit.report.converged) return;
    if (config.kind == RateKind::beta_error) {
      slots[task] = (fit.model.beta() - beta_true).norm();
    } else {
      const auto& model = fit.model;
      slots[task] = excess_risk([&](const Eigen::VectorXd& x) { return model.classify(x); }, cfg, r).value;
    }
  });

  RateCheckResult result;
  result.config = config;
  std::vector<double> log_n, log_mean;
  for (std::size_t g = 0; g < n_grid; ++g) {
    RatePoint pt;
    pt.n = config.grid[g];
    for (std::size_t r = 0; r < reps; ++r) {
      if (slots[g * reps + r]) pt.values.push_back(*slots[g * reps + r]);
      else ++pt.failed;
    }
    pt.replicates = static_cast<int>(pt.values.size());
    std::tie(pt.mean, pt.se) = mean_and_se(pt.values);
    if (pt.replicates > 0 && pt.mean > 0.0) {
      log_n.push_back(std::log(static_cast<double>(pt.n)));
      log_mean.push_back(std::log(pt.mean));
    }
    result.points.push_back(std::move(pt));
  }
  if (log_n.size() < 2) throw DataError("rate_check: fewer than two grid points produced a usable estimate");
  std::tie(result.slope, result.intercept) = least_squares_line(log_n, log_mean);

  if (config.bootstrap > 0) {
    RandomStream rng(config.base.seed, StreamTag::bootstrap, 0);
    std::vector<double> slopes;
    slopes.reserve(static_cast<std::size_t>(config.bootstrap));
    for (int b = 0; b < config.bootstrap; ++b) {
      std::vector<double> xs, ys;
      for (const auto& pt : result.points) {
        if (pt.values.empty()) continue;
        double sum = 0.0;
        for (std::size_t k = 0; k < pt.values.size(); ++k) sum += pt.values[rng.below(pt.values.size())];
        const double mean = sum / static_cast<double>(pt.values.size());
        if (mean > 0.0) {
          xs.push_back(std::log(static_cast<double>(pt.n)));
          ys.push_back(std::log(mean));
        }
      }
      if (xs.size() >= 2) slopes.push_back(least_squares_line(xs, ys).first);
    }
    if (!slopes.empty()) {
      std::sort(slopes.begin(), slopes.end());
      auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(slopes.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, slopes.size() - 1);
        return slopes[lo] + (pos - static_cast<double>(lo)) * (slopes[hi] - slopes[lo]);
      };
      result.band_low = quantile(0.025);
      result.band_high = quantile(0.975);
    }
  }
  return result;
}

inline std::string rate_check_csv(const RateCheckResult& result) {
  auto num = [](double v) { return std::isfinite(v) ? csv::format_double(v) : std::string(); };
  std::string out = "kind,n,mean,se,replicates,failed\n";
  for (const auto& p : result.points)
    out += std::string(to_string(result.config.kind)) + "," + std::to_string(p.n) + "," + num(p.mean) + "," +
           num(p.se) + "," + std::to_string(p.replicates) + "," + std::to_string(p.failed) + "\n";
  return out;
}

inline nlohmann::json to_json(const RateCheckResult& result) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : result.points)
    points.push_back({{"n", p.n}, {"mean", num(p.mean)}, {"se", num(p.se)}, {"replicates", p.replicates},
                      {"failed", p.failed}});
  return nlohmann::json{{"config", to_json(result.config)},
                        {"slope", num(result.slope)},
                        {"intercept", num(result.intercept)},
                        {"band", {num(result.band_low), num(result.band_high)}},
                        {"points", points}};
}

// ---------------------------------------------------------------------------
// Penalty selection and adjustment of externally supplied probabilities.

/// `count` values log-spaced from `high` down to `low`.
inline std::vector<double> log_grid(double high, double low, int count) {
  if (!(high > 0.0 && low > 0.0 && count >= 1)) throw ConfigError("log_grid: bounds must be positive");
  std::vector<double> grid;
  for (int k = 0; k < count; ++k) {
    const double t = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
    grid.push_back(std::exp(std::log(high) + t * (std::log(low) - std::log(high))));
  }
  return grid;
}

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> holdout_loss;  // weighted mean entropy loss per grid value
};

/// Picks the lambda on `grid` minimizing held-out weighted log-loss of the transfer fit.
inline LambdaSelection select_transfer_lambda(const SourceModel& source, const Dataset& train,
                                              const Dataset& validation, const FeatureMap& shift_map,
                                              const std::vector<double>& grid, double clamp_eps = kDefaultClampEps) {
  if (grid.empty()) throw ConfigError("select_transfer_lambda: empty grid");
  LambdaSelection sel;
  sel.grid = grid;
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    const auto fit = fit_transfer(source, train, shift_map, Penalty::l1(lambda), clamp_eps);
    const Eigen::VectorXd a = fit.model.target_logit(validation);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) loss += validation.w(i) * entropy_loss(validation.y(i), a(i));
    loss /= validation.w.sum();
    sel.holdout_loss.push_back(loss);
    if (loss < best) {
      best = loss;
      sel.lambda = lambda;
    }
  }
  return sel;
}

struct AdjustmentResult {
  TransferModel model;
  FitReport report;
  MetricsReport holdout_metrics;
  std::vector<Eigen::Index> holdout_rows;
};

/// Deterministic split of row indices into (train, holdout).
inline std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> holdout_split(Eigen::Index n, double fraction,
                                                                                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  RandomStream rng(seed, StreamTag::split, 0);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto n_hold = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  std::vector<Eigen::Index> hold(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<Eigen::Index> train(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());
  return {train, hold};
}

/// Shift externally supplied source probabilities to the target: fit the
/// L1-penalized transfer on a training split, report metrics on the holdout.
inline AdjustmentResult adjust_external(const SourceModel& external, const Dataset& target, const FeatureMap& shift_map,
                                        const Penalty& penalty, double holdout_fraction = 0.3, std::uint64_t seed = 1,
                                        double clamp_eps = kDefaultClampEps) {
  if (!external.is_external()) throw ConfigError("adjust_external: source model must hold external probabilities");
  target.require_binary();
  (void)external.predict_proba(target);  // reports every missing row id at once
  auto [train_rows, hold_rows] = holdout_split(target.size(), holdout_fraction, seed);
  const Dataset train = target.subset(train_rows);
  const Dataset hold = target.subset(hold_rows);
  auto fit = fit_transfer(external, train, shift_map, penalty, clamp_eps);
  const Eigen::VectorXi labels = hold.y.cast<int>();
  const Eigen::VectorXi pred = fit.model.classify(hold);
  const Eigen::VectorXd scores = fit.model.predict_target_proba(hold);
  auto metrics = evaluate(labels, pred, scores);
  return {std::move(fit.model), std::move(fit.report), metrics, std::move(hold_rows)};
}

inline AdjustmentResult adjust_external(const std::filesystem::path& probs_csv, const std::filesystem::path& target_csv,
                                        const FeatureMap& shift_map, const Penalty& penalty,
                                        double holdout_fraction = 0.3, std::uint64_t seed = 1) {
  const auto external = load_external_probabilities(probs_csv);
  const auto target = read_dataset_csv(target_csv);
  return adjust_external(external, target, shift_map, penalty, holdout_fraction, seed);
}

}  // namespace postdrift
