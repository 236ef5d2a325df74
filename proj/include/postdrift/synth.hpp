#pragma once

// Synthetic source/target generator and population oracles.
//
// Covariates are N_d(0, 4 I) in both domains. Labels are Bernoulli with
// probability inverse_link(link, a(x)) where
//   a_P(x) = sum_j (-1)^(j-1) (xi x_j^2 - delta x_j)   (source)
//   a_Q(x) = sum_j (-1)^(j-1) (xi x_j^2 + delta x_j)   (target)
// (j is 1-based), so a_Q - a_P = 2 delta sum_j (-1)^(j-1) x_j exactly.
//
// Random streams: every draw comes from a std::mt19937_64 whose seed is
// splitmix64-chained from (seed, stream tag, replicate). Uniforms take the
// top 53 bits of one engine output; normals use Box-Muller with the second
// variate cached. The scheme is independent of standard-library
// distribution implementations, so datasets are bit-identical across builds.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <json.hpp>

#include "postdrift/dataset.hpp"
#include "postdrift/error.hpp"
#include "postdrift/features.hpp"
#include "postdrift/glm_core.hpp"
#include "postdrift/json_util.hpp"
#include "postdrift/source_model.hpp"

namespace postdrift {

enum class Domain { source, target };

inline std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain parse_domain(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("unknown domain '" + std::string(s) + "' (expected source or target)");
}

/// Stream tags; one independent sub-stream per purpose.
enum class StreamTag : std::uint64_t {
  source = 1,
  target = 2,
  test = 3,
  bayes = 4,
  excess = 5,
  label_shift_source = 6,
  label_shift_target = 7,
  bootstrap = 8,
  split = 9,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamTag tag, std::uint64_t replicate = 0)
      : engine_(splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(tag)) ^ replicate)) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(angle);
    has_cached_ = true;
    return r * std::cos(angle);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) {
    const auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(bound));
    return k < bound ? k : bound - 1;
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

struct SimConfig {
  int d = 5;
  std::int64_t m = 2000;
  std::int64_t n = 100;
  double xi = 1.0;
  double delta = 2.0;
  LinkKind link = LinkKind::logit;
  std::uint64_t seed = 1;
  std::int64_t n_mc = 200000;

  std::int64_t size(Domain domain) const { return domain == Domain::source ? m : n; }

  void validate() const {
    if (d < 1) throw ConfigError("SimConfig.d: must be >= 1");
    if (m < 0 || n < 0 || n_mc < 0) throw ConfigError("SimConfig: sizes must be >= 0");
    if (!std::isfinite(xi) || !std::isfinite(delta)) throw ConfigError("SimConfig: xi and delta must be finite");
  }
};

inline nlohmann::json to_json(const SimConfig& c) {
  return nlohmann::json{{"d", c.d},       {"m", c.m},
                        {"n", c.n},       {"xi", c.xi},
                        {"delta", c.delta}, {"link", std::string(to_string(c.link))},
                        {"seed", c.seed}, {"n_mc", c.n_mc}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j, const std::string& path) {
  using namespace jsonutil;
  object_at(j, path);
  reject_unknown(j, path, {"d", "m", "n", "xi", "delta", "link", "seed", "n_mc"});
  SimConfig c;
  c.d = static_cast<int>(get_int(j, path, "d", c.d, 1));
  c.m = get_int(j, path, "m", c.m, 0);
  c.n = get_int(j, path, "n", c.n, 0);
  c.xi = get_double(j, path, "xi", c.xi);
  c.delta = get_double(j, path, "delta", c.delta);
  try {
    c.link = parse_link(get_string(j, path, "link", "logit"));
  } catch (const ConfigError& e) {
    throw ConfigError(join(path, "link") + ": " + e.what());
  }
  c.seed = get_seed(j, path, "seed", c.seed);
  c.n_mc = get_int(j, path, "n_mc", c.n_mc, 0);
  return c;
}

/// Generative linear predictor (on the link scale) for one domain.
inline double true_logit(const SimConfig& config, Domain domain, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != config.d)
    throw DataError("true_logit: expected a vector of dimension " + std::to_string(config.d));
  const double sign = domain == Domain::source ? -1.0 : 1.0;
  double a = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double alt = (j % 2 == 0) ? 1.0 : -1.0;
    a += alt * (config.xi * x(j) * x(j) + sign * config.delta * x(j));
  }
  return a;
}

inline double true_probability(const SimConfig& config, Domain domain, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return inverse_link(config.link, true_logit(config, domain, x));
}

/// Bayes rule 1{eta(x) > 1/2}.
inline int bayes_classify(const SimConfig& config, Domain domain, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return true_probability(config, domain, x) > 0.5 ? 1 : 0;
}

/// n x d matrix of N(0, 4 I) rows.
inline Eigen::MatrixXd draw_covariates(RandomStream& rng, std::int64_t rows, int d) {
  Eigen::MatrixXd X(rows, d);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = 2.0 * rng.normal();
  return X;
}

/// Draws `rows` samples of one domain from the given stream. Each row
/// consumes d normals then one uniform for the label.
inline Dataset sample_domain(const SimConfig& config, Domain domain, RandomStream& rng, std::int64_t rows) {
  config.validate();
  Dataset data;
  data.X.resize(rows, config.d);
  data.y.resize(rows);
  data.w = Eigen::VectorXd::Ones(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < config.d; ++j) data.X(i, j) = 2.0 * rng.normal();
    const double p = true_probability(config, domain, data.X.row(i).transpose());
    data.y(i) = rng.uniform() < p ? 1.0 : 0.0;
  }
  return data;
}

/// Training sample of size m (source) or n (target) for one replicate.
inline Dataset generate(const SimConfig& config, Domain domain, std::uint64_t replicate = 0) {
  RandomStream rng(config.seed, domain == Domain::source ? StreamTag::source : StreamTag::target, replicate);
  return sample_domain(config, domain, rng, config.size(domain));
}

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Accuracy of the Bayes rule against simulated labels, over n_mc fresh draws.
inline McEstimate bayes_accuracy(const SimConfig& config, Domain domain, std::uint64_t replicate = 0) {
  if (config.n_mc < 1) throw ConfigError("bayes_accuracy: n_mc must be >= 1");
  RandomStream rng(config.seed, StreamTag::bayes, replicate * 2 + (domain == Domain::source ? 0 : 1));
  const Dataset draw = sample_domain(config, domain, rng, config.n_mc);
  double hits = 0.0;
  for (Eigen::Index i = 0; i < draw.size(); ++i)
    hits += (bayes_classify(config, domain, draw.X.row(i).transpose()) == static_cast<int>(draw.y(i))) ? 1.0 : 0.0;
  const double n = static_cast<double>(draw.size());
  const double acc = hits / n;
  return {acc, std::sqrt(acc * (1.0 - acc) / n)};
}

/// Disagreement-weighted excess risk E[|2 eta - 1| 1{f != f*}] on a fixed
/// sample of target probabilities and predictions.
inline McEstimate excess_risk_on_sample(const Eigen::Ref<const Eigen::VectorXd>& eta,
                                        const Eigen::Ref<const Eigen::VectorXi>& predictions) {
  const auto n = eta.size();
  if (n < 1 || predictions.size() != n) throw DataError("excess_risk: need matching, non-empty inputs");
  double sum = 0.0, sum_sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int bayes = eta(i) > 0.5 ? 1 : 0;
    const double v = predictions(i) != bayes ? std::abs(2.0 * eta(i) - 1.0) : 0.0;
    sum += v;
    sum_sq += v * v;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = n > 1 ? std::max(0.0, (sum_sq - nn * mean * mean) / (nn - 1.0)) : 0.0;
  return {mean, std::sqrt(var / nn)};
}

/// Monte-Carlo excess risk of `classifier` (x -> {0,1}) on the target domain.
template <typename Classifier>
McEstimate excess_risk(Classifier&& classifier, const SimConfig& config, std::uint64_t replicate = 0) {
  if (config.n_mc < 1) throw ConfigError("excess_risk: n_mc must be >= 1");
  RandomStream rng(config.seed, StreamTag::excess, replicate);
  const Eigen::MatrixXd X = draw_covariates(rng, config.n_mc, config.d);
  Eigen::VectorXd eta(X.rows());
  Eigen::VectorXi pred(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Eigen::VectorXd x = X.row(i).transpose();
    eta(i) = true_probability(config, Domain::target, x);
    pred(i) = static_cast<int>(classifier(x));
  }
  return excess_risk_on_sample(eta, pred);
}

/// Source model whose linear predictor is the generative a_P(x), expressed
/// as coefficients over intercept + mains + squares. It equals eta_P exactly
/// only for the logit link.
inline SourceModel oracle_source_model(const SimConfig& config) {
  FeatureMap map(true, FeatureMap::mains(config.d).mains(), FeatureMap::mains(config.d).mains(), {});
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(1 + 2 * config.d);
  for (int j = 0; j < config.d; ++j) {
    const double alt = (j % 2 == 0) ? 1.0 : -1.0;
    theta(1 + j) = -alt * config.delta;
    theta(1 + config.d + j) = alt * config.xi;
  }
  return SourceModel(CoefficientModel{std::move(map), std::move(theta), 0.0, true, 0});
}

/// True shift on the intercept + mains map: (0, 2 delta, -2 delta, ...).
inline Eigen::VectorXd true_shift(const SimConfig& config) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(1 + config.d);
  for (int j = 0; j < config.d; ++j) beta(1 + j) = ((j % 2 == 0) ? 2.0 : -2.0) * config.delta;
  return beta;
}

// ---------------------------------------------------------------------------
// Label shift: shared class-conditional laws x | y ~ N(mu_y, sd^2) in one
// dimension; only the class prior differs between domains.

struct LabelShiftConfig {
  double mean_pos = 1.0;
  double mean_neg = -1.0;
  double sd = 1.0;
  double prior_source = 0.5;  // P(Y = 1)
  double prior_target = 0.75; // Q(Y = 1)
  std::uint64_t seed = 1;
};

inline Dataset generate_label_shift(const LabelShiftConfig& c, Domain domain, std::int64_t rows,
                                    std::uint64_t replicate = 0) {
  const double prior = domain == Domain::source ? c.prior_source : c.prior_target;
  RandomStream rng(c.seed, domain == Domain::source ? StreamTag::label_shift_source : StreamTag::label_shift_target,
                   replicate);
  Dataset data;
  data.X.resize(rows, 1);
  data.y.resize(rows);
  data.w = Eigen::VectorXd::Ones(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const bool pos = rng.uniform() < prior;
    data.y(i) = pos ? 1.0 : 0.0;
    data.X(i, 0) = (pos ? c.mean_pos : c.mean_neg) + c.sd * rng.normal();
  }
  return data;
}

/// Exact source posterior for the label-shift construction, as an
/// intercept + main-effect logistic model.
inline SourceModel label_shift_source_model(const LabelShiftConfig& c) {
  const double s2 = c.sd * c.sd;
  Eigen::VectorXd theta(2);
  theta << logit(c.prior_source) - (c.mean_pos * c.mean_pos - c.mean_neg * c.mean_neg) / (2.0 * s2),
      (c.mean_pos - c.mean_neg) / s2;
  return SourceModel(CoefficientModel{FeatureMap::mains(1), theta, 0.0, true, 0});
}

/// Population shift of the log-odds of Y = 1: logit(Q(Y=1)) - logit(P(Y=1)).
inline double label_shift_log_odds(double prior_source, double prior_target) {
  return logit(prior_target) - logit(prior_source);
}

}  // namespace postdrift
