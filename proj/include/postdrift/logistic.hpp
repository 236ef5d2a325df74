#pragma once

// Weighted, optionally L1-penalized logistic regression with an offset.
//
// Minimizes
//   F(theta) = (1/n) sum_i w_i * l(y_i, o_i + z_i'theta) + lambda * sum_{j penalized} |theta_j|
// where l is the entropy loss. Each outer iteration builds the Newton
// (IRLS) quadratic model of the smooth part. Without an active penalty the
// step is the Newton direction; otherwise the quadratic plus the L1 term is
// minimized by cyclic coordinate descent with soft-thresholding. A
// backtracking line search keeps F non-increasing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "postdrift/error.hpp"
#include "postdrift/glm_core.hpp"

namespace postdrift {

struct Penalty {
  enum class Kind { none, l1 };
  Kind kind = Kind::none;
  double lambda = 0.0;

  static Penalty none() { return {}; }
  static Penalty l1(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw ConfigError("Penalty: lambda must be a finite non-negative number");
    return {Kind::l1, lambda};
  }
  double effective_lambda() const { return kind == Kind::l1 ? lambda : 0.0; }
};

struct FitOptions {
  int max_iter = 200;
  double objective_tol = 1e-9;  // relative objective change
  double kkt_tol = 1e-7;        // max-norm of the (sub)gradient optimality residual
  double divergence_cap = 30.0; // |theta|_inf beyond this means no finite optimum
  bool standardize = false;     // z-score penalized columns; coefficients reported on the original scale
};

struct FitReport {
  int iterations = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;
  bool converged = false;
  bool diverged = false;
  std::vector<double> objective_trace;  // F after every accepted iterate, starting at theta = 0
  std::string message;
};

struct LogisticFit {
  Eigen::VectorXd theta;
  FitReport report;
};

/// Class-balancing weights: 1 / (fraction of rows sharing the row's label).
inline Eigen::VectorXd balanced_weights(const Eigen::Ref<const Eigen::VectorXd>& y) {
  const auto n = y.size();
  Eigen::Index ones = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) != 0.0 && y(i) != 1.0) throw DataError("balanced_weights: labels must be 0 or 1");
    if (y(i) == 1.0) ++ones;
  }
  if (ones == 0 || ones == n) throw DataError("balanced_weights: both classes must be present");
  const double w1 = static_cast<double>(n) / static_cast<double>(ones);
  const double w0 = static_cast<double>(n) / static_cast<double>(n - ones);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = y(i) == 1.0 ? w1 : w0;
  return w;
}

/// Penalized objective F at the given linear predictor.
inline double logistic_objective(const Eigen::Ref<const Eigen::VectorXd>& y,
                                 const Eigen::Ref<const Eigen::VectorXd>& w,
                                 const Eigen::Ref<const Eigen::VectorXd>& linear_predictor,
                                 const Eigen::Ref<const Eigen::VectorXd>& theta,
                                 const std::vector<bool>& penalized, double lambda) {
  const auto n = y.size();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += w(i) * entropy_loss(y(i), linear_predictor(i));
  loss /= static_cast<double>(n);
  double l1 = 0.0;
  if (lambda > 0.0)
    for (Eigen::Index j = 0; j < theta.size(); ++j)
      if (penalized[static_cast<std::size_t>(j)]) l1 += std::abs(theta(j));
  return loss + lambda * l1;
}

/// Optimality residual: |g_j| for free coefficients, |g_j + lambda sign theta_j|
/// for nonzero penalized ones and max(0, |g_j| - lambda) at zero.
inline double kkt_residual(const Eigen::Ref<const Eigen::VectorXd>& gradient,
                           const Eigen::Ref<const Eigen::VectorXd>& theta,
                           const std::vector<bool>& penalized, double lambda) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double g = gradient(j);
    double r = 0.0;
    if (!penalized[static_cast<std::size_t>(j)] || lambda == 0.0) r = std::abs(g);
    else if (theta(j) != 0.0) r = std::abs(g + lambda * (theta(j) > 0.0 ? 1.0 : -1.0));
    else r = std::max(0.0, std::abs(g) - lambda);
    worst = std::max(worst, r);
  }
  return worst;
}

/// Gradient of the smooth part, (1/n) Z' diag(w) (sigma(o + Z theta) - y).
inline Eigen::VectorXd logistic_gradient(const Eigen::Ref<const Eigen::MatrixXd>& design,
                                         const Eigen::Ref<const Eigen::VectorXd>& y,
                                         const Eigen::Ref<const Eigen::VectorXd>& w,
                                         const Eigen::Ref<const Eigen::VectorXd>& linear_predictor) {
  Eigen::VectorXd r(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) r(i) = w(i) * (sigmoid(linear_predictor(i)) - y(i));
  return design.transpose() * r / static_cast<double>(y.size());
}

namespace detail {

inline double soft_threshold(double u, double t) {
  if (u > t) return u - t;
  if (u < -t) return u + t;
  return 0.0;
}

/// Newton direction solving H d = -g, regularizing H if it is singular.
inline Eigen::VectorXd newton_direction(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient) {
  const double scale = std::max(hessian.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  double ridge = 0.0;
  for (int attempt = 0; attempt < 12; ++attempt) {
    Eigen::MatrixXd h = hessian;
    h.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      Eigen::VectorXd d = ldlt.solve(-gradient);
      if (d.allFinite() && gradient.dot(d) <= 0.0) {
        const double resid = (h * d + gradient).norm();
        if (resid <= 1e-8 * std::max(gradient.norm(), 1e-300) || ridge > 0.0) return d;
      }
    }
    ridge = ridge == 0.0 ? 1e-12 * scale : ridge * 100.0;
  }
  return -gradient;
}

/// Minimizes g'd + d'Hd/2 + lambda * sum_{penalized} |theta_j + d_j| over d.
inline Eigen::VectorXd l1_quadratic_direction(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient,
                                              const Eigen::VectorXd& theta, const std::vector<bool>& penalized,
                                              double lambda) {
  const auto p = theta.size();
  Eigen::VectorXd next = theta;
  Eigen::VectorXd r = gradient;  // gradient of the quadratic at `next`
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double biggest = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double hjj = hessian(j, j);
      if (!(hjj > 0.0)) continue;
      const double lam = penalized[static_cast<std::size_t>(j)] ? lambda : 0.0;
      const double u = hjj * next(j) - r(j);
      const double updated = soft_threshold(u, lam) / hjj;
      const double delta = updated - next(j);
      if (delta != 0.0) {
        r += hessian.col(j) * delta;
        next(j) = updated;
        biggest = std::max(biggest, std::abs(delta) * hjj);
      }
    }
    if (biggest < 1e-13) break;
  }
  return next - theta;
}

struct Standardizer {
  Eigen::VectorXd center;  // subtracted before scaling (zero unless an intercept column exists)
  Eigen::VectorXd scale;
  Eigen::Index intercept_col = -1;
  double intercept_value = 1.0;

  static Standardizer identity(Eigen::Index p) {
    return {Eigen::VectorXd::Zero(p), Eigen::VectorXd::Ones(p), -1, 1.0};
  }

  Eigen::VectorXd to_original(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd out = theta.cwiseQuotient(scale);
    if (intercept_col >= 0) {
      double shift = 0.0;
      for (Eigen::Index j = 0; j < theta.size(); ++j)
        if (j != intercept_col) shift += out(j) * center(j);
      out(intercept_col) -= shift / intercept_value;
    }
    return out;
  }
};

}  // namespace detail

/// Fits theta on a prebuilt design matrix.
///
/// `penalized[j]` selects which coefficients carry the L1 term (the
/// intercept should not). An empty `offset` means zero. Columns that are
/// identically zero are held at theta_j = 0. Non-convergence is reported in
/// FitReport rather than thrown.
inline LogisticFit fit_logistic_design(const Eigen::Ref<const Eigen::MatrixXd>& design,
                                       const Eigen::Ref<const Eigen::VectorXd>& y,
                                       const Eigen::Ref<const Eigen::VectorXd>& w,
                                       const Eigen::Ref<const Eigen::VectorXd>& offset,
                                       const Penalty& penalty, std::vector<bool> penalized,
                                       const FitOptions& options = {}) {
  const auto n = design.rows();
  const auto p_all = design.cols();
  if (n < 1) throw DataError("fit_logistic: at least one row is required");
  if (y.size() != n || w.size() != n) throw DataError("fit_logistic: y and w must have one entry per row");
  if (offset.size() != 0 && offset.size() != n) throw DataError("fit_logistic: offset must have one entry per row");
  if (offset.size() != 0 && !offset.allFinite()) throw DataError("fit_logistic: offset must be finite");
  if (!design.allFinite()) throw DataError("fit_logistic: design contains non-finite values");
  if (static_cast<Eigen::Index>(penalized.size()) != p_all)
    throw ConfigError("fit_logistic: penalty mask must have one entry per column");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) != 0.0 && y(i) != 1.0) throw DataError("fit_logistic: labels must be 0 or 1");
    if (!(w(i) > 0.0)) throw DataError("fit_logistic: weights must be positive");
  }
  const double lambda = penalty.effective_lambda();

  // Active (not identically zero) columns.
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < p_all; ++j)
    if (design.col(j).cwiseAbs().maxCoeff() > 0.0) active.push_back(j);
  const auto p = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd Z(n, p);
  std::vector<bool> pen(static_cast<std::size_t>(p));
  for (Eigen::Index k = 0; k < p; ++k) {
    Z.col(k) = design.col(active[static_cast<std::size_t>(k)]);
    pen[static_cast<std::size_t>(k)] = penalized[static_cast<std::size_t>(active[static_cast<std::size_t>(k)])];
  }

  auto standardizer = detail::Standardizer::identity(p);
  if (options.standardize && p > 0) {
    for (Eigen::Index k = 0; k < p; ++k) {
      const double first = Z(0, k);
      if (!pen[static_cast<std::size_t>(k)] && (Z.col(k).array() == first).all()) {
        standardizer.intercept_col = k;
        standardizer.intercept_value = first;
        break;
      }
    }
    for (Eigen::Index k = 0; k < p; ++k) {
      if (!pen[static_cast<std::size_t>(k)]) continue;
      const double mean = Z.col(k).mean();
      const double center = standardizer.intercept_col >= 0 ? mean : 0.0;
      const double sd = std::sqrt((Z.col(k).array() - center).square().sum() / static_cast<double>(n));
      if (sd > 0.0) {
        standardizer.center(k) = center;
        standardizer.scale(k) = sd;
        Z.col(k) = (Z.col(k).array() - center) / sd;
      }
    }
  }

  const Eigen::VectorXd off = offset.size() == 0 ? Eigen::VectorXd::Zero(n) : Eigen::VectorXd(offset);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = off;
  FitReport report;
  double f = logistic_objective(y, w, eta, theta, pen, lambda);
  report.objective_trace.push_back(f);
  double last_rel_change = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  Eigen::VectorXd gradient(p);
  Eigen::MatrixXd hessian(p, p);
  Eigen::VectorXd prob(n), curv(n);
  auto evaluate_derivatives = [&] {
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i) = sigmoid(eta(i));
      curv(i) = w(i) * prob(i) * (1.0 - prob(i)) * inv_n;
    }
    gradient = Z.transpose() * (w.cwiseProduct(prob - y) * inv_n);
    hessian = Z.transpose() * curv.asDiagonal() * Z;
  };

  bool stalled = false;
  int it = 0;
  for (;; ++it) {
    evaluate_derivatives();
    report.kkt_residual = kkt_residual(gradient, theta, pen, lambda);
    if (report.kkt_residual < options.kkt_tol && last_rel_change < options.objective_tol) {
      report.converged = true;
      break;
    }
    if (it >= options.max_iter || stalled) break;

    const bool l1_active = lambda > 0.0 && std::find(pen.begin(), pen.end(), true) != pen.end();
    const Eigen::VectorXd direction =
        l1_active ? detail::l1_quadratic_direction(hessian, gradient, theta, pen, lambda)
                  : detail::newton_direction(hessian, gradient);

    auto penalty_of = [&](const Eigen::VectorXd& t) {
      double s = 0.0;
      if (lambda > 0.0)
        for (Eigen::Index j = 0; j < p; ++j)
          if (pen[static_cast<std::size_t>(j)]) s += std::abs(t(j));
      return lambda * s;
    };
    const double predicted =
        gradient.dot(direction) + penalty_of(theta + direction) - penalty_of(theta);

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial_theta, trial_eta;
    double trial_f = f;
    for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
      trial_theta = theta + step * direction;
      trial_eta = off + Z * trial_theta;
      trial_f = logistic_objective(y, w, trial_eta, trial_theta, pen, lambda);
      if (trial_f <= f + 1e-4 * step * std::min(predicted, 0.0)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      stalled = true;
      last_rel_change = 0.0;
      continue;
    }
    last_rel_change = std::abs(f - trial_f) / std::max(std::abs(trial_f), 1e-300);
    theta = std::move(trial_theta);
    eta = std::move(trial_eta);
    f = trial_f;
    report.objective_trace.push_back(f);
    report.iterations = it + 1;

    if (standardizer.to_original(theta).cwiseAbs().maxCoeff() > options.divergence_cap) {
      report.diverged = true;
      evaluate_derivatives();
      report.kkt_residual = kkt_residual(gradient, theta, pen, lambda);
      break;
    }
  }

  report.objective = f;
  if (report.diverged) {
    report.message = "coefficients exceeded the divergence cap (" + std::to_string(options.divergence_cap) +
                     "); the data are likely separable and no finite optimum exists";
  } else if (!report.converged) {
    report.message = stalled ? "line search could not reduce the objective"
                             : "reached the iteration limit (" + std::to_string(options.max_iter) + ")";
  }

  LogisticFit fit;
  fit.theta = Eigen::VectorXd::Zero(p_all);
  const Eigen::VectorXd original = standardizer.to_original(theta);
  for (Eigen::Index k = 0; k < p; ++k) fit.theta(active[static_cast<std::size_t>(k)]) = original(k);
  fit.report = std::move(report);
  return fit;
}

}  // namespace postdrift
