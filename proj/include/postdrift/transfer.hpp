#pragma once

// Linear posterior-drift adaptation.
//
// Target logits are modeled as logit(eta_P(x)) + beta' T(x). Given a fitted
// source model, beta is the offset maximum-likelihood estimate on target data;
// the target probability and the plug-in classifier follow directly.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "postdrift/dataset.hpp"
#include "postdrift/error.hpp"
#include "postdrift/features.hpp"
#include "postdrift/glm_core.hpp"
#include "postdrift/logistic.hpp"
#include "postdrift/source_model.hpp"

namespace postdrift {

inline constexpr double kDefaultClampEps = 1e-6;

inline double clamp_probability(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

inline void check_clamp_eps(double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("clamp_eps must lie in (0, 0.5)");
}

/// Source logit for each row: the offset of the transfer fit. A coefficient
/// model's logit is its linear predictor, used as is; probabilities from
/// kernel and external sources can hit 0 or 1 and are clamped first.
inline Eigen::VectorXd source_offsets(const SourceModel& source, const Dataset& data, double clamp_eps) {
  check_clamp_eps(clamp_eps);
  if (source.is_coefficients()) {
    const auto& c = source.coefficients();
    return build_design(c.map, data.X) * c.theta;
  }
  Eigen::VectorXd p = source.predict_proba(data);
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = logit(clamp_probability(p(i), clamp_eps));
  return p;
}

class TransferModel {
 public:
  TransferModel(SourceModel source, FeatureMap shift_map, Eigen::VectorXd beta, double clamp_eps = kDefaultClampEps)
      : source_(std::move(source)), shift_map_(std::move(shift_map)), beta_(std::move(beta)), clamp_eps_(clamp_eps) {
    check_clamp_eps(clamp_eps_);
    if (static_cast<std::size_t>(beta_.size()) != shift_map_.width())
      throw ConfigError("TransferModel: beta has " + std::to_string(beta_.size()) +
                        " entries but the shift map has width " + std::to_string(shift_map_.width()));
  }

  const SourceModel& source() const { return source_; }
  const FeatureMap& shift_map() const { return shift_map_; }
  const Eigen::VectorXd& beta() const { return beta_; }
  double clamp_eps() const { return clamp_eps_; }

  /// Source logit plus beta' T(x).
  double target_logit(const Eigen::Ref<const Eigen::VectorXd>& x,
                      std::optional<std::string_view> row_id = std::nullopt) const {
    const double shift = build_row(shift_map_, x).dot(beta_);
    if (source_.is_coefficients()) return source_.coefficients().linear_predictor(x) + shift;
    const double p = clamp_probability(source_.predict_proba(x, row_id), clamp_eps_);
    return logit(p) + shift;
  }

  Eigen::VectorXd target_logit(const Dataset& data) const {
    return source_offsets(source_, data, clamp_eps_) + build_design(shift_map_, data.X) * beta_;
  }

  double predict_target_proba(const Eigen::Ref<const Eigen::VectorXd>& x,
                              std::optional<std::string_view> row_id = std::nullopt) const {
    return sigmoid(target_logit(x, row_id));
  }

  Eigen::VectorXd predict_target_proba(const Dataset& data) const {
    return target_logit(data).unaryExpr([](double a) { return sigmoid(a); });
  }

  /// 1 iff the estimated target probability is strictly above 1/2; ties go to 0.
  int classify(const Eigen::Ref<const Eigen::VectorXd>& x,
               std::optional<std::string_view> row_id = std::nullopt) const {
    return target_logit(x, row_id) > 0.0 ? 1 : 0;
  }

  Eigen::VectorXi classify(const Dataset& data) const {
    return target_logit(data).unaryExpr([](double a) { return a > 0.0 ? 1 : 0; });
  }

  /// Source coefficients with beta added column by column, for shift maps
  /// whose terms all appear in a coefficient source map (e.g. refitting the
  /// main effects of a main-effects source model). Empty if not applicable.
  std::optional<Eigen::VectorXd> merged_coefficients() const {
    if (!source_.is_coefficients()) return std::nullopt;
    const auto& src = source_.coefficients();
    const auto src_names = src.map.column_names();
    const auto shift_names = shift_map_.column_names();
    Eigen::VectorXd merged = src.theta;
    for (std::size_t k = 0; k < shift_names.size(); ++k) {
      auto it = std::find(src_names.begin(), src_names.end(), shift_names[k]);
      if (it == src_names.end()) return std::nullopt;
      merged(std::distance(src_names.begin(), it)) += beta_(static_cast<Eigen::Index>(k));
    }
    return merged;
  }

 private:
  SourceModel source_;
  FeatureMap shift_map_;
  Eigen::VectorXd beta_;
  double clamp_eps_;
};

struct TransferFit {
  TransferModel model;
  FitReport report;
};

/// Offset MLE of the shift: logistic regression of target labels on
/// shift_map(x) with offset logit(clamp(eta_P(x))). The intercept of the
/// shift map is never penalized.
inline TransferFit fit_transfer(const SourceModel& source, const Dataset& target, const FeatureMap& shift_map,
                                const Penalty& penalty = {}, double clamp_eps = kDefaultClampEps,
                                const FitOptions& options = {}) {
  if (target.size() < 1) throw DataError("fit_transfer: target data must have at least one row");
  target.require_binary();
  const Eigen::VectorXd offset = source_offsets(source, target, clamp_eps);
  const Eigen::MatrixXd design = build_design(shift_map, target.X);
  auto fit = fit_logistic_design(design, target.y, target.w, offset, penalty, penalty_mask(shift_map), options);
  return {TransferModel(source, shift_map, std::move(fit.theta), clamp_eps), std::move(fit.report)};
}

inline nlohmann::json to_json(const TransferModel& model) {
  const auto& b = model.beta();
  return nlohmann::json{{"type", "transfer_model"},
                        {"source", to_json(model.source())},
                        {"shift_map", model.shift_map()},
                        {"beta", std::vector<double>(b.data(), b.data() + b.size())},
                        {"clamp_eps", model.clamp_eps()}};
}

inline TransferModel transfer_model_from_json(const nlohmann::json& j) {
  try {
    auto source = source_model_from_json(j.at("source"));
    auto map = j.at("shift_map").get<FeatureMap>();
    const auto beta = j.at("beta").get<std::vector<double>>();
    const double eps = j.value("clamp_eps", kDefaultClampEps);
    return TransferModel(std::move(source), std::move(map),
                         Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size())),
                         eps);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("transfer model: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Joint estimator: source and target pooled, with the target shift carried by
// indicator-interacted T columns.

struct JointModel {
  FeatureMap s_map;
  FeatureMap t_map;
  Eigen::VectorXd xi;      // coefficients on S(x)
  Eigen::VectorXd beta_p;  // source coefficients on T(x)
  Eigen::VectorXd beta;    // target shift on T(x)

  Eigen::VectorXd beta_q() const { return beta_p + beta; }

  double source_logit(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return build_row(s_map, x).dot(xi) + build_row(t_map, x).dot(beta_p);
  }
  double target_logit(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return build_row(s_map, x).dot(xi) + build_row(t_map, x).dot(beta_q());
  }
  double predict_target_proba(const Eigen::Ref<const Eigen::VectorXd>& x) const { return sigmoid(target_logit(x)); }
  int classify(const Eigen::Ref<const Eigen::VectorXd>& x) const { return target_logit(x) > 0.0 ? 1 : 0; }
};

struct JointFit {
  JointModel model;
  FitReport report;
};

/// Stacked design [S | T | 1_Q * T] over source rows followed by target rows.
inline Eigen::MatrixXd joint_design(const Dataset& source, const Dataset& target, const FeatureMap& s_map,
                                    const FeatureMap& t_map) {
  const auto ws = static_cast<Eigen::Index>(s_map.width());
  const auto wt = static_cast<Eigen::Index>(t_map.width());
  const auto m = source.size();
  const auto n = target.size();
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(m + n, ws + 2 * wt);
  if (m > 0) {
    design.block(0, 0, m, ws) = build_design(s_map, source.X);
    design.block(0, ws, m, wt) = build_design(t_map, source.X);
  }
  if (n > 0) {
    design.block(m, 0, n, ws) = build_design(s_map, target.X);
    const Eigen::MatrixXd t = build_design(t_map, target.X);
    design.block(m, ws, n, wt) = t;
    design.block(m, ws + wt, n, wt) = t;
  }
  return design;
}

inline JointFit fit_joint(const Dataset& source, const Dataset& target, const FeatureMap& s_map,
                          const FeatureMap& t_map, const Penalty& penalty = {}, const FitOptions& options = {}) {
  if (source.size() + target.size() < 1) throw DataError("fit_joint: no rows");
  if (source.size() > 0 && target.size() > 0 && source.dim() != target.dim())
    throw DataError("fit_joint: source and target have different covariate dimensions");
  if (s_map.has_intercept() && t_map.has_intercept())
    throw ConfigError("fit_joint: only one of s_map and t_map may include an intercept");
  source.require_binary();
  target.require_binary();

  const auto ws = static_cast<Eigen::Index>(s_map.width());
  const auto wt = static_cast<Eigen::Index>(t_map.width());
  const Eigen::MatrixXd design = joint_design(source, target, s_map, t_map);
  Eigen::VectorXd y(source.size() + target.size()), w(y.size());
  y << source.y, target.y;
  w << source.w, target.w;

  std::vector<bool> mask;
  for (bool b : penalty_mask(s_map)) mask.push_back(b);
  for (int rep = 0; rep < 2; ++rep)
    for (bool b : penalty_mask(t_map)) mask.push_back(b);

  auto fit = fit_logistic_design(design, y, w, Eigen::VectorXd(), penalty, std::move(mask), options);
  JointModel model{s_map, t_map, fit.theta.segment(0, ws), fit.theta.segment(ws, wt), fit.theta.segment(ws + wt, wt)};
  return {std::move(model), std::move(fit.report)};
}

// ---------------------------------------------------------------------------
// Gaussian-GLM (identity link) reduction: ordinary least squares of the
// residual y - mu_P(x) on T(x).

struct GaussianShift {
  FeatureMap shift_map;
  Eigen::VectorXd beta;

  double predict(double mu_p, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return mu_p + build_row(shift_map, x).dot(beta);
  }
};

/// argmin_beta (1/n) sum (y_i - mu_P(x_i) - beta'T(x_i))^2 via column-pivoted QR.
/// Throws DataError naming the dependent columns when T is rank deficient.
inline GaussianShift fit_transfer_gaussian(const Eigen::Ref<const Eigen::VectorXd>& mu_hat_p, const Dataset& target,
                                           const FeatureMap& shift_map) {
  const auto n = target.size();
  const auto p = static_cast<Eigen::Index>(shift_map.width());
  if (mu_hat_p.size() != n) throw DataError("fit_transfer_gaussian: mu_hat_P must have one entry per target row");
  if (n < p)
    throw DataError("fit_transfer_gaussian: " + std::to_string(n) + " rows cannot determine " + std::to_string(p) +
                    " shift coefficients");
  const Eigen::MatrixXd T = build_design(shift_map, target.X);
  const Eigen::VectorXd residual = target.y - mu_hat_p;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(T);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const auto names = shift_map.column_names();
    std::string dependent;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < p; ++k) {
      if (!dependent.empty()) dependent += ", ";
      dependent += names[static_cast<std::size_t>(perm(k))];
    }
    throw DataError("fit_transfer_gaussian: shift design is rank deficient (rank " + std::to_string(qr.rank()) +
                    " of " + std::to_string(p) + "); linearly dependent column(s): " + dependent);
  }
  return {shift_map, qr.solve(residual)};
}

}  // namespace postdrift
