#pragma once

// Source-domain conditional probability models: logistic coefficients over a
// FeatureMap, a Nadaraya-Watson kernel smoother, or a table of externally
// supplied probabilities keyed by row id.

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "postdrift/dataset.hpp"
#include "postdrift/error.hpp"
#include "postdrift/features.hpp"
#include "postdrift/glm_core.hpp"
#include "postdrift/logistic.hpp"

namespace postdrift {

struct CoefficientModel {
  FeatureMap map;
  Eigen::VectorXd theta;
  double lambda = 0.0;
  bool converged = true;
  int iterations = 0;

  double linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return build_row(map, x).dot(theta);
  }
};

struct KernelModel {
  double bandwidth = 1.0;
  std::shared_ptr<const Dataset> training;
  double base_rate = 0.5;  // weighted class frequency, used when all kernel weights vanish
};

struct ExternalModel {
  std::unordered_map<std::string, double> probabilities;
  std::vector<std::string> order;  // insertion order, for stable serialization
  std::string source_path;         // provenance only
};

/// Fitted source probability function.
class SourceModel {
 public:
  using Variant = std::variant<CoefficientModel, KernelModel, ExternalModel>;

  explicit SourceModel(CoefficientModel m) : impl_(std::move(m)) {
    const auto& c = std::get<CoefficientModel>(impl_);
    if (static_cast<std::size_t>(c.theta.size()) != c.map.width())
      throw ConfigError("SourceModel: theta has " + std::to_string(c.theta.size()) +
                        " entries but the feature map has width " + std::to_string(c.map.width()));
  }
  explicit SourceModel(KernelModel m) : impl_(std::move(m)) {
    const auto& k = std::get<KernelModel>(impl_);
    if (!(k.bandwidth > 0.0)) throw ConfigError("SourceModel: kernel bandwidth must be positive");
    if (!k.training || k.training->size() == 0) throw ConfigError("SourceModel: kernel model needs training data");
  }
  explicit SourceModel(ExternalModel m) : impl_(std::move(m)) {
    for (const auto& [id, p] : std::get<ExternalModel>(impl_).probabilities)
      if (!(p >= 0.0 && p <= 1.0))
        throw DataError("SourceModel: external probability for row '" + id + "' is outside [0,1]");
  }

  const Variant& variant() const { return impl_; }
  bool is_coefficients() const { return std::holds_alternative<CoefficientModel>(impl_); }
  bool is_external() const { return std::holds_alternative<ExternalModel>(impl_); }
  const CoefficientModel& coefficients() const { return std::get<CoefficientModel>(impl_); }

  /// Probability for one observation. `row_id` is required by the external variant.
  double predict_proba(const Eigen::Ref<const Eigen::VectorXd>& x,
                       std::optional<std::string_view> row_id = std::nullopt) const {
    return std::visit(
        [&](const auto& m) -> double {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, CoefficientModel>) {
            return sigmoid(m.linear_predictor(x));
          } else if constexpr (std::is_same_v<T, KernelModel>) {
            return kernel_estimate(m, x);
          } else {
            if (!row_id) throw DataError("external source model needs a row id to score an observation");
            auto it = m.probabilities.find(std::string(*row_id));
            if (it == m.probabilities.end())
              throw DataError("external source model has no probability for row '" + std::string(*row_id) + "'");
            return it->second;
          }
        },
        impl_);
  }

  /// Probabilities for every row of `data` (row ids are used by the external variant).
  Eigen::VectorXd predict_proba(const Dataset& data) const {
    if (const auto* ext = std::get_if<ExternalModel>(&impl_)) {
      std::vector<std::string> missing;
      Eigen::VectorXd out(data.size());
      for (Eigen::Index i = 0; i < data.size(); ++i) {
        const auto id = data.row_id(i);
        auto it = ext->probabilities.find(id);
        if (it == ext->probabilities.end()) missing.push_back(id);
        else out(i) = it->second;
      }
      if (!missing.empty()) {
        std::string list;
        for (std::size_t k = 0; k < missing.size() && k < 20; ++k) list += (k ? ", " : "") + missing[k];
        if (missing.size() > 20) list += ", ...";
        throw DataError("external probabilities missing for " + std::to_string(missing.size()) +
                        " row id(s): " + list);
      }
      return out;
    }
    if (const auto* c = std::get_if<CoefficientModel>(&impl_)) {
      const Eigen::VectorXd eta = build_design(c->map, data.X) * c->theta;
      return eta.unaryExpr([](double a) { return sigmoid(a); });
    }
    Eigen::VectorXd out(data.size());
    for (Eigen::Index i = 0; i < data.size(); ++i) out(i) = predict_proba(data.X.row(i).transpose());
    return out;
  }

 private:
  static double kernel_estimate(const KernelModel& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const auto& t = *m.training;
    if (x.size() != t.dim())
      throw DataError("kernel source model: query has dimension " + std::to_string(x.size()) +
                      ", training data has " + std::to_string(t.dim()));
    const double inv2h2 = 1.0 / (2.0 * m.bandwidth * m.bandwidth);
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double k = t.w(i) * std::exp(-(t.X.row(i).transpose() - x).squaredNorm() * inv2h2);
      num += k * t.y(i);
      den += k;
    }
    if (!(den > 0.0)) return m.base_rate;
    return num / den;
  }

  Variant impl_;
};

struct SourceFit {
  SourceModel model;
  FitReport report;
};

/// Penalty mask for a feature map: every column except the intercept.
inline std::vector<bool> penalty_mask(const FeatureMap& map) {
  std::vector<bool> mask(map.width(), true);
  if (map.has_intercept() && !mask.empty()) mask[0] = false;
  return mask;
}

/// Weighted (optionally L1-penalized) logistic regression of y on map(x).
inline SourceFit fit_logistic(const Dataset& data, const FeatureMap& map, const Penalty& penalty = {},
                              const Eigen::VectorXd& offset = {}, const FitOptions& options = {}) {
  data.require_binary();
  const Eigen::MatrixXd design = build_design(map, data.X);
  auto fit = fit_logistic_design(design, data.y, data.w, offset, penalty, penalty_mask(map), options);
  CoefficientModel coef{map, fit.theta, penalty.effective_lambda(), fit.report.converged, fit.report.iterations};
  return {SourceModel(std::move(coef)), std::move(fit.report)};
}

/// Default bandwidth m^{-1/(2*smoothness + d)}.
inline double default_bandwidth(Eigen::Index m, Eigen::Index d, double smoothness = 2.0) {
  return std::pow(static_cast<double>(std::max<Eigen::Index>(m, 1)),
                  -1.0 / (2.0 * smoothness + static_cast<double>(d)));
}

/// Nadaraya-Watson smoother with a Gaussian kernel; bandwidth <= 0 selects the default.
inline SourceModel fit_kernel(Dataset data, double bandwidth = 0.0) {
  if (data.size() < 1) throw DataError("fit_kernel: at least one row is required");
  data.require_binary();
  if (bandwidth <= 0.0) bandwidth = default_bandwidth(data.size(), data.dim());
  KernelModel k;
  k.bandwidth = bandwidth;
  k.base_rate = data.w.dot(data.y) / data.w.sum();
  k.training = std::make_shared<const Dataset>(std::move(data));
  return SourceModel(std::move(k));
}

/// Reads a `row_id,probability` CSV.
inline SourceModel load_external_probabilities(const std::filesystem::path& path) {
  const auto lines = csv::read_lines(path);
  const auto header = csv::split(lines.front());
  if (header.size() != 2 || header[0] != "row_id" || header[1] != "probability")
    throw DataError(path.string() + ": expected header 'row_id,probability'");
  ExternalModel ext;
  ext.source_path = path.string();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = csv::split(lines[i]);
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    if (fields.size() != 2) throw DataError(where + ": expected 2 fields");
    std::string id(fields[0]);
    const double p = csv::parse_double(fields[1], where);
    if (!(p >= 0.0 && p <= 1.0)) throw DataError(where + ": probability outside [0,1]");
    if (!ext.probabilities.emplace(id, p).second) throw DataError(where + ": duplicate row id '" + id + "'");
    ext.order.push_back(std::move(id));
  }
  return SourceModel(std::move(ext));
}

inline nlohmann::json to_json(const SourceModel& model) {
  using nlohmann::json;
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, CoefficientModel>) {
          return json{{"kind", "coefficients"},
                      {"map", m.map},
                      {"theta", std::vector<double>(m.theta.data(), m.theta.data() + m.theta.size())},
                      {"meta", {{"lambda", m.lambda}, {"converged", m.converged}, {"iterations", m.iterations}}}};
        } else if constexpr (std::is_same_v<T, KernelModel>) {
          const auto& t = *m.training;
          json rows = json::array();
          for (Eigen::Index i = 0; i < t.size(); ++i) {
            std::vector<double> x(static_cast<std::size_t>(t.dim()));
            for (Eigen::Index j = 0; j < t.dim(); ++j) x[static_cast<std::size_t>(j)] = t.X(i, j);
            rows.push_back({{"x", x}, {"y", t.y(i)}, {"w", t.w(i)}});
          }
          return json{{"kind", "kernel"}, {"bandwidth", m.bandwidth}, {"base_rate", m.base_rate}, {"training", rows}};
        } else {
          json ids = json::array(), probs = json::array();
          for (const auto& id : m.order) {
            ids.push_back(id);
            probs.push_back(m.probabilities.at(id));
          }
          return json{{"kind", "external"}, {"path", m.source_path}, {"row_ids", ids}, {"probabilities", probs}};
        }
      },
      model.variant());
}

inline SourceModel source_model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
    throw ConfigError("source model: missing 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  try {
    if (kind == "coefficients") {
      CoefficientModel c;
      c.map = j.at("map").get<FeatureMap>();
      const auto theta = j.at("theta").get<std::vector<double>>();
      c.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
      if (j.contains("meta")) {
        const auto& meta = j.at("meta");
        c.lambda = meta.value("lambda", 0.0);
        c.converged = meta.value("converged", true);
        c.iterations = meta.value("iterations", 0);
      }
      return SourceModel(std::move(c));
    }
    if (kind == "kernel") {
      const auto& rows = j.at("training");
      Dataset t;
      const auto n = static_cast<Eigen::Index>(rows.size());
      const auto d = n > 0 ? static_cast<Eigen::Index>(rows[0].at("x").size()) : 0;
      t.X.resize(n, d);
      t.y.resize(n);
      t.w.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        const auto x = r.at("x").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(x.size()) != d) throw ConfigError("source model: ragged kernel training rows");
        for (Eigen::Index k = 0; k < d; ++k) t.X(i, k) = x[static_cast<std::size_t>(k)];
        t.y(i) = r.at("y").get<double>();
        t.w(i) = r.value("w", 1.0);
      }
      t.validate();
      KernelModel k;
      k.bandwidth = j.at("bandwidth").get<double>();
      k.base_rate = j.value("base_rate", 0.5);
      k.training = std::make_shared<const Dataset>(std::move(t));
      return SourceModel(std::move(k));
    }
    if (kind == "external") {
      ExternalModel e;
      e.source_path = j.value("path", std::string());
      const auto ids = j.at("row_ids").get<std::vector<std::string>>();
      const auto probs = j.at("probabilities").get<std::vector<double>>();
      if (ids.size() != probs.size()) throw ConfigError("source model: row_ids and probabilities differ in length");
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (!e.probabilities.emplace(ids[k], probs[k]).second)
          throw ConfigError("source model: duplicate row id '" + ids[k] + "'");
        e.order.push_back(ids[k]);
      }
      return SourceModel(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("source model: ") + ex.what());
  }
  throw ConfigError("source model: unknown kind '" + kind + "'");
}

}  // namespace postdrift
