#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "postdrift/error.hpp"

namespace postdrift {

/// Recipe for design columns built from a raw covariate vector x.
///
/// Columns are laid out as: intercept (1), mains (x_j) ascending, squares
/// (x_j^2) ascending, interactions (x_j * x_k, j < k) in lexicographic order.
/// Index sets are normalized (sorted, deduplicated) on construction, so the
/// column order depends only on the set of terms requested.
class FeatureMap {
 public:
  using Pair = std::pair<int, int>;

  FeatureMap() = default;

  FeatureMap(bool intercept, std::vector<int> mains, std::vector<int> squares,
             std::vector<Pair> interactions)
      : intercept_(intercept),
        mains_(normalize(std::move(mains), "mains")),
        squares_(normalize(std::move(squares), "squares")),
        interactions_(std::move(interactions)) {
    for (auto& [a, b] : interactions_) {
      if (a < 0 || b < 0) throw ConfigError("FeatureMap: negative interaction index");
      if (a == b) {
        throw ConfigError("FeatureMap: interaction pair (" + std::to_string(a) + "," +
                          std::to_string(b) + ") repeats an index; use squares instead");
      }
      if (a > b) std::swap(a, b);
    }
    std::sort(interactions_.begin(), interactions_.end());
    if (std::adjacent_find(interactions_.begin(), interactions_.end()) != interactions_.end()) {
      throw ConfigError("FeatureMap: duplicate interaction pair");
    }
  }

  static FeatureMap intercept_only() { return FeatureMap(true, {}, {}, {}); }

  static FeatureMap mains(int d, bool intercept = true) {
    return FeatureMap(intercept, iota(d), {}, {});
  }

  /// All mains, all squares and all pairwise interactions.
  static FeatureMap full(int d, bool intercept = true) {
    std::vector<Pair> pairs;
    for (int j = 0; j < d; ++j)
      for (int k = j + 1; k < d; ++k) pairs.emplace_back(j, k);
    return FeatureMap(intercept, iota(d), iota(d), std::move(pairs));
  }

  bool has_intercept() const { return intercept_; }
  const std::vector<int>& mains() const { return mains_; }
  const std::vector<int>& squares() const { return squares_; }
  const std::vector<Pair>& interactions() const { return interactions_; }

  std::size_t width() const {
    return (intercept_ ? 1 : 0) + mains_.size() + squares_.size() + interactions_.size();
  }

  /// Smallest covariate dimension this map can be applied to.
  int min_input_dim() const {
    int top = -1;
    for (int j : mains_) top = std::max(top, j);
    for (int j : squares_) top = std::max(top, j);
    for (const auto& [a, b] : interactions_) top = std::max(top, b);
    return top + 1;
  }

  /// Human-readable column labels, e.g. "(Intercept)", "x1", "x1^2", "x1:x3".
  /// Covariates are 1-based here to match CSV headers.
  std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    out.reserve(width());
    if (intercept_) out.emplace_back("(Intercept)");
    for (int j : mains_) out.push_back("x" + std::to_string(j + 1));
    for (int j : squares_) out.push_back("x" + std::to_string(j + 1) + "^2");
    for (const auto& [a, b] : interactions_)
      out.push_back("x" + std::to_string(a + 1) + ":x" + std::to_string(b + 1));
    return out;
  }

  /// Writes the expanded row for x into out (size width()).
  template <typename In, typename Out>
  void fill_row(const Eigen::MatrixBase<In>& x, Eigen::MatrixBase<Out> const& out_const) const {
    auto& out = const_cast<Eigen::MatrixBase<Out>&>(out_const);
    check_dim(static_cast<int>(x.size()));
    Eigen::Index c = 0;
    if (intercept_) out(c++) = 1.0;
    for (int j : mains_) out(c++) = x(j);
    for (int j : squares_) out(c++) = x(j) * x(j);
    for (const auto& [a, b] : interactions_) out(c++) = x(a) * x(b);
  }

  bool operator==(const FeatureMap&) const = default;

 private:
  static std::vector<int> iota(int d) {
    std::vector<int> v(static_cast<std::size_t>(std::max(d, 0)));
    for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] = j;
    return v;
  }

  static std::vector<int> normalize(std::vector<int> v, const char* what) {
    std::sort(v.begin(), v.end());
    if (std::adjacent_find(v.begin(), v.end()) != v.end())
      throw ConfigError(std::string("FeatureMap: duplicate index in ") + what);
    if (!v.empty() && v.front() < 0)
      throw ConfigError(std::string("FeatureMap: negative index in ") + what);
    return v;
  }

  void check_dim(int d) const {
    if (min_input_dim() > d) {
      throw DataError("FeatureMap: input has dimension " + std::to_string(d) +
                      " but the map references covariate index " +
                      std::to_string(min_input_dim() - 1));
    }
  }

  bool intercept_ = true;
  std::vector<int> mains_;
  std::vector<int> squares_;
  std::vector<Pair> interactions_;
};

inline Eigen::VectorXd build_row(const FeatureMap& map, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::VectorXd row(static_cast<Eigen::Index>(map.width()));
  map.fill_row(x, row);
  return row;
}

/// Row i of the result is build_row(map, X.row(i)).
inline Eigen::MatrixXd build_design(const FeatureMap& map, const Eigen::Ref<const Eigen::MatrixXd>& X) {
  Eigen::MatrixXd design(X.rows(), static_cast<Eigen::Index>(map.width()));
  if (X.rows() > 0 && map.min_input_dim() > X.cols()) {
    throw DataError("FeatureMap: data has " + std::to_string(X.cols()) +
                    " covariates but the map references covariate index " +
                    std::to_string(map.min_input_dim() - 1));
  }
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    map.fill_row(X.row(i).transpose(), design.row(i).transpose());
  }
  return design;
}

inline void to_json(nlohmann::json& j, const FeatureMap& map) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : map.interactions()) pairs.push_back({a, b});
  j = nlohmann::json{{"intercept", map.has_intercept()},
                     {"mains", map.mains()},
                     {"squares", map.squares()},
                     {"interactions", pairs}};
}

inline void from_json(const nlohmann::json& j, FeatureMap& map) {
  if (!j.is_object()) throw ConfigError("FeatureMap: expected a JSON object");
  auto ints = [&](const char* key) {
    std::vector<int> out;
    if (!j.contains(key)) return out;
    const auto& arr = j.at(key);
    if (!arr.is_array()) throw ConfigError(std::string("FeatureMap.") + key + ": expected an array");
    for (const auto& v : arr) {
      if (!v.is_number_integer())
        throw ConfigError(std::string("FeatureMap.") + key + ": expected integers");
      out.push_back(v.get<int>());
    }
    return out;
  };
  bool intercept = true;
  if (j.contains("intercept")) {
    if (!j.at("intercept").is_boolean()) throw ConfigError("FeatureMap.intercept: expected a boolean");
    intercept = j.at("intercept").get<bool>();
  }
  std::vector<FeatureMap::Pair> pairs;
  if (j.contains("interactions")) {
    const auto& arr = j.at("interactions");
    if (!arr.is_array()) throw ConfigError("FeatureMap.interactions: expected an array of pairs");
    for (const auto& p : arr) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer())
        throw ConfigError("FeatureMap.interactions: each entry must be [int, int]");
      pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
  }
  map = FeatureMap(intercept, ints("mains"), ints("squares"), std::move(pairs));
}

}  // namespace postdrift
