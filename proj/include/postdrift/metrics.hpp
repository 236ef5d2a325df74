#pragma once

// Binary classification metrics: confusion counts, TPR/TNR, balanced
// accuracy and the Mann-Whitney AUC. Rates that are undefined (a class is
// absent) are empty optionals, never NaN.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "postdrift/dataset.hpp"
#include "postdrift/error.hpp"

namespace postdrift {

struct MetricsReport {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  std::optional<double> tpr;
  std::optional<double> tnr;
  std::optional<double> balanced_accuracy;
  std::optional<double> auc;

  std::int64_t total() const { return tp + fp + tn + fn; }
};

inline void check_binary(const Eigen::Ref<const Eigen::VectorXi>& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) != 0 && v(i) != 1) throw DataError(std::string(what) + " must be 0 or 1");
}

inline MetricsReport confusion(const Eigen::Ref<const Eigen::VectorXi>& labels,
                               const Eigen::Ref<const Eigen::VectorXi>& predictions) {
  if (labels.size() != predictions.size()) throw DataError("confusion: labels and predictions differ in length");
  check_binary(labels, "labels");
  check_binary(predictions, "predictions");
  MetricsReport r;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) == 1) (predictions(i) == 1 ? r.tp : r.fn)++;
    else (predictions(i) == 1 ? r.fp : r.tn)++;
  }
  const auto n = r.total();
  r.accuracy = n > 0 ? static_cast<double>(r.tp + r.tn) / static_cast<double>(n) : 0.0;
  if (r.tp + r.fn > 0) r.tpr = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  if (r.tn + r.fp > 0) r.tnr = static_cast<double>(r.tn) / static_cast<double>(r.tn + r.fp);
  if (r.tpr && r.tnr) r.balanced_accuracy = (*r.tpr + *r.tnr) / 2.0;
  return r;
}

/// Mann-Whitney AUC with ties counted 1/2, via mid-ranks in O(n log n).
inline double auc(const Eigen::Ref<const Eigen::VectorXi>& labels, const Eigen::Ref<const Eigen::VectorXd>& scores) {
  const auto n = labels.size();
  if (scores.size() != n) throw DataError("auc: labels and scores differ in length");
  check_binary(labels, "labels");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });

  // Sum of twice the mid-ranks of positives keeps everything integral.
  std::int64_t n_pos = 0, twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores(order[j + 1]) == scores(order[i])) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k)
      if (labels(order[k]) == 1) {
        ++n_pos;
        twice_rank_sum += twice_mid;
      }
    i = j + 1;
  }
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: both classes must be present");
  // 2U = 2 * sum(ranks of positives) - n_pos (n_pos + 1)
  const std::int64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline MetricsReport evaluate(const Eigen::Ref<const Eigen::VectorXi>& labels,
                              const Eigen::Ref<const Eigen::VectorXi>& predictions,
                              const Eigen::Ref<const Eigen::VectorXd>& scores) {
  auto r = confusion(labels, predictions);
  if (r.tp + r.fn > 0 && r.tn + r.fp > 0) r.auc = auc(labels, scores);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return nlohmann::json{{"accuracy", r.accuracy},
                        {"tpr", opt(r.tpr)},
                        {"tnr", opt(r.tnr)},
                        {"auc", opt(r.auc)},
                        {"balanced_accuracy", opt(r.balanced_accuracy)},
                        {"counts", {{"tp", r.tp}, {"fp", r.fp}, {"tn", r.tn}, {"fn", r.fn}}}};
}

inline std::string metrics_csv_header() { return "accuracy,tpr,tnr,auc,balanced_accuracy,tp,fp,tn,fn"; }

/// One CSV row; undefined rates are written as empty fields.
inline std::string to_csv_row(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); };
  return csv::format_double(r.accuracy) + "," + opt(r.tpr) + "," + opt(r.tnr) + "," + opt(r.auc) + "," +
         opt(r.balanced_accuracy) + "," + std::to_string(r.tp) + "," + std::to_string(r.fp) + "," +
         std::to_string(r.tn) + "," + std::to_string(r.fn);
}

}  // namespace postdrift
