#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls the solvers under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Naive logistic loss, written directly from the definition.
inline double naive_loss(double y, double a) { return -y * a + std::log(1.0 + std::exp(a)); }

/// Coarse-to-fine exhaustive grid search over a box. Each level evaluates
/// `points` values per axis and re-centres a box of two cells' width around
/// the best point.
template <std::size_t N>
std::array<double, N> grid_minimize(const std::function<double(const std::array<double, N>&)>& f,
                                    std::array<double, N> lo, std::array<double, N> hi, int points, int levels) {
  std::array<double, N> best{};
  for (int level = 0; level < levels; ++level) {
    double best_val = std::numeric_limits<double>::infinity();
    std::array<int, N> idx{};
    std::array<double, N> x{};
    while (true) {
      for (std::size_t k = 0; k < N; ++k) x[k] = lo[k] + (hi[k] - lo[k]) * idx[k] / (points - 1);
      const double v = f(x);
      if (v < best_val) {
        best_val = v;
        best = x;
      }
      std::size_t k = 0;
      while (k < N && ++idx[k] == points) idx[k++] = 0;
      if (k == N) break;
    }
    for (std::size_t k = 0; k < N; ++k) {
      const double cell = (hi[k] - lo[k]) / (points - 1);
      lo[k] = best[k] - 2.0 * cell;
      hi[k] = best[k] + 2.0 * cell;
    }
  }
  return best;
}

/// AUC by enumerating all (positive, negative) pairs; ties count 1/2.
inline double brute_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  double good = 0.0;
  std::int64_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg)++;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        if (scores[i] > scores[j]) good += 1.0;
        else if (scores[i] == scores[j]) good += 0.5;
      }
  return good / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Least squares through the normal equations (T'T) b = T'r, solved by an
/// explicit Cholesky factorization.
inline Eigen::VectorXd normal_equations(const Eigen::MatrixXd& T, const Eigen::VectorXd& r) {
  return (T.transpose() * T).llt().solve(T.transpose() * r);
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracle
