// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance <path to postdrift executable> <scratch directory>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "postdrift/postdrift.hpp"

using namespace postdrift;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double cse(const ResultRow& a, const ResultRow& b) { return std::sqrt(a.se_acc * a.se_acc + b.se_acc * b.se_acc); }

// ---------------------------------------------------------------------------

Verdict oracle_equivalence() {
  Eigen::VectorXd x(6), y(6);
  x << -2, -1, 0, 1, 2, 3;
  y << 0, 0, 1, 0, 1, 1;
  const auto fit = fit_logistic(Dataset(x, y), FeatureMap::mains(1));
  const auto best2 = oracle::grid_minimize<2>(
      [&](const std::array<double, 2>& t) {
        double s = 0.0;
        for (int i = 0; i < 6; ++i) s += oracle::naive_loss(y(i), t[0] + t[1] * x(i));
        return s / 6.0;
      },
      {-5, -5}, {5, 5}, 81, 9);
  const auto& theta = fit.model.coefficients().theta;
  const double err1 = std::max(std::abs(theta(0) - best2[0]), std::abs(theta(1) - best2[1]));

  Eigen::VectorXd xs(4), ys(4), xt(4), yt(4);
  xs << -1, 0, 1, 2;
  ys << 0, 1, 0, 1;
  xt << -1, 0, 1, 2;
  yt << 1, 0, 0, 1;
  const auto joint = fit_joint(Dataset(xs, ys), Dataset(xt, yt), FeatureMap::intercept_only(),
                               FeatureMap(false, {0}, {}, {}));
  const auto best3 = oracle::grid_minimize<3>(
      [&](const std::array<double, 3>& t) {
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += oracle::naive_loss(ys(i), t[0] + t[1] * xs(i));
        for (int i = 0; i < 4; ++i) s += oracle::naive_loss(yt(i), t[0] + (t[1] + t[2]) * xt(i));
        return s / 8.0;
      },
      {-5, -5, -5}, {5, 5, 5}, 41, 9);
  const double err2 = std::max({std::abs(joint.model.xi(0) - best3[0]), std::abs(joint.model.beta_p(0) - best3[1]),
                                std::abs(joint.model.beta(0) - best3[2])});
  const bool ok = fit.report.converged && joint.report.converged && err1 <= 1e-4 && err2 <= 1e-3;
  return {ok, "fit_logistic max |diff| " + fmt(err1, 3) + " (tol 1e-4); fit_joint max |diff| " + fmt(err2, 3) +
                  " (tol 1e-3)"};
}

Verdict kkt_suite() {
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif;
  double worst_score = 0.0, worst_subgrad = 0.0;
  int non_converged = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int n = 30 + static_cast<int>(rng() % 300);
    const int p = 1 + static_cast<int>(rng() % 6);
    Eigen::MatrixXd Z(n, p + 1);
    Eigen::VectorXd y(n), w(n), offset(n);
    Z.col(0).setOnes();
    for (int i = 0; i < n; ++i) {
      for (int j = 1; j <= p; ++j) Z(i, j) = gauss(rng) * (1.0 + j % 3);
      offset(i) = inst % 3 == 0 ? 0.0 : gauss(rng);
      w(i) = inst % 2 == 0 ? 1.0 : 0.2 + 2.0 * unif(rng);
      const double a = offset(i) + 0.5 * gauss(rng) + 0.6 * Z(i, 1) - (p > 1 ? 0.4 * Z(i, 2) : 0.0);
      y(i) = unif(rng) < sigmoid(a) ? 1.0 : 0.0;
    }
    y(0) = 0.0;
    y(1) = 1.0;
    const double lambda = inst % 4 == 0 ? 0.0 : std::exp(std::log(1e-3) + unif(rng) * std::log(100.0));
    std::vector<bool> mask(static_cast<std::size_t>(p + 1), true);
    mask[0] = false;
    const auto fit = fit_logistic_design(Z, y, w, offset, Penalty::l1(lambda), mask);
    if (!fit.report.converged) {
      ++non_converged;
      continue;
    }
    const Eigen::VectorXd g = logistic_gradient(Z, y, w, offset + Z * fit.theta);
    for (int j = 0; j <= p; ++j) {
      if (j == 0 || lambda == 0.0) {
        worst_score = std::max(worst_score, std::abs(g(j)));
      } else if (fit.theta(j) == 0.0) {
        worst_subgrad = std::max(worst_subgrad, std::max(0.0, std::abs(g(j)) - lambda));
      } else {
        worst_subgrad = std::max(worst_subgrad, std::abs(g(j) + lambda * (fit.theta(j) > 0 ? 1.0 : -1.0)));
      }
    }
  }
  const bool ok = non_converged == 0 && worst_score <= 1e-7 && worst_subgrad <= 1e-7;
  return {ok, "200 instances, non-converged " + std::to_string(non_converged) + ", max score residual " +
                  fmt(worst_score, 3) + ", max L1 subgradient violation " + fmt(worst_subgrad, 3) + " (tol 1e-7)"};
}

Verdict parametric_rate() {
  RateCheckConfig c;
  c.base.d = 5;
  c.base.link = LinkKind::logit;
  c.grid = {200, 800, 3200, 12800, 51200};
  c.replicates = 30;
  const auto r = rate_check(c);
  std::string means;
  for (const auto& p : r.points) means += " n=" + std::to_string(p.n) + ":" + fmt(p.mean, 4);
  int failed = 0;
  for (const auto& p : r.points) failed += p.failed;
  const bool ok = r.slope >= -0.65 && r.slope <= -0.35;
  return {ok, "slope " + fmt(r.slope, 4) + " (band " + fmt(r.band_low, 4) + ".." + fmt(r.band_high, 4) +
                  ", required [-0.65, -0.35]); failed fits " + std::to_string(failed) + ";" + means};
}

Verdict trend(LinkKind link) {
  ExperimentConfig c;
  c.base.link = link;
  c.values = {2.0, 0.0};
  c.replicates = 50;
  c.test_size = 20000;
  c.models = {ModelKind::ideal, ModelKind::transfer, ModelKind::target_main, ModelKind::source_main,
              ModelKind::source_full};
  const auto r = run_sweep(c);
  const auto& ideal = r.row(2.0, ModelKind::ideal);
  const auto& tr = r.row(2.0, ModelKind::transfer);
  const auto& tm = r.row(2.0, ModelKind::target_main);
  const auto& sm = r.row(2.0, ModelKind::source_main);
  const auto& tr0 = r.row(0.0, ModelKind::transfer);
  const auto& sf0 = r.row(0.0, ModelKind::source_full);

  const bool a = ideal.mean_acc >= tr.mean_acc;
  const bool b = tr.mean_acc > tm.mean_acc + 2.0 * cse(tr, tm);
  const bool cc = tr.mean_acc > sm.mean_acc + 2.0 * cse(tr, sm);
  const double gap0 = std::abs(tr0.mean_acc - sf0.mean_acc);
  const bool d = gap0 <= 2.0 * cse(tr0, sf0);
  auto mark = [](bool v) { return v ? "ok" : "VIOLATED"; };
  std::string detail = "delta=2: ideal " + fmt(ideal.mean_acc, 4) + " >= transfer " + fmt(tr.mean_acc, 4) + " [" +
                       mark(a) + "]; transfer - target.main " + fmt(tr.mean_acc - tm.mean_acc, 4) + " > 2cse " +
                       fmt(2.0 * cse(tr, tm), 4) + " [" + mark(b) + "]; transfer - source.main " +
                       fmt(tr.mean_acc - sm.mean_acc, 4) + " > 2cse " + fmt(2.0 * cse(tr, sm), 4) + " [" + mark(cc) +
                       "]; delta=0: |transfer " + fmt(tr0.mean_acc, 4) + " - source.full " + fmt(sf0.mean_acc, 4) +
                       "| = " + fmt(gap0, 3) + " <= 2cse " + fmt(2.0 * cse(tr0, sf0), 3) + " [" + mark(d) + "]";
  int flagged = 0, failed = 0;
  for (const auto& row : r.rows) {
    flagged += row.flagged;
    failed += row.failed;
  }
  detail += "; failed replicate fits " + std::to_string(failed) + ", flagged cells " + std::to_string(flagged);
  return {a && b && cc && d, detail};
}

Verdict gaussian_reduction() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> gauss;
  double worst_diff = 0.0, worst_orth = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 10 + static_cast<int>(rng() % 200);
    const int d = 1 + static_cast<int>(rng() % 4);
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n), mu(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) X(i, j) = gauss(rng);
      mu(i) = gauss(rng);
      y(i) = mu(i) + X(i, 0) - 0.5 + gauss(rng);
    }
    const FeatureMap map = FeatureMap::mains(d);
    const auto fit = fit_transfer_gaussian(mu, Dataset(X, y), map);
    const Eigen::MatrixXd T = build_design(map, X);
    worst_diff = std::max(worst_diff, (fit.beta - oracle::normal_equations(T, y - mu)).cwiseAbs().maxCoeff());
    const Eigen::VectorXd resid = y - mu - T * fit.beta;
    worst_orth = std::max(worst_orth, (T.transpose() * resid).cwiseAbs().maxCoeff() / n);
  }
  const bool ok = worst_diff <= 1e-8 && worst_orth <= 1e-8;
  return {ok, "100 instances, max |beta - normal equations| " + fmt(worst_diff, 3) + ", max |T'r|/n " +
                  fmt(worst_orth, 3) + " (tol 1e-8)"};
}

Verdict label_shift() {
  LabelShiftConfig c;
  c.prior_source = 0.5;
  c.prior_target = 0.75;
  const auto target = generate_label_shift(c, Domain::target, 50000);
  const auto fit = fit_transfer(label_shift_source_model(c), target, FeatureMap::intercept_only());
  const double beta = fit.model.beta()(0);
  const double log_odds_y1 = label_shift_log_odds(c.prior_source, c.prior_target);  // +log 3
  // log(Q0/Q1) - log(P0/P1), the opposite orientation
  const double log_odds_y0 = std::log((1 - c.prior_target) / c.prior_target) -
                             std::log((1 - c.prior_source) / c.prior_source);
  const bool matches_y1 = std::abs(beta - log_odds_y1) < 0.05;
  const bool matches_y0 = std::abs(beta - log_odds_y0) < 0.05;
  const std::string sign = matches_y1   ? "matches logit Q(Y=1) - logit P(Y=1)"
                           : matches_y0 ? "matches log(Q0/Q1) - log(P0/P1)"
                                        : "matches neither convention";
  return {fit.report.converged && matches_y1,
          "beta_hat " + fmt(beta, 6) + ", log-odds shift of Y=1 " + fmt(log_odds_y1, 6) + ", |diff| " +
              fmt(std::abs(beta - log_odds_y1), 3) + " (tol 0.05); sign: " + sign + " (the Y=0 orientation gives " +
              fmt(log_odds_y0, 6) + ")"};
}

Verdict metrics_exactness() {
  int mismatches = 0, cases = 0;
  for (int len = 1; len <= 6; ++len)
    for (int lab = 0; lab < (1 << len); ++lab)
      for (int pred = 0; pred < (1 << len); ++pred) {
        Eigen::VectorXi l(len), p(len);
        int tp = 0, tn = 0, fp = 0, fn = 0;
        for (int k = 0; k < len; ++k) {
          l(k) = (lab >> k) & 1;
          p(k) = (pred >> k) & 1;
          if (l(k) && p(k)) ++tp;
          else if (!l(k) && !p(k)) ++tn;
          else if (p(k)) ++fp;
          else ++fn;
        }
        const auto r = confusion(l, p);
        ++cases;
        bool ok = r.tp == tp && r.tn == tn && r.fp == fp && r.fn == fn;
        ok = ok && r.accuracy == static_cast<double>(tp + tn) / len;
        if (tp + fn > 0 && tn + fp > 0) {
          const double tpr = static_cast<double>(tp) / (tp + fn);
          const double tnr = static_cast<double>(tn) / (tn + fp);
          ok = ok && r.balanced_accuracy && *r.balanced_accuracy == (tpr + tnr) / 2.0;
        } else {
          ok = ok && !r.balanced_accuracy;
        }
        mismatches += !ok;
      }
  const auto hand = confusion(Eigen::Vector4i(1, 1, 0, 0), Eigen::Vector4i(1, 0, 0, 0));
  mismatches += !(*hand.tpr == 0.5 && *hand.tnr == 1.0 && *hand.balanced_accuracy == 0.75);

  std::mt19937_64 rng(31);
  int auc_cases = 0, auc_mismatch = 0;
  for (int n = 2; n <= 50; ++n)
    for (int rep = 0; rep < 40; ++rep) {
      std::vector<int> labels(static_cast<std::size_t>(n));
      std::vector<double> scores(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
        scores[static_cast<std::size_t>(i)] = rep % 2 ? static_cast<double>(rng() % 5) : std::ldexp(rng() >> 11, -53);
      }
      labels[0] = 0;
      labels[static_cast<std::size_t>(n - 1)] = 1;
      const Eigen::VectorXi l = Eigen::Map<Eigen::VectorXi>(labels.data(), n);
      const Eigen::VectorXd s = Eigen::Map<Eigen::VectorXd>(scores.data(), n);
      ++auc_cases;
      auc_mismatch += auc(l, s) != oracle::brute_auc(labels, scores);
    }
  return {mismatches == 0 && auc_mismatch == 0,
          std::to_string(cases + 1) + " confusion cases, " + std::to_string(mismatches) + " mismatches; " +
              std::to_string(auc_cases) + " auc cases vs pairwise enumeration, " + std::to_string(auc_mismatch) +
              " mismatches"};
}

Verdict bayes_sanity() {
  double worst = 0.0;
  for (auto link : {LinkKind::logit, LinkKind::probit, LinkKind::cauchit, LinkKind::cloglog}) {
    SimConfig cfg;
    cfg.link = link;
    cfg.n_mc = 50000;
    const auto r = excess_risk([&](const Eigen::VectorXd& x) { return bayes_classify(cfg, Domain::target, x); }, cfg);
    worst = std::max(worst, r.value);
  }
  SimConfig null_cfg;
  null_cfg.xi = 0.0;
  null_cfg.delta = 0.0;
  const auto acc = bayes_accuracy(null_cfg, Domain::target);
  const double z = std::abs(acc.value - 0.5) / acc.std_error;
  return {worst == 0.0 && z <= 3.0, "max excess risk of the Bayes rule over four links " + fmt(worst) +
                                        "; null bayes_accuracy " + fmt(acc.value, 5) + " (" + fmt(z, 3) +
                                        " standard errors from 0.5, tol 3)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict cli_reproducibility(const std::string& exe, const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  auto put = [&](const std::string& name, const std::string& text) { std::ofstream(work / name) << text; };
  put("generate.json", R"({"sim": {"d": 3, "m": 600, "n": 150, "seed": 8}})");
  put("sweep_config.json", R"({"base": {"d": 3, "m": 400, "n": 80}, "sweep": {"parameter": "n", "values": [40, 80]},
    "models": ["source.full", "transfer", "transfer.main", "target.main", "ideal"], "replicates": 4, "test_size": 2000})");
  put("rate_config.json", R"({"base": {"d": 2}, "grid": [100, 200, 400, 800], "replicates": 4, "bootstrap": 50})");
  auto sh = [&](const std::string& args) {
    const std::string cmd = "cd '" + work.string() + "' && '" + exe + "' " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };

  struct Case {
    std::string args, manifest;
    std::vector<std::string> outputs;  // relative to the original --out
    std::string replay_out;
    std::vector<std::string> replay_outputs;
  };
  const std::vector<Case> cases = {
      {"generate --config generate.json --out data", "data/manifest.json", {"data/source.csv", "data/target.csv"},
       "data2", {"data2/source.csv", "data2/target.csv"}},
      {"fit-source --data data/source.csv --map full --out src.json", "src.json.manifest.json", {"src.json"},
       "src2.json", {"src2.json"}},
      {"fit-source --data data/source.csv --map mains --lambda 0.01 --balanced-weights --out srcl1.json",
       "srcl1.json.manifest.json", {"srcl1.json"}, "srcl1b.json", {"srcl1b.json"}},
      {"fit-transfer --source src.json --target data/target.csv --out tr.json", "tr.json.manifest.json", {"tr.json"},
       "tr2.json", {"tr2.json"}},
      {"predict --model tr.json --data data/target.csv --out pred.csv", "pred.csv.manifest.json", {"pred.csv"},
       "pred2.csv", {"pred2.csv"}},
      {"evaluate --model tr.json --data data/target.csv --out eval.json", "eval.json.manifest.json", {"eval.json"},
       "eval2.json", {"eval2.json"}},
      {"sweep --config sweep_config.json --out sweep", "sweep.manifest.json", {"sweep.csv", "sweep.json"}, "sweep2",
       {"sweep2.csv", "sweep2.json"}},
      {"rate-check --config rate_config.json --out rate", "rate.manifest.json", {"rate.csv", "rate.json"}, "rate2",
       {"rate2.csv", "rate2.json"}},
  };
  int identical = 0;
  std::string problems;
  for (const auto& c : cases) {
    if (sh(c.args) != 0) {
      problems += " [" + c.args.substr(0, c.args.find(' ')) + ": command failed]";
      continue;
    }
    if (sh("replay --manifest " + c.manifest + " --out " + c.replay_out) != 0) {
      problems += " [" + c.args.substr(0, c.args.find(' ')) + ": replay failed]";
      continue;
    }
    bool same = true;
    for (std::size_t k = 0; k < c.outputs.size(); ++k) {
      const auto a = slurp(work / c.outputs[k]);
      same = same && !a.empty() && a == slurp(work / c.replay_outputs[k]);
    }
    if (same) ++identical;
    else problems += " [" + c.args.substr(0, c.args.find(' ')) + ": outputs differ]";
  }
  return {identical == static_cast<int>(cases.size()),
          std::to_string(identical) + "/" + std::to_string(cases.size()) +
              " commands byte-identical after replay from their manifests" + problems};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance <postdrift executable> <scratch directory>\n";
    return 2;
  }
  const std::string exe = fs::absolute(argv[1]).string();
  const fs::path work = fs::absolute(argv[2]);

  struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {"1 oracle equivalence", 10, oracle_equivalence},
      {"2 KKT/score suite", 60, kkt_suite},
      {"3 parametric rate", 300, parametric_rate},
      {"4 trend reproduction (logit)", 600, [] { return trend(LinkKind::logit); }},
      {"5 link mis-specification (probit)", 600, [] { return trend(LinkKind::probit); }},
      {"6 Gaussian reduction", 5, gaussian_reduction},
      {"7 label-shift recovery", 30, label_shift},
      {"8 metrics exactness", 5, metrics_exactness},
      {"9 Bayes-oracle sanity", 30, bayes_sanity},
      {"10 CLI reproducibility", 600, [&] { return cli_reproducibility(exe, work); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = v.pass && in_time;
    failures += !pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << " (" << fmt(secs, 3) << " s, budget "
              << fmt(c.budget_seconds) << " s" << (in_time ? "" : ", OVER BUDGET") << "): " << v.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion/criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
