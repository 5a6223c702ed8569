#include "search_nne/mc_study.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "search_nne/estimate.hpp"
#include "search_nne/rng.hpp"

namespace search_nne {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

McResult run_mc_study(const Dataset& panel, const Theta& truth, const McStudyOptions& options,
                      const EstimatorArtifact* artifact) {
  if (options.reps < 1) throw ValidationError("mc-study: reps must be at least 1");
  const Dims dims = panel.dims();
  check_dims(truth, dims);
  McResult result;
  result.parameters = truth.names();
  result.truth = truth.flatten();
  for (const auto& name : options.estimators) {
    if (name != "nne" && name != "smle")
      throw ValidationError("mc-study: unknown estimator '" + name + "' (expected nne or smle)");
    if (name == "nne" && !artifact) throw ValidationError("mc-study: nne rows need an artifact");
    McRow row;
    row.estimator = name;
    result.rows.push_back(row);
  }
  const int p = truth.size();
  std::vector<double> seconds(result.rows.size(), 0.0);
  for (int rep = 0; rep < options.reps; ++rep) {
    Dataset data = panel;
    data.y = simulate_panel(truth, panel.x, derive_seed(options.seed, rep), {FreeSearchRule::kHighestReservation, options.threads});
    for (std::size_t e = 0; e < result.rows.size(); ++e) {
      McRow& row = result.rows[e];
      ++row.runs;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        Eigen::VectorXd est;
        if (row.estimator == "nne") {
          EstimateOptions eo;
          eo.detect = false;
          eo.force = true;
          eo.seed = derive_seed(options.seed, rep, 1);
          eo.threads = options.threads;
          est = estimate(data, *artifact, eo).theta_hat.flatten();
        } else {
          const Standardized s = standardize(data);
          SmleConfig cfg = options.smle;
          cfg.threads = options.threads;
          const SmleResult r = smle_estimate(s.data, cfg, derive_seed(options.seed, rep, 2));
          est = rescale_theta(r.theta, s.record).flatten();
        }
        seconds[e] += seconds_since(t0);
        if (!est.allFinite()) throw DomainError("non-finite estimate");
        row.estimates.push_back(est);
      } catch (const Error&) {
        ++row.failures;
      }
    }
  }
  for (std::size_t e = 0; e < result.rows.size(); ++e) {
    McRow& row = result.rows[e];
    const double k = static_cast<double>(row.estimates.size());
    row.mean = Eigen::VectorXd::Zero(p);
    row.mean_se = row.rmse = row.rmse_se = Eigen::VectorXd::Zero(p);
    row.mean_seconds = row.estimates.empty() ? 0.0 : seconds[e] / k;
    if (row.estimates.empty()) continue;
    Eigen::VectorXd mse = Eigen::VectorXd::Zero(p), sq_sq = mse, est_sq = mse;
    for (const auto& est : row.estimates) {
      row.mean += est;
      est_sq += est.array().square().matrix();
      const Eigen::ArrayXd se2 = (est - result.truth).array().square();
      mse += se2.matrix();
      sq_sq += se2.square().matrix();
    }
    row.mean /= k;
    mse /= k;
    row.overall_rmse = std::sqrt(mse.mean());
    for (int j = 0; j < p; ++j) {
      row.rmse(j) = std::sqrt(mse(j));
      if (k > 1) {
        const double var_est = std::max(0.0, (est_sq(j) / k - row.mean(j) * row.mean(j)) * k / (k - 1));
        row.mean_se(j) = std::sqrt(var_est / k);
        const double var_sq = std::max(0.0, (sq_sq(j) / k - mse(j) * mse(j)) * k / (k - 1));
        row.rmse_se(j) = row.rmse(j) > 0 ? std::sqrt(var_sq / k) / (2.0 * row.rmse(j)) : 0.0;
      }
    }
  }
  return result;
}

void write_mc_csv(std::ostream& out, const McResult& r) {
  out << "estimator,parameter,truth,mean,mean_se,rmse,rmse_se,runs,failures,mean_seconds\n";
  char buf[256];
  for (const auto& row : r.rows)
    for (std::size_t j = 0; j < r.parameters.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%.17g\n",
                    row.estimator.c_str(), r.parameters[j].c_str(), r.truth(j), row.mean(j),
                    row.mean_se(j), row.rmse(j), row.rmse_se(j), row.runs, row.failures,
                    row.mean_seconds);
      out << buf;
    }
}

void print_mc_table(std::ostream& out, const McResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %9s", "parameter", "truth");
  out << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, " | %-25s", (row.estimator + " mean (se) rmse").c_str());
    out << buf;
  }
  out << '\n';
  for (std::size_t j = 0; j < r.parameters.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%-10s %9.3f", r.parameters[j].c_str(), r.truth(j));
    out << buf;
    for (const auto& row : r.rows) {
      std::snprintf(buf, sizeof buf, " | %8.3f (%5.3f) %7.3f", row.mean(j), row.mean_se(j), row.rmse(j));
      out << buf;
    }
    out << '\n';
  }
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s: overall rmse %.4f, mean time %.4f s, %d runs, %d failures\n",
                  row.estimator.c_str(), row.overall_rmse, row.mean_seconds, row.runs, row.failures);
    out << buf;
  }
}

}  // namespace search_nne
