#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "search_nne/artifact.hpp"
#include "search_nne/search_model.hpp"
#include "search_nne/smle.hpp"

namespace search_nne {

struct McStudyOptions {
  int reps = 100;
  /// Any of "nne" and "smle".
  std::vector<std::string> estimators{"nne"};
  SmleConfig smle;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Accuracy and timing of one estimator across repetitions.
struct McRow {
  std::string estimator;
  int runs = 0;
  int failures = 0;
  Eigen::VectorXd mean, mean_se;  ///< Average estimate and its standard error.
  Eigen::VectorXd rmse, rmse_se;  ///< Per parameter; SE by the delta method.
  double overall_rmse = 0.0;      ///< Over all parameters and repetitions.
  double mean_seconds = 0.0;
  /// Successful estimates, one row per run, flat Theta order.
  std::vector<Eigen::VectorXd> estimates;
};

struct McResult {
  std::vector<std::string> parameters;
  Eigen::VectorXd truth;
  std::vector<McRow> rows;
};

/// Keeps the attributes of `panel`, resimulates outcomes at `truth` (original
/// units) for each repetition, and runs every requested estimator.
McResult run_mc_study(const Dataset& panel, const Theta& truth, const McStudyOptions& options,
                      const EstimatorArtifact* artifact);

void write_mc_csv(std::ostream& out, const McResult& result);
void print_mc_table(std::ostream& out, const McResult& result);

}  // namespace search_nne
