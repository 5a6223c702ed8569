#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "search_nne/search_model.hpp"
#include "search_nne/synth.hpp"

namespace search_nne {

struct SmleConfig {
  int R = 50;                  ///< Simulation draws per consumer.
  double lambda_search = 4.0;  ///< Kernel scale of search margins.
  double lambda_buy = 1.0;     ///< Kernel scale of the purchase margin.
  int starts = 5;              ///< Prior-drawn starting points.
  double tolerance = 1e-5;     ///< Gradient norm of the mean log-likelihood.
  int max_iterations = 200;
  double fd_step = 1e-4;
  int threads = 1;
  PriorConfig prior;           ///< Source of starting points.

  void validate() const;
};

/// Simulated log-likelihood with logistic-smoothed decision indicators and
/// draws fixed at construction (common random numbers).
class SmoothedLikelihood {
 public:
  /// `data` must be standardized and satisfy the search model.
  SmoothedLikelihood(const Dataset& data, const SmleConfig& cfg, std::uint64_t seed);

  /// Sum over consumers of log mean_r prod of smoothed indicators.
  double operator()(const Theta& theta) const;
  /// Consumers whose simulated likelihood hit the 1e-300 floor in the last call.
  int floored() const { return floored_; }
  const Dims& dims() const { return dims_; }

 private:
  double consumer_log_likelihood(int i, const Eigen::VectorXd& delta, const Eigen::VectorXd& offset,
                                 double outside_mean, std::vector<double>& scratch) const;

  const Dataset& data_;
  SmleConfig cfg_;
  Dims dims_;
  std::vector<std::vector<int>> searched_;
  std::vector<int> bought_;
  /// Per consumer, R blocks of (mu[J], eps[J], eps0).
  std::vector<std::vector<double>> shocks_;
  mutable int floored_ = 0;
};

double smoothed_loglik(const Theta& theta, const Dataset& data, const SmleConfig& cfg,
                       std::uint64_t seed);

struct SmleStart {
  Eigen::VectorXd start;
  Eigen::VectorXd end;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SmleResult {
  Theta theta;
  double loglik = 0.0;
  bool converged = false;  ///< At least one start met the gradient tolerance.
  int floored = 0;
  int evaluations = 0;
  double seconds = 0.0;
  std::vector<SmleStart> trace;
};

/// Multi-start BFGS on the smoothed log-likelihood with central-difference
/// gradients. Returns the best start; never throws on non-convergence.
SmleResult smle_estimate(const Dataset& data, const SmleConfig& cfg, std::uint64_t seed);

}  // namespace search_nne
