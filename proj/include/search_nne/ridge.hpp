#pragma once

#include <vector>

#include <Eigen/Dense>

namespace search_nne {

// Ridge-penalized regressions used to build data patterns. Every design has
// an intercept in column 0 that is left unpenalized, and losses are averaged
// over observations so a penalty means the same thing at every sample size.

/// Minimizes mean squared error + penalty * |slopes|^2.
Eigen::VectorXd ridge_linear(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                             double penalty);

struct RidgeFit {
  Eigen::VectorXd coef;
  int iterations = 0;
  double gradient_norm = 0.0;  ///< Max-abs gradient of the penalized objective.
  bool converged = false;
};

/// Minimizes mean logistic loss + penalty * |slopes|^2 by damped Newton.
/// Throws DegenerateResponse when the response is all zeros or all ones.
RidgeFit ridge_logit(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                     double penalty, const Eigen::VectorXd* start = nullptr);

/// Conditional-logit choice data. Each consumer picks one alternative among
/// their searched products or an outside "no purchase" alternative whose
/// utility is normalized to zero.
struct ChoiceData {
  /// Product alternative features, one row per (consumer, searched product).
  /// Column 0 is the constant; all product alternatives carry it, so it acts
  /// as the purchase intercept.
  Eigen::MatrixXd features;
  /// Row offsets: consumer i owns rows [offsets[i], offsets[i+1]).
  std::vector<int> offsets;
  /// Row index of the chosen alternative, or -1 for no purchase.
  std::vector<int> chosen;

  int consumers() const { return static_cast<int>(chosen.size()); }
};

/// Minimizes mean negative conditional-logit log-likelihood + penalty *
/// |slopes|^2. Throws DegenerateResponse when nobody or everybody buys.
RidgeFit ridge_mnl(const ChoiceData& data, double penalty, const Eigen::VectorXd* start = nullptr);

/// Gradients of the penalized objectives, exposed for first-order checks.
Eigen::VectorXd ridge_linear_gradient(const Eigen::MatrixXd& design,
                                      const Eigen::VectorXd& response, double penalty,
                                      const Eigen::VectorXd& coef);
Eigen::VectorXd ridge_logit_gradient(const Eigen::MatrixXd& design,
                                     const Eigen::VectorXd& response, double penalty,
                                     const Eigen::VectorXd& coef);
Eigen::VectorXd ridge_mnl_gradient(const ChoiceData& data, double penalty,
                                   const Eigen::VectorXd& coef);

}  // namespace search_nne
