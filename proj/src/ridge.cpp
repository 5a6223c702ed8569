#include "search_nne/ridge.hpp"

#include <cmath>

#include "search_nne/error.hpp"

namespace search_nne {

namespace {

constexpr double kGradientTarget = 1e-10;
constexpr int kMaxNewton = 200;

void require_finite(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                    double penalty) {
  if (!design.allFinite() || !response.allFinite() || !std::isfinite(penalty) || penalty < 0.0)
    throw ContractViolation("ridge: inputs must be finite and the penalty nonnegative");
  if (design.rows() != response.size() || design.cols() < 1)
    throw ContractViolation("ridge: design and response sizes disagree");
}

Eigen::VectorXd slope_mask(Eigen::Index k) {
  Eigen::VectorXd d = Eigen::VectorXd::Ones(k);
  d(0) = 0.0;
  return d;
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    Eigen::VectorXd x = ldlt.solve(b);
    if (x.allFinite()) return x;
  }
  return a.completeOrthogonalDecomposition().solve(b);
}


double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Mean logistic loss over rows. log(1 + e) replaces log1p so the loop
// vectorizes; the absolute error is below 1e-16 per row.
double logit_loss(const Eigen::ArrayXd& eta, const Eigen::ArrayXd& e, const Eigen::VectorXd& y) {
  return (eta.max(0.0) + (1.0 + e).log() - y.array() * eta).mean();
}

double logit_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double penalty,
                       const Eigen::VectorXd& b) {
  const Eigen::ArrayXd eta = (x * b).array();
  const Eigen::ArrayXd e = (-eta.abs()).exp();
  return logit_loss(eta, e, y) + penalty * b.tail(b.size() - 1).squaredNorm();
}

// Generic damped Newton driver: `eval` fills gradient and Hessian of the
// objective at b and returns its value; `objective` returns the value only. Near the optimum objective
// differences fall below rounding error, so there a step is judged by the
// decrease of the gradient norm instead of the Armijo condition.
template <class Eval, class Objective>
RidgeFit newton(Eigen::VectorXd b, Eval&& eval, Objective&& objective) {
  RidgeFit fit;
  const Eigen::Index k = b.size();
  Eigen::VectorXd grad(k), trial_grad(k);
  Eigen::MatrixXd hess(k, k), trial_hess(k, k);
  double f = eval(b, grad, hess);
  for (int iter = 0;; ++iter) {
    fit.iterations = iter;
    fit.gradient_norm = grad.cwiseAbs().maxCoeff();
    if (fit.gradient_norm < kGradientTarget || iter == kMaxNewton) break;
    const Eigen::VectorXd step = solve_spd(hess, -grad);
    const double slope = grad.dot(step);
    if (!(slope < 0.0)) break;
    const double roundoff = 1e-13 * (1.0 + std::abs(f));
    double t = 1.0;
    Eigen::VectorXd trial = b + step;
    // The full step is evaluated with derivatives since it is usually accepted.
    double f_trial = eval(trial, trial_grad, trial_hess);
    bool have_derivatives = true;
    bool accepted = false;
    while (t > 1e-12) {
      if (f_trial <= f + 1e-4 * t * slope) {
        accepted = true;
        if (!have_derivatives) eval(trial, trial_grad, trial_hess);
        break;
      }
      if (std::abs(f_trial - f) <= roundoff) {
        if (!have_derivatives) eval(trial, trial_grad, trial_hess);
        accepted = trial_grad.cwiseAbs().maxCoeff() < fit.gradient_norm;
        break;
      }
      have_derivatives = false;
      t *= 0.5;
      trial = b + t * step;
      f_trial = objective(trial);
    }
    if (!accepted) break;
    b = std::move(trial);
    f = f_trial;
    grad.swap(trial_grad);
    hess.swap(trial_hess);
  }
  fit.coef = std::move(b);
  fit.converged = fit.gradient_norm < 1e-8;
  return fit;
}

}  // namespace

Eigen::VectorXd ridge_linear(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                             double penalty) {
  require_finite(design, response, penalty);
  const double inv_n = 1.0 / static_cast<double>(design.rows());
  Eigen::MatrixXd a = (design.transpose() * design) * inv_n;
  a.diagonal() += penalty * slope_mask(design.cols());
  const Eigen::VectorXd rhs = (design.transpose() * response) * inv_n;
  return solve_spd(a, rhs);
}

Eigen::VectorXd ridge_linear_gradient(const Eigen::MatrixXd& design,
                                      const Eigen::VectorXd& response, double penalty,
                                      const Eigen::VectorXd& coef) {
  const double inv_n = 1.0 / static_cast<double>(design.rows());
  Eigen::VectorXd g = 2.0 * inv_n * (design.transpose() * (design * coef - response));
  g += 2.0 * penalty * slope_mask(coef.size()).cwiseProduct(coef);
  return g;
}

Eigen::VectorXd ridge_logit_gradient(const Eigen::MatrixXd& design,
                                     const Eigen::VectorXd& response, double penalty,
                                     const Eigen::VectorXd& coef) {
  const Eigen::VectorXd eta = design * coef;
  Eigen::VectorXd resid(eta.size());
  for (Eigen::Index r = 0; r < eta.size(); ++r) resid(r) = sigmoid(eta(r)) - response(r);
  Eigen::VectorXd g = design.transpose() * resid / static_cast<double>(design.rows());
  g += 2.0 * penalty * slope_mask(coef.size()).cwiseProduct(coef);
  return g;
}

RidgeFit ridge_logit(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                     double penalty, const Eigen::VectorXd* start) {
  require_finite(design, response, penalty);
  const double mean = response.mean();
  for (Eigen::Index r = 0; r < response.size(); ++r)
    if (response(r) != 0.0 && response(r) != 1.0)
      throw ContractViolation("ridge_logit: response must be binary");
  if (mean <= 0.0 || mean >= 1.0)
    throw DegenerateResponse("ridge_logit: response has no variation");

  const Eigen::Index k = design.cols();
  const double inv_n = 1.0 / static_cast<double>(design.rows());
  const Eigen::VectorXd mask = slope_mask(k);
  Eigen::VectorXd b0 = Eigen::VectorXd::Zero(k);
  if (start && start->size() == k && start->allFinite())
    b0 = *start;
  else
    b0(0) = std::log(mean / (1.0 - mean));

  Eigen::MatrixXd weighted(design.rows(), 1);
  auto eval = [&](const Eigen::VectorXd& b, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    const Eigen::ArrayXd eta = (design * b).array();
    const Eigen::ArrayXd e = (-eta.abs()).exp();
    const Eigen::ArrayXd inv = (1.0 + e).inverse();
    const Eigen::ArrayXd prob = (eta >= 0.0).select(inv, e * inv);
    const Eigen::ArrayXd weight = prob * (1.0 - prob);
    grad.noalias() = design.transpose() * (prob.matrix() - response) * inv_n;
    grad += 2.0 * penalty * mask.cwiseProduct(b);
    // Column dot products beat a general product for tall, narrow designs.
    for (Eigen::Index a = 0; a < k; ++a) {
      weighted.col(0) = (design.col(a).array() * weight).matrix();
      for (Eigen::Index c = 0; c <= a; ++c)
        hess(a, c) = hess(c, a) = weighted.col(0).dot(design.col(c)) * inv_n;
    }
    hess.diagonal() += 2.0 * penalty * mask;
    return logit_loss(eta, e, response) + penalty * b.tail(k - 1).squaredNorm();
  };
  auto objective = [&](const Eigen::VectorXd& b) {
    return logit_objective(design, response, penalty, b);
  };
  return newton(std::move(b0), eval, objective);
}

namespace {

struct MnlPass {
  double loss = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

// One sweep over consumers; Hessian only when requested.
MnlPass mnl_pass(const ChoiceData& data, const Eigen::VectorXd& b, bool want_hessian) {
  const Eigen::Index k = b.size();
  const int n = data.consumers();
  const Eigen::VectorXd v = data.features * b;
  Eigen::VectorXd p(v.size());
  Eigen::MatrixXd expected(n, k);
  MnlPass out;
  out.grad = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < n; ++i) {
    const int begin = data.offsets[i], end = data.offsets[i + 1];
    double shift = 0.0;
    for (int r = begin; r < end; ++r) shift = std::max(shift, v(r));
    double denom = std::exp(-shift);
    for (int r = begin; r < end; ++r) {
      p(r) = std::exp(v(r) - shift);
      denom += p(r);
    }
    Eigen::VectorXd e = Eigen::VectorXd::Zero(k);
    for (int r = begin; r < end; ++r) {
      p(r) /= denom;
      e += p(r) * data.features.row(r).transpose();
    }
    expected.row(i) = e.transpose();
    const int c = data.chosen[i];
    const double chosen_v = c >= 0 ? v(c) : 0.0;
    out.loss += -(chosen_v - shift - std::log(denom));
    out.grad += e;
    if (c >= 0) out.grad -= data.features.row(c).transpose();
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss *= inv_n;
  out.grad *= inv_n;
  if (want_hessian) {
    const Eigen::MatrixXd weighted = data.features.array().colwise() * p.array().sqrt();
    out.hess = Eigen::MatrixXd::Zero(k, k);
    out.hess.selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose(), inv_n);
    out.hess.selfadjointView<Eigen::Lower>().rankUpdate(expected.transpose(), -inv_n);
    out.hess = out.hess.selfadjointView<Eigen::Lower>();
  }
  return out;
}

void check_choice_data(const ChoiceData& data) {
  const int n = data.consumers();
  if (static_cast<int>(data.offsets.size()) != n + 1 || n == 0 ||
      data.offsets.back() != data.features.rows())
    throw ContractViolation("ridge_mnl: malformed choice sets");
  for (int i = 0; i < n; ++i) {
    if (data.offsets[i + 1] <= data.offsets[i])
      throw ContractViolation("ridge_mnl: every consumer needs a searched product");
    const int c = data.chosen[i];
    if (c != -1 && (c < data.offsets[i] || c >= data.offsets[i + 1]))
      throw ContractViolation("ridge_mnl: chosen alternative outside the choice set");
  }
  if (!data.features.allFinite()) throw ContractViolation("ridge_mnl: non-finite features");
}

}  // namespace

Eigen::VectorXd ridge_mnl_gradient(const ChoiceData& data, double penalty,
                                   const Eigen::VectorXd& coef) {
  Eigen::VectorXd g = mnl_pass(data, coef, false).grad;
  g += 2.0 * penalty * slope_mask(coef.size()).cwiseProduct(coef);
  return g;
}

RidgeFit ridge_mnl(const ChoiceData& data, double penalty, const Eigen::VectorXd* start) {
  check_choice_data(data);
  if (!std::isfinite(penalty) || penalty < 0.0)
    throw ContractViolation("ridge_mnl: penalty must be nonnegative");
  int buyers = 0;
  for (int c : data.chosen) buyers += c >= 0;
  if (buyers == 0 || buyers == data.consumers())
    throw DegenerateResponse("ridge_mnl: purchase outcome has no variation");

  const Eigen::Index k = data.features.cols();
  const Eigen::VectorXd mask = slope_mask(k);
  Eigen::VectorXd b0 = Eigen::VectorXd::Zero(k);
  if (start && start->size() == k && start->allFinite()) {
    b0 = *start;
  } else {
    // Purchase log-odds spread over the average choice-set size.
    const double share = static_cast<double>(buyers) / data.consumers();
    const double avg_set = static_cast<double>(data.features.rows()) / data.consumers();
    b0(0) = std::log(share / ((1.0 - share) * avg_set));
  }
  auto eval = [&](const Eigen::VectorXd& b, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    MnlPass pass = mnl_pass(data, b, true);
    grad = pass.grad + 2.0 * penalty * mask.cwiseProduct(b);
    hess = std::move(pass.hess);
    hess.diagonal() += 2.0 * penalty * mask;
    return pass.loss + penalty * b.tail(k - 1).squaredNorm();
  };
  auto objective = [&](const Eigen::VectorXd& b) {
    return mnl_pass(data, b, false).loss + penalty * b.tail(k - 1).squaredNorm();
  };
  return newton(std::move(b0), eval, objective);
}

}  // namespace search_nne
