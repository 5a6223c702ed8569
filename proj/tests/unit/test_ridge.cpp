#include <gtest/gtest.h>

#include <cmath>

#include "search_nne/error.hpp"
#include "search_nne/ridge.hpp"
#include "search_nne/rng.hpp"

namespace search_nne {
namespace {

Eigen::MatrixXd random_design(int n, int p, Rng& rng) {
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int k = 1; k < p; ++k) x(i, k) = 2.0 * rng.uniform() - 1.0 + 0.3 * k;
  }
  return x;
}

// Independent objectives coded directly from their definitions.
double logit_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double pen,
                       const Eigen::VectorXd& b) {
  double loss = 0.0;
  for (int i = 0; i < x.rows(); ++i) {
    const double eta = x.row(i).dot(b);
    loss += std::log(1.0 + std::exp(eta)) - y(i) * eta;
  }
  return loss / x.rows() + pen * b.tail(b.size() - 1).squaredNorm();
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& b) {
  Eigen::VectorXd g(b.size());
  for (int k = 0; k < b.size(); ++k) {
    const double h = 1e-5;
    Eigen::VectorXd up = b, down = b;
    up(k) += h;
    down(k) -= h;
    g(k) = (f(up) - f(down)) / (2 * h);
  }
  return g;
}

TEST(RidgeLinear, MatchesNormalEquations) {
  Rng rng(2);
  const Eigen::MatrixXd x = random_design(200, 4, rng);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) y(i) = x(i, 1) - 2 * x(i, 2) + rng.uniform();
  const double pen = 0.01;
  Eigen::MatrixXd a = x.transpose() * x / 200.0;
  for (int k = 1; k < 4; ++k) a(k, k) += pen;
  const Eigen::VectorXd expect = a.ldlt().solve(x.transpose() * y / 200.0);
  EXPECT_LT((ridge_linear(x, y, pen) - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(RidgeLogit, FirstOrderConditionsHold) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const Eigen::MatrixXd x = random_design(300, 5, rng);
    Eigen::VectorXd y(300);
    for (int i = 0; i < 300; ++i) y(i) = rng.uniform() < 1.0 / (1.0 + std::exp(-x(i, 1) + x(i, 3))) ? 1 : 0;
    for (double pen : {1e-3, 1e-6}) {
      const RidgeFit fit = ridge_logit(x, y, pen);
      ASSERT_TRUE(fit.converged);
      const Eigen::VectorXd g = numeric_gradient(
          [&](const Eigen::VectorXd& b) { return logit_objective(x, y, pen, b); }, fit.coef);
      EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-7);
      EXPECT_LT(ridge_logit_gradient(x, y, pen, fit.coef).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(RidgeLogit, SeparableDataStaysFiniteUnderPenalty) {
  Eigen::MatrixXd x(6, 2);
  x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  const RidgeFit fit = ridge_logit(x, y, 1e-6);
  EXPECT_TRUE(fit.coef.allFinite());
  EXPECT_GT(fit.coef(1), 1.0);
}

TEST(RidgeLogit, DegenerateResponseThrows) {
  Rng rng(1);
  const Eigen::MatrixXd x = random_design(20, 2, rng);
  EXPECT_THROW(ridge_logit(x, Eigen::VectorXd::Zero(20), 1e-3), DegenerateResponse);
  EXPECT_THROW(ridge_logit(x, Eigen::VectorXd::Ones(20), 1e-3), DegenerateResponse);
}

TEST(RidgeMnl, FirstOrderConditionsHold) {
  Rng rng(5);
  ChoiceData data;
  data.offsets.push_back(0);
  int rows = 0;
  std::vector<Eigen::RowVectorXd> feats;
  for (int i = 0; i < 400; ++i) {
    const int k = 1 + static_cast<int>(rng() % 4);
    std::vector<double> u;
    for (int a = 0; a < k; ++a) {
      Eigen::RowVectorXd f(3);
      f << 1.0, 2 * rng.uniform() - 1, 2 * rng.uniform() - 1;
      feats.push_back(f);
      u.push_back(-0.5 + f(1) - 0.7 * f(2) - std::log(-std::log(rng.uniform())));
    }
    const double u0 = -std::log(-std::log(rng.uniform()));
    int chosen = -1;
    double best = u0;
    for (int a = 0; a < k; ++a)
      if (u[a] > best) best = u[a], chosen = rows + a;
    data.chosen.push_back(chosen);
    rows += k;
    data.offsets.push_back(rows);
  }
  data.features.resize(rows, 3);
  for (int r = 0; r < rows; ++r) data.features.row(r) = feats[r];
  auto objective = [&](const Eigen::VectorXd& b) {
    double loss = 0.0;
    for (int i = 0; i < data.consumers(); ++i) {
      double denom = 1.0;
      for (int r = data.offsets[i]; r < data.offsets[i + 1]; ++r)
        denom += std::exp(data.features.row(r).dot(b));
      const double chosen_u = data.chosen[i] >= 0 ? data.features.row(data.chosen[i]).dot(b) : 0.0;
      loss += std::log(denom) - chosen_u;
    }
    return loss / data.consumers() + 1e-3 * b.tail(2).squaredNorm();
  };
  const RidgeFit fit = ridge_mnl(data, 1e-3);
  ASSERT_TRUE(fit.converged);
  EXPECT_LT(numeric_gradient(objective, fit.coef).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_NEAR(fit.coef(1), 1.0, 0.4);
  EXPECT_NEAR(fit.coef(2), -0.7, 0.4);
}

}  // namespace
}  // namespace search_nne
