#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "search_nne/rng.hpp"

namespace search_nne {

/// Dataset shape: attribute counts per block, products per consumer, consumers.
struct Dims {
  int d_prod = 0;
  int d_ads = 0;
  int d_cons = 0;
  int J = 0;
  int n = 0;

  int d() const { return d_prod + d_ads + d_cons; }
  bool operator==(const Dims&) const = default;
};

/// Largest attribute counts the padded layouts accommodate.
struct DimMaxima {
  int prod = 8;
  int ads = 2;
  int cons = 5;

  int total() const { return prod + ads + cons; }
  bool covers(const Dims& dims) const {
    return dims.d_prod <= prod && dims.d_ads <= ads && dims.d_cons <= cons;
  }
  bool operator==(const DimMaxima&) const = default;
};

/// Structural parameter: utility slopes, outside-option slopes, log search
/// cost slopes, and the two intercepts.
struct Theta {
  Eigen::VectorXd beta;
  Eigen::VectorXd eta;
  Eigen::VectorXd alpha;
  double eta0 = 0.0;
  double alpha0 = 0.0;

  static Theta zeros(int d_prod, int d_cons, int d_ads);

  int size() const { return static_cast<int>(beta.size() + eta.size() + alpha.size()) + 2; }
  bool is_finite() const;

  /// Flat order (beta, eta, alpha, eta0, alpha0).
  Eigen::VectorXd flatten() const;
  static Theta unflatten(const Eigen::VectorXd& flat, int d_prod, int d_cons, int d_ads);
  /// Names in flat order, e.g. "beta1", "eta0".
  std::vector<std::string> names() const;
};

/// Network-facing parameter layout:
/// (alpha0, alpha, pad, eta0, eta, pad, beta, pad) of width maxima.total() + 2.
struct PaddedTheta {
  Eigen::VectorXd values;
  std::vector<std::uint8_t> mask;
};

int padded_theta_width(const DimMaxima& maxima);
PaddedTheta pad_theta(const Theta& theta, const DimMaxima& maxima);
Theta unpad_theta(const Eigen::VectorXd& padded, const Dims& dims, const DimMaxima& maxima);
std::vector<std::uint8_t> padded_theta_mask(const Dims& dims, const DimMaxima& maxima);
std::vector<std::string> padded_theta_names(const DimMaxima& maxima);

/// Attribute arrays. Product-level blocks have one row per (consumer, product)
/// with row index i * J + j; the consumer block has one row per consumer.
struct AttributeBlock {
  int n = 0;
  int J = 0;
  Eigen::MatrixXd prod;
  Eigen::MatrixXd ads;
  Eigen::MatrixXd cons;

  Dims dims() const {
    return {static_cast<int>(prod.cols()), static_cast<int>(ads.cols()),
            static_cast<int>(cons.cols()), J, n};
  }
  /// Every column has mean 0 and population variance 1 within `tol`.
  bool is_standardized(double tol = 1e-9) const;
};

/// Binary outcomes with row index i * J + j.
struct Outcomes {
  int n = 0;
  int J = 0;
  std::vector<std::uint8_t> search;
  std::vector<std::uint8_t> buy;

  Outcomes() = default;
  Outcomes(int n_, int J_)
      : n(n_), J(J_), search(static_cast<std::size_t>(n_) * J_, 0),
        buy(static_cast<std::size_t>(n_) * J_, 0) {}

  /// Free search used, at most one purchase, purchases only among searched.
  bool is_valid() const;
};

struct AttributeNames {
  std::vector<std::string> prod;
  std::vector<std::string> ads;
  std::vector<std::string> cons;

  static AttributeNames defaults(const Dims& dims);
};

struct Dataset {
  AttributeBlock x;
  Outcomes y;
  AttributeNames names;

  Dims dims() const { return x.dims(); }
};

/// Pre-search and post-search taste shocks for one consumer.
struct ConsumerShocks {
  std::vector<double> mu;
  std::vector<double> eps;
  double eps0 = 0.0;
};

/// Shocks of consumer i in a panel simulated with `seed`.
ConsumerShocks draw_consumer_shocks(std::uint64_t seed, int consumer, int J);

/// Solves cost = E[max(eps - lambda, 0)], eps ~ N(0,1), for lambda.
/// Throws DomainError unless cost is positive and finite.
double reservation_offset(double cost);

/// delta + reservation_offset(cost).
double reservation_value(double delta, double cost);

/// E[max(eps - lambda, 0)] for eps ~ N(0,1).
double expected_excess(double lambda);

/// Which product receives the free first search.
enum class FreeSearchRule {
  kHighestReservation,  ///< Highest reservation value at the product's own cost.
  kHighestMeanUtility,  ///< Highest pre-search utility beta'x + mu.
};

struct ConsumerChoice {
  std::vector<std::uint8_t> search;
  std::vector<std::uint8_t> buy;
  std::vector<int> search_order;
  int bought = -1;  ///< -1 for the outside option.
  double net_utility = 0.0;  ///< Utility of the chosen option minus paid search costs.
};

/// Optimal sequential search for consumer `i` of `x` given its shocks.
ConsumerChoice simulate_consumer(const Theta& theta, const AttributeBlock& x, int i,
                                 const ConsumerShocks& shocks,
                                 FreeSearchRule rule = FreeSearchRule::kHighestReservation);

/// Per-product quantities for one consumer, already evaluated at theta.
struct ConsumerState {
  std::span<const double> mean_utility;  ///< beta'x_ij + mu_ij
  std::span<const double> cost;
  std::span<const double> reservation;
  std::span<const double> eps;
  double outside_utility = 0.0;  ///< eta0 + eta'x_i + eps_i0
};

/// Weitzman search with one free search. Writes the search and buy flags
/// (length J, zeroed by the caller) and returns the bought index or -1.
int search_and_choose(const ConsumerState& state, FreeSearchRule rule,
                      std::span<std::uint8_t> search, std::span<std::uint8_t> buy,
                      double* net_utility = nullptr, std::vector<int>* order = nullptr);

struct SimulationOptions {
  FreeSearchRule rule = FreeSearchRule::kHighestReservation;
  int threads = 1;
};

/// Simulates every consumer independently with per-consumer streams derived
/// from `seed`; output is independent of the thread count.
Outcomes simulate_panel(const Theta& theta, const AttributeBlock& x, std::uint64_t seed,
                        const SimulationOptions& options = {});

struct Rates {
  double buy_rate = 0.0;
  double search_rate = 0.0;
  double mean_searches = 0.0;
};

Rates rates(const Outcomes& outcomes);

void check_dims(const Theta& theta, const Dims& dims);

}  // namespace search_nne
