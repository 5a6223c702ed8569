#include "search_nne/search_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "search_nne/error.hpp"
#include "search_nne/normal.hpp"
#include "search_nne/parallel.hpp"

namespace search_nne {

Theta Theta::zeros(int d_prod, int d_cons, int d_ads) {
  Theta t;
  t.beta = Eigen::VectorXd::Zero(d_prod);
  t.eta = Eigen::VectorXd::Zero(d_cons);
  t.alpha = Eigen::VectorXd::Zero(d_ads);
  return t;
}

bool Theta::is_finite() const {
  return beta.allFinite() && eta.allFinite() && alpha.allFinite() && std::isfinite(eta0) &&
         std::isfinite(alpha0);
}

Eigen::VectorXd Theta::flatten() const {
  Eigen::VectorXd flat(size());
  flat << beta, eta, alpha, eta0, alpha0;
  return flat;
}

Theta Theta::unflatten(const Eigen::VectorXd& flat, int d_prod, int d_cons, int d_ads) {
  if (flat.size() != d_prod + d_cons + d_ads + 2)
    throw ContractViolation("Theta::unflatten: length does not match dimensions");
  Theta t;
  t.beta = flat.segment(0, d_prod);
  t.eta = flat.segment(d_prod, d_cons);
  t.alpha = flat.segment(d_prod + d_cons, d_ads);
  t.eta0 = flat(d_prod + d_cons + d_ads);
  t.alpha0 = flat(d_prod + d_cons + d_ads + 1);
  return t;
}

std::vector<std::string> Theta::names() const {
  std::vector<std::string> out;
  for (int k = 0; k < beta.size(); ++k) out.push_back("beta" + std::to_string(k + 1));
  for (int k = 0; k < eta.size(); ++k) out.push_back("eta" + std::to_string(k + 1));
  for (int k = 0; k < alpha.size(); ++k) out.push_back("alpha" + std::to_string(k + 1));
  out.push_back("eta0");
  out.push_back("alpha0");
  return out;
}

int padded_theta_width(const DimMaxima& maxima) { return maxima.total() + 2; }

PaddedTheta pad_theta(const Theta& theta, const DimMaxima& maxima) {
  const Dims dims{static_cast<int>(theta.beta.size()), static_cast<int>(theta.alpha.size()),
                  static_cast<int>(theta.eta.size()), 0, 0};
  if (!maxima.covers(dims)) throw ContractViolation("pad_theta: dimensions exceed maxima");
  PaddedTheta out;
  out.values = Eigen::VectorXd::Zero(padded_theta_width(maxima));
  out.mask = padded_theta_mask(dims, maxima);
  int pos = 0;
  out.values(pos) = theta.alpha0;
  out.values.segment(pos + 1, dims.d_ads) = theta.alpha;
  pos += 1 + maxima.ads;
  out.values(pos) = theta.eta0;
  out.values.segment(pos + 1, dims.d_cons) = theta.eta;
  pos += 1 + maxima.cons;
  out.values.segment(pos, dims.d_prod) = theta.beta;
  return out;
}

std::vector<std::uint8_t> padded_theta_mask(const Dims& dims, const DimMaxima& maxima) {
  std::vector<std::uint8_t> mask(padded_theta_width(maxima), 0);
  int pos = 0;
  for (int k = 0; k <= dims.d_ads; ++k) mask[pos + k] = 1;
  pos += 1 + maxima.ads;
  for (int k = 0; k <= dims.d_cons; ++k) mask[pos + k] = 1;
  pos += 1 + maxima.cons;
  for (int k = 0; k < dims.d_prod; ++k) mask[pos + k] = 1;
  return mask;
}

Theta unpad_theta(const Eigen::VectorXd& padded, const Dims& dims, const DimMaxima& maxima) {
  if (padded.size() != padded_theta_width(maxima) || !maxima.covers(dims))
    throw ContractViolation("unpad_theta: layout mismatch");
  Theta t;
  int pos = 0;
  t.alpha0 = padded(pos);
  t.alpha = padded.segment(pos + 1, dims.d_ads);
  pos += 1 + maxima.ads;
  t.eta0 = padded(pos);
  t.eta = padded.segment(pos + 1, dims.d_cons);
  pos += 1 + maxima.cons;
  t.beta = padded.segment(pos, dims.d_prod);
  return t;
}

std::vector<std::string> padded_theta_names(const DimMaxima& maxima) {
  std::vector<std::string> names;
  names.push_back("alpha0");
  for (int k = 0; k < maxima.ads; ++k) names.push_back("alpha" + std::to_string(k + 1));
  names.push_back("eta0");
  for (int k = 0; k < maxima.cons; ++k) names.push_back("eta" + std::to_string(k + 1));
  for (int k = 0; k < maxima.prod; ++k) names.push_back("beta" + std::to_string(k + 1));
  return names;
}

namespace {

bool columns_standardized(const Eigen::MatrixXd& m, double tol) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).mean();
    const double var = (m.col(c).array() - mean).square().mean();
    if (std::abs(mean) > tol || std::abs(var - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace

bool AttributeBlock::is_standardized(double tol) const {
  return columns_standardized(prod, tol) && columns_standardized(ads, tol) &&
         columns_standardized(cons, tol);
}

bool Outcomes::is_valid() const {
  if (search.size() != static_cast<std::size_t>(n) * J || buy.size() != search.size())
    return false;
  for (int i = 0; i < n; ++i) {
    int searched = 0, bought = 0;
    for (int j = 0; j < J; ++j) {
      const std::size_t r = static_cast<std::size_t>(i) * J + j;
      if (search[r] > 1 || buy[r] > 1 || buy[r] > search[r]) return false;
      searched += search[r];
      bought += buy[r];
    }
    if (searched < 1 || bought > 1) return false;
  }
  return true;
}

AttributeNames AttributeNames::defaults(const Dims& dims) {
  AttributeNames names;
  for (int k = 0; k < dims.d_prod; ++k) names.prod.push_back("xp_" + std::to_string(k + 1));
  for (int k = 0; k < dims.d_ads; ++k) names.ads.push_back("xa_" + std::to_string(k + 1));
  for (int k = 0; k < dims.d_cons; ++k) names.cons.push_back("xc_" + std::to_string(k + 1));
  return names;
}

ConsumerShocks draw_consumer_shocks(std::uint64_t seed, int consumer, int J) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(consumer)));
  NormalSampler normal;
  ConsumerShocks s;
  s.mu.resize(J);
  s.eps.resize(J);
  for (int j = 0; j < J; ++j) s.mu[j] = normal(rng);
  for (int j = 0; j < J; ++j) s.eps[j] = normal(rng);
  s.eps0 = normal(rng);
  return s;
}

double expected_excess(double lambda) { return normal_pdf(lambda) - lambda * normal_sf(lambda); }

double reservation_offset(double cost) {
  if (!(cost > 0.0) || !std::isfinite(cost))
    throw DomainError("reservation_offset: search cost must be positive and finite");
  // expected_excess is strictly decreasing, >= -lambda, and -> 0 as lambda -> inf.
  double lo = std::min(-10.0, -cost);
  double hi = 10.0;
  while (expected_excess(hi) > cost) hi *= 2.0;
  double x = std::clamp(0.0, lo, hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double residual = expected_excess(x) - cost;
    if (std::abs(residual) <= 1e-14 * cost) return x;
    if (residual > 0.0)
      lo = x;
    else
      hi = x;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
      return x;
    // Newton on the decreasing function; bisect when the step leaves the bracket.
    const double slope = -normal_sf(x);
    double next = slope < 0.0 ? x - residual / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  return x;
}

double reservation_value(double delta, double cost) {
  if (!std::isfinite(delta)) throw DomainError("reservation_value: delta must be finite");
  return delta + reservation_offset(cost);
}

void check_dims(const Theta& theta, const Dims& dims) {
  if (theta.beta.size() != dims.d_prod || theta.eta.size() != dims.d_cons ||
      theta.alpha.size() != dims.d_ads)
    throw ContractViolation("theta dimensions do not match attribute dimensions");
}

int search_and_choose(const ConsumerState& state, FreeSearchRule rule,
                      std::span<std::uint8_t> search, std::span<std::uint8_t> buy,
                      double* net_utility, std::vector<int>* order) {
  const int J = static_cast<int>(state.reservation.size());
  if (order) order->clear();

  auto highest = [&](std::span<const double> key) {
    int best = -1;
    for (int j = 0; j < J; ++j)
      if (!search[j] && (best < 0 || key[j] > key[best])) best = j;
    return best;
  };

  const int first = rule == FreeSearchRule::kHighestReservation ? highest(state.reservation)
                                                                : highest(state.mean_utility);
  search[first] = 1;
  if (order) order->push_back(first);
  double best_value = state.outside_utility;
  int bought = -1;
  const double u_first = state.mean_utility[first] + state.eps[first];
  if (u_first > best_value) {
    best_value = u_first;
    bought = first;
  }
  double paid = 0.0;
  for (int step = 1; step < J; ++step) {
    const int next = highest(state.reservation);
    if (!(best_value < state.reservation[next])) break;
    search[next] = 1;
    if (order) order->push_back(next);
    paid += state.cost[next];
    const double u = state.mean_utility[next] + state.eps[next];
    if (u > best_value) {
      best_value = u;
      bought = next;
    }
  }
  if (bought >= 0) buy[bought] = 1;
  if (net_utility) *net_utility = best_value - paid;
  return bought;
}

namespace {

// Per-product cost and reservation offsets; a single solve when no
// advertising attributes vary the cost.
struct CostTable {
  std::vector<double> cost;
  std::vector<double> offset;
};

CostTable cost_table(const Theta& theta, const AttributeBlock& x, Eigen::Index first_row,
                     Eigen::Index rows) {
  CostTable t;
  t.cost.resize(rows);
  t.offset.resize(rows);
  if (x.ads.cols() == 0) {
    const double c = std::exp(theta.alpha0);
    const double lam = reservation_offset(c);
    std::fill(t.cost.begin(), t.cost.end(), c);
    std::fill(t.offset.begin(), t.offset.end(), lam);
    return t;
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double log_c = theta.alpha0 + x.ads.row(first_row + r).dot(theta.alpha);
    t.cost[r] = std::exp(log_c);
    t.offset[r] = reservation_offset(t.cost[r]);
  }
  return t;
}

}  // namespace

ConsumerChoice simulate_consumer(const Theta& theta, const AttributeBlock& x, int i,
                                 const ConsumerShocks& shocks, FreeSearchRule rule) {
  check_dims(theta, x.dims());
  const int J = x.J;
  if (i < 0 || i >= x.n || static_cast<int>(shocks.mu.size()) != J ||
      static_cast<int>(shocks.eps.size()) != J)
    throw ContractViolation("simulate_consumer: consumer index or shock length mismatch");
  const Eigen::Index first_row = static_cast<Eigen::Index>(i) * J;
  const CostTable costs = cost_table(theta, x, first_row, J);
  std::vector<double> mean_u(J), reservation(J);
  for (int j = 0; j < J; ++j) {
    mean_u[j] = x.prod.row(first_row + j).dot(theta.beta) + shocks.mu[j];
    reservation[j] = mean_u[j] + costs.offset[j];
  }
  double outside = theta.eta0 + shocks.eps0;
  if (x.cons.cols() > 0) outside += x.cons.row(i).dot(theta.eta);

  ConsumerChoice choice;
  choice.search.assign(J, 0);
  choice.buy.assign(J, 0);
  const ConsumerState state{mean_u, costs.cost, reservation, shocks.eps, outside};
  choice.bought = search_and_choose(state, rule, choice.search, choice.buy, &choice.net_utility,
                                    &choice.search_order);
  return choice;
}

Outcomes simulate_panel(const Theta& theta, const AttributeBlock& x, std::uint64_t seed,
                        const SimulationOptions& options) {
  check_dims(theta, x.dims());
  if (!theta.is_finite()) throw ContractViolation("simulate_panel: theta must be finite");
  const int n = x.n, J = x.J;
  Outcomes out(n, J);
  const Eigen::VectorXd index = x.prod * theta.beta;
  Eigen::VectorXd outside = Eigen::VectorXd::Constant(n, theta.eta0);
  if (x.cons.cols() > 0) outside += x.cons * theta.eta;
  const bool constant_cost = x.ads.cols() == 0;
  double common_cost = 0.0, common_offset = 0.0;
  if (constant_cost) {
    common_cost = std::exp(theta.alpha0);
    common_offset = reservation_offset(common_cost);
  }
  Eigen::VectorXd log_cost;
  if (!constant_cost) log_cost = (x.ads * theta.alpha).array() + theta.alpha0;

  const int threads = resolve_threads(options.threads);
  const int block = 256;
  const int blocks = (n + block - 1) / block;
  parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
    std::vector<double> mean_u(J), cost(J, common_cost), reservation(J), mu(J), eps(J);
    const int begin = static_cast<int>(b) * block;
    const int end = std::min(n, begin + block);
    for (int i = begin; i < end; ++i) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      NormalSampler normal;
      for (int j = 0; j < J; ++j) mu[j] = normal(rng);
      for (int j = 0; j < J; ++j) eps[j] = normal(rng);
      const double eps0 = normal(rng);
      const std::size_t row0 = static_cast<std::size_t>(i) * J;
      for (int j = 0; j < J; ++j) {
        mean_u[j] = index(row0 + j) + mu[j];
        double offset = common_offset;
        if (!constant_cost) {
          cost[j] = std::exp(log_cost(row0 + j));
          offset = reservation_offset(cost[j]);
        }
        reservation[j] = mean_u[j] + offset;
      }
      const ConsumerState state{mean_u, cost, reservation, eps, outside(i) + eps0};
      search_and_choose(state, options.rule,
                        std::span<std::uint8_t>(out.search.data() + row0, J),
                        std::span<std::uint8_t>(out.buy.data() + row0, J));
    }
  });
  return out;
}

Rates rates(const Outcomes& outcomes) {
  Rates r;
  if (outcomes.n == 0) return r;
  long buyers = 0, nonfree = 0, searches = 0;
  for (int i = 0; i < outcomes.n; ++i) {
    int s = 0, b = 0;
    for (int j = 0; j < outcomes.J; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * outcomes.J + j;
      s += outcomes.search[k];
      b += outcomes.buy[k];
    }
    searches += s;
    nonfree += s > 1;
    buyers += b > 0;
  }
  r.buy_rate = static_cast<double>(buyers) / outcomes.n;
  r.search_rate = static_cast<double>(nonfree) / outcomes.n;
  r.mean_searches = static_cast<double>(searches) / outcomes.n;
  return r;
}

}  // namespace search_nne
