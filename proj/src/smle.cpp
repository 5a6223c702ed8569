#include "search_nne/smle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "search_nne/error.hpp"
#include "search_nne/parallel.hpp"

namespace search_nne {

void SmleConfig::validate() const {
  if (R < 1) throw ConfigError("smle.R: must be at least 1");
  if (!(lambda_search > 0.0) || !(lambda_buy > 0.0))
    throw ConfigError("smle.lambda: smoothing factors must be positive");
  if (starts < 1) throw ConfigError("smle.starts: must be at least 1");
  if (!(tolerance > 0.0)) throw ConfigError("smle.tolerance: must be positive");
  if (max_iterations < 1) throw ConfigError("smle.max_iterations: must be at least 1");
  if (!(fd_step > 0.0)) throw ConfigError("smle.fd_step: must be positive");
  prior.validate();
}

namespace {

constexpr double kLogFloor = -690.7755278982137;  // log(1e-300)
constexpr double kLogCostBound = 30.0;

// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

}  // namespace

SmoothedLikelihood::SmoothedLikelihood(const Dataset& data, const SmleConfig& cfg,
                                       std::uint64_t seed)
    : data_(data), cfg_(cfg), dims_(data.dims()) {
  cfg_.validate();
  if (!data.y.is_valid()) throw ValidationError("smle: outcomes violate the search model");
  const int n = dims_.n, J = dims_.J;
  searched_.resize(n);
  bought_.assign(n, -1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < J; ++j) {
      const std::size_t row = static_cast<std::size_t>(i) * J + j;
      if (data.y.search[row]) searched_[i].push_back(j);
      if (data.y.buy[row]) bought_[i] = j;
    }
  shocks_.resize(n);
  const std::size_t block = 2 * static_cast<std::size_t>(J) + 1;
  parallel_for(static_cast<std::size_t>(n), cfg_.threads, [&](std::size_t i) {
    auto& s = shocks_[i];
    s.resize(block * cfg_.R);
    for (int r = 0; r < cfg_.R; ++r) {
      const ConsumerShocks c = draw_consumer_shocks(derive_seed(seed, r), static_cast<int>(i), J);
      double* out = s.data() + block * r;
      std::copy(c.mu.begin(), c.mu.end(), out);
      std::copy(c.eps.begin(), c.eps.end(), out + J);
      out[2 * J] = c.eps0;
    }
  });
}

double SmoothedLikelihood::consumer_log_likelihood(int i, const Eigen::VectorXd& delta,
                                                   const Eigen::VectorXd& offset,
                                                   double outside_mean,
                                                   std::vector<double>& terms) const {
  const int J = dims_.J;
  const std::size_t block = 2 * static_cast<std::size_t>(J) + 1;
  const auto& S = searched_[i];
  const int b = bought_[i];
  const double inv_s = 1.0 / cfg_.lambda_search;
  const double inv_b = 1.0 / cfg_.lambda_buy;
  const Eigen::Index base = static_cast<Eigen::Index>(i) * J;
  terms.resize(cfg_.R);
  for (int r = 0; r < cfg_.R; ++r) {
    const double* mu = shocks_[i].data() + block * r;
    const double* eps = mu + J;
    const double u0 = outside_mean + mu[2 * J];
    double min_r_searched = std::numeric_limits<double>::infinity();
    int last = -1;  // searched product with the lowest reservation value
    double max_r_unsearched = -std::numeric_limits<double>::infinity();
    std::size_t s = 0;
    for (int j = 0; j < J; ++j) {
      const double rj = delta(base + j) + mu[j] + offset(base + j);
      if (s < S.size() && S[s] == j) {
        if (rj < min_r_searched) {
          min_r_searched = rj;
          last = j;
        }
        ++s;
      } else {
        max_r_unsearched = std::max(max_r_unsearched, rj);
      }
    }
    double best_all = u0;
    double best_but_last = u0;
    double best_but_bought = b >= 0 ? u0 : -std::numeric_limits<double>::infinity();
    double u_bought = u0;
    for (int j : S) {
      const double uj = delta(base + j) + mu[j] + eps[j];
      best_all = std::max(best_all, uj);
      if (j != last) best_but_last = std::max(best_but_last, uj);
      if (j == b)
        u_bought = uj;
      else
        best_but_bought = std::max(best_but_bought, uj);
    }
    double log_p = 0.0;
    if (S.size() < static_cast<std::size_t>(J)) {
      // Searched products carry the highest reservation values.
      log_p += log_sigmoid((min_r_searched - max_r_unsearched) * inv_s);
      // Stopping: the best realized value beats every unsearched reservation value.
      log_p += log_sigmoid((best_all - max_r_unsearched) * inv_s);
    }
    // Continuation up to the last search; earlier continuations are implied.
    if (S.size() >= 2) log_p += log_sigmoid((min_r_searched - best_but_last) * inv_s);
    // Purchase: the chosen option beats every other searched option.
    log_p += log_sigmoid((u_bought - best_but_bought) * inv_b);
    terms[r] = log_p;
  }
  const double peak = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - peak);
  return peak + std::log(sum / cfg_.R);
}

double SmoothedLikelihood::operator()(const Theta& theta) const {
  check_dims(theta, dims_);
  const auto& x = data_.x;
  const Eigen::VectorXd delta =
      x.prod.cols() ? Eigen::VectorXd(x.prod * theta.beta)
                    : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims_.n) * dims_.J);
  Eigen::VectorXd offset(delta.size());
  if (x.ads.cols() == 0) {
    offset.setConstant(
        reservation_offset(std::exp(std::clamp(theta.alpha0, -kLogCostBound, kLogCostBound))));
  } else {
    const Eigen::VectorXd log_cost = (x.ads * theta.alpha).array() + theta.alpha0;
    for (Eigen::Index k = 0; k < offset.size(); ++k)
      offset(k) = reservation_offset(std::exp(std::clamp(log_cost(k), -kLogCostBound, kLogCostBound)));
  }
  const Eigen::VectorXd outside =
      x.cons.cols() ? Eigen::VectorXd((x.cons * theta.eta).array() + theta.eta0)
                    : Eigen::VectorXd::Constant(dims_.n, theta.eta0);
  std::vector<double> per(dims_.n);
  const int chunk = 64;
  const int chunks = (dims_.n + chunk - 1) / chunk;
  parallel_for(static_cast<std::size_t>(chunks), cfg_.threads, [&](std::size_t c) {
    std::vector<double> scratch;
    const int end = std::min(dims_.n, static_cast<int>(c + 1) * chunk);
    for (int i = static_cast<int>(c) * chunk; i < end; ++i)
      per[i] = consumer_log_likelihood(i, delta, offset, outside(i), scratch);
  });
  double total = 0.0;
  int floored = 0;
  for (double v : per) {
    if (!(v >= kLogFloor)) {
      v = kLogFloor;
      ++floored;
    }
    total += v;
  }
  floored_ = floored;
  return total;
}

double smoothed_loglik(const Theta& theta, const Dataset& data, const SmleConfig& cfg,
                       std::uint64_t seed) {
  return SmoothedLikelihood(data, cfg, seed)(theta);
}

namespace {

struct Objective {
  const SmoothedLikelihood* like;
  const SmleConfig* cfg;
  Dims dims;
  int evaluations = 0;

  Theta theta(const gsl_vector* v) const {
    Eigen::VectorXd flat(v->size);
    for (std::size_t k = 0; k < v->size; ++k) flat(k) = gsl_vector_get(v, k);
    return Theta::unflatten(flat, dims.d_prod, dims.d_cons, dims.d_ads);
  }
  // Negative mean log-likelihood.
  double value(const gsl_vector* v) {
    ++evaluations;
    const double ll = (*like)(theta(v));
    return std::isfinite(ll) ? -ll / dims.n : 1e300;
  }
  void gradient(const gsl_vector* v, gsl_vector* g) {
    gsl_vector* w = gsl_vector_alloc(v->size);
    gsl_vector_memcpy(w, v);
    for (std::size_t k = 0; k < v->size; ++k) {
      const double x = gsl_vector_get(v, k);
      const double h = cfg->fd_step * std::max(1.0, std::abs(x));
      gsl_vector_set(w, k, x + h);
      const double up = value(w);
      gsl_vector_set(w, k, x - h);
      const double down = value(w);
      gsl_vector_set(w, k, x);
      gsl_vector_set(g, k, (up - down) / (2.0 * h));
    }
    gsl_vector_free(w);
  }
};

double f_cb(const gsl_vector* v, void* p) { return static_cast<Objective*>(p)->value(v); }
void df_cb(const gsl_vector* v, void* p, gsl_vector* g) { static_cast<Objective*>(p)->gradient(v, g); }
void fdf_cb(const gsl_vector* v, void* p, double* f, gsl_vector* g) {
  *f = f_cb(v, p);
  df_cb(v, p, g);
}

}  // namespace

SmleResult smle_estimate(const Dataset& data, const SmleConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const SmoothedLikelihood like(data, cfg, seed);
  const Dims dims = data.dims();
  Objective obj{&like, &cfg, dims};
  const int p = Theta::zeros(dims.d_prod, dims.d_cons, dims.d_ads).size();
  gsl_set_error_handler_off();

  SmleResult result;
  result.loglik = -std::numeric_limits<double>::infinity();
  Rng rng(derive_seed(seed, 0x57a27));
  for (int s = 0; s < cfg.starts; ++s) {
    Rng start_rng = rng.split(s);
    const Eigen::VectorXd start = draw_theta(dims, cfg.prior, start_rng).flatten();
    gsl_multimin_function_fdf fn{&f_cb, &df_cb, &fdf_cb, static_cast<std::size_t>(p), &obj};
    gsl_vector* x = gsl_vector_alloc(p);
    for (int k = 0; k < p; ++k) gsl_vector_set(x, k, start(k));
    gsl_multimin_fdfminimizer* m =
        gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, p);
    gsl_multimin_fdfminimizer_set(m, &fn, x, 0.1, 0.1);
    SmleStart trace;
    trace.start = start;
    int status = GSL_CONTINUE;
    for (int it = 0; it < cfg.max_iterations && status == GSL_CONTINUE; ++it) {
      ++trace.iterations;
      if (gsl_multimin_fdfminimizer_iterate(m) != GSL_SUCCESS) break;
      status = gsl_multimin_test_gradient(m->gradient, cfg.tolerance);
    }
    if (status == GSL_CONTINUE)
      status = gsl_multimin_test_gradient(m->gradient, cfg.tolerance);
    trace.converged = status == GSL_SUCCESS;
    trace.end.resize(p);
    for (int k = 0; k < p; ++k) trace.end(k) = gsl_vector_get(m->x, k);
    trace.loglik = -m->f * dims.n;
    gsl_multimin_fdfminimizer_free(m);
    gsl_vector_free(x);
    result.converged = result.converged || trace.converged;
    if (trace.loglik > result.loglik) {
      result.loglik = trace.loglik;
      result.theta = Theta::unflatten(trace.end, dims.d_prod, dims.d_cons, dims.d_ads);
    }
    result.trace.push_back(std::move(trace));
  }
  like(result.theta);
  result.floored = like.floored();
  result.evaluations = obj.evaluations;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace search_nne
