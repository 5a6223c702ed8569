// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]; all criteria run by default.
// Expensive artifacts are cached in SEARCH_NNE_CACHE_DIR keyed by config hash.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <json.hpp>

#include "search_nne/artifact.hpp"
#include "search_nne/config.hpp"
#include "search_nne/error.hpp"
#include "search_nne/estimate.hpp"
#include "search_nne/hash.hpp"
#include "search_nne/mc_study.hpp"
#include "search_nne/net.hpp"
#include "search_nne/normal.hpp"
#include "search_nne/panel_io.hpp"
#include "search_nne/parallel.hpp"
#include "search_nne/patterns.hpp"
#include "search_nne/ridge.hpp"
#include "search_nne/search_model.hpp"
#include "search_nne/smle.hpp"
#include "search_nne/synth.hpp"

namespace fs = std::filesystem;
using namespace search_nne;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void say(const std::string& s) {
  std::printf("  .. %s\n", s.c_str());
  std::fflush(stdout);
}

int threads() { return resolve_threads(0); }

std::string cache_dir() {
  const char* env = std::getenv("SEARCH_NNE_ACCEPTANCE_CACHE");
  const std::string dir = env ? env : SEARCH_NNE_CACHE_DIR;
  fs::create_directories(dir);
  return dir;
}

std::string hex(std::uint64_t h) { return fmt("%016llx", static_cast<unsigned long long>(h)); }

// ---------------------------------------------------------------------------
// Shared model settings.

// Desk-scale truth in unit-sd attribute units, 3 product and 1 consumer attribute.
Theta desk_truth() {
  Theta t = Theta::zeros(3, 1, 0);
  t.beta << -0.12, -0.10, -0.20;
  t.eta << 0.1;
  t.eta0 = 4.8;
  t.alpha0 = -5.0;
  return t;
}

Dataset synth_panel(const Dims& dims, const Theta& theta, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x = draw_attributes(dims, rng);
  d.names = AttributeNames::defaults(dims);
  d.y = simulate_panel(theta, d.x, derive_seed(seed, 1), {FreeSearchRule::kHighestReservation, threads()});
  return d;
}

PretrainConfig c6_config() {
  std::ifstream in(std::string(SEARCH_NNE_ACCEPTANCE_DIR) + "/c6_pretrain.json");
  if (!in) throw Error("cannot read c6_pretrain.json");
  PretrainConfig cfg = nlohmann::json::parse(in).get<PretrainConfig>();
  cfg.threads = threads();
  return cfg;
}

std::uint64_t config_hash(const PretrainConfig& cfg) {
  nlohmann::json j = cfg;
  j.erase("threads");
  return fnv1a(j.dump());
}

struct CachedArtifact {
  EstimatorArtifact artifact;
  double pretrain_seconds = -1.0;  ///< Wall time of the run that produced it, if recorded.
};

// Loads <name>_<hash>.art or pretrains and stores it with a timing sidecar.
CachedArtifact cached_pretrain(const std::string& name, const PretrainConfig& cfg,
                               const TrainingSet* examples = nullptr, const GeneratorHooks& hooks = {}) {
  const std::string stem = cache_dir() + "/" + name + "_" + hex(config_hash(cfg));
  CachedArtifact out;
  if (fs::exists(stem + ".art")) {
    say("loading cached artifact " + stem + ".art");
    out.artifact = load_artifact(stem + ".art");
  } else {
    say("pretraining " + name + " (cache miss: " + stem + ".art)");
    const auto t0 = Clock::now();
    out.artifact = pretrain(cfg, examples, [](const std::string& s) { say(s); }, hooks);
    save_artifact(out.artifact, stem + ".art");
    std::ofstream(stem + ".json") << nlohmann::json{{"pretrain_seconds", seconds_since(t0)}}.dump();
  }
  if (std::ifstream side{stem + ".json"}) out.pretrain_seconds = nlohmann::json::parse(side).at("pretrain_seconds");
  return out;
}

const CachedArtifact& c6_artifact() {
  static const CachedArtifact a = cached_pretrain("c6", c6_config());
  return a;
}

// ---------------------------------------------------------------------------
// 1. Reservation solver against adaptive quadrature.

Outcome criterion1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  boost::math::quadrature::exp_sinh<double> integrator;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double delta = -5.0 + 10.0 * rng.uniform();
    const double cost = std::exp(std::log(1e-6) + (std::log(5.0) - std::log(1e-6)) * rng.uniform());
    const double r = reservation_value(delta, cost);
    const double lo = r - delta;
    // E[max(delta + eps - r, 0)] = int_0^inf t phi(t + lo) dt.
    const double expect = integrator.integrate(
        [&](double t) { return t * std::exp(-0.5 * (t + lo) * (t + lo)) / std::sqrt(2.0 * M_PI); }, 1e-15);
    worst = std::max(worst, std::abs(cost - expect));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-8 && secs < 1.0, fmt("max |c - E[max(d+e-r,0)]| = %.2e (< 1e-8), %.3f s (< 1 s)", worst, secs)};
}

// ---------------------------------------------------------------------------
// 2. Weitzman policy against a backward-induction oracle with J = 2.

double oracle_excess(double lambda) {  // E[max(eps - lambda, 0)]
  const double pdf = std::exp(-0.5 * lambda * lambda) / std::sqrt(2.0 * M_PI);
  return pdf - lambda * 0.5 * std::erfc(lambda / std::sqrt(2.0));
}

double oracle_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double oracle_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

// Solves c = E[max(eps - lambda, 0)] by bisection.
double oracle_offset(double cost) {
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (oracle_excess(mid) > cost ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  Rng cfg_rng(202);
  int within = 0;
  double worst_z = 0.0;
  for (int k = 0; k < 20; ++k) {
    const double d[2] = {-2.0 + 4.0 * cfg_rng.uniform(), -2.0 + 4.0 * cfg_rng.uniform()};
    const double c[2] = {std::exp(std::log(0.01) + std::log(200.0) * cfg_rng.uniform()),
                         std::exp(std::log(0.01) + std::log(200.0) * cfg_rng.uniform())};
    const double d0 = -1.0 + 2.0 * cfg_rng.uniform();
    // Oracle: free search on the higher reservation value, then search the
    // other box iff the best realized value y = max(u0, u_f) is below its
    // reservation value.
    const double r[2] = {d[0] + oracle_offset(c[0]), d[1] + oracle_offset(c[1])};
    const int f = r[0] >= r[1] ? 0 : 1, o = 1 - f;
    auto g = [&](double y) { return y >= r[o] ? y : y + oracle_excess(y - d[o]) - c[o]; };
    auto density = [&](double y) {
      return oracle_pdf(y - d0) * oracle_cdf(y - d[f]) + oracle_pdf(y - d[f]) * oracle_cdf(y - d0);
    };
    const double split = r[o];
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    const double value =
        GK::integrate([&](double y) { return g(y) * density(y); }, -std::numeric_limits<double>::infinity(),
                      split, 15, 1e-13) +
        GK::integrate([&](double y) { return g(y) * density(y); }, split,
                      std::numeric_limits<double>::infinity(), 15, 1e-13);

    const int draws = 100000;
    const std::vector<double> mean_u{d[0], d[1]}, cost{c[0], c[1]},
        res{reservation_value(d[0], c[0]), reservation_value(d[1], c[1])};
    Rng rng(derive_seed(203, k));
    NormalSampler normal;
    double sum = 0.0, sum2 = 0.0;
    std::vector<double> eps(2);
    std::uint8_t search[2], buy[2];
    for (int s = 0; s < draws; ++s) {
      eps[0] = normal(rng);
      eps[1] = normal(rng);
      const double u0 = d0 + normal(rng);
      search[0] = search[1] = buy[0] = buy[1] = 0;
      double net = 0.0;
      const ConsumerState state{mean_u, cost, res, eps, u0};
      search_and_choose(state, FreeSearchRule::kHighestReservation, search, buy, &net);
      sum += net;
      sum2 += net * net;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum2 / draws - mean * mean) / (draws - 1));
    const double z = std::abs(mean - value) / se;
    worst_z = std::max(worst_z, z);
    within += z < 3.0;
  }
  const double secs = seconds_since(t0);
  return {within == 20 && secs < 300.0,
          fmt("%d/20 configurations within 3 SE (max |z| = %.2f), %.1f s (< 300 s)", within, worst_z, secs)};
}

// ---------------------------------------------------------------------------
// 3. Slope-norm law does not depend on the number of product attributes.

// Asymptotic Kolmogorov survival function with the Stephens correction.
double ks_p_value(double D, double n_eff) {
  const double s = std::sqrt(n_eff);
  const double lambda = (s + 0.12 + 0.11 / s) * D;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) sum += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(sum, 0.0, 1.0);
}

Outcome criterion3() {
  PriorConfig prior;
  const int N = 100000;
  auto norms = [&](int d_prod, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(N);
    for (auto& x : v) x = draw_theta({d_prod, 0, 0, 20, 1000}, prior, rng).beta.norm();
    std::sort(v.begin(), v.end());
    return v;
  };
  const std::vector<double> a = norms(2, 301), b = norms(8, 302);
  double D = 0.0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    D = std::max(D, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double p = ks_p_value(D, N / 2.0);
  auto mean_sq = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s / v.size();
  };
  const double s2 = prior.sigma_beta * prior.sigma_beta;
  const double ea = mean_sq(a) / s2 - 1.0, eb = mean_sq(b) / s2 - 1.0;
  return {p >= 0.01 && std::abs(ea) < 0.02 && std::abs(eb) < 0.02,
          fmt("KS D = %.4f, p = %.3f (>= 0.01); E||b||^2/s^2 - 1 = %+.4f (d=2), %+.4f (d=8) (|.| < 0.02)", D, p,
              ea, eb)};
}

// ---------------------------------------------------------------------------
// 4. Pattern contract over random panels.

double logit_foc(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& b, double pen) {
  const Eigen::VectorXd eta = X * b;
  Eigen::VectorXd resid(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) resid(i) = 1.0 / (1.0 + std::exp(-eta(i))) - y(i);
  Eigen::VectorXd grad = X.transpose() * resid / static_cast<double>(y.size());
  grad.tail(grad.size() - 1) += 2.0 * pen * b.tail(b.size() - 1);
  return grad.cwiseAbs().maxCoeff();
}

std::optional<int> slot_index(const PatternLayout& layout, const std::string& name) {
  for (int k = 0; k < layout.total_length(); ++k)
    if (layout.slots[k].name == name) return k;
  return std::nullopt;
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  const PatternLayout layout = layout_for({8, 2, 5});
  PriorConfig prior;
  const int panels = 10000;
  int nonfinite = 0, bad_mask = 0, not_invariant = 0, foc_checked = 0, foc_failed = 0, slot_mismatch = 0;
  double worst_perm = 0.0, worst_foc = 0.0;
  for (int p = 0; p < panels; ++p) {
    Rng rng(derive_seed(401, p));
    const Dims dims{uniform_int(rng, 1, 8), uniform_int(rng, 0, 2), uniform_int(rng, 0, 5), uniform_int(rng, 5, 25),
                    uniform_int(rng, 100, 400)};
    Dataset d;
    d.x = draw_attributes(dims, rng);
    d.names = AttributeNames::defaults(dims);
    d.y = simulate_panel(draw_theta(dims, prior, rng), d.x, derive_seed(402, p));
    PatternOptions po;
    po.allow_below_threshold = true;
    const PatternVector m = compute_patterns(d, layout, po);
    nonfinite += !m.values.allFinite();
    bool mask_ok = m.active_mask == layout.active_mask(dims);
    for (int k = 0; k < layout.total_length(); ++k)
      if (!m.active_mask[k] && m.values(k) != 0.0) mask_ok = false;
    bad_mask += !mask_ok;

    std::vector<int> order(dims.n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const PatternVector q = compute_patterns(select_consumers(d, order), layout, po);
    double dev = 0.0;
    for (int k = 0; k < layout.total_length(); ++k)
      dev = std::max(dev, std::abs(m.values(k) - q.values(k)) / (1.0 + std::abs(m.values(k))));
    worst_perm = std::max(worst_perm, dev);
    not_invariant += dev > 1e-8;

    // Product-level search logit rebuilt independently: {1, x_prod, x_ads,
    // x_cons, xbar_prod, xbar_ads}; slopes penalized, intercept free.
    const int n = dims.n, J = dims.J;
    const int width = 1 + 2 * dims.d_prod + 2 * dims.d_ads + dims.d_cons;
    Eigen::MatrixXd X(n * J, width);
    Eigen::VectorXd y(n * J);
    for (int i = 0; i < n; ++i) {
      const Eigen::RowVectorXd mp = d.x.prod.middleRows(i * J, J).colwise().mean();
      const Eigen::RowVectorXd ma = d.x.ads.middleRows(i * J, J).colwise().mean();
      for (int j = 0; j < J; ++j) {
        const int row = i * J + j;
        int c = 0;
        X(row, c++) = 1.0;
        for (int k = 0; k < dims.d_prod; ++k) X(row, c++) = d.x.prod(row, k);
        for (int k = 0; k < dims.d_ads; ++k) X(row, c++) = d.x.ads(row, k);
        for (int k = 0; k < dims.d_cons; ++k) X(row, c++) = d.x.cons(i, k);
        for (int k = 0; k < dims.d_prod; ++k) X(row, c++) = mp(k);
        for (int k = 0; k < dims.d_ads; ++k) X(row, c++) = ma(k);
        y(row) = d.y.search[row];
      }
    }
    Eigen::VectorXd warm;
    for (double pen : layout.penalties) {
      RidgeFit fit;
      try {
        fit = ridge_logit(X, y, pen, warm.size() ? &warm : nullptr);
      } catch (const DegenerateResponse&) {
        break;
      }
      warm = fit.coef;
      ++foc_checked;
      const double foc = logit_foc(X, y, fit.coef, pen);
      worst_foc = std::max(worst_foc, foc);
      foc_failed += !(foc < 1e-8);
      const int pos = *slot_index(layout, fmt("search_logit[%g].const", pen));
      bool same = m.values(pos) == fit.coef(0);
      for (int k = 0; k < dims.d_prod; ++k) same = same && m.values(pos + 1 + k) == fit.coef(1 + k);
      slot_mismatch += !same;
    }
    if (p % 1000 == 999) say(fmt("criterion 4: %d panels, %.0f s", p + 1, seconds_since(t0)));
  }
  const bool pass = nonfinite == 0 && bad_mask == 0 && not_invariant == 0 && foc_failed == 0 && slot_mismatch == 0;
  return {pass, fmt("%d panels: non-finite %d, mask errors %d, permutation deviations > 1e-8: %d (max %.1e); "
                    "ridge FOC > 1e-8: %d of %d fits (max %.1e), slot mismatches %d; %.0f s",
                    panels, nonfinite, bad_mask, not_invariant, worst_perm, foc_failed, foc_checked, worst_foc,
                    slot_mismatch, seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 5. Backpropagation against central finite differences.

// Signs of every hidden pre-activation; the loss is quadratic in any one
// parameter while this pattern is fixed, so central differences are exact
// up to roundoff there.
std::vector<bool> relu_pattern(const Mlp<double>& net, const Mlp<double>::Matrix& x) {
  std::vector<bool> out;
  Mlp<double>::Matrix a = x;
  for (int l = 0; l + 1 < net.layers(); ++l) {
    Mlp<double>::Matrix z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    for (Eigen::Index k = 0; k < z.size(); ++k) out.push_back(z.data()[k] > 0.0);
    a = z.cwiseMax(0.0);
  }
  return out;
}

Outcome criterion5() {
  using MlpD = Mlp<double>;
  double worst = 0.0;
  long checked = 0, skipped = 0;
  for (int point = 0; point < 100; ++point) {
    const MlpD net = MlpD::initialize({6, 8, 8, 4}, derive_seed(501, point));
    Rng rng(derive_seed(502, point));
    NormalSampler normal;
    MlpD::Matrix x(6, 5), target(4, 5), mask(4, 5);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = normal(rng);
    for (Eigen::Index k = 0; k < target.size(); ++k) {
      target.data()[k] = normal(rng);
      mask.data()[k] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    }
    MlpGradient<double> grad;
    masked_loss(net, x, target, mask, &grad);
    std::vector<double> analytic;
    grad.for_each_parameter([&](double g) { analytic.push_back(g); });
    const std::vector<bool> base = relu_pattern(net, x);
    MlpD probe = net;
    std::vector<double*> params;
    probe.for_each_parameter([&](double& v) { params.push_back(&v); });
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double saved = *params[k];
      const double h = 1e-3 * std::max(1.0, std::abs(saved));
      *params[k] = saved + h;
      const double up = masked_loss(probe, x, target, mask);
      const bool same_up = relu_pattern(probe, x) == base;
      *params[k] = saved - h;
      const double down = masked_loss(probe, x, target, mask);
      const bool same_down = relu_pattern(probe, x) == base;
      *params[k] = saved;
      if (!same_up || !same_down) {
        ++skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-12});
      worst = std::max(worst, std::abs(numeric - analytic[k]) / scale);
      ++checked;
    }
  }
  const double skip_share = static_cast<double>(skipped) / (checked + skipped);
  return {worst < 1e-5 && skip_share < 0.01,
          fmt("max relative gradient error %.2e over %ld parameters at 100 points (< 1e-5); %ld perturbations "
              "crossing a ReLU kink skipped (%.2f%%, < 1%%)",
              worst, checked, skipped, 100.0 * skip_share)};
}

// ---------------------------------------------------------------------------
// 6. Desk-scale recovery on held-out datasets.

Outcome criterion6() {
  const CachedArtifact& ca = c6_artifact();
  const EstimatorArtifact& art = ca.artifact;
  const auto t0 = Clock::now();
  GeneratorHooks hooks;
  hooks.dims = [&](Rng& rng) {
    Dims dims = draw_dims(art.prior, rng);
    dims.n = 2000;
    return dims;
  };
  std::vector<double> abs_err;
  double sq = 0.0;
  int found = 0;
  for (std::uint64_t idx = 0; found < 100; ++idx) {
    TrainingExample ex;
    if (!generate_example(606, idx, art.prior, art.layout, hooks, ex)) continue;
    ++found;
    const Eigen::VectorXd pred = predict_padded(art, ex.m);
    for (int k = 0; k < pred.size(); ++k)
      if (ex.theta_mask[k]) {
        const double e = pred(k) - ex.theta_padded(k);
        abs_err.push_back(std::abs(e));
        sq += e * e;
      }
  }
  const double secs = seconds_since(t0);
  std::nth_element(abs_err.begin(), abs_err.begin() + abs_err.size() / 2, abs_err.end());
  const double median = abs_err[abs_err.size() / 2];
  const double rmse = std::sqrt(sq / abs_err.size());
  const bool time_ok = secs <= 600.0 && (ca.pretrain_seconds < 0 || ca.pretrain_seconds <= 4 * 3600.0);
  return {median < 0.20 && rmse < 0.35 && time_ok,
          fmt("100 datasets at n=2000: median |error| %.3f (< 0.20), RMSE %.3f (< 0.35); evaluation %.0f s (<= 600), "
              "pretrain %s",
              median, rmse, secs,
              ca.pretrain_seconds < 0 ? "time not recorded" : fmt("%.0f s (<= 14400)", ca.pretrain_seconds).c_str())};
}

// ---------------------------------------------------------------------------
// 7. NNE against an ABC posterior-mean oracle on a one-parameter family.

struct C7Setup {
  Dims dims{2, 0, 0, 10, 500};
  PriorConfig prior;
  GeneratorHooks hooks;
  int beta1_slot = -1;
  PatternLayout layout;
};

C7Setup c7_setup() {
  C7Setup s;
  s.prior.d_prod = {2, 2};
  s.prior.d_ads = {0, 0};
  s.prior.d_cons = {0, 0};
  s.prior.J = {s.dims.J, s.dims.J};
  s.prior.n = {s.dims.n, s.dims.n};
  s.layout = layout_for(s.prior.maxima());
  s.hooks.theta = [](const Dims& dims, Rng& rng) {
    Theta t = Theta::zeros(dims.d_prod, dims.d_cons, dims.d_ads);
    NormalSampler normal;
    t.beta << normal(rng), -0.3;
    t.eta0 = 3.0;
    t.alpha0 = -3.5;
    return t;
  };
  Theta marker = Theta::zeros(2, 0, 0);
  marker.beta(0) = 1.0;
  const PaddedTheta p = pad_theta(marker, s.prior.maxima());
  for (int k = 0; k < p.values.size(); ++k)
    if (p.values(k) == 1.0) s.beta1_slot = k;
  const int width = static_cast<int>(p.values.size());
  const int slot = s.beta1_slot;
  s.hooks.target_mask = [width, slot](const Dims&) {
    std::vector<std::uint8_t> m(width, 0);
    m[slot] = 1;
    return m;
  };
  return s;
}

struct AbcBank {
  int width = 0;  ///< Active pattern slots.
  std::vector<float> patterns;
  std::vector<float> beta1;
};

Outcome criterion7() {
  const auto t0 = Clock::now();
  const C7Setup s = c7_setup();
  const std::size_t bank_size = 1000000, train_size = 200000;
  const std::vector<std::uint8_t> active = s.layout.active_mask(s.dims);
  std::vector<int> active_idx;
  for (int k = 0; k < s.layout.total_length(); ++k)
    if (active[k]) active_idx.push_back(k);

  PretrainConfig cfg;
  cfg.prior = s.prior;
  cfg.examples = train_size;
  cfg.seed = 707;
  cfg.threads = threads();
  cfg.trees.rounds = 50;
  const std::string key = hex(fnv1a(nlohmann::json(cfg).dump() + "|c7|" + std::to_string(bank_size)));
  const std::string bank_path = cache_dir() + "/c7_bank_" + key + ".bin";
  const std::string set_path = cache_dir() + "/c7_train_" + key + ".set";

  AbcBank bank;
  bank.width = static_cast<int>(active_idx.size());
  if (std::ifstream in{bank_path, std::ios::binary}) {
    say("loading cached ABC bank " + bank_path);
    bank.patterns.resize(bank_size * bank.width);
    bank.beta1.resize(bank_size);
    in.read(reinterpret_cast<char*>(bank.patterns.data()), bank.patterns.size() * sizeof(float));
    in.read(reinterpret_cast<char*>(bank.beta1.data()), bank.beta1.size() * sizeof(float));
    if (!in) throw Error("truncated ABC bank cache");
  } else {
    say("simulating ABC bank of 1e6 pairs");
    TrainingSet train(s.layout, s.prior);
    train.reserve(train_size);
    bank.patterns.reserve(bank_size * bank.width);
    bank.beta1.reserve(bank_size);
    GeneratorOptions opts;
    opts.threads = threads();
    opts.hooks = s.hooks;
    std::size_t count = 0;
    const GenerationStats stats = for_each_training_example(
        bank_size, s.prior, s.layout, cfg.seed,
        [&](TrainingExample&& ex) {
          if (count < train_size) train.append(ex);
          for (int k : active_idx) bank.patterns.push_back(static_cast<float>(ex.m.values(k)));
          bank.beta1.push_back(static_cast<float>(ex.theta_padded(s.beta1_slot)));
          if (++count % 100000 == 0) say(fmt("bank: %zu pairs, %.0f s", count, seconds_since(t0)));
        },
        opts);
    train.stats = stats;
    write_training_set(train, set_path);
    std::ofstream out(bank_path + ".partial", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bank.patterns.data()), bank.patterns.size() * sizeof(float));
    out.write(reinterpret_cast<const char*>(bank.beta1.data()), bank.beta1.size() * sizeof(float));
    out.close();
    fs::rename(bank_path + ".partial", bank_path);
  }
  std::optional<TrainingSet> train;
  if (!fs::exists(cache_dir() + "/c7_" + hex(config_hash(cfg)) + ".art")) train = read_training_set(set_path);
  const EstimatorArtifact& art = cached_pretrain("c7", cfg, train ? &*train : nullptr, s.hooks).artifact;

  // z-score scale per active slot over the bank.
  std::vector<double> mean(bank.width, 0.0), sd(bank.width, 0.0);
  for (std::size_t i = 0; i < bank_size; ++i)
    for (int k = 0; k < bank.width; ++k) mean[k] += bank.patterns[i * bank.width + k];
  for (auto& v : mean) v /= bank_size;
  for (std::size_t i = 0; i < bank_size; ++i)
    for (int k = 0; k < bank.width; ++k) {
      const double dv = bank.patterns[i * bank.width + k] - mean[k];
      sd[k] += dv * dv;
    }
  std::vector<double> inv(bank.width);
  for (int k = 0; k < bank.width; ++k) {
    sd[k] = std::sqrt(sd[k] / bank_size);
    inv[k] = sd[k] > 1e-12 ? 1.0 / sd[k] : 0.0;
  }

  int agree = 0;
  double worst_ratio = 0.0;
  int found = 0;
  std::vector<std::pair<double, std::size_t>> dist(bank_size);
  for (std::uint64_t idx = 0; found < 20; ++idx) {
    TrainingExample ex;
    if (!generate_example(708, idx, s.prior, s.layout, s.hooks, ex)) continue;
    ++found;
    std::vector<double> q(bank.width);
    for (int k = 0; k < bank.width; ++k) q[k] = ex.m.values(active_idx[k]);
    for (std::size_t i = 0; i < bank_size; ++i) {
      double d2 = 0.0;
      const float* row = bank.patterns.data() + i * bank.width;
      for (int k = 0; k < bank.width; ++k) {
        const double z = (row[k] - q[k]) * inv[k];
        d2 += z * z;
      }
      dist[i] = {d2, i};
    }
    std::nth_element(dist.begin(), dist.begin() + 500, dist.end());
    double m1 = 0.0, m2 = 0.0;
    for (int k = 0; k < 500; ++k) {
      const double b = bank.beta1[dist[k].second];
      m1 += b;
      m2 += b * b;
    }
    m1 /= 500;
    const double post_sd = std::sqrt(std::max(0.0, m2 / 500 - m1 * m1));
    const double nne = predict_padded(art, ex.m)(s.beta1_slot);
    const double ratio = std::abs(nne - m1) / post_sd;
    worst_ratio = std::max(worst_ratio, ratio);
    agree += ratio < 1.0;
    say(fmt("c7 dataset %d: beta1 %.3f, NNE %.3f, ABC mean %.3f, ABC sd %.3f", found,
            ex.theta_padded(s.beta1_slot), nne, m1, post_sd));
  }
  return {agree >= 18, fmt("%d/20 datasets with |NNE - ABC mean| < ABC posterior sd (>= 18); max ratio %.2f; %.0f s",
                           agree, worst_ratio, seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 8 and 9. Monte Carlo against smoothed SMLE; estimation speed.

std::optional<McResult> c8_result;

Outcome criterion8() {
  const EstimatorArtifact& art = c6_artifact().artifact;
  const auto t0 = Clock::now();
  const Dims dims{3, 0, 1, 15, 2000};
  Rng rng(808);
  Dataset panel;
  panel.x = draw_attributes(dims, rng);
  panel.names = AttributeNames::defaults(dims);
  McStudyOptions opts;
  opts.reps = 20;
  opts.estimators = {"nne", "smle"};
  opts.smle.R = 50;
  opts.smle.lambda_search = 4.0;
  opts.smle.lambda_buy = 1.0;
  opts.smle.threads = threads();
  opts.seed = 809;
  opts.threads = threads();
  c8_result = run_mc_study(panel, desk_truth(), opts, &art);
  const McRow& nne = c8_result->rows[0];
  const McRow& smle = c8_result->rows[1];
  std::ostringstream table;
  print_mc_table(table, *c8_result);
  std::printf("%s", table.str().c_str());
  const Eigen::VectorXd truth = desk_truth().flatten();
  bool attenuated = !smle.estimates.empty();
  std::string att;
  for (int k = 0; k < 3; ++k) {
    double mean_abs = 0.0;
    for (const auto& e : smle.estimates) mean_abs += std::abs(e(k));
    mean_abs /= std::max<std::size_t>(1, smle.estimates.size());
    attenuated = attenuated && mean_abs < std::abs(truth(k));
    att += fmt(" beta%d %.3f vs %.3f;", k + 1, mean_abs, std::abs(truth(k)));
  }
  const bool lower = nne.overall_rmse < smle.overall_rmse;
  return {lower && attenuated,
          fmt("RMSE NNE %.3f vs SMLE %.3f (NNE lower: %s); SMLE mean |beta_hat| vs |beta|:%s attenuated: %s; "
              "failures NNE %d, SMLE %d; %.0f s",
              nne.overall_rmse, smle.overall_rmse, lower ? "yes" : "no", att.c_str(), attenuated ? "yes" : "no",
              nne.failures, smle.failures, seconds_since(t0))};
}

Outcome criterion9() {
  const EstimatorArtifact& art = c6_artifact().artifact;
  const Dims dims{3, 0, 1, 15, 10000};
  const std::string csv = cache_dir() + "/c9_panel.csv";
  write_panel_csv_file(csv, synth_panel(dims, desk_truth(), 909));
  const auto t0 = Clock::now();
  const PanelData panel = read_panel_csv_file(csv);
  EstimateOptions opts;
  opts.threads = threads();
  const EstimateReport rep = estimate(panel.data, art, opts);
  const std::string text = report_json(rep).dump(2);
  const double secs = seconds_since(t0);
  std::string ratio_text = "ratio not measured (criterion 8 not run)";
  bool ratio_ok = false;
  if (c8_result) {
    const double ratio = c8_result->rows[1].mean_seconds / c8_result->rows[0].mean_seconds;
    ratio_ok = ratio >= 100.0;
    ratio_text = fmt("SMLE/NNE mean time ratio %.0f (>= 100)", ratio);
  }
  return {secs <= 5.0 && ratio_ok && !text.empty(),
          fmt("n=10000 estimate (read, %d splits, detector, report) %.2f s (<= 5 s); %s", rep.splits, secs,
              ratio_text.c_str())};
}

// ---------------------------------------------------------------------------
// 10. Detector calibration.

Outcome criterion10() {
  const EstimatorArtifact& art = c6_artifact().artifact;
  const auto t0 = Clock::now();
  int flagged = 0, total = 0;
  for (std::uint64_t idx = 0; total < 2000; ++idx) {
    TrainingExample ex;
    if (!generate_example(1010, idx, art.prior, art.layout, {}, ex)) continue;
    ++total;
    flagged += detect_ill_suited(art, ex.m).flag;
  }
  const double rate = static_cast<double>(flagged) / total;

  int intact_flags = 0, shuffled_flags = 0;
  double intact_score = 0.0, shuffled_score = 0.0;
  for (int s = 0; s < 50; ++s) {
    Dataset d;
    for (int attempt = 0;; ++attempt) {
      Rng rng(derive_seed(1011, s, attempt));
      const Dims dims = draw_dims(art.prior, rng);
      const Theta theta = draw_theta(dims, art.prior, rng);
      d.x = draw_attributes(dims, rng);
      d.names = AttributeNames::defaults(dims);
      d.y = simulate_panel(theta, d.x, derive_seed(1012, s, attempt));
      const Rates r = rates(d.y);
      if (r.buy_rate >= art.prior.min_buy_rate && r.search_rate >= art.prior.min_search_rate) break;
    }
    const int n = d.x.n, J = d.x.J;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng perm(derive_seed(1013, s));
    std::shuffle(order.begin(), order.end(), perm);
    Dataset shuffled = d;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < J; ++j) {
        shuffled.y.search[i * J + j] = d.y.search[order[i] * J + j];
        shuffled.y.buy[i * J + j] = d.y.buy[order[i] * J + j];
      }
    const DetectorResult a = detect_ill_suited(art, compute_patterns(d, art.layout));
    const DetectorResult b = detect_ill_suited(art, compute_patterns(shuffled, art.layout));
    intact_flags += a.flag;
    shuffled_flags += b.flag;
    intact_score += a.score / 50;
    shuffled_score += b.score / 50;
  }
  const double tree_loss = art.trees.validation_loss, net_loss = art.summary.validation_loss;
  return {rate <= 0.01 && shuffled_flags > intact_flags && tree_loss >= net_loss,
          fmt("fresh validation flag rate %.4f (<= 0.01); shuffled flags %d/50 vs intact %d/50 (mean score %.2f vs %.2f, "
              "threshold %.2f); tree validation loss %.4f vs net %.4f (tree >= net); %.0f s",
              rate, shuffled_flags, intact_flags, shuffled_score, intact_score, art.detector.threshold, tree_loss,
              net_loss, seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 11. Raw-unit estimates equal rescaled standardized-pipeline estimates.

Outcome criterion11() {
  const EstimatorArtifact& art = c6_artifact().artifact;
  double worst = 0.0, worst_inverse = 0.0;
  for (int s = 0; s < 5; ++s) {
    const Dims dims{3, 0, 1, 15, 2000};
    Rng rng(derive_seed(1111, s));
    Dataset raw;
    raw.x = draw_attributes(dims, rng);
    raw.names = AttributeNames::defaults(dims);
    for (int k = 0; k < dims.d_prod; ++k) {
      const double sd = 0.2 + 50.0 * rng.uniform(), mean = -100.0 + 200.0 * rng.uniform();
      raw.x.prod.col(k) = (raw.x.prod.col(k).array() * sd + mean).matrix();
    }
    raw.x.cons.col(0) = (raw.x.cons.col(0).array() * 12.0 + 45.0).matrix();
    const StandardizationRecord rec = standardize(raw).record;
    const Theta theta_raw = rescale_theta(desk_truth(), rec);
    raw.y = simulate_panel(theta_raw, raw.x, derive_seed(1112, s));

    EstimateOptions opts;
    opts.detect = false;
    const EstimateReport rep = estimate(raw, art, opts);
    const Standardized st = standardize(raw);
    const Theta theta_std = predict(art, compute_patterns(st.data, art.layout));
    const Theta mapped = rescale_theta(theta_std, st.record);
    const Eigen::VectorXd a = rep.theta_hat.flatten(), b = mapped.flatten();
    for (Eigen::Index k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a(k) - b(k)) / (1.0 + std::abs(b(k))));
    const Eigen::VectorXd back = standardize_theta(rep.theta_hat, st.record).flatten(), sv = theta_std.flatten();
    for (Eigen::Index k = 0; k < back.size(); ++k)
      worst_inverse = std::max(worst_inverse, std::abs(back(k) - sv(k)) / (1.0 + std::abs(sv(k))));
  }
  return {worst < 1e-10 && worst_inverse < 1e-10,
          fmt("max scaled difference raw-unit estimate vs rescaled standardized estimate %.1e, inverse map %.1e "
              "(< 1e-10) over 5 panels",
              worst, worst_inverse)};
}

// ---------------------------------------------------------------------------
// 12. Bootstrap SEs shrink like 1/sqrt(n).

Outcome criterion12() {
  const EstimatorArtifact& art = c6_artifact().artifact;
  const auto t0 = Clock::now();
  double ratio_sum = 0.0;
  for (int s = 0; s < 20; ++s) {
    EstimateOptions opts;
    opts.threads = threads();
    const Dims small{3, 0, 1, 15, 1000}, large{3, 0, 1, 15, 4000};
    const BootstrapSummary a = bootstrap_se(synth_panel(small, desk_truth(), derive_seed(1201, s)), art, 100,
                                            derive_seed(1202, s), opts);
    const BootstrapSummary b = bootstrap_se(synth_panel(large, desk_truth(), derive_seed(1203, s)), art, 100,
                                            derive_seed(1204, s), opts);
    const double ratio = (b.se.array() / a.se.array()).mean();
    ratio_sum += ratio;
    say(fmt("c12 seed %d: mean SE ratio %.3f", s, ratio));
  }
  const double ratio = ratio_sum / 20;
  return {ratio >= 0.4 && ratio <= 0.6,
          fmt("SE(4n)/SE(n) averaged over 20 seeds and parameters %.3f (in [0.4, 0.6]); %.0f s", ratio,
              seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"reservation solver", criterion1}},     {2, {"Weitzman policy vs oracle", criterion2}},
      {3, {"prior invariance", criterion3}},       {4, {"pattern contract", criterion4}},
      {5, {"net gradient check", criterion5}},     {6, {"desk-scale recovery", criterion6}},
      {7, {"posterior-mean oracle", criterion7}},  {8, {"NNE vs smoothed SMLE", criterion8}},
      {9, {"estimation speed", criterion9}},       {10, {"detector calibration", criterion10}},
      {11, {"unit consistency", criterion11}},     {12, {"bootstrap scaling", criterion12}}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [id, _] : criteria) selected.insert(id);

  std::vector<std::string> lines;
  int failed = 0;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    std::printf("running criterion %d: %s\n", id, it->second.first);
    std::fflush(stdout);
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const std::string line = fmt("[%s] criterion %2d (%s): ", o.pass ? "PASS" : "FAIL", id, it->second.first) + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines.push_back(line);
    failed += !o.pass;
  }
  std::printf("\nSummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  std::printf("%zu criteria, %d failed\n", lines.size(), failed);
  return failed ? 1 : 0;
}
