#include "search_nne/estimate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "search_nne/parallel.hpp"
#include "search_nne/patterns.hpp"
#include "search_nne/rng.hpp"

namespace search_nne {

StandardizationRecord StandardizationRecord::identity(const Dims& dims) {
  StandardizationRecord r;
  r.names = AttributeNames::defaults(dims);
  r.mean_prod = Eigen::VectorXd::Zero(dims.d_prod);
  r.sd_prod = Eigen::VectorXd::Ones(dims.d_prod);
  r.mean_ads = Eigen::VectorXd::Zero(dims.d_ads);
  r.sd_ads = Eigen::VectorXd::Ones(dims.d_ads);
  r.mean_cons = Eigen::VectorXd::Zero(dims.d_cons);
  r.sd_cons = Eigen::VectorXd::Ones(dims.d_cons);
  return r;
}

namespace {

void standardize_block(Eigen::MatrixXd& block, const std::vector<std::string>& names,
                       Eigen::VectorXd& mean, Eigen::VectorXd& sd) {
  const auto cols = block.cols();
  mean.resize(cols);
  sd.resize(cols);
  const double rows = static_cast<double>(block.rows());
  for (Eigen::Index k = 0; k < cols; ++k) {
    auto col = block.col(k);
    mean(k) = col.mean();
    const double var = (col.array() - mean(k)).square().sum() / rows;
    sd(k) = std::sqrt(var);
    if (!(sd(k) > 1e-12 * std::max(1.0, std::abs(mean(k)))) || !std::isfinite(sd(k)))
      throw ValidationError("attribute '" + names[k] + "' has zero variance");
    col = (col.array() - mean(k)) / sd(k);
  }
}

void collinearity_warnings(const Eigen::MatrixXd& block, const std::vector<std::string>& names,
                           std::vector<std::string>& warnings) {
  if (block.cols() < 2) return;
  const Eigen::MatrixXd corr = block.transpose() * block / static_cast<double>(block.rows());
  for (Eigen::Index a = 0; a < block.cols(); ++a)
    for (Eigen::Index b = a + 1; b < block.cols(); ++b)
      if (std::abs(corr(a, b)) > 0.999) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.5f", corr(a, b));
        warnings.push_back("attributes '" + names[a] + "' and '" + names[b] +
                           "' are almost collinear (correlation " + buf +
                           "); consider dropping one");
      }
}

}  // namespace

Standardized standardize(const Dataset& raw) {
  Standardized out;
  out.data = raw;
  auto& rec = out.record;
  rec.names = raw.names;
  auto& x = out.data.x;
  standardize_block(x.prod, raw.names.prod, rec.mean_prod, rec.sd_prod);
  standardize_block(x.ads, raw.names.ads, rec.mean_ads, rec.sd_ads);
  standardize_block(x.cons, raw.names.cons, rec.mean_cons, rec.sd_cons);
  Eigen::MatrixXd row_level(x.prod.rows(), x.prod.cols() + x.ads.cols());
  row_level << x.prod, x.ads;
  std::vector<std::string> row_names = raw.names.prod;
  row_names.insert(row_names.end(), raw.names.ads.begin(), raw.names.ads.end());
  collinearity_warnings(row_level, row_names, out.warnings);
  collinearity_warnings(x.cons, raw.names.cons, out.warnings);
  return out;
}

namespace {

void check_record(const Theta& t, const StandardizationRecord& rec) {
  if (t.beta.size() != rec.sd_prod.size() || t.eta.size() != rec.sd_cons.size() ||
      t.alpha.size() != rec.sd_ads.size())
    throw ContractViolation("rescale: parameter and record dimensions differ");
}

}  // namespace

Theta rescale_theta(const Theta& s, const StandardizationRecord& rec) {
  check_record(s, rec);
  Theta o;
  o.beta = s.beta.cwiseQuotient(rec.sd_prod);
  o.eta = s.eta.cwiseQuotient(rec.sd_cons);
  o.alpha = s.alpha.cwiseQuotient(rec.sd_ads);
  // A constant in every inside utility is equivalent to the opposite shift of
  // the outside option.
  o.eta0 = s.eta0 - o.eta.dot(rec.mean_cons) + o.beta.dot(rec.mean_prod);
  o.alpha0 = s.alpha0 - o.alpha.dot(rec.mean_ads);
  return o;
}

Theta standardize_theta(const Theta& o, const StandardizationRecord& rec) {
  check_record(o, rec);
  Theta s;
  s.beta = o.beta.cwiseProduct(rec.sd_prod);
  s.eta = o.eta.cwiseProduct(rec.sd_cons);
  s.alpha = o.alpha.cwiseProduct(rec.sd_ads);
  s.eta0 = o.eta0 + o.eta.dot(rec.mean_cons) - o.beta.dot(rec.mean_prod);
  s.alpha0 = o.alpha0 + o.alpha.dot(rec.mean_ads);
  return s;
}

Dataset select_consumers(const Dataset& data, const std::vector<int>& consumers) {
  const int J = data.x.J;
  const int n = static_cast<int>(consumers.size());
  Dataset out;
  out.names = data.names;
  out.x.n = n;
  out.x.J = J;
  out.x.prod.resize(static_cast<Eigen::Index>(n) * J, data.x.prod.cols());
  out.x.ads.resize(static_cast<Eigen::Index>(n) * J, data.x.ads.cols());
  out.x.cons.resize(n, data.x.cons.cols());
  out.y = Outcomes(n, J);
  for (int r = 0; r < n; ++r) {
    const int i = consumers[r];
    if (i < 0 || i >= data.x.n) throw ContractViolation("select_consumers: index out of range");
    const Eigen::Index src = static_cast<Eigen::Index>(i) * J;
    const Eigen::Index dst = static_cast<Eigen::Index>(r) * J;
    if (data.x.prod.cols()) out.x.prod.middleRows(dst, J) = data.x.prod.middleRows(src, J);
    if (data.x.ads.cols()) out.x.ads.middleRows(dst, J) = data.x.ads.middleRows(src, J);
    if (data.x.cons.cols()) out.x.cons.row(r) = data.x.cons.row(i);
    std::copy_n(data.y.search.begin() + src, J, out.y.search.begin() + dst);
    std::copy_n(data.y.buy.begin() + src, J, out.y.buy.begin() + dst);
  }
  return out;
}

namespace {

bool below(const Rates& r, const PriorConfig& prior) {
  return r.buy_rate < prior.min_buy_rate || r.search_rate < prior.min_search_rate;
}

struct PartEstimate {
  Theta theta;  ///< Original units.
  PatternVector m;
  std::vector<std::string> warnings;
};

PartEstimate estimate_part(const Dataset& raw, const EstimatorArtifact& a) {
  Standardized s = standardize(raw);
  PatternOptions po;
  po.min_buy_rate = a.prior.min_buy_rate;
  po.min_search_rate = a.prior.min_search_rate;
  po.allow_below_threshold = true;
  PartEstimate out;
  out.m = compute_patterns(s.data, a.layout, po);
  out.theta = rescale_theta(predict(a, out.m), s.record);
  out.warnings = std::move(s.warnings);
  return out;
}

std::vector<std::vector<int>> split_consumers(int n, int cap, std::uint64_t seed) {
  const int parts = (n + cap - 1) / cap;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (parts <= 1) return {order};
  Rng rng(derive_seed(seed, 0x5b117));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out(parts);
  int start = 0;
  for (int p = 0; p < parts; ++p) {
    const int size = n / parts + (p < n % parts ? 1 : 0);
    out[p].assign(order.begin() + start, order.begin() + start + size);
    start += size;
  }
  return out;
}

void validate_panel(const Dataset& d) {
  const Dims dims = d.dims();
  if (dims.n < 1 || dims.J < 1) throw ValidationError("panel has no consumers or products");
  if (!d.y.is_valid())
    throw ValidationError("outcomes violate the search model (every consumer searches at least once, "
                          "buys at most one searched product)");
}

Theta average(const std::vector<Theta>& parts, const Dims& dims) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(parts.front().size());
  for (const auto& t : parts) sum += t.flatten();
  return Theta::unflatten(sum / static_cast<double>(parts.size()), dims.d_prod, dims.d_cons,
                          dims.d_ads);
}

// Original-unit estimate without detection or diagnostics.
Theta point_estimate(const Dataset& raw, const EstimatorArtifact& a, std::uint64_t seed,
                     int threads) {
  const auto splits = split_consumers(raw.x.n, a.prior.n_cap_pretrain(), seed);
  if (splits.size() == 1) return estimate_part(raw, a).theta;
  std::vector<Theta> parts(splits.size());
  parallel_for(splits.size(), threads, [&](std::size_t p) {
    parts[p] = estimate_part(select_consumers(raw, splits[p]), a).theta;
  });
  return average(parts, raw.dims());
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g%%", 100.0 * v);
  return buf;
}

}  // namespace

EstimateReport estimate(const Dataset& raw, const EstimatorArtifact& a,
                        const EstimateOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_panel(raw);
  EstimateReport rep;
  rep.dims = raw.dims();
  rep.names = raw.names;
  if (!a.layout.maxima.covers(rep.dims))
    throw IncompatibleArtifact("panel has more attributes than the artifact supports");
  rep.rates = rates(raw.y);
  rep.below_threshold = below(rep.rates, a.prior);
  if (rep.below_threshold && !options.force) {
    if (rep.rates.buy_rate < a.prior.min_buy_rate)
      rep.warnings.push_back("buy rate " + percent(rep.rates.buy_rate) + " is below the " +
                             percent(a.prior.min_buy_rate) + " threshold");
    if (rep.rates.search_rate < a.prior.min_search_rate)
      rep.warnings.push_back("search rate " + percent(rep.rates.search_rate) + " is below the " +
                             percent(a.prior.min_search_rate) + " threshold");
  }
  Dims in_range = rep.dims;
  in_range.n = std::min(in_range.n, a.prior.n.max);
  rep.dims_out_of_range = !a.prior.dims_in_range(in_range);
  if (rep.dims_out_of_range)
    rep.warnings.push_back("panel dimensions lie outside the pretraining ranges");

  const Standardized full = standardize(raw);
  rep.warnings.insert(rep.warnings.end(), full.warnings.begin(), full.warnings.end());
  const auto splits = split_consumers(rep.dims.n, a.prior.n_cap_pretrain(), options.seed);
  rep.splits = static_cast<int>(splits.size());
  std::vector<PartEstimate> parts(splits.size());
  parallel_for(splits.size(), options.threads, [&](std::size_t p) {
    parts[p] = splits.size() == 1 ? estimate_part(raw, a)
                                  : estimate_part(select_consumers(raw, splits[p]), a);
  });
  std::vector<Theta> thetas;
  for (const auto& p : parts) {
    thetas.push_back(p.theta);
    for (const auto& d : p.m.degenerate)
      if (std::find(rep.degenerate_regressions.begin(), rep.degenerate_regressions.end(), d) ==
          rep.degenerate_regressions.end())
        rep.degenerate_regressions.push_back(d);
  }
  rep.theta_hat = average(thetas, rep.dims);
  rep.theta_hat_std = standardize_theta(rep.theta_hat, full.record);

  if (options.detect) {
    for (const auto& p : parts) {
      const DetectorResult d = detect_ill_suited(a, p.m);
      if (!d.available) break;
      if (!rep.detector.available || d.score > rep.detector.score) rep.detector = d;
      rep.detector.flag = rep.detector.flag || d.flag;
    }
    if (rep.detector.flag)
      rep.warnings.push_back("data patterns look unlike the training examples (net and tree "
                             "predictions disagree); the estimate may be unreliable");
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

BootstrapSummary bootstrap_se(const Dataset& raw, const EstimatorArtifact& a, int B,
                              std::uint64_t seed, const EstimateOptions& options) {
  if (B < 2) throw ValidationError("bootstrap needs at least 2 replicates");
  validate_panel(raw);
  const Dims dims = raw.dims();
  const bool allow_below = below(rates(raw.y), a.prior);
  const Standardized full = standardize(raw);
  constexpr int kMaxRetries = 10;
  std::vector<std::optional<Eigen::VectorXd>> draws(B);
  std::vector<int> retries(B, 0);
  parallel_for(static_cast<std::size_t>(B), options.threads, [&](std::size_t b) {
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
      Rng rng(derive_seed(seed, b, attempt));
      std::vector<int> pick(dims.n);
      for (auto& i : pick) i = static_cast<int>(rng() % static_cast<std::uint64_t>(dims.n));
      Dataset rep = select_consumers(raw, pick);
      try {
        if (!allow_below && below(rates(rep.y), a.prior))
          throw ValidationError("replicate below rate thresholds");
        draws[b] = point_estimate(rep, a, derive_seed(options.seed, b), 1).flatten();
        return;
      } catch (const ValidationError&) {
        ++retries[b];
      } catch (const DomainError&) {
        ++retries[b];
      }
    }
  });
  BootstrapSummary s;
  s.replicates = B;
  const int width = Theta::zeros(dims.d_prod, dims.d_cons, dims.d_ads).size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(width), mean_std = mean;
  std::vector<Eigen::VectorXd> orig, stdz;
  for (int b = 0; b < B; ++b) {
    s.retries += std::min(retries[b], kMaxRetries);
    if (!draws[b]) {
      ++s.failed;
      continue;
    }
    orig.push_back(*draws[b]);
    stdz.push_back(standardize_theta(Theta::unflatten(*draws[b], dims.d_prod, dims.d_cons,
                                                      dims.d_ads),
                                     full.record)
                       .flatten());
  }
  if (orig.size() < 2) throw Error("bootstrap: fewer than 2 replicates succeeded");
  auto sd = [&](const std::vector<Eigen::VectorXd>& v) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(width);
    for (const auto& x : v) m += x;
    m /= static_cast<double>(v.size());
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(width);
    for (const auto& x : v) ss += (x - m).array().square().matrix();
    return Eigen::VectorXd((ss / static_cast<double>(v.size() - 1)).array().sqrt());
  };
  s.se = sd(orig);
  s.se_std = sd(stdz);
  return s;
}

namespace {

nlohmann::json theta_json(const Eigen::VectorXd& flat, const Dims& dims, const AttributeNames& n) {
  const Theta t = Theta::unflatten(flat, dims.d_prod, dims.d_cons, dims.d_ads);
  auto block = [](const Eigen::VectorXd& v, const std::vector<std::string>& names) {
    nlohmann::json j = nlohmann::json::object();
    for (Eigen::Index k = 0; k < v.size(); ++k) j[names[k]] = v(k);
    return j;
  };
  return {{"beta", block(t.beta, n.prod)},
          {"eta", block(t.eta, n.cons)},
          {"alpha", block(t.alpha, n.ads)},
          {"eta0", t.eta0},
          {"alpha0", t.alpha0}};
}

}  // namespace

nlohmann::json report_json(const EstimateReport& r) {
  nlohmann::json j;
  j["format_version"] = EstimateReport::kFormatVersion;
  j["dims"] = {{"d_prod", r.dims.d_prod}, {"d_ads", r.dims.d_ads}, {"d_cons", r.dims.d_cons},
               {"J", r.dims.J}, {"n", r.dims.n}};
  j["theta_hat"] = theta_json(r.theta_hat.flatten(), r.dims, r.names);
  j["theta_hat_std"] = theta_json(r.theta_hat_std.flatten(), r.dims, r.names);
  if (r.bootstrap) {
    j["bootstrap"] = {{"replicates", r.bootstrap->replicates},
                      {"failed", r.bootstrap->failed},
                      {"retries", r.bootstrap->retries},
                      {"se", theta_json(r.bootstrap->se, r.dims, r.names)},
                      {"se_std", theta_json(r.bootstrap->se_std, r.dims, r.names)}};
  } else {
    j["bootstrap"] = nullptr;
  }
  j["splits"] = r.splits;
  j["rates"] = {{"buy_rate", r.rates.buy_rate},
                {"search_rate", r.rates.search_rate},
                {"mean_searches", r.rates.mean_searches}};
  j["below_threshold"] = r.below_threshold;
  j["dims_out_of_range"] = r.dims_out_of_range;
  if (r.detector.available)
    j["ill_suited"] = {{"flag", r.detector.flag},
                       {"score", r.detector.score},
                       {"threshold", r.detector.threshold}};
  else
    j["ill_suited"] = nullptr;
  j["warnings"] = r.warnings;
  j["degenerate_regressions"] = r.degenerate_regressions;
  j["seconds"] = r.seconds;
  return j;
}

}  // namespace search_nne
