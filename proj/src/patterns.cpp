#include "search_nne/patterns.hpp"

#include <cmath>
#include <cstdio>

#include "search_nne/error.hpp"
#include "search_nne/hash.hpp"
#include "search_nne/ridge.hpp"

namespace search_nne {

namespace {

std::string penalty_label(double penalty) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", penalty);
  return buf;
}

// Appends slots for a coefficient group {const, prod, ads, cons} or {const, cons}.
void add_coefficients(PatternLayout& layout, int item, const std::string& prefix,
                      bool product_terms) {
  const DimMaxima& m = layout.maxima;
  layout.slots.push_back({prefix + ".const", item, SlotBlock::kAlways, 0});
  if (product_terms) {
    for (int k = 0; k < m.prod; ++k)
      layout.slots.push_back({prefix + ".xp" + std::to_string(k + 1), item, SlotBlock::kProd, k});
    for (int k = 0; k < m.ads; ++k)
      layout.slots.push_back({prefix + ".xa" + std::to_string(k + 1), item, SlotBlock::kAds, k});
  }
  for (int k = 0; k < m.cons; ++k)
    layout.slots.push_back({prefix + ".xc" + std::to_string(k + 1), item, SlotBlock::kCons, k});
}

void add_block(PatternLayout& layout, int item, const std::string& prefix, SlotBlock block,
               int count) {
  for (int k = 0; k < count; ++k)
    layout.slots.push_back({prefix + std::to_string(k + 1), item, block, k});
}

}  // namespace

PatternLayout layout_for(const DimMaxima& maxima, const std::vector<double>& penalties) {
  if (maxima.prod < 1 || maxima.ads < 0 || maxima.cons < 0 || penalties.empty())
    throw ConfigError("layout_for: invalid maxima or penalty list");
  PatternLayout layout;
  layout.maxima = maxima;
  layout.penalties = penalties;
  auto& s = layout.slots;

  s.push_back({"buy_rate", 1, SlotBlock::kAlways, 0});
  s.push_back({"search_rate", 1, SlotBlock::kAlways, 0});
  s.push_back({"mean_searches", 1, SlotBlock::kAlways, 0});
  s.push_back({"log_n", 2, SlotBlock::kAlways, 0});
  s.push_back({"J_scaled", 2, SlotBlock::kAlways, 0});
  // The dimension dummies carry information in their zeros, so all are active.
  for (int k = 0; k < maxima.prod; ++k)
    s.push_back({"has_xp" + std::to_string(k + 1), 3, SlotBlock::kAlways, 0});
  for (int k = 0; k < maxima.ads; ++k)
    s.push_back({"has_xa" + std::to_string(k + 1), 3, SlotBlock::kAlways, 0});
  for (int k = 0; k < maxima.cons; ++k)
    s.push_back({"has_xc" + std::to_string(k + 1), 3, SlotBlock::kAlways, 0});

  for (double p : penalties)
    add_coefficients(layout, 4, "search_logit[" + penalty_label(p) + "]", true);
  for (double p : penalties)
    add_coefficients(layout, 5, "buy_mnl[" + penalty_label(p) + "]", true);
  for (double p : penalties)
    add_coefficients(layout, 6, "log_searches_ols[" + penalty_label(p) + "]", false);
  for (double p : penalties)
    add_coefficients(layout, 7, "nonfree_logit[" + penalty_label(p) + "]", false);
  for (double p : penalties)
    add_coefficients(layout, 8, "buy_logit[" + penalty_label(p) + "]", false);

  add_block(layout, 9, "sd_xbar_prod", SlotBlock::kProd, maxima.prod);
  add_block(layout, 9, "sd_xbar_ads", SlotBlock::kAds, maxima.ads);
  s.push_back({"mean_y_search", 9, SlotBlock::kAlways, 0});
  s.push_back({"sd_y_search", 9, SlotBlock::kAlways, 0});
  s.push_back({"mean_log_searches", 9, SlotBlock::kAlways, 0});
  s.push_back({"sd_log_searches", 9, SlotBlock::kAlways, 0});
  add_block(layout, 9, "searched_mean_xp", SlotBlock::kProd, maxima.prod);
  add_block(layout, 9, "searched_sd_xp", SlotBlock::kProd, maxima.prod);
  add_block(layout, 9, "searched_mean_xa", SlotBlock::kAds, maxima.ads);
  add_block(layout, 9, "searched_sd_xa", SlotBlock::kAds, maxima.ads);
  s.push_back({"searched_buy_share", 9, SlotBlock::kAlways, 0});
  return layout;
}

std::vector<std::uint8_t> PatternLayout::active_mask(const Dims& dims) const {
  std::vector<std::uint8_t> mask(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const PatternSlot& slot = slots[k];
    switch (slot.block) {
      case SlotBlock::kAlways: mask[k] = 1; break;
      case SlotBlock::kProd: mask[k] = slot.index < dims.d_prod; break;
      case SlotBlock::kAds: mask[k] = slot.index < dims.d_ads; break;
      case SlotBlock::kCons: mask[k] = slot.index < dims.d_cons; break;
    }
  }
  return mask;
}

std::uint64_t PatternLayout::hash() const {
  Fnv1a h;
  h.update("pattern-layout-v" + std::to_string(kVersion));
  h.update(std::to_string(maxima.prod) + "," + std::to_string(maxima.ads) + "," +
           std::to_string(maxima.cons));
  for (double p : penalties) h.update(penalty_label(p) + ";");
  for (const auto& slot : slots) {
    h.update(slot.name);
    h.update("|");
  }
  return h.digest();
}

ConsumerDerived consumer_derived(const Dataset& data) {
  const int n = data.x.n, J = data.x.J;
  ConsumerDerived d;
  d.xbar_prod.resize(n, data.x.prod.cols());
  d.xbar_ads.resize(n, data.x.ads.cols());
  d.n_search.resize(n);
  d.any_nonfree.resize(n);
  d.any_buy.resize(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::Index row0 = static_cast<Eigen::Index>(i) * J;
    d.xbar_prod.row(i) = data.x.prod.middleRows(row0, J).colwise().mean();
    d.xbar_ads.row(i) = data.x.ads.middleRows(row0, J).colwise().mean();
    int s = 0, b = 0;
    for (int j = 0; j < J; ++j) {
      s += data.y.search[row0 + j];
      b += data.y.buy[row0 + j];
    }
    d.n_search(i) = s;
    d.any_nonfree(i) = s > 1 ? 1.0 : 0.0;
    d.any_buy(i) = b > 0 ? 1.0 : 0.0;
  }
  return d;
}

namespace {

double population_sd(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().mean());
}

// Sequential writer that mirrors the slot order of layout_for.
class SlotWriter {
 public:
  SlotWriter(Eigen::VectorXd& values, const DimMaxima& maxima) : values_(values), maxima_(maxima) {}

  void put(double v) { values_(pos_++) = v; }

  /// Writes `count` leading values of `v` into a block of width `width`.
  void put_padded(const Eigen::Ref<const Eigen::VectorXd>& v, int width) {
    values_.segment(pos_, v.size()) = v;
    pos_ += width;
  }

  void skip(int width) { pos_ += width; }

  /// {const, prod, ads, cons} from a coefficient vector laid out the same way.
  void put_product_coefficients(const Eigen::VectorXd& coef, const Dims& d) {
    put(coef(0));
    put_padded(coef.segment(1, d.d_prod), maxima_.prod);
    put_padded(coef.segment(1 + d.d_prod, d.d_ads), maxima_.ads);
    put_padded(coef.segment(1 + d.d_prod + d.d_ads, d.d_cons), maxima_.cons);
  }

  /// {const, cons} from a coefficient vector starting with them.
  void put_consumer_coefficients(const Eigen::VectorXd& coef, const Dims& d) {
    put(coef(0));
    put_padded(coef.segment(1, d.d_cons), maxima_.cons);
  }

  int position() const { return pos_; }

 private:
  Eigen::VectorXd& values_;
  const DimMaxima& maxima_;
  int pos_ = 0;
};

}  // namespace

PatternVector compute_patterns(const Dataset& data, const PatternLayout& layout,
                               const PatternOptions& options) {
  const Dims d = data.dims();
  const DimMaxima& mx = layout.maxima;
  if (!mx.covers(d)) throw ContractViolation("compute_patterns: dimensions exceed layout maxima");
  if (data.y.n != d.n || data.y.J != d.J || !data.y.is_valid())
    throw ContractViolation("compute_patterns: outcomes do not form a valid panel");
  if (data.x.cons.rows() != d.n || data.x.prod.rows() != static_cast<Eigen::Index>(d.n) * d.J ||
      data.x.ads.rows() != static_cast<Eigen::Index>(d.n) * d.J)
    throw ContractViolation("compute_patterns: attribute block shapes disagree");

  const Rates r = rates(data.y);
  if (!options.allow_below_threshold &&
      (r.buy_rate < options.min_buy_rate || r.search_rate < options.min_search_rate))
    throw ValidationError("compute_patterns: buy or search rate below threshold");

  const int n = d.n, J = d.J;
  const Eigen::Index rows = static_cast<Eigen::Index>(n) * J;
  const ConsumerDerived cd = consumer_derived(data);

  PatternVector out;
  out.dims = d;
  out.layout_hash = layout.hash();
  out.values = Eigen::VectorXd::Zero(layout.total_length());
  out.active_mask = layout.active_mask(d);
  SlotWriter w(out.values, mx);

  // (1) rates, (2) size, (3) dimension dummies.
  w.put(r.buy_rate);
  w.put(r.search_rate);
  w.put(r.mean_searches);
  w.put(std::log(static_cast<double>(n)));
  w.put((J - 15.0) / 20.0);
  w.put_padded(Eigen::VectorXd::Ones(d.d_prod), mx.prod);
  w.put_padded(Eigen::VectorXd::Ones(d.d_ads), mx.ads);
  w.put_padded(Eigen::VectorXd::Ones(d.d_cons), mx.cons);

  // (4) product-level search logit with consumer-mean controls.
  {
    const int k = 1 + d.d_prod + d.d_ads + d.d_cons + d.d_prod + d.d_ads;
    Eigen::MatrixXd design(rows, k);
    Eigen::VectorXd y(rows);
    design.col(0).setOnes();
    design.middleCols(1, d.d_prod) = data.x.prod;
    design.middleCols(1 + d.d_prod, d.d_ads) = data.x.ads;
    const int c0 = 1 + d.d_prod + d.d_ads;
    auto broadcast = [&](int col, const Eigen::VectorXd& per_consumer) {
      double* out = design.col(col).data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < J; ++j) *out++ = per_consumer(i);
    };
    for (int k = 0; k < d.d_cons; ++k) broadcast(c0 + k, data.x.cons.col(k));
    for (int k = 0; k < d.d_prod; ++k) broadcast(c0 + d.d_cons + k, cd.xbar_prod.col(k));
    for (int k = 0; k < d.d_ads; ++k)
      broadcast(c0 + d.d_cons + d.d_prod + k, cd.xbar_ads.col(k));
    for (Eigen::Index r = 0; r < rows; ++r) y(r) = data.y.search[r];
    Eigen::VectorXd warm;
    for (double p : layout.penalties) {
      try {
        const RidgeFit fit = ridge_logit(design, y, p, warm.size() ? &warm : nullptr);
        warm = fit.coef;
        if (!fit.converged) out.degenerate.push_back("search_logit:not_converged");
        w.put_product_coefficients(fit.coef, d);
      } catch (const DegenerateResponse&) {
        out.degenerate.push_back("search_logit");
        w.skip(1 + mx.total());
      }
    }
  }

  // (5) conditional logit of the purchase among searched products.
  {
    ChoiceData choice;
    const int k = 1 + d.d_prod + d.d_ads + d.d_cons;
    long searched = 0;
    for (int i = 0; i < n; ++i) searched += cd.n_search(i);
    choice.features.resize(searched, k);
    choice.offsets.reserve(n + 1);
    choice.chosen.assign(n, -1);
    int row = 0;
    for (int i = 0; i < n; ++i) {
      choice.offsets.push_back(row);
      const Eigen::Index row0 = static_cast<Eigen::Index>(i) * J;
      for (int j = 0; j < J; ++j) {
        if (!data.y.search[row0 + j]) continue;
        choice.features(row, 0) = 1.0;
        choice.features.block(row, 1, 1, d.d_prod) = data.x.prod.row(row0 + j);
        choice.features.block(row, 1 + d.d_prod, 1, d.d_ads) = data.x.ads.row(row0 + j);
        choice.features.block(row, 1 + d.d_prod + d.d_ads, 1, d.d_cons) = data.x.cons.row(i);
        if (data.y.buy[row0 + j]) choice.chosen[i] = row;
        ++row;
      }
    }
    choice.offsets.push_back(row);
    Eigen::VectorXd warm;
    for (double p : layout.penalties) {
      try {
        const RidgeFit fit = ridge_mnl(choice, p, warm.size() ? &warm : nullptr);
        warm = fit.coef;
        if (!fit.converged) out.degenerate.push_back("buy_mnl:not_converged");
        w.put_product_coefficients(fit.coef, d);
      } catch (const DegenerateResponse&) {
        out.degenerate.push_back("buy_mnl");
        w.skip(1 + mx.total());
      }
    }
  }

  // (6)-(8) consumer-level regressions on {1, x_cons, xbar_ads, xbar_prod}.
  Eigen::MatrixXd consumer_design(n, 1 + d.d_cons + d.d_ads + d.d_prod);
  consumer_design.col(0).setOnes();
  consumer_design.middleCols(1, d.d_cons) = data.x.cons;
  consumer_design.middleCols(1 + d.d_cons, d.d_ads) = cd.xbar_ads;
  consumer_design.middleCols(1 + d.d_cons + d.d_ads, d.d_prod) = cd.xbar_prod;
  const Eigen::VectorXd log_searches = cd.n_search.cast<double>().array().log().matrix();

  for (double p : layout.penalties)
    w.put_consumer_coefficients(ridge_linear(consumer_design, log_searches, p), d);

  auto consumer_logit = [&](const Eigen::VectorXd& response, const char* name) {
    Eigen::VectorXd warm;
    for (double p : layout.penalties) {
      try {
        const RidgeFit fit =
            ridge_logit(consumer_design, response, p, warm.size() ? &warm : nullptr);
        warm = fit.coef;
        if (!fit.converged) out.degenerate.push_back(std::string(name) + ":not_converged");
        w.put_consumer_coefficients(fit.coef, d);
      } catch (const DegenerateResponse&) {
        out.degenerate.push_back(name);
        w.skip(1 + mx.cons);
      }
    }
  };
  consumer_logit(cd.any_nonfree, "nonfree_logit");
  consumer_logit(cd.any_buy, "buy_logit");

  // (9) moments not pinned down by standardization.
  for (int k = 0; k < d.d_prod; ++k) out.values(w.position() + k) = population_sd(cd.xbar_prod.col(k));
  w.skip(mx.prod);
  for (int k = 0; k < d.d_ads; ++k) out.values(w.position() + k) = population_sd(cd.xbar_ads.col(k));
  w.skip(mx.ads);
  const double mean_search = r.mean_searches / J;
  w.put(mean_search);
  w.put(std::sqrt(std::max(0.0, mean_search * (1.0 - mean_search))));
  w.put(log_searches.mean());
  w.put(population_sd(log_searches));

  long searched = 0, bought = 0;
  Eigen::VectorXd sum_p = Eigen::VectorXd::Zero(d.d_prod), sq_p = sum_p;
  Eigen::VectorXd sum_a = Eigen::VectorXd::Zero(d.d_ads), sq_a = sum_a;
  for (Eigen::Index row = 0; row < rows; ++row) {
    if (!data.y.search[row]) continue;
    ++searched;
    bought += data.y.buy[row];
    const auto xp = data.x.prod.row(row).transpose();
    const auto xa = data.x.ads.row(row).transpose();
    sum_p += xp;
    sq_p += xp.cwiseAbs2();
    sum_a += xa;
    sq_a += xa.cwiseAbs2();
  }
  const double inv = 1.0 / static_cast<double>(searched);
  const Eigen::VectorXd mean_p = sum_p * inv, mean_a = sum_a * inv;
  const Eigen::VectorXd sd_p = (sq_p * inv - mean_p.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  const Eigen::VectorXd sd_a = (sq_a * inv - mean_a.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  w.put_padded(mean_p, mx.prod);
  w.put_padded(sd_p, mx.prod);
  w.put_padded(mean_a, mx.ads);
  w.put_padded(sd_a, mx.ads);
  w.put(static_cast<double>(bought) * inv);

  if (w.position() != layout.total_length())
    throw ContractViolation("compute_patterns: writer and layout disagree");
  if (!out.values.allFinite()) throw DomainError("compute_patterns: non-finite pattern");
  return out;
}

}  // namespace search_nne
