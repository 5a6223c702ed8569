#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "search_nne/search_model.hpp"

namespace search_nne {

/// Which attribute count switches a pattern slot on.
enum class SlotBlock { kAlways, kProd, kAds, kCons };

struct PatternSlot {
  std::string name;
  int item = 0;  ///< Pattern group 1..9 (rates, size, dummies, regressions, moments).
  SlotBlock block = SlotBlock::kAlways;
  int index = 0;  ///< Attribute index within `block`; active when index < count.
};

/// Ordered slot list of the padded pattern vector. A pure function of the
/// attribute maxima and penalty levels.
struct PatternLayout {
  static constexpr int kVersion = 1;

  DimMaxima maxima;
  std::vector<double> penalties;
  std::vector<PatternSlot> slots;

  int total_length() const { return static_cast<int>(slots.size()); }
  std::vector<std::uint8_t> active_mask(const Dims& dims) const;
  std::uint64_t hash() const;
};

/// Default ridge penalty levels; each regression is fit at every level.
inline const std::vector<double> kDefaultPenalties{1e-3, 1e-6};

PatternLayout layout_for(const DimMaxima& maxima,
                         const std::vector<double>& penalties = kDefaultPenalties);

struct PatternVector {
  Eigen::VectorXd values;
  std::vector<std::uint8_t> active_mask;
  Dims dims;
  std::uint64_t layout_hash = 0;
  /// Sub-regressions that were degenerate and zero-filled.
  std::vector<std::string> degenerate;
};

/// Per-consumer aggregates used by the consumer-level regressions.
struct ConsumerDerived {
  Eigen::MatrixXd xbar_prod;  ///< n x d_prod
  Eigen::MatrixXd xbar_ads;   ///< n x d_ads
  Eigen::VectorXi n_search;
  Eigen::VectorXd any_nonfree;
  Eigen::VectorXd any_buy;
};

ConsumerDerived consumer_derived(const Dataset& data);

struct PatternOptions {
  double min_buy_rate = 0.005;
  double min_search_rate = 0.01;
  /// Compute patterns even when the rate thresholds fail.
  bool allow_below_threshold = false;
};

/// Maps a standardized dataset to its padded pattern vector.
PatternVector compute_patterns(const Dataset& data, const PatternLayout& layout,
                               const PatternOptions& options = {});

}  // namespace search_nne
