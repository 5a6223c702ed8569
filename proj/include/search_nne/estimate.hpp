#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "search_nne/artifact.hpp"
#include "search_nne/search_model.hpp"

namespace search_nne {

/// Pooled mean and population sd of every attribute, with names.
struct StandardizationRecord {
  AttributeNames names;
  Eigen::VectorXd mean_prod, sd_prod;
  Eigen::VectorXd mean_ads, sd_ads;
  Eigen::VectorXd mean_cons, sd_cons;

  /// Mean 0 and sd 1 for every attribute of `dims`.
  static StandardizationRecord identity(const Dims& dims);
};

struct Standardized {
  Dataset data;
  StandardizationRecord record;
  std::vector<std::string> warnings;
};

/// Product and advertising attributes pooled over (i, j); consumer attributes
/// over i. Throws ValidationError naming any zero-variance attribute.
Standardized standardize(const Dataset& raw);

/// Maps a parameter for standardized attributes to original attribute units.
Theta rescale_theta(const Theta& theta_std, const StandardizationRecord& rec);
/// Inverse of rescale_theta.
Theta standardize_theta(const Theta& theta_orig, const StandardizationRecord& rec);

/// Panel restricted to the listed consumers, in the listed order (repeats allowed).
Dataset select_consumers(const Dataset& data, const std::vector<int>& consumers);

struct EstimateOptions {
  /// Run the net-vs-tree detector on the full-panel patterns.
  bool detect = true;
  /// Suppress rate-threshold warnings.
  bool force = false;
  /// Seeds the consumer shuffle of split-and-average.
  std::uint64_t seed = 1;
  int threads = 1;
};

struct BootstrapSummary {
  int replicates = 0;
  int failed = 0;    ///< Replicates that exhausted their retries.
  int retries = 0;   ///< Resamples discarded and redrawn.
  Eigen::VectorXd se;      ///< Original units, flat Theta order.
  Eigen::VectorXd se_std;  ///< Standardized units.
};

struct EstimateReport {
  static constexpr int kFormatVersion = 1;

  Dims dims;
  AttributeNames names;
  Theta theta_hat;      ///< Original attribute units.
  Theta theta_hat_std;  ///< Standardized attribute units.
  int splits = 1;
  Rates rates;
  bool below_threshold = false;
  bool dims_out_of_range = false;
  DetectorResult detector;
  std::optional<BootstrapSummary> bootstrap;
  std::vector<std::string> warnings;
  std::vector<std::string> degenerate_regressions;
  double seconds = 0.0;
};

/// standardize, compute_patterns, predict, rescale; splits panels larger than
/// the pretraining cap into near-equal consumer blocks and averages.
EstimateReport estimate(const Dataset& raw, const EstimatorArtifact& artifact,
                        const EstimateOptions& options = {});

/// Consumer-resampling bootstrap of `estimate` without detection.
BootstrapSummary bootstrap_se(const Dataset& raw, const EstimatorArtifact& artifact, int B,
                              std::uint64_t seed, const EstimateOptions& options = {});

nlohmann::json report_json(const EstimateReport& report);

}  // namespace search_nne
