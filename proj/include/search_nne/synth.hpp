#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "search_nne/patterns.hpp"
#include "search_nne/rng.hpp"
#include "search_nne/search_model.hpp"

namespace search_nne {

struct DimRange {
  int min = 0;
  int max = 0;
  bool operator==(const DimRange&) const = default;
};

/// Priors over parameters and dataset shapes for pretraining.
struct PriorConfig {
  // Scale of the norm of each slope block; the norm's law does not depend on
  // the number of attributes in the block.
  double sigma_beta = 1.0;
  double sigma_eta = 1.0;
  double sigma_alpha = 1.0;
  double alpha0_mean = -4.5;
  double alpha0_sd = 1.5;
  double eta0_mean = 4.5;
  double eta0_sd = 1.5;

  DimRange d_prod{2, 8};
  DimRange d_ads{0, 2};
  DimRange d_cons{0, 5};
  DimRange J{15, 35};
  DimRange n{1000, 20000};  ///< n.max is the pretraining cap.

  double min_buy_rate = 0.005;
  double min_search_rate = 0.01;
  /// Truncate chi draws and intercepts at 6 prior standard deviations.
  bool trim_prior = false;

  int n_cap_pretrain() const { return n.max; }
  DimMaxima maxima() const { return {d_prod.max, d_ads.max, d_cons.max}; }
  bool dims_in_range(const Dims& dims) const;
  /// Throws ConfigError naming the first offending field.
  void validate() const;
  std::uint64_t hash() const;

  bool operator==(const PriorConfig&) const = default;
};

/// Uniform integer on [lo, hi].
int uniform_int(Rng& rng, int lo, int hi);

Dims draw_dims(const PriorConfig& prior, Rng& rng);

/// Slopes: sigma * chi_1 * (uniform unit vector); intercepts: normal.
Theta draw_theta(const Dims& dims, const PriorConfig& prior, Rng& rng);

enum class Marginal { kNormal, kDummy, kScale5, kSkewed };

/// How one synthetic attribute block is generated. Attribute order is
/// product, advertising, consumer.
struct AttributeRecipe {
  Eigen::MatrixXd correlation;
  /// Cross-consumer variance share of the latent normal; 1 for consumer attributes.
  std::vector<double> consumer_share;
  std::vector<Marginal> marginal;
  /// Dummy: quantile of the threshold. Skewed: exponent scale. Otherwise unused.
  std::vector<double> parameter;
  /// Quantile cut points of each 5-point scale attribute (ascending).
  std::vector<std::vector<double>> scale_cuts;
};

/// Random correlation D^-1/2 (A A' + eps I) D^-1/2 with A of random rank.
Eigen::MatrixXd draw_correlation(int d, Rng& rng);
AttributeRecipe draw_attribute_recipe(const Dims& dims, Rng& rng);
/// Latent correlated normals, consumer/product mixing, marginal transforms,
/// then pooled standardization of every attribute.
AttributeBlock synthesize_attributes(const Dims& dims, const AttributeRecipe& recipe, Rng& rng);
AttributeBlock draw_attributes(const Dims& dims, Rng& rng);

/// One (pattern, parameter) pair drawn from the joint prior-model distribution.
struct TrainingExample {
  Eigen::VectorXd theta_padded;
  std::vector<std::uint8_t> theta_mask;
  PatternVector m;
  Dims dims;
  Rates rates;
};

/// Replaces parts of the generator, e.g. to study a restricted parameter family.
struct GeneratorHooks {
  std::function<Dims(Rng&)> dims;
  std::function<Theta(const Dims&, Rng&)> theta;
  /// Which padded parameter slots enter the loss; defaults to the active ones.
  std::function<std::vector<std::uint8_t>(const Dims&)> target_mask;
};

struct GeneratorOptions {
  int threads = 1;
  double max_drop_rate = 0.95;
  GeneratorHooks hooks;
};

struct GenerationStats {
  std::uint64_t attempts = 0;
  std::uint64_t retained = 0;
  std::uint64_t dropped_rates = 0;
  std::uint64_t dropped_errors = 0;

  double drop_rate() const {
    return attempts ? 1.0 - static_cast<double>(retained) / attempts : 0.0;
  }
};

/// Attempt `index` of a generator seeded with `seed`: draws dims, theta and
/// attributes, simulates, and returns false if the panel is dropped.
bool generate_example(std::uint64_t seed, std::uint64_t index, const PriorConfig& prior,
                      const PatternLayout& layout, const GeneratorHooks& hooks,
                      TrainingExample& out);

/// Calls `sink` with exactly L retained examples in attempt order.
/// Throws ConfigError when the drop rate exceeds options.max_drop_rate.
GenerationStats for_each_training_example(std::size_t L, const PriorConfig& prior,
                                          const PatternLayout& layout, std::uint64_t seed,
                                          const std::function<void(TrainingExample&&)>& sink,
                                          const GeneratorOptions& options = {});

/// Dense float storage of examples, row-major.
struct TrainingSet {
  PatternLayout layout;
  PriorConfig prior;
  int input_width = 0;
  int output_width = 0;
  std::vector<float> inputs;
  std::vector<std::uint8_t> input_mask;
  std::vector<float> targets;
  std::vector<std::uint8_t> target_mask;
  std::vector<Dims> dims;
  GenerationStats stats;

  TrainingSet() = default;
  TrainingSet(const PatternLayout& layout_, const PriorConfig& prior_);

  std::size_t size() const { return dims.size(); }
  void reserve(std::size_t count);
  void append(const TrainingExample& example);
  const float* input_row(std::size_t i) const { return inputs.data() + i * input_width; }
  const float* target_row(std::size_t i) const { return targets.data() + i * output_width; }
  const std::uint8_t* target_mask_row(std::size_t i) const {
    return target_mask.data() + i * output_width;
  }
  /// Rows [begin, end) as a new set.
  TrainingSet slice(std::size_t begin, std::size_t end) const;
};

TrainingSet generate_training_set(std::size_t L, const PriorConfig& prior,
                                  const PatternLayout& layout, std::uint64_t seed,
                                  const GeneratorOptions& options = {});

/// Binary columnar file: header (format version, prior JSON, layout hash),
/// then fixed-width records. See docs/training_set_format.md.
void write_training_set(const TrainingSet& set, const std::string& path);
TrainingSet read_training_set(const std::string& path);

}  // namespace search_nne
