#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "search_nne/synth.hpp"

namespace search_nne {

struct TreeConfig {
  int rounds = 200;
  int max_depth = 5;
  double learning_rate = 0.1;
  /// Share of rows drawn without replacement for each tree.
  double subsample = 0.5;
  int min_leaf = 20;
  int bins = 64;
  double l2 = 1.0;
  /// Rows used to choose bin edges.
  std::size_t binning_rows = 50000;
  std::uint64_t seed = 1;
  int threads = 0;

  void validate() const;
  bool operator==(const TreeConfig&) const = default;
};

struct TreeNode {
  std::int32_t feature = -1;  ///< -1 marks a leaf.
  float threshold = 0.0f;     ///< Go left when x <= threshold.
  std::int32_t left = -1;
  std::int32_t right = -1;
  float value = 0.0f;  ///< Leaf output, already scaled by the learning rate.

  bool operator==(const TreeNode&) const = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  ///< Root at index 0.

  double predict(const float* x) const;
  bool operator==(const RegressionTree&) const = default;
};

/// Boosted trees for one padded output coordinate.
struct CoordinateEnsemble {
  int output = 0;
  double base = 0.0;
  std::vector<RegressionTree> trees;

  double predict(const float* x) const;
  bool operator==(const CoordinateEnsemble&) const = default;
};

/// One ensemble per output coordinate that is active in the training data.
/// Inputs are raw (unnormalized) pattern values.
struct TreeEnsemble {
  int output_width = 0;
  std::vector<CoordinateEnsemble> coordinates;
  double validation_loss = 0.0;

  bool empty() const { return coordinates.empty(); }
  /// Padded prediction; coordinates without an ensemble are 0.
  Eigen::VectorXd predict(const Eigen::VectorXd& raw) const;
  Eigen::VectorXd predict(const float* raw) const;
  bool operator==(const TreeEnsemble&) const = default;
};

/// Fits on the leading examples; the trailing `holdout` rows give the
/// recorded masked validation loss.
TreeEnsemble train_trees(const TrainingSet& examples, std::size_t holdout, const TreeConfig& cfg);

}  // namespace search_nne
