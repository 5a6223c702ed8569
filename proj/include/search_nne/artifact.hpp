#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "search_nne/net.hpp"
#include "search_nne/patterns.hpp"
#include "search_nne/synth.hpp"
#include "search_nne/trees.hpp"

namespace search_nne {

/// Net-vs-tree disagreement scale and threshold fitted on held-out examples.
struct DetectorCalibration {
  /// Per padded output coordinate; 0 where no tree ensemble exists.
  std::vector<double> scale;
  double quantile = 0.995;
  double threshold = 0.0;
  std::size_t calibration_examples = 0;

  bool operator==(const DetectorCalibration&) const = default;
};

/// Everything needed to estimate on new data.
struct EstimatorArtifact {
  static constexpr std::uint32_t kFormatVersion = 1;

  NetSpec spec;
  TrainConfig train;
  Mlp<float> net;
  NormalizationStats stats;
  PatternLayout layout;
  PriorConfig prior;
  std::uint64_t prior_hash = 0;
  std::uint64_t seed = 0;
  GenerationStats generation;
  TrainingSummary summary;
  TreeConfig tree_config;
  TreeEnsemble trees;
  DetectorCalibration detector;

  /// Double-precision copy of `net` used for prediction; rebuilt by prepare().
  Mlp<double> net_double;
  void prepare() { net_double = net.cast<double>(); }
};

/// Container bytes: magic, version, JSON metadata, float32 weights, trees, hash.
std::string serialize_artifact(const EstimatorArtifact& artifact);
/// Throws CorruptArtifact or IncompatibleArtifact; never returns a partial artifact.
EstimatorArtifact deserialize_artifact(const std::string& bytes);
/// Writes atomically through a temporary file.
void save_artifact(const EstimatorArtifact& artifact, const std::string& path);
EstimatorArtifact load_artifact(const std::string& path);
/// JSON metadata section only, for inspection.
nlohmann::json artifact_metadata(const EstimatorArtifact& artifact);

/// Network output in padded layout. Throws IncompatibleArtifact when the
/// pattern layout or dimensions do not fit the artifact.
Eigen::VectorXd predict_padded(const EstimatorArtifact& artifact, const PatternVector& m);
/// Network output with idle coordinates discarded.
Theta predict(const EstimatorArtifact& artifact, const PatternVector& m);

struct DetectorResult {
  bool available = false;
  bool flag = false;
  double score = 0.0;
  double threshold = 0.0;
};

/// Root mean square of scaled net-minus-tree differences over active coordinates.
double disagreement_score(const EstimatorArtifact& artifact, const PatternVector& m);
DetectorResult detect_ill_suited(const EstimatorArtifact& artifact, const PatternVector& m);

struct PretrainConfig {
  PriorConfig prior;
  std::vector<double> penalties = kDefaultPenalties;
  std::size_t examples = 1000000;
  NetSpec net;
  TrainConfig train;
  TreeConfig trees;
  double detector_quantile = 0.995;
  std::uint64_t seed = 1;
  int threads = 0;

  void validate() const;
};

using ProgressLog = std::function<void(const std::string&)>;

/// Calibrates the detector on the trailing hold-out rows of `examples`.
DetectorCalibration calibrate_detector(const EstimatorArtifact& artifact,
                                       const TrainingSet& examples, std::size_t holdout,
                                       double quantile);

/// Generates examples (unless given), trains net and trees, calibrates the detector.
EstimatorArtifact pretrain(const PretrainConfig& cfg, const TrainingSet* examples = nullptr,
                           const ProgressLog& log = {}, const GeneratorHooks& hooks = {});

}  // namespace search_nne
