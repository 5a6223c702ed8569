#include "search_nne/artifact.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "search_nne/config.hpp"
#include "search_nne/hash.hpp"

namespace search_nne {

static_assert(std::endian::native == std::endian::little,
              "artifact format assumes a little-endian host");

void PretrainConfig::validate() const {
  prior.validate();
  if (penalties.empty()) throw ConfigError("pretrain.penalties: at least one penalty required");
  for (double p : penalties)
    if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("pretrain.penalties: must be positive");
  if (examples < 1000) throw ConfigError("pretrain.examples: at least 1000 required");
  train.validate();
  trees.validate();
  if (!(detector_quantile > 0.5 && detector_quantile < 1.0))
    throw ConfigError("pretrain.detector_quantile: must lie in (0.5, 1)");
}

namespace {

constexpr char kMagic[8] = {'S', 'N', 'N', 'E', 'A', 'R', 'T', '1'};

// Binary writer / reader over a byte string.
class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    bytes_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  void raw(void* p, std::size_t n) {
    if (n > end_ - pos_) throw CorruptArtifact("artifact: truncated payload");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

nlohmann::json stats_json(const NormalizationStats& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"lower", s.lower}, {"upper", s.upper}};
}

NormalizationStats stats_from(const nlohmann::json& j) {
  NormalizationStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.sd = j.at("sd").get<std::vector<double>>();
  s.lower = j.at("lower").get<std::vector<double>>();
  s.upper = j.at("upper").get<std::vector<double>>();
  return s;
}

nlohmann::json summary_json(const TrainingSummary& s) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : s.history)
    history.push_back({e.epoch, e.train_loss, e.validation_loss, e.learning_rate});
  return {{"train_loss", s.train_loss},
          {"validation_loss", s.validation_loss},
          {"validation_target_variance", s.validation_target_variance},
          {"epochs", s.epochs},
          {"best_epoch", s.best_epoch},
          {"training_examples", s.training_examples},
          {"validation_examples", s.validation_examples},
          {"seconds", s.seconds},
          {"history", history}};
}

TrainingSummary summary_from(const nlohmann::json& j) {
  TrainingSummary s;
  s.train_loss = j.at("train_loss");
  s.validation_loss = j.at("validation_loss");
  s.validation_target_variance = j.at("validation_target_variance");
  s.epochs = j.at("epochs");
  s.best_epoch = j.at("best_epoch");
  s.training_examples = j.at("training_examples");
  s.validation_examples = j.at("validation_examples");
  s.seconds = j.at("seconds");
  for (const auto& e : j.at("history"))
    s.history.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>(),
                         e.at(3).get<double>()});
  return s;
}

nlohmann::json layout_json(const PatternLayout& layout) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : layout.slots) slots.push_back(s.name);
  return {{"version", PatternLayout::kVersion},
          {"maxima", layout.maxima},
          {"penalties", layout.penalties},
          {"total_length", layout.total_length()},
          {"hash", layout.hash()},
          {"slots", slots}};
}

PatternLayout layout_from(const nlohmann::json& j) {
  if (j.at("version").get<int>() != PatternLayout::kVersion)
    throw IncompatibleArtifact("artifact: pattern layout version " +
                               std::to_string(j.at("version").get<int>()) + " is not supported");
  PatternLayout layout =
      layout_for(j.at("maxima").get<DimMaxima>(), j.at("penalties").get<std::vector<double>>());
  if (layout.hash() != j.at("hash").get<std::uint64_t>())
    throw IncompatibleArtifact("artifact: pattern layout hash mismatch");
  return layout;
}

void write_trees(Writer& w, const TreeEnsemble& t) {
  w.pod(static_cast<std::int32_t>(t.output_width));
  w.pod(t.validation_loss);
  w.pod(static_cast<std::int32_t>(t.coordinates.size()));
  for (const auto& c : t.coordinates) {
    w.pod(static_cast<std::int32_t>(c.output));
    w.pod(c.base);
    w.pod(static_cast<std::int32_t>(c.trees.size()));
    for (const auto& tree : c.trees) {
      w.pod(static_cast<std::int32_t>(tree.nodes.size()));
      for (const auto& n : tree.nodes) {
        w.pod(n.feature);
        w.pod(n.threshold);
        w.pod(n.left);
        w.pod(n.right);
        w.pod(n.value);
      }
    }
  }
}

std::int32_t count(Reader& r, std::int32_t limit, const char* what) {
  const auto n = r.pod<std::int32_t>();
  if (n < 0 || n > limit) throw CorruptArtifact(std::string("artifact: bad ") + what + " count");
  return n;
}

TreeEnsemble read_trees(Reader& r, int inputs) {
  TreeEnsemble t;
  t.output_width = count(r, 1 << 20, "output");
  t.validation_loss = r.pod<double>();
  t.coordinates.resize(count(r, t.output_width, "ensemble"));
  for (auto& c : t.coordinates) {
    c.output = r.pod<std::int32_t>();
    if (c.output < 0 || c.output >= t.output_width) throw CorruptArtifact("artifact: bad tree output");
    c.base = r.pod<double>();
    c.trees.resize(count(r, 1 << 24, "tree"));
    for (auto& tree : c.trees) {
      tree.nodes.resize(count(r, 1 << 24, "node"));
      const auto size = static_cast<std::int32_t>(tree.nodes.size());
      if (size == 0) throw CorruptArtifact("artifact: empty tree");
      for (auto& n : tree.nodes) {
        n.feature = r.pod<std::int32_t>();
        n.threshold = r.pod<float>();
        n.left = r.pod<std::int32_t>();
        n.right = r.pod<std::int32_t>();
        n.value = r.pod<float>();
        if (n.feature >= inputs || (n.feature >= 0 && (n.left <= 0 || n.left >= size ||
                                                       n.right <= 0 || n.right >= size)))
          throw CorruptArtifact("artifact: malformed tree node");
      }
    }
  }
  return t;
}

}  // namespace

nlohmann::json artifact_metadata(const EstimatorArtifact& a) {
  return {{"format_version", EstimatorArtifact::kFormatVersion},
          {"net", a.spec},
          {"train", a.train},
          {"normalization", stats_json(a.stats)},
          {"layout", layout_json(a.layout)},
          {"prior", a.prior},
          {"prior_hash", a.prior_hash},
          {"seed", a.seed},
          {"generation",
           {{"attempts", a.generation.attempts},
            {"retained", a.generation.retained},
            {"dropped_rates", a.generation.dropped_rates},
            {"dropped_errors", a.generation.dropped_errors}}},
          {"summary", summary_json(a.summary)},
          {"trees", a.tree_config},
          {"detector",
           {{"scale", a.detector.scale},
            {"quantile", a.detector.quantile},
            {"threshold", a.detector.threshold},
            {"calibration_examples", a.detector.calibration_examples}}},
          {"weight_count", a.net.parameter_count()}};
}

std::string serialize_artifact(const EstimatorArtifact& a) {
  if (a.net.layers() == 0) throw ContractViolation("serialize_artifact: empty network");
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod(EstimatorArtifact::kFormatVersion);
  const std::string meta = artifact_metadata(a).dump();
  w.pod(static_cast<std::uint64_t>(meta.size()));
  w.raw(meta.data(), meta.size());
  w.pod(static_cast<std::uint64_t>(a.net.parameter_count()));
  a.net.for_each_parameter([&](const float& p) { w.pod(p); });
  Writer trees;
  write_trees(trees, a.trees);
  w.pod(static_cast<std::uint64_t>(trees.bytes().size()));
  w.raw(trees.bytes().data(), trees.bytes().size());
  const std::uint64_t digest = fnv1a(w.bytes());
  w.pod(digest);
  return std::move(w.bytes());
}

EstimatorArtifact deserialize_artifact(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8) throw CorruptArtifact("artifact: file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CorruptArtifact("artifact: bad magic; not an estimator artifact");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  if (version != EstimatorArtifact::kFormatVersion)
    throw IncompatibleArtifact("artifact: format version " + std::to_string(version) +
                               " is not supported (expected " +
                               std::to_string(EstimatorArtifact::kFormatVersion) + ")");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (fnv1a(std::string_view(bytes.data(), body)) != stored)
    throw CorruptArtifact("artifact: checksum mismatch (truncated or modified file)");

  Reader r(bytes, body);
  char skip[sizeof kMagic + sizeof version];
  r.raw(skip, sizeof skip);
  const auto meta_size = r.pod<std::uint64_t>();
  if (meta_size > body) throw CorruptArtifact("artifact: bad metadata length");
  std::string meta(meta_size, '\0');
  r.raw(meta.data(), meta_size);

  EstimatorArtifact a;
  try {
    const nlohmann::json j = nlohmann::json::parse(meta);
    a.spec = j.at("net").get<NetSpec>();
    a.train = j.at("train").get<TrainConfig>();
    a.stats = stats_from(j.at("normalization"));
    a.layout = layout_from(j.at("layout"));
    a.prior = j.at("prior").get<PriorConfig>();
    a.prior_hash = j.at("prior_hash");
    a.seed = j.at("seed");
    const auto& g = j.at("generation");
    a.generation = {g.at("attempts"), g.at("retained"), g.at("dropped_rates"), g.at("dropped_errors")};
    a.summary = summary_from(j.at("summary"));
    a.tree_config = j.at("trees").get<TreeConfig>();
    const auto& d = j.at("detector");
    a.detector.scale = d.at("scale").get<std::vector<double>>();
    a.detector.quantile = d.at("quantile");
    a.detector.threshold = d.at("threshold");
    a.detector.calibration_examples = d.at("calibration_examples");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifact(std::string("artifact: bad metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptArtifact(std::string("artifact: bad metadata: ") + e.what());
  }
  a.spec.validate();
  if (a.spec.input_width != a.layout.total_length() ||
      a.spec.output_width != padded_theta_width(a.layout.maxima) ||
      a.stats.width() != a.spec.input_width)
    throw CorruptArtifact("artifact: network widths disagree with the layout");

  a.net = Mlp<float>::initialize(a.spec.widths(), 0);
  if (r.pod<std::uint64_t>() != a.net.parameter_count())
    throw CorruptArtifact("artifact: weight count disagrees with the architecture");
  a.net.for_each_parameter([&](float& p) { p = r.pod<float>(); });
  const auto tree_bytes = r.pod<std::uint64_t>();
  const std::size_t tree_start = r.position();
  a.trees = read_trees(r, a.spec.input_width);
  if (r.position() - tree_start != tree_bytes || r.position() != body)
    throw CorruptArtifact("artifact: trailing or missing tree bytes");
  if (!a.trees.empty() && a.trees.output_width != a.spec.output_width)
    throw CorruptArtifact("artifact: tree output width disagrees with the network");
  a.prepare();
  return a;
}

void save_artifact(const EstimatorArtifact& artifact, const std::string& path) {
  const std::string bytes = serialize_artifact(artifact);
  const std::string tmp = path + ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move artifact to " + path);
}

EstimatorArtifact load_artifact(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open artifact " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_artifact(ss.str());
}

namespace {

void check_compatible(const EstimatorArtifact& a, const PatternVector& m) {
  if (m.layout_hash != a.layout.hash() || m.values.size() != a.spec.input_width)
    throw IncompatibleArtifact("pattern layout does not match the artifact");
  if (!a.layout.maxima.covers(m.dims))
    throw IncompatibleArtifact("dataset dimensions exceed the artifact's padding capacity");
  if (a.net_double.layers() != a.net.layers())
    throw ContractViolation("artifact: prepare() was not called");
}

}  // namespace

Eigen::VectorXd predict_padded(const EstimatorArtifact& a, const PatternVector& m) {
  check_compatible(a, m);
  return net_forward(a.net_double, a.stats, m.values);
}

Theta predict(const EstimatorArtifact& a, const PatternVector& m) {
  return unpad_theta(predict_padded(a, m), m.dims, a.layout.maxima);
}

namespace {

double score_from(const DetectorCalibration& d, const Eigen::VectorXd& net,
                  const Eigen::VectorXd& tree, const std::vector<std::uint8_t>& mask) {
  double sum = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k] || !(d.scale[k] > 0.0)) continue;
    const double z = (net(k) - tree(k)) / d.scale[k];
    sum += z * z;
    ++used;
  }
  return used ? std::sqrt(sum / used) : 0.0;
}

}  // namespace

double disagreement_score(const EstimatorArtifact& a, const PatternVector& m) {
  if (a.trees.empty() || a.detector.scale.empty())
    throw ContractViolation("disagreement_score: artifact has no tree model");
  const Eigen::VectorXd net = predict_padded(a, m);
  const Eigen::VectorXd tree = a.trees.predict(m.values);
  return score_from(a.detector, net, tree, padded_theta_mask(m.dims, a.layout.maxima));
}

DetectorResult detect_ill_suited(const EstimatorArtifact& a, const PatternVector& m) {
  DetectorResult r;
  if (a.trees.empty() || a.detector.scale.empty()) return r;
  r.available = true;
  r.score = disagreement_score(a, m);
  r.threshold = a.detector.threshold;
  r.flag = r.score > r.threshold;
  return r;
}

DetectorCalibration calibrate_detector(const EstimatorArtifact& a, const TrainingSet& examples,
                                       std::size_t holdout, double quantile) {
  const std::size_t L = examples.size();
  const int width = examples.output_width;
  DetectorCalibration d;
  d.quantile = quantile;
  d.scale.assign(width, 0.0);
  std::vector<Eigen::VectorXd> diffs;
  diffs.reserve(holdout);
  std::vector<double> sum(width, 0.0), sum2(width, 0.0), cnt(width, 0.0);
  std::vector<bool> has_tree(width, false);
  for (const auto& c : a.trees.coordinates) has_tree[c.output] = true;
  for (std::size_t r = L - holdout; r < L; ++r) {
    const Eigen::Map<const Eigen::VectorXf> raw(examples.input_row(r), examples.input_width);
    const Eigen::VectorXd net = net_forward(a.net_double, a.stats, raw.cast<double>());
    diffs.push_back(net - a.trees.predict(examples.input_row(r)));
    const std::uint8_t* m = examples.target_mask_row(r);
    for (int k = 0; k < width; ++k) {
      if (!m[k] || !has_tree[k]) continue;
      sum[k] += diffs.back()(k);
      sum2[k] += diffs.back()(k) * diffs.back()(k);
      cnt[k] += 1.0;
    }
  }
  for (int k = 0; k < width; ++k) {
    if (cnt[k] < 2.0) continue;
    const double mean = sum[k] / cnt[k];
    const double var = std::max(0.0, sum2[k] / cnt[k] - mean * mean);
    d.scale[k] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1e-12;
  }
  std::vector<double> scores;
  scores.reserve(holdout);
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    const std::size_t r = L - holdout + i;
    const std::vector<std::uint8_t> mask(examples.target_mask_row(r),
                                         examples.target_mask_row(r) + width);
    scores.push_back(score_from(d, diffs[i], Eigen::VectorXd::Zero(width), mask));
  }
  if (!scores.empty()) {
    const auto pos = static_cast<std::size_t>(
        std::ceil(quantile * static_cast<double>(scores.size())) - 1.0);
    std::nth_element(scores.begin(), scores.begin() + pos, scores.end());
    d.threshold = scores[pos];
  }
  d.calibration_examples = scores.size();
  return d;
}

EstimatorArtifact pretrain(const PretrainConfig& cfg, const TrainingSet* examples,
                           const ProgressLog& log, const GeneratorHooks& hooks) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const PatternLayout layout = layout_for(cfg.prior.maxima(), cfg.penalties);
  TrainingSet generated;
  if (!examples) {
    const auto t0 = std::chrono::steady_clock::now();
    GeneratorOptions opts;
    opts.threads = cfg.threads;
    opts.hooks = hooks;
    generated = generate_training_set(cfg.examples, cfg.prior, layout, cfg.seed, opts);
    examples = &generated;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[200];
    std::snprintf(buf, sizeof buf, "generated %zu examples in %.1f s; drop rate %.3f", generated.size(), s,
                  generated.stats.drop_rate());
    say(buf);
  } else if (examples->layout.hash() != layout.hash() || !(examples->prior == cfg.prior)) {
    throw ConfigError("pretrain: supplied training set was generated under a different configuration");
  }

  EstimatorArtifact a;
  a.layout = layout;
  a.prior = cfg.prior;
  a.prior_hash = cfg.prior.hash();
  a.seed = cfg.seed;
  a.generation = examples->stats;
  a.train = cfg.train;
  if (a.train.threads == 0) a.train.threads = cfg.threads;
  TrainedNet tn = train_net(*examples, cfg.net, a.train);
  a.spec = tn.spec;
  a.net = std::move(tn.net);
  a.stats = std::move(tn.stats);
  a.summary = std::move(tn.summary);
  a.prepare();
  {
    char buf[200];
    std::snprintf(buf, sizeof buf, "net: %d epochs (best %d), validation loss %.5f, target variance %.5f",
                  a.summary.epochs, a.summary.best_epoch, a.summary.validation_loss,
                  a.summary.validation_target_variance);
    say(buf);
  }
  a.tree_config = cfg.trees;
  if (a.tree_config.threads == 0) a.tree_config.threads = cfg.threads;
  const std::size_t holdout = a.summary.validation_examples;
  a.trees = train_trees(*examples, holdout, a.tree_config);
  a.detector = calibrate_detector(a, *examples, holdout, cfg.detector_quantile);
  {
    char buf[200];
    std::snprintf(buf, sizeof buf, "trees: validation loss %.5f; detector threshold %.4f",
                  a.trees.validation_loss, a.detector.threshold);
    say(buf);
  }
  return a;
}

}  // namespace search_nne
