#include "search_nne/trees.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "search_nne/error.hpp"
#include "search_nne/parallel.hpp"

namespace search_nne {

void TreeConfig::validate() const {
  if (rounds < 1 || max_depth < 1 || min_leaf < 1 || bins < 2 || bins > 256)
    throw ConfigError("trees: invalid sizes");
  if (!(learning_rate > 0.0) || !(subsample > 0.0 && subsample <= 1.0) || !(l2 >= 0.0))
    throw ConfigError("trees: invalid learning rate, subsample or l2");
  if (binning_rows < 2) throw ConfigError("trees: binning_rows must be at least 2");
}

double RegressionTree::predict(const float* x) const {
  std::int32_t i = 0;
  while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].value;
}

double CoordinateEnsemble::predict(const float* x) const {
  double f = base;
  for (const auto& t : trees) f += t.predict(x);
  return f;
}

Eigen::VectorXd TreeEnsemble::predict(const float* raw) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(output_width);
  for (const auto& c : coordinates) out(c.output) = c.predict(raw);
  return out;
}

Eigen::VectorXd TreeEnsemble::predict(const Eigen::VectorXd& raw) const {
  const Eigen::VectorXf x = raw.cast<float>();
  return predict(x.data());
}

namespace {

struct Binned {
  int features = 0;
  std::vector<std::vector<float>> cuts;  ///< Ascending; bin b holds x <= cuts[b].
  std::vector<std::uint8_t> codes;       ///< Row-major rows x features.

  std::uint8_t code(int f, float x) const {
    const auto& c = cuts[f];
    return static_cast<std::uint8_t>(std::lower_bound(c.begin(), c.end(), x) - c.begin());
  }
};

Binned bin_inputs(const TrainingSet& set, std::size_t rows, const TreeConfig& cfg) {
  Binned b;
  b.features = set.input_width;
  b.cuts.resize(b.features);
  const std::size_t sample = std::min(rows, cfg.binning_rows);
  std::vector<float> column(sample);
  for (int f = 0; f < b.features; ++f) {
    for (std::size_t r = 0; r < sample; ++r) column[r] = set.input_row(r)[f];
    std::sort(column.begin(), column.end());
    column.erase(std::unique(column.begin(), column.end()), column.end());
    auto& cuts = b.cuts[f];
    if (static_cast<int>(column.size()) <= cfg.bins) {
      cuts.assign(column.begin(), column.end());
    } else {
      for (int q = 1; q < cfg.bins; ++q) {
        const auto pos = static_cast<std::size_t>(
            std::floor(static_cast<double>(q) * (column.size() - 1) / cfg.bins));
        if (cuts.empty() || column[pos] > cuts.back()) cuts.push_back(column[pos]);
      }
    }
    // The last cut is an upper bound for the sample; larger values share its bin.
    if (!cuts.empty()) cuts.pop_back();
    column.resize(sample);
  }
  b.codes.resize(rows * b.features);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = set.input_row(r);
    for (int f = 0; f < b.features; ++f) b.codes[r * b.features + f] = b.code(f, x[f]);
  }
  return b;
}

struct Split {
  int feature = -1;
  int bin = -1;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Binned& data, const TreeConfig& cfg) : data_(data), cfg_(cfg) {
    const std::size_t cells = static_cast<std::size_t>(data.features) * cfg.bins;
    sum_.resize(cells);
    cnt_.resize(cells);
  }

  /// Fits residuals `g` (indexed by row) over `rows`; leaf values include the learning rate.
  RegressionTree build(std::vector<std::size_t>& rows, const std::vector<double>& g) {
    RegressionTree tree;
    tree.nodes.emplace_back();
    grow(tree, 0, rows.begin(), rows.end(), g, 0);
    return tree;
  }

  /// Prediction on binned row r, matching RegressionTree::predict on raw values.
  static double predict_binned(const RegressionTree& tree, const std::vector<int>& split_bins,
                               const std::uint8_t* codes) {
    std::int32_t i = 0;
    while (tree.nodes[i].feature >= 0)
      i = codes[tree.nodes[i].feature] <= split_bins[i] ? tree.nodes[i].left : tree.nodes[i].right;
    return tree.nodes[i].value;
  }

  std::vector<int> split_bins;  ///< Per node of the last built tree.

 private:
  using Iter = std::vector<std::size_t>::iterator;

  void grow(RegressionTree& tree, std::size_t node, Iter begin, Iter end,
            const std::vector<double>& g, int depth) {
    const auto count = static_cast<double>(end - begin);
    double total = 0.0;
    for (Iter it = begin; it != end; ++it) total += g[*it];
    if (split_bins.size() < tree.nodes.size()) split_bins.resize(tree.nodes.size(), -1);
    Split best;
    if (depth < cfg_.max_depth && count >= 2.0 * cfg_.min_leaf) best = find_split(begin, end, g, total, count);
    if (best.feature < 0) {
      tree.nodes[node].value = static_cast<float>(cfg_.learning_rate * total / (count + cfg_.l2));
      return;
    }
    const int f = best.feature, b = best.bin;
    const Iter mid = std::stable_partition(begin, end, [&](std::size_t r) {
      return data_.codes[r * data_.features + f] <= b;
    });
    tree.nodes[node].feature = f;
    tree.nodes[node].threshold = data_.cuts[f][b];
    const auto left = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    tree.nodes[node].left = left;
    tree.nodes[node].right = left + 1;
    split_bins.resize(tree.nodes.size(), -1);
    split_bins[node] = b;
    grow(tree, left, begin, mid, g, depth + 1);
    grow(tree, left + 1, mid, end, g, depth + 1);
  }

  Split find_split(Iter begin, Iter end, const std::vector<double>& g, double total, double count) {
    const int F = data_.features, B = cfg_.bins;
    std::fill(sum_.begin(), sum_.end(), 0.0);
    std::fill(cnt_.begin(), cnt_.end(), 0);
    for (Iter it = begin; it != end; ++it) {
      const std::uint8_t* codes = &data_.codes[*it * F];
      const double gr = g[*it];
      for (int f = 0; f < F; ++f) {
        const std::size_t cell = static_cast<std::size_t>(f) * B + codes[f];
        sum_[cell] += gr;
        ++cnt_[cell];
      }
    }
    const double lambda = cfg_.l2;
    const double parent = total * total / (count + lambda);
    Split best;
    for (int f = 0; f < F; ++f) {
      const int nb = static_cast<int>(data_.cuts[f].size());  // last usable split bin is nb - 1
      double sl = 0.0;
      long cl = 0;
      for (int b = 0; b < nb; ++b) {
        sl += sum_[static_cast<std::size_t>(f) * B + b];
        cl += cnt_[static_cast<std::size_t>(f) * B + b];
        const double cr = count - cl;
        if (cl < cfg_.min_leaf) continue;
        if (cr < cfg_.min_leaf) break;
        const double sr = total - sl;
        const double gain = sl * sl / (cl + lambda) + sr * sr / (cr + lambda) - parent;
        if (gain > best.gain + 1e-12) best = {f, b, gain};
      }
    }
    return best;
  }

  const Binned& data_;
  const TreeConfig& cfg_;
  std::vector<double> sum_;
  std::vector<long> cnt_;
};

}  // namespace

TreeEnsemble train_trees(const TrainingSet& examples, std::size_t holdout, const TreeConfig& cfg) {
  cfg.validate();
  const std::size_t L = examples.size();
  if (holdout >= L) throw ContractViolation("train_trees: hold-out leaves no training data");
  const std::size_t ntrain = L - holdout;
  const Binned data = bin_inputs(examples, ntrain, cfg);
  const int width = examples.output_width;

  std::vector<int> active;
  for (int k = 0; k < width; ++k)
    for (std::size_t r = 0; r < ntrain; ++r)
      if (examples.target_mask_row(r)[k]) {
        active.push_back(k);
        break;
      }

  TreeEnsemble out;
  out.output_width = width;
  out.coordinates.resize(active.size());
  parallel_for(active.size(), resolve_threads(cfg.threads), [&](std::size_t a) {
    const int k = active[a];
    CoordinateEnsemble& ens = out.coordinates[a];
    ens.output = k;
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < ntrain; ++r)
      if (examples.target_mask_row(r)[k]) rows.push_back(r);
    std::vector<double> y(ntrain, 0.0), f(ntrain, 0.0), g(ntrain, 0.0);
    double mean = 0.0;
    for (std::size_t r : rows) {
      y[r] = examples.target_row(r)[k];
      mean += y[r];
    }
    mean /= static_cast<double>(rows.size());
    ens.base = mean;
    for (std::size_t r : rows) f[r] = mean;

    TreeBuilder builder(data, cfg);
    const auto take = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.subsample * static_cast<double>(rows.size()))));
    std::vector<std::size_t> pool = rows, sample;
    for (int round = 0; round < cfg.rounds; ++round) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(round)));
      for (std::size_t i = 0; i < take && i + 1 < pool.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * (pool.size() - i));
        std::swap(pool[i], pool[std::min(j, pool.size() - 1)]);
      }
      sample.assign(pool.begin(), pool.begin() + take);
      std::sort(sample.begin(), sample.end());
      for (std::size_t r : sample) g[r] = y[r] - f[r];
      builder.split_bins.clear();
      RegressionTree tree = builder.build(sample, g);
      for (std::size_t r : rows)
        f[r] += TreeBuilder::predict_binned(tree, builder.split_bins,
                                            &data.codes[r * data.features]);
      ens.trees.push_back(std::move(tree));
    }
  });

  double sq = 0.0, count = 0.0;
  for (std::size_t r = ntrain; r < L; ++r) {
    const Eigen::VectorXd p = out.predict(examples.input_row(r));
    const float* t = examples.target_row(r);
    const std::uint8_t* m = examples.target_mask_row(r);
    for (int k = 0; k < width; ++k) {
      if (!m[k]) continue;
      sq += (p(k) - t[k]) * (p(k) - t[k]);
      count += 1.0;
    }
  }
  out.validation_loss = count > 0.0 ? sq / count : 0.0;
  return out;
}

}  // namespace search_nne
