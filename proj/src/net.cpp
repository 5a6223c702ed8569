#include "search_nne/net.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "search_nne/parallel.hpp"

namespace search_nne {

std::vector<int> NetSpec::widths() const {
  std::vector<int> w{input_width};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output_width);
  return w;
}

void NetSpec::validate() const {
  if (input_width < 1 || output_width < 1) throw ConfigError("net: widths must be positive");
  for (int h : hidden)
    if (h < 1) throw ConfigError("net: hidden widths must be positive");
}

void TrainConfig::validate() const {
  if (holdout_max < 1 || !(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw ConfigError("train: invalid hold-out settings");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0) || !(lr_decay > 0.0 && lr_decay < 1.0) || !(min_learning_rate > 0.0))
    throw ConfigError("train: invalid learning-rate schedule");
  if (plateau_epochs < 1 || patience < 1 || max_epochs < 1)
    throw ConfigError("train: epoch counts must be positive");
}

NormalizationStats NormalizationStats::fit(const float* data, std::size_t rows, int width,
                                           bool winsorize, double lower_quantile,
                                           double upper_quantile) {
  if (rows == 0) throw ContractViolation("NormalizationStats::fit: no rows");
  NormalizationStats s;
  s.mean.assign(width, 0.0);
  s.sd.assign(width, 1.0);
  std::vector<double> column(rows);
  if (winsorize) {
    s.lower.resize(width);
    s.upper.resize(width);
  }
  for (int k = 0; k < width; ++k) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = data[r * width + k];
    if (winsorize) {
      auto at = [&](double q) {
        const auto pos = static_cast<std::size_t>(std::floor(q * static_cast<double>(rows - 1)));
        std::nth_element(column.begin(), column.begin() + pos, column.end());
        return column[pos];
      };
      s.lower[k] = at(lower_quantile);
      s.upper[k] = at(upper_quantile);
      for (double& v : column) v = std::clamp(v, s.lower[k], s.upper[k]);
    }
    const double mean = std::accumulate(column.begin(), column.end(), 0.0) / rows;
    double ss = 0.0;
    for (double v : column) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / rows);
    s.mean[k] = mean;
    s.sd[k] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

double NormalizationStats::transform(int slot, double raw) const {
  if (winsorizes()) raw = std::clamp(raw, lower[slot], upper[slot]);
  return (raw - mean[slot]) / sd[slot];
}

NormalizedInput NormalizationStats::apply(const Eigen::VectorXd& raw) const {
  if (raw.size() != width()) throw ContractViolation("normalize: width mismatch");
  Eigen::VectorXd out(raw.size());
  for (int k = 0; k < width(); ++k) out(k) = transform(k, raw(k));
  return NormalizedInput(std::move(out));
}

void NormalizationStats::apply_row(const float* raw, float* out) const {
  for (int k = 0; k < width(); ++k) out[k] = static_cast<float>(transform(k, raw[k]));
}

std::size_t holdout_count(std::size_t L, const TrainConfig& cfg) {
  const auto fraction =
      static_cast<std::size_t>(std::ceil(cfg.holdout_fraction * static_cast<double>(L)));
  return std::max<std::size_t>(1, std::min(cfg.holdout_max, fraction));
}

namespace {

using MatrixF = Mlp<float>::Matrix;

struct Adam {
  std::vector<float> m, v;
  long step = 0;

  explicit Adam(std::size_t size) : m(size, 0.0f), v(size, 0.0f) {}

  void update(Mlp<float>& net, const MlpGradient<float>& grad, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    std::vector<float*> params;
    params.reserve(m.size());
    net.for_each_parameter([&](float& p) { params.push_back(&p); });
    std::size_t i = 0;
    grad.for_each_parameter([&](const float& g) {
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      *params[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
      ++i;
    });
  }
};

// Column-major copies of normalized inputs, targets and masks.
struct Columns {
  MatrixF x, t, m;
};

Columns gather(const TrainingSet& set, const NormalizationStats& stats, std::size_t begin,
               std::size_t end) {
  Columns c;
  const auto count = static_cast<Eigen::Index>(end - begin);
  c.x.resize(set.input_width, count);
  c.t.resize(set.output_width, count);
  c.m.resize(set.output_width, count);
  for (std::size_t i = begin; i < end; ++i) {
    const auto col = static_cast<Eigen::Index>(i - begin);
    stats.apply_row(set.input_row(i), c.x.col(col).data());
    const float* t = set.target_row(i);
    const std::uint8_t* m = set.target_mask_row(i);
    for (int k = 0; k < set.output_width; ++k) {
      c.t(k, col) = t[k];
      c.m(k, col) = m[k] ? 1.0f : 0.0f;
    }
  }
  return c;
}

// Masked squared-error sum and mask count over a column block.
std::pair<double, double> sse(const Mlp<float>& net, const Columns& data, int batch) {
  double total = 0.0, count = 0.0;
  for (Eigen::Index b = 0; b < data.x.cols(); b += batch) {
    const Eigen::Index w = std::min<Eigen::Index>(batch, data.x.cols() - b);
    const MatrixF f = net.forward(data.x.middleCols(b, w));
    const MatrixF mask = data.m.middleCols(b, w);
    total += ((f - data.t.middleCols(b, w)).cwiseProduct(mask)).cwiseAbs2().cast<double>().sum();
    count += mask.cast<double>().sum();
  }
  return {total, count};
}

}  // namespace

Eigen::VectorXd net_forward(const Mlp<double>& net, const NormalizationStats& stats,
                            const Eigen::VectorXd& raw) {
  const NormalizedInput in = stats.apply(raw);
  return net.forward(in.values());
}

TrainedNet train_net(const TrainingSet& examples, NetSpec spec, const TrainConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::size_t L = examples.size();
  if (L < 2) throw ContractViolation("train_net: need at least two examples");
  if (spec.input_width == 0) spec.input_width = examples.input_width;
  if (spec.output_width == 0) spec.output_width = examples.output_width;
  if (spec.input_width != examples.input_width || spec.output_width != examples.output_width)
    throw ContractViolation("train_net: network widths do not match the training set");
  spec.validate();

  const std::size_t holdout = holdout_count(L, cfg);
  if (holdout >= L) throw ContractViolation("train_net: hold-out leaves no training data");
  const std::size_t ntrain = L - holdout;

  TrainedNet out;
  out.spec = spec;
  out.stats = NormalizationStats::fit(examples.inputs.data(), ntrain, examples.input_width,
                                      cfg.winsorize);
  const Columns train = gather(examples, out.stats, 0, ntrain);
  const Columns valid = gather(examples, out.stats, ntrain, L);

  Mlp<float> net = Mlp<float>::initialize(spec.widths(), spec.seed);
  Mlp<float> best = net;
  Adam adam(net.parameter_count());
  const int threads = resolve_threads(cfg.threads);
  const int batch = cfg.batch_size;

  double lr = cfg.learning_rate;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0, since_decay = 0;
  std::vector<Eigen::Index> order(ntrain);
  std::iota(order.begin(), order.end(), 0);
  MatrixF xb, tb, mb;
  MlpGradient<float> grad;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double train_sse = 0.0, train_count = 0.0;
    for (std::size_t b = 0; b < ntrain; b += batch) {
      const std::size_t w = std::min<std::size_t>(batch, ntrain - b);
      const std::vector<Eigen::Index> idx(order.begin() + b, order.begin() + b + w);
      xb = train.x(Eigen::all, idx);
      tb = train.t(Eigen::all, idx);
      mb = train.m(Eigen::all, idx);
      const double count = mb.cast<double>().sum();
      if (count <= 0.0) continue;
      double loss;
      if (threads <= 1 || w < 2 * static_cast<std::size_t>(threads)) {
        loss = masked_loss(net, xb, tb, mb, &grad);
      } else {
        // Chunked gradients combined in chunk order, so results depend only
        // on the thread count.
        const int chunks = threads;
        std::vector<MlpGradient<float>> parts(chunks);
        std::vector<double> losses(chunks, 0.0), counts(chunks, 0.0);
        const Eigen::Index step = (static_cast<Eigen::Index>(w) + chunks - 1) / chunks;
        parallel_for(chunks, threads, [&](std::size_t c) {
          const Eigen::Index lo = static_cast<Eigen::Index>(c) * step;
          const Eigen::Index hi = std::min<Eigen::Index>(static_cast<Eigen::Index>(w), lo + step);
          if (lo >= hi) return;
          const MatrixF mc = mb.middleCols(lo, hi - lo);
          counts[c] = mc.cast<double>().sum();
          losses[c] = masked_loss(net, MatrixF(xb.middleCols(lo, hi - lo)),
                                  MatrixF(tb.middleCols(lo, hi - lo)), mc, &parts[c]);
        });
        grad = net;
        grad.for_each_parameter([](float& p) { p = 0.0f; });
        loss = 0.0;
        for (int c = 0; c < chunks; ++c) {
          if (counts[c] <= 0.0) continue;
          const float share = static_cast<float>(counts[c] / count);
          for (int l = 0; l < net.layers(); ++l) {
            grad.weights[l] += share * parts[c].weights[l];
            grad.biases[l] += share * parts[c].biases[l];
          }
          loss += losses[c] * counts[c] / count;
        }
      }
      if (!std::isfinite(loss))
        throw TrainingDiverged("train_net: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(b / batch) + ", learning rate " +
                               std::to_string(lr));
      adam.update(net, grad, lr);
      train_sse += loss * count;
      train_count += count;
    }
    const auto [vsse, vcount] = sse(net, valid, batch);
    const double vloss = vcount > 0.0 ? vsse / vcount : 0.0;
    const double tloss = train_count > 0.0 ? train_sse / train_count : 0.0;
    if (!std::isfinite(vloss))
      throw TrainingDiverged("train_net: non-finite validation loss at epoch " +
                             std::to_string(epoch));
    out.summary.history.push_back({epoch, tloss, vloss, lr});
    out.summary.epochs = epoch;
    if (vloss < best_loss) {
      best_loss = vloss;
      best = net;
      out.summary.best_epoch = epoch;
      out.summary.train_loss = tloss;
      since_best = since_decay = 0;
    } else {
      ++since_best;
      if (++since_decay >= cfg.plateau_epochs) {
        lr *= cfg.lr_decay;
        since_decay = 0;
      }
    }
    if (since_best >= cfg.patience || lr < cfg.min_learning_rate) break;
  }
  out.net = std::move(best);

  // Final validation loss and target variance in double precision.
  const Mlp<double> dnet = out.net.cast<double>();
  double sq = 0.0, count = 0.0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(examples.output_width);
  Eigen::VectorXd sum2 = sum, cnt = sum;
  for (std::size_t i = ntrain; i < L; ++i) {
    const Eigen::Map<const Eigen::VectorXf> raw(examples.input_row(i), examples.input_width);
    const Eigen::VectorXd f = net_forward(dnet, out.stats, raw.cast<double>());
    const float* t = examples.target_row(i);
    const std::uint8_t* m = examples.target_mask_row(i);
    for (int k = 0; k < examples.output_width; ++k) {
      if (!m[k]) continue;
      const double diff = f(k) - t[k];
      sq += diff * diff;
      count += 1.0;
      sum(k) += t[k];
      sum2(k) += static_cast<double>(t[k]) * t[k];
      cnt(k) += 1.0;
    }
  }
  double var = 0.0;
  for (int k = 0; k < examples.output_width; ++k)
    if (cnt(k) > 0.0) var += sum2(k) - sum(k) * sum(k) / cnt(k);
  out.summary.validation_loss = count > 0.0 ? sq / count : 0.0;
  out.summary.validation_target_variance = count > 0.0 ? var / count : 0.0;
  out.summary.training_examples = ntrain;
  out.summary.validation_examples = holdout;
  out.summary.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

}  // namespace search_nne
