#include "search_nne/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>

#include "search_nne/config.hpp"
#include "search_nne/error.hpp"
#include "search_nne/hash.hpp"
#include "search_nne/normal.hpp"
#include "search_nne/parallel.hpp"

namespace search_nne {

bool PriorConfig::dims_in_range(const Dims& d) const {
  auto in = [](int v, const DimRange& r) { return v >= r.min && v <= r.max; };
  return in(d.d_prod, d_prod) && in(d.d_ads, d_ads) && in(d.d_cons, d_cons) && in(d.J, J) &&
         in(d.n, n);
}

void PriorConfig::validate() const {
  auto range = [](const DimRange& r, const char* name, int floor) {
    if (r.min > r.max)
      throw ConfigError(std::string("prior.") + name + ": min exceeds max");
    if (r.min < floor) throw ConfigError(std::string("prior.") + name + ": below allowed minimum");
  };
  range(d_prod, "d_prod", 1);
  range(d_ads, "d_ads", 0);
  range(d_cons, "d_cons", 0);
  range(J, "J", 2);
  range(n, "n", 2);
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw ConfigError(std::string("prior.") + name + ": must be positive");
  };
  positive(sigma_beta, "sigma_beta");
  positive(sigma_eta, "sigma_eta");
  positive(sigma_alpha, "sigma_alpha");
  positive(alpha0_sd, "alpha0_sd");
  positive(eta0_sd, "eta0_sd");
  if (!std::isfinite(alpha0_mean) || !std::isfinite(eta0_mean))
    throw ConfigError("prior: intercept means must be finite");
  auto rate = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(std::string("prior.") + name + ": must lie in (0,1)");
  };
  rate(min_buy_rate, "min_buy_rate");
  rate(min_search_rate, "min_search_rate");
}

std::uint64_t PriorConfig::hash() const {
  nlohmann::json j = *this;
  return fnv1a(j.dump());
}

int uniform_int(Rng& rng, int lo, int hi) {
  const double span = static_cast<double>(hi) - lo + 1.0;
  return std::min(hi, lo + static_cast<int>(std::floor(rng.uniform() * span)));
}

Dims draw_dims(const PriorConfig& prior, Rng& rng) {
  Dims d;
  d.d_prod = uniform_int(rng, prior.d_prod.min, prior.d_prod.max);
  d.d_ads = uniform_int(rng, prior.d_ads.min, prior.d_ads.max);
  d.d_cons = uniform_int(rng, prior.d_cons.min, prior.d_cons.max);
  d.J = uniform_int(rng, prior.J.min, prior.J.max);
  d.n = uniform_int(rng, prior.n.min, prior.n.max);
  return d;
}

namespace {

Eigen::VectorXd sphere_scaled(int dim, double sigma, bool trim, Rng& rng, NormalSampler& normal) {
  Eigen::VectorXd v(dim);
  if (dim == 0) return v;
  double chi;
  do {
    chi = std::abs(normal(rng));
  } while (trim && chi > 6.0);
  double norm2 = 0.0;
  do {
    for (int k = 0; k < dim; ++k) v(k) = normal(rng);
    norm2 = v.squaredNorm();
  } while (norm2 == 0.0);
  return v * (sigma * chi / std::sqrt(norm2));
}

double intercept(double mean, double sd, bool trim, Rng& rng, NormalSampler& normal) {
  double z;
  do {
    z = normal(rng);
  } while (trim && std::abs(z) > 6.0);
  return mean + sd * z;
}

}  // namespace

Theta draw_theta(const Dims& dims, const PriorConfig& prior, Rng& rng) {
  NormalSampler normal;
  Theta t;
  t.beta = sphere_scaled(dims.d_prod, prior.sigma_beta, prior.trim_prior, rng, normal);
  t.eta = sphere_scaled(dims.d_cons, prior.sigma_eta, prior.trim_prior, rng, normal);
  t.alpha = sphere_scaled(dims.d_ads, prior.sigma_alpha, prior.trim_prior, rng, normal);
  t.eta0 = intercept(prior.eta0_mean, prior.eta0_sd, prior.trim_prior, rng, normal);
  t.alpha0 = intercept(prior.alpha0_mean, prior.alpha0_sd, prior.trim_prior, rng, normal);
  return t;
}

Eigen::MatrixXd draw_correlation(int d, Rng& rng) {
  if (d == 0) return Eigen::MatrixXd(0, 0);
  NormalSampler normal;
  const int rank = uniform_int(rng, 1, d);
  Eigen::MatrixXd a(d, rank);
  for (int c = 0; c < rank; ++c)
    for (int r = 0; r < d; ++r) a(r, c) = normal(rng);
  Eigen::MatrixXd s = a * a.transpose();
  s.diagonal().array() += 0.1;
  const Eigen::VectorXd inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd c = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
  c.diagonal().setOnes();
  return c;
}

AttributeRecipe draw_attribute_recipe(const Dims& dims, Rng& rng) {
  const int d = dims.d();
  const int product_level = dims.d_prod + dims.d_ads;
  AttributeRecipe recipe;
  recipe.correlation = draw_correlation(d, rng);
  recipe.consumer_share.resize(d);
  recipe.marginal.resize(d);
  recipe.parameter.assign(d, 0.0);
  recipe.scale_cuts.assign(d, {});
  for (int k = 0; k < d; ++k) {
    recipe.consumer_share[k] = k < product_level ? 0.8 * rng.uniform() : 1.0;
    recipe.marginal[k] = static_cast<Marginal>(uniform_int(rng, 0, 3));
    switch (recipe.marginal[k]) {
      case Marginal::kDummy: recipe.parameter[k] = 0.1 + 0.8 * rng.uniform(); break;
      case Marginal::kSkewed: recipe.parameter[k] = 0.3 + 0.7 * rng.uniform(); break;
      case Marginal::kScale5: {
        std::vector<double> cuts(4);
        for (double& q : cuts) q = 0.05 + 0.9 * rng.uniform();
        std::sort(cuts.begin(), cuts.end());
        recipe.scale_cuts[k] = cuts;
        break;
      }
      case Marginal::kNormal: break;
    }
  }
  return recipe;
}

namespace {

// Thresholds on the latent scale, precomputed once per attribute.
struct Transform {
  Marginal marginal = Marginal::kNormal;
  double parameter = 0.0;
  std::vector<double> cuts;

  Transform(Marginal m, double p, const std::vector<double>& quantile_cuts)
      : marginal(m), parameter(p) {
    if (m == Marginal::kDummy) parameter = normal_quantile(p);
    for (double q : quantile_cuts) cuts.push_back(normal_quantile(q));
  }

  double operator()(double z) const {
    switch (marginal) {
      case Marginal::kNormal: return z;
      case Marginal::kDummy: return z > parameter ? 1.0 : 0.0;
      case Marginal::kSkewed: return std::exp(parameter * z);
      case Marginal::kScale5: {
        double level = 1.0;
        for (double c : cuts) level += z > c ? 1.0 : 0.0;
        return level;
      }
    }
    return z;
  }
};

// Pooled standardization in place; a column with no variation keeps its
// latent values instead.
void standardize_column(Eigen::Ref<Eigen::VectorXd> col, const Eigen::VectorXd& latent) {
  double mean = col.mean();
  double sd = std::sqrt((col.array() - mean).square().mean());
  if (!(sd > 1e-12)) {
    col = latent;
    mean = col.mean();
    sd = std::sqrt((col.array() - mean).square().mean());
  }
  col = (col.array() - mean) / sd;
}

}  // namespace

AttributeBlock synthesize_attributes(const Dims& dims, const AttributeRecipe& recipe, Rng& rng) {
  const int d = dims.d();
  const int n = dims.n, J = dims.J;
  const int product_level = dims.d_prod + dims.d_ads;
  const Eigen::Index rows = static_cast<Eigen::Index>(n) * J;
  AttributeBlock x;
  x.n = n;
  x.J = J;
  x.prod.resize(rows, dims.d_prod);
  x.ads.resize(rows, dims.d_ads);
  x.cons.resize(n, dims.d_cons);
  if (d == 0) return x;
  if (recipe.correlation.rows() != d)
    throw ContractViolation("synthesize_attributes: recipe does not match dims");

  const Eigen::MatrixXd chol = recipe.correlation.llt().matrixL();
  NormalSampler normal;
  Eigen::MatrixXd consumer_latent(n, d);
  Eigen::MatrixXd product_latent(rows, product_level);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) consumer_latent(i, k) = normal(rng);
  consumer_latent = consumer_latent * chol.transpose();
  // Only the leading product-level block of the factor matters for within draws.
  const Eigen::MatrixXd chol_p = chol.topLeftCorner(product_level, product_level);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int k = 0; k < product_level; ++k) product_latent(r, k) = normal(rng);
  product_latent = product_latent * chol_p.transpose();

  Eigen::VectorXd latent(rows), values(rows);
  for (int k = 0; k < product_level; ++k) {
    const double w = recipe.consumer_share[k];
    const double a = std::sqrt(1.0 - w), b = std::sqrt(w);
    const Transform transform(recipe.marginal[k], recipe.parameter[k], recipe.scale_cuts[k]);
    for (Eigen::Index r = 0; r < rows; ++r) {
      latent(r) = a * product_latent(r, k) + b * consumer_latent(r / J, k);
      values(r) = transform(latent(r));
    }
    standardize_column(values, latent);
    if (k < dims.d_prod)
      x.prod.col(k) = values;
    else
      x.ads.col(k - dims.d_prod) = values;
  }
  Eigen::VectorXd clatent(n), cvalues(n);
  for (int k = product_level; k < d; ++k) {
    const Transform transform(recipe.marginal[k], recipe.parameter[k], recipe.scale_cuts[k]);
    for (int i = 0; i < n; ++i) {
      clatent(i) = consumer_latent(i, k);
      cvalues(i) = transform(clatent(i));
    }
    standardize_column(cvalues, clatent);
    x.cons.col(k - product_level) = cvalues;
  }
  return x;
}

AttributeBlock draw_attributes(const Dims& dims, Rng& rng) {
  const AttributeRecipe recipe = draw_attribute_recipe(dims, rng);
  return synthesize_attributes(dims, recipe, rng);
}

bool generate_example(std::uint64_t seed, std::uint64_t index, const PriorConfig& prior,
                      const PatternLayout& layout, const GeneratorHooks& hooks,
                      TrainingExample& out) {
  Rng rng(derive_seed(seed, index));
  const Dims dims = hooks.dims ? hooks.dims(rng) : draw_dims(prior, rng);
  const Theta theta = hooks.theta ? hooks.theta(dims, rng) : draw_theta(dims, prior, rng);
  Dataset data;
  data.x = draw_attributes(dims, rng);
  data.y = simulate_panel(theta, data.x, rng());
  const Rates r = rates(data.y);
  if (r.buy_rate < prior.min_buy_rate || r.search_rate < prior.min_search_rate) return false;
  PatternOptions opts;
  opts.min_buy_rate = prior.min_buy_rate;
  opts.min_search_rate = prior.min_search_rate;
  out.m = compute_patterns(data, layout, opts);
  PaddedTheta padded = pad_theta(theta, layout.maxima);
  out.theta_padded = std::move(padded.values);
  out.theta_mask = hooks.target_mask ? hooks.target_mask(dims) : std::move(padded.mask);
  out.dims = dims;
  out.rates = r;
  return true;
}

GenerationStats for_each_training_example(std::size_t L, const PriorConfig& prior,
                                          const PatternLayout& layout, std::uint64_t seed,
                                          const std::function<void(TrainingExample&&)>& sink,
                                          const GeneratorOptions& options) {
  if (L < 1) throw ContractViolation("generate_training_set: L must be at least 1");
  prior.validate();
  if (!(prior.maxima() == layout.maxima) && !options.hooks.dims)
    throw ConfigError("generate_training_set: layout maxima differ from prior ranges");
  const int threads = resolve_threads(options.threads);
  const std::size_t batch = std::max<std::size_t>(64, static_cast<std::size_t>(threads) * 16);
  enum class Status : std::uint8_t { kRetained, kRates, kError };

  GenerationStats stats;
  std::vector<TrainingExample> slot(batch);
  std::vector<Status> status(batch);
  std::size_t produced = 0;
  while (produced < L) {
    const std::uint64_t base = stats.attempts;
    parallel_for(batch, threads, [&](std::size_t k) {
      try {
        status[k] = generate_example(seed, base + k, prior, layout, options.hooks, slot[k])
                        ? Status::kRetained
                        : Status::kRates;
      } catch (const DomainError&) {
        status[k] = Status::kError;
      } catch (const ValidationError&) {
        status[k] = Status::kError;
      }
    });
    for (std::size_t k = 0; k < batch && produced < L; ++k) {
      ++stats.attempts;
      switch (status[k]) {
        case Status::kRetained:
          ++stats.retained;
          ++produced;
          sink(std::move(slot[k]));
          break;
        case Status::kRates: ++stats.dropped_rates; break;
        case Status::kError: ++stats.dropped_errors; break;
      }
    }
    if (stats.attempts >= 256 && stats.drop_rate() > options.max_drop_rate)
      throw ConfigError("generate_training_set: drop rate " + std::to_string(stats.drop_rate()) +
                        " exceeds limit; the prior produces unrealistic panels");
  }
  return stats;
}

TrainingSet::TrainingSet(const PatternLayout& layout_, const PriorConfig& prior_)
    : layout(layout_),
      prior(prior_),
      input_width(layout_.total_length()),
      output_width(padded_theta_width(layout_.maxima)) {}

void TrainingSet::reserve(std::size_t count) {
  inputs.reserve(count * input_width);
  input_mask.reserve(count * input_width);
  targets.reserve(count * output_width);
  target_mask.reserve(count * output_width);
  dims.reserve(count);
}

void TrainingSet::append(const TrainingExample& ex) {
  if (ex.m.values.size() != input_width || ex.theta_padded.size() != output_width)
    throw ContractViolation("TrainingSet::append: width mismatch");
  for (int k = 0; k < input_width; ++k) inputs.push_back(static_cast<float>(ex.m.values(k)));
  input_mask.insert(input_mask.end(), ex.m.active_mask.begin(), ex.m.active_mask.end());
  for (int k = 0; k < output_width; ++k)
    targets.push_back(static_cast<float>(ex.theta_padded(k)));
  target_mask.insert(target_mask.end(), ex.theta_mask.begin(), ex.theta_mask.end());
  dims.push_back(ex.dims);
}

TrainingSet TrainingSet::slice(std::size_t begin, std::size_t end) const {
  TrainingSet out(layout, prior);
  out.stats = stats;
  auto copy = [](const auto& src, auto& dst, std::size_t width, std::size_t b, std::size_t e) {
    dst.assign(src.begin() + b * width, src.begin() + e * width);
  };
  copy(inputs, out.inputs, input_width, begin, end);
  copy(input_mask, out.input_mask, input_width, begin, end);
  copy(targets, out.targets, output_width, begin, end);
  copy(target_mask, out.target_mask, output_width, begin, end);
  out.dims.assign(dims.begin() + begin, dims.begin() + end);
  return out;
}

TrainingSet generate_training_set(std::size_t L, const PriorConfig& prior,
                                  const PatternLayout& layout, std::uint64_t seed,
                                  const GeneratorOptions& options) {
  TrainingSet set(layout, prior);
  set.reserve(L);
  set.stats = for_each_training_example(
      L, prior, layout, seed, [&](TrainingExample&& ex) { set.append(ex); }, options);
  return set;
}

namespace {

constexpr char kTrainingMagic[8] = {'S', 'N', 'N', 'E', 'T', 'S', 'E', 'T'};
constexpr std::uint32_t kTrainingVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw CorruptArtifact("training set: unexpected end of file");
  return v;
}

}  // namespace

void write_training_set(const TrainingSet& set, const std::string& path) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp + " for writing");
    nlohmann::json header;
    header["prior"] = set.prior;
    header["maxima"] = set.layout.maxima;
    header["penalties"] = set.layout.penalties;
    header["layout_hash"] = set.layout.hash();
    header["input_width"] = set.input_width;
    header["output_width"] = set.output_width;
    header["stats"] = {{"attempts", set.stats.attempts},
                       {"retained", set.stats.retained},
                       {"dropped_rates", set.stats.dropped_rates},
                       {"dropped_errors", set.stats.dropped_errors}};
    const std::string text = header.dump();
    os.write(kTrainingMagic, sizeof kTrainingMagic);
    write_pod(os, kTrainingVersion);
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_pod(os, static_cast<std::uint64_t>(set.size()));
    for (std::size_t i = 0; i < set.size(); ++i) {
      os.write(reinterpret_cast<const char*>(set.target_row(i)), set.output_width * sizeof(float));
      os.write(reinterpret_cast<const char*>(set.target_mask_row(i)), set.output_width);
      os.write(reinterpret_cast<const char*>(set.input_row(i)), set.input_width * sizeof(float));
      os.write(reinterpret_cast<const char*>(set.input_mask.data() + i * set.input_width),
               set.input_width);
      const Dims& d = set.dims[i];
      const std::int32_t dims[5] = {d.d_prod, d.d_ads, d.d_cons, d.J, d.n};
      os.write(reinterpret_cast<const char*>(dims), sizeof dims);
    }
    if (!os) throw Error("failed writing " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

TrainingSet read_training_set(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kTrainingMagic, sizeof magic) != 0)
    throw CorruptArtifact("training set: bad magic in " + path);
  if (read_pod<std::uint32_t>(is) != kTrainingVersion)
    throw IncompatibleArtifact("training set: unsupported format version");
  const auto header_size = read_pod<std::uint64_t>(is);
  std::string text(header_size, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_size));
  if (!is) throw CorruptArtifact("training set: truncated header");
  const nlohmann::json header = nlohmann::json::parse(text);
  const PriorConfig prior = header.at("prior").get<PriorConfig>();
  const PatternLayout layout = layout_for(header.at("maxima").get<DimMaxima>(),
                                          header.at("penalties").get<std::vector<double>>());
  if (layout.hash() != header.at("layout_hash").get<std::uint64_t>())
    throw IncompatibleArtifact("training set: layout hash mismatch");
  TrainingSet set(layout, prior);
  const auto& st = header.at("stats");
  set.stats = {st.at("attempts"), st.at("retained"), st.at("dropped_rates"),
               st.at("dropped_errors")};
  const auto count = read_pod<std::uint64_t>(is);
  set.inputs.resize(count * set.input_width);
  set.input_mask.resize(count * set.input_width);
  set.targets.resize(count * set.output_width);
  set.target_mask.resize(count * set.output_width);
  set.dims.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    is.read(reinterpret_cast<char*>(set.targets.data() + i * set.output_width),
            set.output_width * sizeof(float));
    is.read(reinterpret_cast<char*>(set.target_mask.data() + i * set.output_width),
            set.output_width);
    is.read(reinterpret_cast<char*>(set.inputs.data() + i * set.input_width),
            set.input_width * sizeof(float));
    is.read(reinterpret_cast<char*>(set.input_mask.data() + i * set.input_width),
            set.input_width);
    std::int32_t d[5];
    is.read(reinterpret_cast<char*>(d), sizeof d);
    if (!is) throw CorruptArtifact("training set: truncated record " + std::to_string(i));
    set.dims[i] = {d[0], d[1], d[2], d[3], d[4]};
  }
  return set;
}

}  // namespace search_nne
