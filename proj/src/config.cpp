#include "search_nne/config.hpp"

namespace search_nne {

StrictObject::StrictObject(const nlohmann::json& j, std::string context)
    : j_(j), context_(std::move(context)) {
  if (!j_.is_object()) throw ConfigError(context_ + ": expected an object");
}

void StrictObject::finish() const {
  for (const auto& item : j_.items())
    if (!seen_.count(item.key()))
      throw ConfigError(context_ + ": unknown key '" + item.key() + "'");
}

void to_json(nlohmann::json& j, const DimRange& r) { j = {{"min", r.min}, {"max", r.max}}; }

void from_json(const nlohmann::json& j, DimRange& r) {
  StrictObject o(j, "range");
  o.required("min", r.min);
  o.required("max", r.max);
  o.finish();
  if (r.min > r.max)
    throw ConfigError("range: min " + std::to_string(r.min) + " exceeds max " +
                      std::to_string(r.max));
}

void to_json(nlohmann::json& j, const DimMaxima& m) {
  j = {{"prod", m.prod}, {"ads", m.ads}, {"cons", m.cons}};
}

void from_json(const nlohmann::json& j, DimMaxima& m) {
  StrictObject o(j, "maxima");
  o.required("prod", m.prod);
  o.required("ads", m.ads);
  o.required("cons", m.cons);
  o.finish();
  if (m.prod < 1 || m.ads < 0 || m.cons < 0) throw ConfigError("maxima: invalid counts");
}

void to_json(nlohmann::json& j, const Dims& d) {
  j = {{"d_prod", d.d_prod}, {"d_ads", d.d_ads}, {"d_cons", d.d_cons}, {"J", d.J}, {"n", d.n}};
}

void from_json(const nlohmann::json& j, Dims& d) {
  StrictObject o(j, "dims");
  o.required("d_prod", d.d_prod);
  o.required("d_ads", d.d_ads);
  o.required("d_cons", d.d_cons);
  o.required("J", d.J);
  o.required("n", d.n);
  o.finish();
}

void to_json(nlohmann::json& j, const PriorConfig& p) {
  j = nlohmann::json{{"sigma_beta", p.sigma_beta},
                     {"sigma_eta", p.sigma_eta},
                     {"sigma_alpha", p.sigma_alpha},
                     {"alpha0_mean", p.alpha0_mean},
                     {"alpha0_sd", p.alpha0_sd},
                     {"eta0_mean", p.eta0_mean},
                     {"eta0_sd", p.eta0_sd},
                     {"d_prod", p.d_prod},
                     {"d_ads", p.d_ads},
                     {"d_cons", p.d_cons},
                     {"J", p.J},
                     {"n", p.n},
                     {"min_buy_rate", p.min_buy_rate},
                     {"min_search_rate", p.min_search_rate},
                     {"trim_prior", p.trim_prior}};
}

void from_json(const nlohmann::json& j, PriorConfig& p) {
  StrictObject o(j, "prior");
  o.optional("sigma_beta", p.sigma_beta);
  o.optional("sigma_eta", p.sigma_eta);
  o.optional("sigma_alpha", p.sigma_alpha);
  o.optional("alpha0_mean", p.alpha0_mean);
  o.optional("alpha0_sd", p.alpha0_sd);
  o.optional("eta0_mean", p.eta0_mean);
  o.optional("eta0_sd", p.eta0_sd);
  o.optional("d_prod", p.d_prod);
  o.optional("d_ads", p.d_ads);
  o.optional("d_cons", p.d_cons);
  o.optional("J", p.J);
  o.optional("n", p.n);
  o.optional("min_buy_rate", p.min_buy_rate);
  o.optional("min_search_rate", p.min_search_rate);
  o.optional("trim_prior", p.trim_prior);
  o.finish();
  p.validate();
}

void to_json(nlohmann::json& j, const NetSpec& s) {
  j = {{"input_width", s.input_width},
       {"hidden", s.hidden},
       {"output_width", s.output_width},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, NetSpec& s) {
  StrictObject o(j, "net");
  o.optional("input_width", s.input_width);
  o.optional("hidden", s.hidden);
  o.optional("output_width", s.output_width);
  o.optional("seed", s.seed);
  o.finish();
  for (int h : s.hidden)
    if (h < 1) throw ConfigError("net.hidden: widths must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"holdout_max", c.holdout_max},
       {"holdout_fraction", c.holdout_fraction},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"lr_decay", c.lr_decay},
       {"plateau_epochs", c.plateau_epochs},
       {"patience", c.patience},
       {"max_epochs", c.max_epochs},
       {"min_learning_rate", c.min_learning_rate},
       {"winsorize", c.winsorize},
       {"threads", c.threads},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  StrictObject o(j, "train");
  o.optional("holdout_max", c.holdout_max);
  o.optional("holdout_fraction", c.holdout_fraction);
  o.optional("batch_size", c.batch_size);
  o.optional("learning_rate", c.learning_rate);
  o.optional("lr_decay", c.lr_decay);
  o.optional("plateau_epochs", c.plateau_epochs);
  o.optional("patience", c.patience);
  o.optional("max_epochs", c.max_epochs);
  o.optional("min_learning_rate", c.min_learning_rate);
  o.optional("winsorize", c.winsorize);
  o.optional("threads", c.threads);
  o.optional("seed", c.seed);
  o.finish();
  c.validate();
}

void to_json(nlohmann::json& j, const TreeConfig& c) {
  j = {{"rounds", c.rounds},
       {"max_depth", c.max_depth},
       {"learning_rate", c.learning_rate},
       {"subsample", c.subsample},
       {"min_leaf", c.min_leaf},
       {"bins", c.bins},
       {"l2", c.l2},
       {"binning_rows", c.binning_rows},
       {"seed", c.seed},
       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TreeConfig& c) {
  StrictObject o(j, "trees");
  o.optional("rounds", c.rounds);
  o.optional("max_depth", c.max_depth);
  o.optional("learning_rate", c.learning_rate);
  o.optional("subsample", c.subsample);
  o.optional("min_leaf", c.min_leaf);
  o.optional("bins", c.bins);
  o.optional("l2", c.l2);
  o.optional("binning_rows", c.binning_rows);
  o.optional("seed", c.seed);
  o.optional("threads", c.threads);
  o.finish();
  c.validate();
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"prior", c.prior},
       {"penalties", c.penalties},
       {"examples", c.examples},
       {"net", c.net},
       {"train", c.train},
       {"trees", c.trees},
       {"detector_quantile", c.detector_quantile},
       {"seed", c.seed},
       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  StrictObject o(j, "pretrain");
  o.optional("prior", c.prior);
  o.optional("penalties", c.penalties);
  o.optional("examples", c.examples);
  o.optional("net", c.net);
  o.optional("train", c.train);
  o.optional("trees", c.trees);
  o.optional("detector_quantile", c.detector_quantile);
  o.optional("seed", c.seed);
  o.optional("threads", c.threads);
  o.finish();
  c.validate();
}

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void to_json(nlohmann::json& j, const Theta& t) {
  j = {{"beta", to_vector(t.beta)},
       {"eta", to_vector(t.eta)},
       {"alpha", to_vector(t.alpha)},
       {"eta0", t.eta0},
       {"alpha0", t.alpha0}};
}

void from_json(const nlohmann::json& j, Theta& t) {
  StrictObject o(j, "theta");
  std::vector<double> beta, eta, alpha;
  o.required("beta", beta);
  o.optional("eta", eta);
  o.optional("alpha", alpha);
  o.required("eta0", t.eta0);
  o.required("alpha0", t.alpha0);
  o.finish();
  t.beta = from_vector(beta);
  t.eta = from_vector(eta);
  t.alpha = from_vector(alpha);
  if (!t.is_finite()) throw ConfigError("theta: non-finite value");
}

void to_json(nlohmann::json& j, const SmleConfig& c) {
  j = {{"R", c.R},
       {"lambda_search", c.lambda_search},
       {"lambda_buy", c.lambda_buy},
       {"starts", c.starts},
       {"tolerance", c.tolerance},
       {"max_iterations", c.max_iterations},
       {"fd_step", c.fd_step},
       {"threads", c.threads},
       {"prior", c.prior}};
}

void from_json(const nlohmann::json& j, SmleConfig& c) {
  StrictObject o(j, "smle");
  o.optional("R", c.R);
  o.optional("lambda_search", c.lambda_search);
  o.optional("lambda_buy", c.lambda_buy);
  o.optional("starts", c.starts);
  o.optional("tolerance", c.tolerance);
  o.optional("max_iterations", c.max_iterations);
  o.optional("fd_step", c.fd_step);
  o.optional("threads", c.threads);
  o.optional("prior", c.prior);
  o.finish();
  c.validate();
}

}  // namespace search_nne
