#include "fixtures.hpp"

#include <cstdio>
#include <filesystem>

#include "search_nne/config.hpp"
#include "search_nne/hash.hpp"

namespace search_nne::testing {

std::string tmp_path(const std::string& name) { return std::string(SEARCH_NNE_TEST_TMP) + "/" + name; }

Dataset make_panel(const Dims& dims, const Theta& theta, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x = draw_attributes(dims, rng);
  d.names = AttributeNames::defaults(dims);
  d.y = simulate_panel(theta, d.x, derive_seed(seed, 1));
  return d;
}

Theta moderate_theta(const Dims& dims) {
  Theta t = Theta::zeros(dims.d_prod, dims.d_cons, dims.d_ads);
  for (int k = 0; k < dims.d_prod; ++k) t.beta(k) = (k % 2 ? 0.4 : -0.5) / (1.0 + 0.3 * k);
  for (int k = 0; k < dims.d_cons; ++k) t.eta(k) = k % 2 ? -0.2 : 0.3;
  for (int k = 0; k < dims.d_ads; ++k) t.alpha(k) = k % 2 ? 0.2 : -0.3;
  t.eta0 = 3.0;
  t.alpha0 = -3.5;
  return t;
}

PriorConfig tiny_prior() {
  PriorConfig p;
  p.d_prod = {2, 3};
  p.d_ads = {0, 0};
  p.d_cons = {0, 1};
  p.J = {8, 10};
  p.n = {300, 600};
  return p;
}

const EstimatorArtifact& tiny_artifact() {
  static const EstimatorArtifact artifact = [] {
    PretrainConfig cfg;
    cfg.prior = tiny_prior();
    cfg.examples = 1500;
    cfg.net.hidden = {32, 32};
    cfg.train.max_epochs = 20;
    cfg.train.batch_size = 128;
    cfg.trees.rounds = 30;
    cfg.trees.min_leaf = 5;
    cfg.seed = 99;
    char name[64];
    std::snprintf(name, sizeof name, "tiny_%016llx.art",
                  static_cast<unsigned long long>(fnv1a(nlohmann::json(cfg).dump())));
    const std::string path = tmp_path(name);
    if (std::filesystem::exists(path)) return load_artifact(path);
    EstimatorArtifact a = pretrain(cfg);
    save_artifact(a, path);
    return a;
  }();
  return artifact;
}

}  // namespace search_nne::testing
