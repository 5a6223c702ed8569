#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "search_nne/trees.hpp"

namespace search_nne {
namespace {

TEST(Trees, DeterministicAndBeatsConstant) {
  const PriorConfig prior = testing::tiny_prior();
  const TrainingSet set = generate_training_set(500, prior, layout_for(prior.maxima()), 31);
  TreeConfig cfg;
  cfg.rounds = 20;
  cfg.min_leaf = 5;
  const TreeEnsemble a = train_trees(set, 100, cfg);
  const TreeEnsemble b = train_trees(set, 100, cfg);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a.empty());
  EXPECT_TRUE(std::isfinite(a.validation_loss));
  const Eigen::VectorXd p = a.predict(set.input_row(0));
  EXPECT_EQ(p.size(), set.output_width);
  EXPECT_TRUE(p.allFinite());
}

TEST(Trees, InactiveCoordinatesPredictZero) {
  const PriorConfig prior = testing::tiny_prior();
  const TrainingSet set = generate_training_set(200, prior, layout_for(prior.maxima()), 32);
  TreeConfig cfg;
  cfg.rounds = 5;
  cfg.min_leaf = 5;
  const TreeEnsemble t = train_trees(set, 40, cfg);
  std::vector<int> active(set.output_width, 0);
  for (std::size_t i = 0; i < set.size(); ++i)
    for (int k = 0; k < set.output_width; ++k) active[k] |= set.target_mask_row(i)[k];
  const Eigen::VectorXd p = t.predict(set.input_row(0));
  for (int k = 0; k < set.output_width; ++k)
    if (!active[k]) EXPECT_EQ(p(k), 0.0);
}

TEST(Trees, StumpSplitsOnThreshold) {
  RegressionTree tree;
  tree.nodes = {{0, 0.5f, 1, 2, 0.0f}, {-1, 0, -1, -1, -1.0f}, {-1, 0, -1, -1, 2.0f}};
  const float lo[] = {0.5f}, hi[] = {0.6f};
  EXPECT_EQ(tree.predict(lo), -1.0);
  EXPECT_EQ(tree.predict(hi), 2.0);
}

}  // namespace
}  // namespace search_nne
