#pragma once

#include <string>

#include "search_nne/artifact.hpp"
#include "search_nne/search_model.hpp"
#include "search_nne/synth.hpp"

namespace search_nne::testing {

std::string tmp_path(const std::string& name);

/// Synthetic standardized attributes with outcomes simulated at `theta`.
Dataset make_panel(const Dims& dims, const Theta& theta, std::uint64_t seed);

/// A parameter with moderate search and buy rates for `dims`.
Theta moderate_theta(const Dims& dims);

/// Small prior used by the tiny artifact: d_prod 2-3, d_cons 0-1, J 8-10, n 300-600.
PriorConfig tiny_prior();

/// Quickly trained artifact shared by tests; cached on disk between runs.
const EstimatorArtifact& tiny_artifact();

}  // namespace search_nne::testing
