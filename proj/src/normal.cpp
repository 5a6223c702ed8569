#include "search_nne/normal.hpp"

#include <boost/math/special_functions/erf.hpp>

#include "search_nne/error.hpp"

namespace search_nne {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

}  // namespace search_nne
