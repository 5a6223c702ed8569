#include "search_nne/parallel.hpp"

#include <cstdlib>
#include <string>

namespace search_nne {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SEARCH_NNE_THREADS")) {
    try {
      const int value = std::stoi(env);
      if (value > 0) return value;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

}  // namespace search_nne
