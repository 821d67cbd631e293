#include "cap/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace cap {

void configure_threads_from_env() {
  if (const char* value = std::getenv(kThreadsEnvVar)) {
    try {
      int n = std::stoi(value);
      if (n > 0) set_num_threads(n);
    } catch (const std::exception&) {
      // ignore malformed values; OpenMP keeps its own default
    }
  }
}

void set_num_threads(int n) { omp_set_num_threads(n < 1 ? 1 : n); }

int num_threads() { return omp_get_max_threads(); }

}  // namespace cap
