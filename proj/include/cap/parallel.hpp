#pragma once

namespace cap {

/// Which kernel family a computation runs on. Both produce bit-identical results;
/// Serial is the reference kept for testing and benchmarking.
enum class Backend { Serial, Parallel };

/// Environment variable read once at startup to size the OpenMP thread pool.
inline constexpr const char* kThreadsEnvVar = "CAP_NUM_THREADS";

/// Applies CAP_NUM_THREADS if set; otherwise the OpenMP default stays in effect.
void configure_threads_from_env();
void set_num_threads(int n);
int num_threads();

}  // namespace cap
