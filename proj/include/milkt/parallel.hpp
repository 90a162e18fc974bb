#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#define MILKT_PRAGMA(x) _Pragma(#x)
#else
#define MILKT_PRAGMA(x)
#endif

namespace milkt {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// Team size and index of the calling thread; 1 and 0 outside a parallel region.
inline int team_size() {
#ifdef _OPENMP
  return omp_get_num_threads();
#else
  return 1;
#endif
}

inline int team_index() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

inline bool have_openmp() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

/// Runs body(i) for i in [0, n). Iterations must be independent; results written
/// per index keep the outcome identical to the serial loop.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_parallel = 4096) {
  if (n < min_parallel || max_threads() == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const auto count = static_cast<long long>(n);
  MILKT_PRAGMA(omp parallel for schedule(static))
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace milkt
