#include "milkt/runtime.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace milkt {

void keep_heap_memory() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace milkt
