#pragma once

// Training allocates and frees many multi-megabyte buffers per step. Keeping
// them on the heap instead of mmap/munmap avoids repeated page faults.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace amc {

inline void keep_heap_resident() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace amc
