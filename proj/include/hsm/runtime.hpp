#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hsm {

// Training allocates and frees many large same-sized buffers per step. With
// glibc's default thresholds each one becomes an mmap/munmap pair and page
// faults dominate; keeping freed blocks in the heap avoids that.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace hsm
