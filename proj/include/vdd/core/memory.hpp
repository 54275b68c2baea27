#pragma once

#include <malloc.h>

namespace vdd {

// Training steps allocate and free hundreds of MB of scratch (im2col
// patches, activation buffers) every iteration. glibc hands blocks that
// large straight to mmap, so each step pays the page-fault and kernel-zeroing
// cost again. Raising the mmap threshold keeps the arenas on the heap and
// reused across steps.
inline void tune_allocator() {
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
}

}  // namespace vdd
