// Linked as an object into every executable (see src/CMakeLists.txt).
//
// Eigen's vectorized reductions over mapped buffers start their packet loop at
// the first aligned element, so the summation order, and the last bits of the
// result, depend on where malloc happened to place the buffer. With worker
// threads the heap layout depends on scheduling. Aligning every allocation to
// 64 bytes makes results a function of the inputs alone.
#include <cstdlib>
#include <new>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace {

constexpr std::size_t kAlign = 64;

void* aligned(std::size_t n) {
  const std::size_t size = ((n == 0 ? 1 : n) + kAlign - 1) / kAlign * kAlign;
  if (void* p = std::aligned_alloc(kAlign, size)) return p;
  throw std::bad_alloc();
}

// Full-batch training allocates tens of megabytes per op per step; keep freed
// blocks in the heap rather than mapping and unmapping them each time.
[[maybe_unused]] const bool kTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  return true;
}();

}  // namespace

void* operator new(std::size_t n) { return aligned(n); }
void* operator new[](std::size_t n) { return aligned(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
  try {
    return aligned(n);
  } catch (...) {
    return nullptr;
  }
}
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return operator new(n, std::nothrow); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
