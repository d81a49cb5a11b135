#include "glam/storage.hpp"

#include <sys/mman.h>

#include <cstdlib>
#include <map>
#include <mutex>

namespace glam {
namespace {

constexpr std::size_t kPooledMin = std::size_t{1} << 18;
constexpr std::size_t kGranule = std::size_t{1} << 21;
constexpr std::size_t kCacheLimit = std::size_t{1} << 30;
// Eigen's vectorized reductions round differently depending on where the
// data starts, so every buffer gets the same alignment.
constexpr std::align_val_t kSmallAlign{64};

struct Pool {
  std::mutex mutex;
  std::multimap<std::size_t, void*> free_blocks;
  std::size_t cached = 0;
};

// Never destroyed: tensors with static storage may release blocks during exit.
Pool& pool() {
  static Pool* instance = new Pool;
  return *instance;
}

std::size_t rounded(std::size_t bytes) { return (bytes + kGranule - 1) / kGranule * kGranule; }

}  // namespace

namespace detail {

void* pool_allocate(std::size_t bytes) {
  if (bytes < kPooledMin) return ::operator new(bytes, kSmallAlign);
  const std::size_t size = rounded(bytes);
  auto& p = pool();
  {
    std::lock_guard lock(p.mutex);
    auto it = p.free_blocks.find(size);
    if (it != p.free_blocks.end()) {
      void* block = it->second;
      p.free_blocks.erase(it);
      p.cached -= size;
      return block;
    }
  }
  void* block = std::aligned_alloc(kGranule, size);
  if (!block) throw std::bad_alloc();
  ::madvise(block, size, MADV_HUGEPAGE);
  return block;
}

void pool_deallocate(void* block, std::size_t bytes) noexcept {
  if (bytes < kPooledMin) {
    ::operator delete(block, kSmallAlign);
    return;
  }
  const std::size_t size = rounded(bytes);
  auto& p = pool();
  std::lock_guard lock(p.mutex);
  // Evict the largest blocks first until the new one fits under the limit.
  while (p.cached + size > kCacheLimit && !p.free_blocks.empty()) {
    auto last = std::prev(p.free_blocks.end());
    p.cached -= last->first;
    std::free(last->second);
    p.free_blocks.erase(last);
  }
  if (size > kCacheLimit) {
    std::free(block);
    return;
  }
  p.free_blocks.emplace(size, block);
  p.cached += size;
}

}  // namespace detail

std::size_t pool_cached_bytes() {
  std::lock_guard lock(pool().mutex);
  return pool().cached;
}

void pool_release() {
  auto& p = pool();
  std::lock_guard lock(p.mutex);
  for (auto& [size, block] : p.free_blocks) std::free(block);
  p.free_blocks.clear();
  p.cached = 0;
}

}  // namespace glam
