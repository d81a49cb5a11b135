#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace glam {

namespace detail {
void* pool_allocate(std::size_t bytes);
void pool_deallocate(void* p, std::size_t bytes) noexcept;
}  // namespace detail

/// Allocator for tensor buffers. Large blocks are recycled through a
/// process-wide cache instead of going back to the kernel, and fresh ones are
/// backed by transparent huge pages where available; page faults otherwise
/// dominate the cost of memory-bound ops.
template <typename T>
struct PoolAllocator {
  using value_type = T;

  PoolAllocator() noexcept = default;
  template <typename U>
  PoolAllocator(const PoolAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(detail::pool_allocate(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { detail::pool_deallocate(p, n * sizeof(T)); }

  template <typename U>
  bool operator==(const PoolAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename Scalar>
using Buffer = std::vector<Scalar, PoolAllocator<Scalar>>;

/// Bytes currently parked in the cache.
std::size_t pool_cached_bytes();
/// Returns every cached block to the system.
void pool_release();

}  // namespace glam
