#pragma once

#include <atomic>
#include <cstddef>
#include <new>

namespace trukan::memory {

namespace detail {
inline std::atomic<std::size_t> g_current{0};
inline std::atomic<std::size_t> g_peak{0};

inline void on_alloc(std::size_t bytes) noexcept {
  const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

inline void on_free(std::size_t bytes) noexcept {
  g_current.fetch_sub(bytes, std::memory_order_relaxed);
}
}  // namespace detail

// Bytes currently held by tensor buffers.
inline std::size_t current_bytes() noexcept { return detail::g_current.load(std::memory_order_relaxed); }

// High-water mark since the last reset_peak().
inline std::size_t peak_bytes() noexcept { return detail::g_peak.load(std::memory_order_relaxed); }

inline void reset_peak() noexcept { detail::g_peak.store(current_bytes(), std::memory_order_relaxed); }

// Allocator used by every tensor buffer so that transient allocation during a
// training step can be measured without hooking global operator new.
template <typename T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    detail::on_alloc(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    detail::on_free(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace trukan::memory
