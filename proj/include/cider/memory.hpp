#pragma once

#include <atomic>
#include <cstddef>
#include <new>
#include <vector>

namespace cider::memory {

// Process-wide accounting of bytes held by tensor storage and tracked scratch
// buffers. Peak tracking is what the cost-volume memory comparison reads.
namespace detail {
inline std::atomic<std::size_t> g_current{0};
inline std::atomic<std::size_t> g_peak{0};
}  // namespace detail

inline void record_alloc(std::size_t bytes) noexcept {
  const std::size_t now = detail::g_current.fetch_add(bytes) + bytes;
  std::size_t peak = detail::g_peak.load();
  while (now > peak && !detail::g_peak.compare_exchange_weak(peak, now)) {
  }
}

inline void record_free(std::size_t bytes) noexcept { detail::g_current.fetch_sub(bytes); }

inline std::size_t current_bytes() noexcept { return detail::g_current.load(); }
inline std::size_t peak_bytes() noexcept { return detail::g_peak.load(); }
inline void reset_peak() noexcept { detail::g_peak.store(detail::g_current.load()); }

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = static_cast<T*>(::operator new(n * sizeof(T)));
    record_alloc(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    record_free(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, TrackingAllocator<T>>;

/// Measures the high-water mark of tracked bytes above the level at
/// construction time.
class PeakScope {
 public:
  PeakScope() noexcept : baseline_(current_bytes()) { reset_peak(); }
  std::size_t peak_delta() const noexcept {
    const std::size_t peak = peak_bytes();
    return peak > baseline_ ? peak - baseline_ : 0;
  }

 private:
  std::size_t baseline_;
};

}  // namespace cider::memory
