#pragma once

#include <cstddef>
#include <cstdint>
#include <new>

namespace lungddpm {

// Process-wide byte counters for every buffer allocated through
// TrackingAllocator. Used by the benchmark harness as a peak-memory proxy.
namespace alloc_tracker {

std::int64_t current_bytes() noexcept;
std::int64_t peak_bytes() noexcept;
// Sets the peak watermark to the current live byte count.
void reset_peak() noexcept;

void on_allocate(std::size_t bytes) noexcept;
void on_deallocate(std::size_t bytes) noexcept;

}  // namespace alloc_tracker

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    alloc_tracker::on_allocate(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    alloc_tracker::on_deallocate(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

}  // namespace lungddpm
