#pragma once

// Replaces the global allocation functions to count live heap bytes. Include
// from exactly one translation unit per binary.

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <new>

namespace alloc_hook {

inline std::atomic<long long> live_bytes{0};
inline std::atomic<long long> peak_bytes{0};

inline constexpr std::size_t kHeader = alignof(std::max_align_t);

inline void* allocate(std::size_t size) {
  void* raw = std::malloc(size + kHeader);
  if (raw == nullptr) throw std::bad_alloc();
  *static_cast<std::size_t*>(raw) = size;
  const long long now = live_bytes.fetch_add(static_cast<long long>(size)) + static_cast<long long>(size);
  long long peak = peak_bytes.load();
  while (now > peak && !peak_bytes.compare_exchange_weak(peak, now)) {
  }
  return static_cast<char*>(raw) + kHeader;
}

inline void release(void* p) noexcept {
  if (p == nullptr) return;
  void* raw = static_cast<char*>(p) - kHeader;
  live_bytes.fetch_sub(static_cast<long long>(*static_cast<std::size_t*>(raw)));
  std::free(raw);
}

/// Resets the peak to the current live total and returns that baseline.
inline long long reset_peak() {
  const long long now = live_bytes.load();
  peak_bytes.store(now);
  return now;
}

/// Peak live bytes above `baseline` while running `fn`.
template <typename Fn>
long long peak_above_baseline(Fn&& fn) {
  const long long baseline = reset_peak();
  fn();
  return peak_bytes.load() - baseline;
}

}  // namespace alloc_hook

void* operator new(std::size_t size) { return alloc_hook::allocate(size); }
void* operator new[](std::size_t size) { return alloc_hook::allocate(size); }
void operator delete(void* p) noexcept { alloc_hook::release(p); }
void operator delete[](void* p) noexcept { alloc_hook::release(p); }
void operator delete(void* p, std::size_t) noexcept { alloc_hook::release(p); }
void operator delete[](void* p, std::size_t) noexcept { alloc_hook::release(p); }
