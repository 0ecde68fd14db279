#pragma once

#include <atomic>
#include <cstdint>

namespace nda::warnings {

/// Soft-failure counters. Atomic so concurrently evaluated graphs can bump
/// them without coordination.
inline std::atomic<std::uint64_t> prob_floor_hits{0};
inline std::atomic<std::uint64_t> pair_fallbacks{0};
inline std::atomic<std::uint64_t> lda_rank_warnings{0};

inline void reset_all() {
  prob_floor_hits = 0;
  pair_fallbacks = 0;
  lda_rank_warnings = 0;
}

}  // namespace nda::warnings
