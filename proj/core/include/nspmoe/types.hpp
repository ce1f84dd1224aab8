#pragma once

#include <bit>
#include <cstdint>
#include <vector>

namespace nspmoe {

// Image-selection bitmask; bit i set means image i is selected.
using Mask = std::uint64_t;

inline constexpr int kMaxImagesPerAgent = 63;

inline bool mask_bit(Mask m, int i) { return ((m >> i) & 1U) != 0; }
inline int mask_count(Mask m) { return std::popcount(m); }
inline Mask full_mask(int m) { return (Mask{1} << m) - 1; }

struct ImageMeta {
  std::uint64_t size_bytes = 0;
  double quality = 0.0;    // contribution to 3D reconstruction quality
  double proc_cost = 0.0;  // proc_cost_per_mb * size_bytes / 1e6
};

struct CostBreakdown {
  double processing_cost = 0.0;
  double transmission_cost = 0.0;
  double total = 0.0;
};

// One flag per constraint family.
struct Feasibility {
  bool power_ok = false;
  bool count_ok = false;
  bool quality_ok = false;
  bool qos_ok = false;

  bool all() const { return power_ok && count_ok && quality_ok && qos_ok; }
  int violations() const {
    return static_cast<int>(!power_ok) + static_cast<int>(!count_ok) +
           static_cast<int>(!quality_ok) + static_cast<int>(!qos_ok);
  }
};

struct JointAction {
  std::vector<Mask> selection;  // one mask per agent
  std::vector<double> power_w;  // one transmit power per agent, in (0, p_max]
};

// Fixed-length local feature vector, M + 5 entries:
//   [prev mask bits (M), prev power / p_max, prev SINR (log), own gain (log),
//    received interference (log), step / T]
struct AgentObservation {
  std::vector<double> features;
};

}  // namespace nspmoe
