#include "nspmoe/cost.hpp"

#include <algorithm>
#include <cmath>

#include "nspmoe/errors.hpp"

namespace nspmoe::cost {

double selection_cost(std::span<const ImageMeta> row, Mask mask, double alpha) {
  double sum = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (mask_bit(mask, static_cast<int>(i))) sum += row[i].proc_cost;
  }
  return alpha * sum;
}

double transmission_cost(double power_w, double rate_bps, double payload_bytes, double beta) {
  if (!(rate_bps > 0.0)) {
    throw DomainError("transmission_cost: rate must be positive (QoS infeasible)");
  }
  const double tx_time_s = 8.0 * payload_bytes / rate_bps;
  return beta * power_w * tx_time_s;
}

CostBreakdown breakdown(double processing_cost, double transmission_cost) {
  return {processing_cost, transmission_cost, processing_cost + transmission_cost};
}

double reward(double total_cost, bool feasible_all, double c_ref) {
  if (!feasible_all) return 0.0;
  return std::clamp(c_ref / (total_cost + kRewardEpsilon), 0.0, kRewardMax);
}

double soft_reward(double total_cost, int violation_count, double c_ref) {
  const double base = std::clamp(c_ref / (total_cost + kRewardEpsilon), 0.0, kRewardMax);
  if (violation_count == 0) return base;
  return base * std::exp(-kSoftPenaltyKappa * violation_count);
}

}  // namespace nspmoe::cost
