#pragma once

#include <span>

#include "nspmoe/types.hpp"

namespace nspmoe::cost {

inline constexpr double kRewardEpsilon = 1e-6;
inline constexpr double kRewardMax = 10.0;
inline constexpr double kSoftPenaltyKappa = 2.0;

// alpha * sum of proc_cost over the selected images of one agent.
double selection_cost(std::span<const ImageMeta> row, Mask mask, double alpha);

// beta * power * (8 * payload / rate). Energy of one payload delivery,
// weighted. Throws DomainError if rate_bps <= 0.
double transmission_cost(double power_w, double rate_bps, double payload_bytes, double beta);

CostBreakdown breakdown(double processing_cost, double transmission_cost);

// c_ref / (cost + eps) on feasible states, exactly 0 otherwise; clipped to
// [0, kRewardMax].
double reward(double total_cost, bool feasible_all, double c_ref);

// Non-default variant: the hard zero is replaced by
// exp(-kappa * violation_count) scaling.
double soft_reward(double total_cost, int violation_count, double c_ref);

}  // namespace nspmoe::cost
