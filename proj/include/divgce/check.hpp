#pragma once

#include <cstdint>
#include <vector>

#include "divgce/oracle.hpp"

namespace divgce::harness {

/// Runs every implementation against its oracle on randomized inputs drawn
/// from `seed`. Tolerances: 1e-12 for algebraically identical paths, 1e-8
/// for finite differences of smooth losses, 1e-4 relative for the full model.
std::vector<oracle::OracleReport> run_oracle_suite(std::uint64_t seed = 0);

}  // namespace divgce::harness
