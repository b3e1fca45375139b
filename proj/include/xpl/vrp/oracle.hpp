#pragma once

#include "xpl/vrp/instance.hpp"

namespace xpl::vrp {

inline constexpr int kOracleMaxCustomers = 10;

// Exact optimum by exhaustive enumeration. TSP enumerates permutations with
// node 0 fixed, OP/PCTSP enumerate ordered customer subsets (with bounds that
// never cut an improving tour), CVRP enumerates permutations and splits each
// one optimally into capacity-feasible subtours.
Tour brute_force_optimal(const Instance& instance);

}  // namespace xpl::vrp
