#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xpl/vrp/instance.hpp"

namespace xpl::vrp {

// Per-size constants for the benchmark family. Sizes between the standard
// 20/50/100 buckets use the next bucket up.
double default_op_max_length(int n_customers);
double default_pctsp_penalty_scale(int n_customers);
double default_cvrp_capacity(int n_customers);

std::vector<Instance> generate_instances(Problem problem, int n_customers, int count,
                                         Distribution distribution, std::uint64_t seed);

// Isotropic min-max map of `points` into the unit square. Returns the scale
// divisor so original distances are recovered as normalized * scale.
double normalize_unit_square(std::span<Point> points);

}  // namespace xpl::vrp
