#include "xpl/vrp/generate.hpp"

#include <algorithm>
#include <random>

#include "xpl/core/error.hpp"

namespace xpl::vrp {

double default_op_max_length(int n_customers) {
  if (n_customers <= 20) return 2.0;
  if (n_customers <= 50) return 3.0;
  return 4.0;
}

double default_pctsp_penalty_scale(int n_customers) {
  // Upper bound of the uniform penalty distribution, 3K/n.
  return 3.0 * default_op_max_length(n_customers) / n_customers;
}

double default_cvrp_capacity(int n_customers) {
  if (n_customers <= 10) return 20.0;
  if (n_customers <= 20) return 30.0;
  if (n_customers <= 50) return 40.0;
  return 50.0;
}

double normalize_unit_square(std::span<Point> points) {
  if (points.empty()) return 1.0;
  double min_x = points[0].x, max_x = points[0].x;
  double min_y = points[0].y, max_y = points[0].y;
  for (const Point& p : points) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  double scale = std::max(max_x - min_x, max_y - min_y);
  if (scale <= 0.0) scale = 1.0;
  for (Point& p : points) {
    p.x = std::clamp((p.x - min_x) / scale, 0.0, 1.0);
    p.y = std::clamp((p.y - min_y) / scale, 0.0, 1.0);
  }
  return scale;
}

std::vector<Instance> generate_instances(Problem problem, int n_customers, int count,
                                         Distribution distribution, std::uint64_t seed) {
  require(n_customers >= 1, ErrorCode::kInvalidArgument, "n_customers must be >= 1");
  require(count >= 1, ErrorCode::kInvalidArgument, "count must be >= 1");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> demand(1, 9);

  const std::size_t nodes = static_cast<std::size_t>(n_customers) + (has_depot(problem) ? 1 : 0);
  std::vector<Instance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    Instance inst;
    inst.problem = problem;
    inst.n_customers = n_customers;
    inst.coords.resize(nodes);
    for (Point& p : inst.coords) {
      if (distribution == Distribution::kUniform) {
        p.x = unit(rng);
        p.y = unit(rng);
      } else {
        p.x = normal(rng);
        p.y = normal(rng);
      }
    }
    if (distribution == Distribution::kGaussian) normalize_unit_square(inst.coords);

    switch (problem) {
      case Problem::kTsp:
        break;
      case Problem::kOp:
        inst.prizes.assign(nodes, 1.0);
        inst.prizes[0] = 0.0;
        inst.max_length = default_op_max_length(n_customers);
        break;
      case Problem::kPctsp: {
        inst.prizes.assign(nodes, 0.0);
        inst.penalties.assign(nodes, 0.0);
        const double penalty_max = default_pctsp_penalty_scale(n_customers);
        double total = 0.0;
        for (std::size_t i = 1; i < nodes; ++i) {
          inst.penalties[i] = unit(rng) * penalty_max;
          inst.prizes[i] = unit(rng) * 4.0 / n_customers;
          total += inst.prizes[i];
        }
        // Small instances can fall short of the unit prize floor; clamp
        // (with slack for summation order) so visiting every customer
        // always satisfies it.
        inst.min_prize = std::min(1.0, total * (1.0 - 1e-9));
        if (inst.min_prize <= 0.0) {
          inst.prizes[1] = 1.0;
          inst.min_prize = 1.0;
        }
        break;
      }
      case Problem::kCvrp:
        inst.demands.assign(nodes, 0.0);
        for (std::size_t i = 1; i < nodes; ++i) inst.demands[i] = demand(rng);
        inst.capacity = default_cvrp_capacity(n_customers);
        break;
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace xpl::vrp
