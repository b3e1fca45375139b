#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xpl/vrp/instance.hpp"

namespace xpl::io {

// A CVRPLIB/TSPLIB-style instance in original units and file order.
struct BenchmarkInstance {
  std::string name;
  std::string comment;
  std::string edge_weight_type = "EUC_2D";
  int dimension = 0;
  double capacity = 0.0;
  std::vector<vrp::Point> coords;
  std::vector<double> demands;
  std::size_t depot = 0;  // 0-based
  std::optional<double> best_known;
  double scale = 1.0;     // original distance = normalized distance * scale

  friend bool operator==(const BenchmarkInstance&, const BenchmarkInstance&) = default;
};

// Required: DIMENSION, CAPACITY, NODE_COORD_SECTION, DEMAND_SECTION,
// DEPOT_SECTION. Errors name the missing section or the offending line.
BenchmarkInstance parse_cvrplib(const std::string& text);
// Also picks up the best-known cost from a sibling "<stem>.sol" file
// ("Cost <value>" line) when one exists.
BenchmarkInstance load_cvrplib(const std::filesystem::path& path);
std::string serialize_cvrplib(const BenchmarkInstance& bench);
std::optional<double> parse_solution_cost(const std::string& text);

// Model input: depot moved to index 0, coordinates mapped isotropically
// into the unit square. original_index[i] is the file position of node i.
struct NormalizedInstance {
  vrp::Instance instance;
  std::vector<std::size_t> original_index;
};
NormalizedInstance to_instance(const BenchmarkInstance& bench);

// Tour cost over the original coordinates. With round_edges every edge is
// rounded to the nearest integer first, the convention behind published
// best-known values.
double original_cost(const BenchmarkInstance& bench, const NormalizedInstance& normalized,
                     std::span<const std::size_t> tour, bool round_edges);

}  // namespace xpl::io
