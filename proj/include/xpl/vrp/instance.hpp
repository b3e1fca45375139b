#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xpl::vrp {

enum class Problem : std::uint8_t { kTsp, kOp, kPctsp, kCvrp };
enum class Distribution : std::uint8_t { kUniform, kGaussian };

std::string_view to_string(Problem problem);
std::string_view to_string(Distribution distribution);
Problem parse_problem(std::string_view name);
Distribution parse_distribution(std::string_view name);

constexpr bool has_depot(Problem problem) { return problem != Problem::kTsp; }

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

double distance(const Point& a, const Point& b);

// One routing instance. Per-node attribute vectors are indexed like
// `coords`, so for depot problems entry 0 belongs to the depot and is zero.
struct Instance {
  Problem problem = Problem::kTsp;
  std::vector<Point> coords;
  std::vector<double> prizes;     // OP, PCTSP
  std::vector<double> penalties;  // PCTSP
  std::vector<double> demands;    // CVRP
  double capacity = 0.0;          // CVRP
  double max_length = 0.0;        // OP
  double min_prize = 0.0;         // PCTSP
  int n_customers = 0;

  std::size_t node_count() const { return coords.size(); }
  std::size_t first_customer() const { return has_depot(problem) ? 1 : 0; }

  friend bool operator==(const Instance&, const Instance&) = default;
};

// Throws invalid-argument when the structural invariants do not hold.
void validate(const Instance& instance);

enum class Violation : std::uint8_t {
  kNone,
  kMalformed,
  kIndexOutOfRange,
  kDuplicateVisit,
  kMissingCustomer,
  kBudgetExceeded,
  kPrizeShortfall,
  kCapacityExceeded,
};

std::string_view to_string(Violation violation);

struct Feasibility {
  bool feasible = false;
  Violation violation = Violation::kNone;
  std::string detail;
};

// Tour encoding: TSP tours list each node once and close implicitly.
// Depot problems start and end at node 0; CVRP tours separate subtours by
// further depot visits, e.g. 0 3 1 0 2 0.
struct Tour {
  Problem problem = Problem::kTsp;
  std::vector<std::size_t> nodes;
  double cost = 0.0;  // lower is better; OP stores the negated prize sum
  bool feasible = false;
  Violation violation = Violation::kNone;
};

double tour_length(const Instance& instance, std::span<const std::size_t> nodes);
double tour_cost(const Instance& instance, std::span<const std::size_t> nodes);
Feasibility check_feasible(const Instance& instance, std::span<const std::size_t> nodes);

// Evaluates cost and feasibility and packages both with the node sequence.
Tour make_tour(const Instance& instance, std::vector<std::size_t> nodes);

}  // namespace xpl::vrp
