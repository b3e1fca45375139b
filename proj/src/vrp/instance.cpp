#include "xpl/vrp/instance.hpp"

#include <cmath>
#include <sstream>

#include "xpl/core/error.hpp"

namespace xpl::vrp {

std::string_view to_string(Problem problem) {
  switch (problem) {
    case Problem::kTsp: return "tsp";
    case Problem::kOp: return "op";
    case Problem::kPctsp: return "pctsp";
    case Problem::kCvrp: return "cvrp";
  }
  return "?";
}

std::string_view to_string(Distribution distribution) {
  return distribution == Distribution::kUniform ? "uniform" : "gaussian";
}

Problem parse_problem(std::string_view name) {
  for (Problem p : {Problem::kTsp, Problem::kOp, Problem::kPctsp, Problem::kCvrp}) {
    if (name == to_string(p)) return p;
  }
  fail(ErrorCode::kInvalidArgument, "unknown problem '" + std::string(name) + "'");
}

Distribution parse_distribution(std::string_view name) {
  if (name == "uniform") return Distribution::kUniform;
  if (name == "gaussian") return Distribution::kGaussian;
  fail(ErrorCode::kInvalidArgument, "unknown distribution '" + std::string(name) + "'");
}

std::string_view to_string(Violation violation) {
  switch (violation) {
    case Violation::kNone: return "none";
    case Violation::kMalformed: return "malformed";
    case Violation::kIndexOutOfRange: return "index-out-of-range";
    case Violation::kDuplicateVisit: return "duplicate-visit";
    case Violation::kMissingCustomer: return "missing-customer";
    case Violation::kBudgetExceeded: return "budget-exceeded";
    case Violation::kPrizeShortfall: return "prize-shortfall";
    case Violation::kCapacityExceeded: return "capacity-exceeded";
  }
  return "?";
}

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void validate(const Instance& instance) {
  const std::size_t expected =
      static_cast<std::size_t>(instance.n_customers) + (has_depot(instance.problem) ? 1 : 0);
  require(instance.n_customers >= 1, ErrorCode::kInvalidArgument, "instance has no customers");
  require(instance.coords.size() == expected, ErrorCode::kInvalidArgument,
          "coordinate count does not match n_customers");
  auto check_attr = [&](const std::vector<double>& v, const char* what) {
    require(v.size() == expected, ErrorCode::kInvalidArgument,
            std::string(what) + " length does not match node count");
    require(v[0] == 0.0, ErrorCode::kInvalidArgument, std::string("depot ") + what + " must be 0");
    for (double x : v) {
      require(x >= 0.0 && std::isfinite(x), ErrorCode::kInvalidArgument,
              std::string(what) + " must be finite and non-negative");
    }
  };
  switch (instance.problem) {
    case Problem::kTsp:
      break;
    case Problem::kOp:
      check_attr(instance.prizes, "prizes");
      require(instance.max_length > 0.0, ErrorCode::kInvalidArgument, "max_length must be positive");
      break;
    case Problem::kPctsp:
      check_attr(instance.prizes, "prizes");
      check_attr(instance.penalties, "penalties");
      require(instance.min_prize > 0.0, ErrorCode::kInvalidArgument, "min_prize must be positive");
      break;
    case Problem::kCvrp:
      check_attr(instance.demands, "demands");
      require(instance.capacity > 0.0, ErrorCode::kInvalidArgument, "capacity must be positive");
      break;
  }
}

namespace {

void check_indices(const Instance& instance, std::span<const std::size_t> nodes) {
  for (std::size_t v : nodes) {
    if (v >= instance.node_count()) {
      fail(ErrorCode::kInvalidArgument,
           "node index " + std::to_string(v) + " out of range for " +
               std::to_string(instance.node_count()) + " nodes");
    }
  }
}

}  // namespace

double tour_length(const Instance& instance, std::span<const std::size_t> nodes) {
  check_indices(instance, nodes);
  if (nodes.size() < 2) return 0.0;
  double length = 0.0;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    length += distance(instance.coords[nodes[i - 1]], instance.coords[nodes[i]]);
  }
  if (instance.problem == Problem::kTsp) {
    length += distance(instance.coords[nodes.back()], instance.coords[nodes.front()]);
  }
  return length;
}

double tour_cost(const Instance& instance, std::span<const std::size_t> nodes) {
  const double length = tour_length(instance, nodes);
  switch (instance.problem) {
    case Problem::kTsp:
    case Problem::kCvrp:
      return length;
    case Problem::kOp: {
      std::vector<bool> seen(instance.node_count(), false);
      double prize = 0.0;
      for (std::size_t v : nodes) {
        if (v != 0 && !seen[v]) prize += instance.prizes[v];
        seen[v] = true;
      }
      return -prize;
    }
    case Problem::kPctsp: {
      std::vector<bool> seen(instance.node_count(), false);
      for (std::size_t v : nodes) seen[v] = true;
      double penalty = 0.0;
      for (std::size_t v = 1; v < instance.node_count(); ++v) {
        if (!seen[v]) penalty += instance.penalties[v];
      }
      return length + penalty;
    }
  }
  return length;
}

Feasibility check_feasible(const Instance& instance, std::span<const std::size_t> nodes) {
  auto bad = [](Violation v, std::string detail) { return Feasibility{false, v, std::move(detail)}; };
  const std::size_t count = instance.node_count();
  for (std::size_t v : nodes) {
    if (v >= count) return bad(Violation::kIndexOutOfRange, "node " + std::to_string(v));
  }

  if (instance.problem == Problem::kTsp) {
    if (nodes.size() != count) return bad(Violation::kMissingCustomer, "tour does not cover every node");
    std::vector<bool> seen(count, false);
    for (std::size_t v : nodes) {
      if (seen[v]) return bad(Violation::kDuplicateVisit, "node " + std::to_string(v));
      seen[v] = true;
    }
    return {true, Violation::kNone, {}};
  }

  if (nodes.size() < 2 || nodes.front() != 0 || nodes.back() != 0) {
    return bad(Violation::kMalformed, "tour must start and end at the depot");
  }
  std::vector<bool> seen(count, false);
  for (std::size_t v : nodes) {
    if (v == 0) continue;
    if (seen[v]) return bad(Violation::kDuplicateVisit, "node " + std::to_string(v));
    seen[v] = true;
  }

  switch (instance.problem) {
    case Problem::kOp: {
      for (std::size_t i = 1; i + 1 < nodes.size(); ++i) {
        if (nodes[i] == 0) return bad(Violation::kMalformed, "OP tour revisits the depot");
      }
      const double length = tour_length(instance, nodes);
      if (length > instance.max_length) {
        std::ostringstream os;
        os << "length " << length << " > " << instance.max_length;
        return bad(Violation::kBudgetExceeded, os.str());
      }
      break;
    }
    case Problem::kPctsp: {
      for (std::size_t i = 1; i + 1 < nodes.size(); ++i) {
        if (nodes[i] == 0) return bad(Violation::kMalformed, "PCTSP tour revisits the depot");
      }
      double prize = 0.0;
      for (std::size_t v : nodes) prize += instance.prizes[v];
      if (prize < instance.min_prize) {
        std::ostringstream os;
        os << "prize " << prize << " < " << instance.min_prize;
        return bad(Violation::kPrizeShortfall, os.str());
      }
      break;
    }
    case Problem::kCvrp: {
      for (std::size_t v = 1; v < count; ++v) {
        if (!seen[v]) return bad(Violation::kMissingCustomer, "customer " + std::to_string(v));
      }
      double load = 0.0;
      for (std::size_t i = 1; i < nodes.size(); ++i) {
        if (nodes[i] == 0) {
          if (nodes[i - 1] == 0) return bad(Violation::kMalformed, "empty subtour");
          load = 0.0;
          continue;
        }
        load += instance.demands[nodes[i]];
        if (load > instance.capacity) {
          std::ostringstream os;
          os << "subtour load " << load << " > " << instance.capacity;
          return bad(Violation::kCapacityExceeded, os.str());
        }
      }
      break;
    }
    case Problem::kTsp:
      break;
  }
  return {true, Violation::kNone, {}};
}

Tour make_tour(const Instance& instance, std::vector<std::size_t> nodes) {
  Tour tour;
  tour.problem = instance.problem;
  const Feasibility verdict = check_feasible(instance, nodes);
  tour.feasible = verdict.feasible;
  tour.violation = verdict.violation;
  tour.cost = verdict.violation == Violation::kIndexOutOfRange ? 0.0 : tour_cost(instance, nodes);
  tour.nodes = std::move(nodes);
  return tour;
}

}  // namespace xpl::vrp
