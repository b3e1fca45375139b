#include "xpl/vrp/oracle.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "xpl/core/error.hpp"

namespace xpl::vrp {
namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix distance_matrix(const Instance& instance) {
  const std::size_t n = instance.node_count();
  Matrix d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i][j] = distance(instance.coords[i], instance.coords[j]);
  }
  return d;
}

Tour solve_tsp(const Instance& instance) {
  const std::size_t n = instance.node_count();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_cost = tour_cost(instance, perm);
  while (std::next_permutation(perm.begin() + 1, perm.end())) {
    const double c = tour_cost(instance, perm);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  }
  return make_tour(instance, best);
}

// Depth-first enumeration of ordered customer subsets starting at the depot.
class SubsetSearch {
 public:
  explicit SubsetSearch(const Instance& instance)
      : inst_(instance), d_(distance_matrix(instance)), used_(instance.node_count(), false) {
    path_.push_back(0);
    if (inst_.problem == Problem::kPctsp) {
      for (std::size_t v = 1; v < inst_.node_count(); ++v) missing_penalty_ += inst_.penalties[v];
    }
  }

  Tour run() {
    visit(0.0, 0.0);
    return make_tour(inst_, best_);
  }

 private:
  void consider(double length, double prize) {
    std::vector<std::size_t> closed = path_;
    closed.push_back(0);
    if (inst_.problem == Problem::kOp) {
      // Maximize prize; among equal prizes prefer the shorter tour.
      const double total = length + d_[path_.back()][0];
      if (total > inst_.max_length) return;
      if (best_.empty() || prize > best_prize_ ||
          (prize == best_prize_ && total < best_length_)) {
        best_prize_ = prize;
        best_length_ = total;
        best_ = std::move(closed);
      }
    } else {
      if (prize < inst_.min_prize) return;
      const double cost = length + d_[path_.back()][0] + missing_penalty_;
      if (best_.empty() || cost < best_cost_) {
        best_cost_ = cost;
        best_ = std::move(closed);
      }
    }
  }

  void visit(double length, double prize) {
    consider(length, prize);
    const std::size_t cur = path_.back();
    for (std::size_t v = 1; v < inst_.node_count(); ++v) {
      if (used_[v]) continue;
      const double next = length + d_[cur][v];
      if (inst_.problem == Problem::kOp && next + d_[v][0] > inst_.max_length) continue;
      // Any completion costs at least its path length plus the return leg.
      if (inst_.problem == Problem::kPctsp && !best_.empty() && next + d_[v][0] >= best_cost_) continue;
      used_[v] = true;
      path_.push_back(v);
      if (inst_.problem == Problem::kPctsp) missing_penalty_ -= inst_.penalties[v];
      visit(next, prize + inst_.prizes[v]);
      if (inst_.problem == Problem::kPctsp) missing_penalty_ += inst_.penalties[v];
      path_.pop_back();
      used_[v] = false;
    }
  }

  const Instance& inst_;
  Matrix d_;
  std::vector<bool> used_;
  std::vector<std::size_t> path_;
  std::vector<std::size_t> best_;
  double missing_penalty_ = 0.0;
  double best_prize_ = 0.0;
  double best_length_ = 0.0;
  double best_cost_ = std::numeric_limits<double>::infinity();
};

// Optimal split of a giant tour into capacity-feasible subtours (shortest
// path over the auxiliary DAG of consecutive customer runs).
double split_cost(const Instance& inst, const Matrix& d, const std::vector<std::size_t>& order,
                  std::vector<std::size_t>* pred) {
  const std::size_t n = order.size();
  std::vector<double> best(n + 1, std::numeric_limits<double>::infinity());
  pred->assign(n + 1, 0);
  best[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] == std::numeric_limits<double>::infinity()) continue;
    double load = 0.0;
    double inner = 0.0;
    for (std::size_t j = i; j < n; ++j) {
      load += inst.demands[order[j]];
      if (load > inst.capacity) break;
      if (j > i) inner += d[order[j - 1]][order[j]];
      const double route = d[0][order[i]] + inner + d[order[j]][0];
      if (best[i] + route < best[j + 1]) {
        best[j + 1] = best[i] + route;
        (*pred)[j + 1] = i;
      }
    }
  }
  return best[n];
}

Tour solve_cvrp(const Instance& instance) {
  const Matrix d = distance_matrix(instance);
  std::vector<std::size_t> order(instance.node_count() - 1);
  std::iota(order.begin(), order.end(), 1);
  std::vector<std::size_t> pred;
  std::vector<std::size_t> best_order;
  std::vector<std::size_t> best_pred;
  double best = std::numeric_limits<double>::infinity();
  do {
    const double c = split_cost(instance, d, order, &pred);
    if (c < best) {
      best = c;
      best_order = order;
      best_pred = pred;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  require(!best_order.empty(), ErrorCode::kInvalidArgument,
          "CVRP instance has a customer whose demand exceeds capacity");

  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t j = best_order.size(); j > 0; j = best_pred[j]) runs.emplace_back(best_pred[j], j);
  std::reverse(runs.begin(), runs.end());
  std::vector<std::size_t> nodes{0};
  for (auto [from, to] : runs) {
    for (std::size_t k = from; k < to; ++k) nodes.push_back(best_order[k]);
    nodes.push_back(0);
  }
  return make_tour(instance, std::move(nodes));
}

}  // namespace

Tour brute_force_optimal(const Instance& instance) {
  validate(instance);
  if (instance.n_customers > kOracleMaxCustomers) {
    fail(ErrorCode::kOracleSizeExceeded,
         "brute-force oracle supports at most " + std::to_string(kOracleMaxCustomers) +
             " customers, got " + std::to_string(instance.n_customers));
  }
  switch (instance.problem) {
    case Problem::kTsp: return solve_tsp(instance);
    case Problem::kOp:
    case Problem::kPctsp: return SubsetSearch(instance).run();
    case Problem::kCvrp: return solve_cvrp(instance);
  }
  fail(ErrorCode::kInvalidArgument, "unknown problem");
}

}  // namespace xpl::vrp
