#pragma once

#include <cstddef>
#include <vector>

#include "xpl/nn/ops.hpp"
#include "xpl/vrp/instance.hpp"

namespace xpl::model {

// Partial solution of one rollout plus the problem-specific action mask.
//
// TSP starts with nothing selected and ends once every node is visited.
// Depot problems start at the depot. OP ends on returning to the depot, and
// a customer is admissible only if the leg there plus the leg home fit the
// remaining budget. PCTSP offers the depot only once the prize floor is
// met. CVRP masks customers whose demand exceeds the remaining load and
// ends when every customer is served and the vehicle is home. A finished
// state admits only node 0 and selecting it changes nothing.
class ConstructionState {
 public:
  explicit ConstructionState(const vrp::Instance& instance);

  const vrp::Instance& instance() const { return *instance_; }
  std::size_t node_count() const { return visited_.size(); }
  bool done() const { return done_; }
  // Number of selections made so far (excluding the implicit depot start).
  std::size_t steps() const { return steps_; }
  std::size_t current() const { return current_; }
  std::size_t first() const { return first_; }

  void mask(std::uint8_t* out) const;
  nn::Mask mask() const;
  // Throws invalid-state when `node` is not admissible.
  void select(std::size_t node);

  // Normalized dynamic feature fed to the decoder: remaining length over
  // the budget (OP), missing prize over the floor (PCTSP), remaining load
  // over capacity (CVRP). Zero for TSP.
  double dynamic_feature() const;

  const std::vector<std::size_t>& nodes() const { return path_; }

 private:
  bool customer_admissible(std::size_t j) const;

  const vrp::Instance* instance_;
  std::vector<std::uint8_t> visited_;
  std::vector<std::size_t> path_;
  std::size_t current_ = 0;
  std::size_t first_ = 0;
  std::size_t steps_ = 0;
  std::size_t served_ = 0;
  double length_ = 0.0;
  double collected_ = 0.0;
  double load_ = 0.0;
  bool done_ = false;
};

}  // namespace xpl::model
