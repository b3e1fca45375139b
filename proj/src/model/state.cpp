#include "xpl/model/state.hpp"

#include <algorithm>
#include <string>

#include "xpl/core/error.hpp"

namespace xpl::model {

using vrp::Problem;

ConstructionState::ConstructionState(const vrp::Instance& instance)
    : instance_(&instance), visited_(instance.node_count(), 0) {
  require(instance.node_count() > 0, ErrorCode::kInvalidArgument, "empty instance");
  if (vrp::has_depot(instance.problem)) {
    path_.push_back(0);
    visited_[0] = 1;
  }
}

bool ConstructionState::customer_admissible(std::size_t j) const {
  if (visited_[j]) return false;
  const vrp::Instance& in = *instance_;
  switch (in.problem) {
    case Problem::kTsp:
    case Problem::kPctsp: return true;
    case Problem::kOp: {
      const double out = vrp::distance(in.coords[current_], in.coords[j]);
      const double back = vrp::distance(in.coords[j], in.coords[0]);
      return length_ + out + back <= in.max_length;
    }
    case Problem::kCvrp: return load_ + in.demands[j] <= in.capacity;
  }
  return false;
}

void ConstructionState::mask(std::uint8_t* out) const {
  const std::size_t n = node_count();
  std::fill(out, out + n, std::uint8_t{0});
  if (done_) {
    out[0] = 1;
    return;
  }
  const vrp::Instance& in = *instance_;
  bool any_customer = false;
  for (std::size_t j = in.first_customer(); j < n; ++j) {
    out[j] = customer_admissible(j) ? 1 : 0;
    any_customer = any_customer || out[j];
  }
  switch (in.problem) {
    case Problem::kTsp: break;
    case Problem::kOp:
      // Leaving the depot just to come straight back is pointless while a
      // customer still fits.
      out[0] = (current_ != 0 || !any_customer) ? 1 : 0;
      break;
    case Problem::kPctsp: {
      const bool all = served_ + 1 == n;
      out[0] = (collected_ >= in.min_prize || all) ? 1 : 0;
      break;
    }
    case Problem::kCvrp: out[0] = (current_ != 0 || !any_customer) ? 1 : 0; break;
  }
}

nn::Mask ConstructionState::mask() const {
  nn::Mask m(node_count());
  mask(m.data());
  return m;
}

void ConstructionState::select(std::size_t node) {
  require(node < node_count(), ErrorCode::kInvalidState, "action out of range");
  if (done_) {
    require(node == 0, ErrorCode::kInvalidState, "construction already finished");
    return;
  }
  nn::Mask m = mask();
  require(m[node] != 0, ErrorCode::kInvalidState, "node " + std::to_string(node) + " is not admissible");
  const vrp::Instance& in = *instance_;
  ++steps_;
  if (in.problem == Problem::kTsp) {
    if (path_.empty()) first_ = node;
    visited_[node] = 1;
    path_.push_back(node);
    current_ = node;
    ++served_;
    done_ = served_ == node_count();
    return;
  }
  length_ += vrp::distance(in.coords[current_], in.coords[node]);
  path_.push_back(node);
  current_ = node;
  if (node == 0) {
    if (in.problem == Problem::kCvrp) {
      load_ = 0.0;
      done_ = served_ + 1 == node_count();
    } else {
      done_ = true;
    }
    return;
  }
  visited_[node] = 1;
  ++served_;
  if (in.problem == Problem::kPctsp || in.problem == Problem::kOp) collected_ += in.prizes[node];
  if (in.problem == Problem::kCvrp) load_ += in.demands[node];
}

double ConstructionState::dynamic_feature() const {
  const vrp::Instance& in = *instance_;
  switch (in.problem) {
    case Problem::kTsp: return 0.0;
    case Problem::kOp: return std::max(0.0, in.max_length - length_) / in.max_length;
    case Problem::kPctsp: return std::max(0.0, in.min_prize - collected_) / in.min_prize;
    case Problem::kCvrp: return (in.capacity - load_) / in.capacity;
  }
  return 0.0;
}

}  // namespace xpl::model
