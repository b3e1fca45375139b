#pragma once

#include <array>

#include "xpl/vrp/instance.hpp"

namespace xpl::train {

inline constexpr int kSymmetries = 8;

// The dihedral symmetries of the unit square in a fixed order: identity,
// swap, flip y, flip x, flip both, and the three rotations/reflections
// that remain. Non-coordinate attributes are copied unchanged.
vrp::Point transform_point(const vrp::Point& p, int which);
std::array<vrp::Instance, kSymmetries> augment_instance(const vrp::Instance& instance);

}  // namespace xpl::train
