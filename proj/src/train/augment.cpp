#include "xpl/train/augment.hpp"

#include "xpl/core/error.hpp"

namespace xpl::train {

vrp::Point transform_point(const vrp::Point& p, int which) {
  const double x = p.x, y = p.y;
  switch (which) {
    case 0: return {x, y};
    case 1: return {y, x};
    case 2: return {x, 1.0 - y};
    case 3: return {1.0 - x, y};
    case 4: return {1.0 - x, 1.0 - y};
    case 5: return {y, 1.0 - x};
    case 6: return {1.0 - y, x};
    case 7: return {1.0 - y, 1.0 - x};
  }
  fail(ErrorCode::kInvalidArgument, "symmetry index out of range");
}

std::array<vrp::Instance, kSymmetries> augment_instance(const vrp::Instance& instance) {
  std::array<vrp::Instance, kSymmetries> out;
  for (int k = 0; k < kSymmetries; ++k) {
    out[k] = instance;
    for (vrp::Point& p : out[k].coords) p = transform_point(p, k);
  }
  return out;
}

}  // namespace xpl::train
