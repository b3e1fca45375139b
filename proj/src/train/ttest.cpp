#include "xpl/train/ttest.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "xpl/core/error.hpp"

namespace xpl::train {

PairedTTest paired_t_test(std::span<const double> candidate, std::span<const double> baseline) {
  require(!candidate.empty(), ErrorCode::kInvalidArgument, "t-test needs at least one pair");
  require(candidate.size() == baseline.size(), ErrorCode::kInvalidArgument, "t-test samples differ in length");
  PairedTTest r;
  r.n = candidate.size();
  const double n = static_cast<double>(r.n);
  for (std::size_t i = 0; i < r.n; ++i) r.mean_diff += candidate[i] - baseline[i];
  r.mean_diff /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double d = candidate[i] - baseline[i] - r.mean_diff;
    ss += d * d;
  }
  if (r.n < 2 || ss == 0.0) {
    r.t = r.mean_diff < 0.0 ? -INFINITY : (r.mean_diff > 0.0 ? INFINITY : 0.0);
    r.p_value = r.mean_diff < 0.0 ? 0.0 : 1.0;
    return r;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  r.t = r.mean_diff / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1.0);
  r.p_value = boost::math::cdf(dist, r.t);
  return r;
}

bool significant_improvement(const PairedTTest& test, double alpha) {
  return test.mean_diff < 0.0 && test.p_value < alpha;
}

}  // namespace xpl::train
