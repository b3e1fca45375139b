#pragma once

#include <cstddef>
#include <span>

namespace xpl::train {

struct PairedTTest {
  std::size_t n = 0;
  double mean_diff = 0.0;  // mean of candidate - baseline
  double t = 0.0;
  double p_value = 1.0;    // one-sided, alternative: candidate mean is lower
};

// One-sided paired t-test on per-instance costs. Zero spread gives p = 0
// for a negative mean difference and p = 1 otherwise.
PairedTTest paired_t_test(std::span<const double> candidate, std::span<const double> baseline);

// Replace only when the candidate is better on average and significant.
bool significant_improvement(const PairedTTest& test, double alpha);

}  // namespace xpl::train
