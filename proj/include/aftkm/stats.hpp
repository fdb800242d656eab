#pragma once

#include <cstddef>
#include <vector>

namespace aftkm {

// Multiple-testing and goodness-of-fit helpers shared by the scan command
// and the calibration diagnostics.

// Step-up threshold sequence valid under arbitrary dependence between the
// tests: threshold_i = alpha * i / (m * sum_{k=1}^m 1/k), i = 1..m.
std::vector<double> bh_thresholds(int m, double alpha);

// Applies the step-up rule to the p-values: with p_(1) <= ... <= p_(m) find
// the largest i with p_(i) <= threshold_i and reject the i smallest.
// Returns the rejected positions in the input vector, ordered by p-value.
std::vector<int> bh_reject(const std::vector<double>& p, double alpha);

// Kolmogorov-Smirnov distance between the sample and U(0,1).  Entries must
// lie in [0,1]; the input is copied and sorted.
double ks_uniform(const std::vector<double>& p);

// Two-sided tail of the Kolmogorov statistic for sample size n at observed
// distance d, with Stephens' finite-sample adjustment.
double ks_pvalue(double d, std::size_t n);

}  // namespace aftkm
