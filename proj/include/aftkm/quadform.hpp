#pragma once

#include <Eigen/Core>

namespace aftkm {

// Tail probability machinery for weighted chi-square convolutions
// Q = sum_j lambda_j * chi2_1, the null law of every statistic in this
// library.  davies_tail inverts the characteristic function numerically
// (Imhof-type integrand, adaptive truncation + interval halving);
// moment_match_tail is the cumulant-based fallback used when the
// integrator fails to converge.

struct QuadFormOptions {
    double accuracy = 1e-6;        // absolute error target for the inversion
    long max_nodes = 1 << 20;      // total trapezoid node budget
};

struct QuadFormResult {
    double p = 1.0;                // P(Q >= x), clipped to [1e-12, 1]
    bool converged = false;        // integrator met the accuracy target
    bool moment_fallback = false;  // p came from moment_match_tail
};

// P(Q >= x).  Weights may carry mixed signs; entries with
// |lambda_j| < 1e-12 * max|lambda| are dropped.  Throws
// std::invalid_argument when all weights are zero or the list is empty.
QuadFormResult davies_tail(const Eigen::VectorXd& lambda, double x,
                           const QuadFormOptions& opts = {});

// Tail of the scaled (noncentral) chi-square matched to the first
// cumulants of Q; exact when all weights are equal.  Throws
// std::invalid_argument when Q has zero variance.
double moment_match_tail(const Eigen::VectorXd& lambda, double x);

}  // namespace aftkm
