#pragma once

// Monte Carlo tail oracle for weighted chi-square convolutions.  This is the
// independent reference the inversion code is tested against: draw
// Q = sum_j lambda_j Z_j^2 directly and count exceedances.

#include <Eigen/Core>
#include <cmath>
#include <random>

#include "aftkm/rng.hpp"

namespace testsupport {

struct McTail {
    double p;
    double se;
};

inline McTail mc_tail(const Eigen::VectorXd& lambda, double x, long ndraws, std::uint64_t seed) {
    std::mt19937_64 rng = aftkm::make_stream(seed, aftkm::Stream::oracle);
    std::normal_distribution<double> nd;
    long hits = 0;
    for (long i = 0; i < ndraws; ++i) {
        double q = 0.0;
        for (Eigen::Index j = 0; j < lambda.size(); ++j) {
            double z = nd(rng);
            q += lambda[j] * z * z;
        }
        if (q >= x) ++hits;
    }
    double p = static_cast<double>(hits) / static_cast<double>(ndraws);
    double se = std::sqrt(std::max(p * (1.0 - p), 1e-12) / static_cast<double>(ndraws));
    return {p, se};
}

}  // namespace testsupport
