#pragma once

// Monte-Carlo slope recovery: draw L standard normal q-vectors, evaluate a
// response for each, and regress responses on draws without intercept. The
// draws come from a single stream up front and the responses land in a
// preallocated table, so the result is bitwise reproducible for any worker
// count; the closing least-squares solve runs single-threaded.

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "aftkm/threading.hpp"

namespace aftkm::detail {

inline Eigen::MatrixXd mc_slope(Eigen::Index q, int L, std::mt19937_64 gen, int workers,
                                const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& response) {
    if (L < static_cast<int>(q) || L < 1) {
        throw std::invalid_argument("mc_slope: need at least as many draws as coefficients");
    }
    Eigen::MatrixXd W(L, q);
    std::normal_distribution<double> norm(0.0, 1.0);
    for (int l = 0; l < L; ++l) {
        for (Eigen::Index j = 0; j < q; ++j) W(l, j) = norm(gen);
    }

    std::vector<Eigen::VectorXd> ys(static_cast<std::size_t>(L));
    parallel_for(L, workers, [&](int l) {
        ys[static_cast<std::size_t>(l)] = response(W.row(l).transpose());
    });
    const Eigen::Index m = ys.empty() ? 0 : ys.front().size();
    Eigen::MatrixXd Y(L, m);
    for (int l = 0; l < L; ++l) Y.row(l) = ys[static_cast<std::size_t>(l)].transpose();

    Eigen::MatrixXd sxx = W.transpose() * W;
    Eigen::MatrixXd sxy = W.transpose() * Y;  // q x m
    return sxx.ldlt().solve(sxy).transpose();
}

}  // namespace aftkm::detail
