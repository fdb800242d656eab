#pragma once

// Plain Nelder-Mead simplex minimizer. The estimating function it serves is
// piecewise constant in beta, so anything gradient-based is off the table;
// the simplex walk only ever compares objective values.

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace aftkm::detail {

struct NelderMeadResult {
    Eigen::VectorXd x;
    double fx = 0.0;
    int evals = 0;
};

inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x0, double step, int max_evals,
                                    double ftarget) {
    const Eigen::Index q = x0.size();
    const int m = static_cast<int>(q) + 1;
    std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(m), x0);
    std::vector<double> fs(static_cast<std::size_t>(m));
    int evals = 0;

    for (int i = 1; i < m; ++i) xs[static_cast<std::size_t>(i)][i - 1] += step;
    for (int i = 0; i < m; ++i) {
        fs[static_cast<std::size_t>(i)] = f(xs[static_cast<std::size_t>(i)]);
        ++evals;
    }

    std::vector<int> ord(static_cast<std::size_t>(m));
    std::iota(ord.begin(), ord.end(), 0);
    auto reorder = [&] {
        // index tie-break keeps the walk deterministic on flat plateaus
        std::sort(ord.begin(), ord.end(), [&](int a, int b) {
            const double fa = fs[static_cast<std::size_t>(a)];
            const double fb = fs[static_cast<std::size_t>(b)];
            if (fa != fb) return fa < fb;
            return a < b;
        });
    };

    while (true) {
        reorder();
        const int best = ord.front();
        const int worst = ord.back();
        const double fbest = fs[static_cast<std::size_t>(best)];
        const double fworst = fs[static_cast<std::size_t>(worst)];
        if (fbest <= ftarget || evals >= max_evals) break;

        double diam = 0.0;
        for (int i = 1; i < m; ++i) {
            diam = std::max(diam, (xs[static_cast<std::size_t>(ord[static_cast<std::size_t>(i)])] -
                                   xs[static_cast<std::size_t>(best)])
                                      .norm());
        }
        if (fworst - fbest <= 1e-15 * (1.0 + std::abs(fbest)) && diam <= 1e-10) break;

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(q);
        for (int i = 0; i + 1 < m; ++i) centroid += xs[static_cast<std::size_t>(ord[static_cast<std::size_t>(i)])];
        centroid /= static_cast<double>(m - 1);

        const Eigen::VectorXd& xw = xs[static_cast<std::size_t>(worst)];
        Eigen::VectorXd xr = centroid + (centroid - xw);
        const double fr = f(xr);
        ++evals;
        const double fsecond = fs[static_cast<std::size_t>(ord[static_cast<std::size_t>(m - 2)])];

        if (fr < fbest) {
            Eigen::VectorXd xe = centroid + 2.0 * (centroid - xw);
            const double fe = f(xe);
            ++evals;
            if (fe < fr) {
                xs[static_cast<std::size_t>(worst)] = std::move(xe);
                fs[static_cast<std::size_t>(worst)] = fe;
            } else {
                xs[static_cast<std::size_t>(worst)] = std::move(xr);
                fs[static_cast<std::size_t>(worst)] = fr;
            }
            continue;
        }
        if (fr < fsecond) {
            xs[static_cast<std::size_t>(worst)] = std::move(xr);
            fs[static_cast<std::size_t>(worst)] = fr;
            continue;
        }

        Eigen::VectorXd xc = fr < fworst ? (centroid + 0.5 * (centroid - xw)).eval()
                                         : (centroid - 0.5 * (centroid - xw)).eval();
        const double fc = f(xc);
        ++evals;
        if (fc < std::min(fr, fworst)) {
            xs[static_cast<std::size_t>(worst)] = std::move(xc);
            fs[static_cast<std::size_t>(worst)] = fc;
            continue;
        }

        const Eigen::VectorXd xb = xs[static_cast<std::size_t>(best)];
        for (int i = 1; i < m; ++i) {
            const int j = ord[static_cast<std::size_t>(i)];
            xs[static_cast<std::size_t>(j)] = xb + 0.5 * (xs[static_cast<std::size_t>(j)] - xb);
            fs[static_cast<std::size_t>(j)] = f(xs[static_cast<std::size_t>(j)]);
            ++evals;
        }
    }

    reorder();
    NelderMeadResult out;
    out.x = xs[static_cast<std::size_t>(ord.front())];
    out.fx = fs[static_cast<std::size_t>(ord.front())];
    out.evals = evals;
    return out;
}

}  // namespace aftkm::detail
