#include "aftkm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace aftkm {

std::vector<double> bh_thresholds(int m, double alpha) {
    if (m < 1) throw std::invalid_argument("bh_thresholds: need at least one test");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("bh_thresholds: alpha must lie in (0,1)");
    }
    double harmonic = 0.0;
    for (int k = m; k >= 1; --k) harmonic += 1.0 / k;  // small terms first
    std::vector<double> t(static_cast<std::size_t>(m));
    for (int i = 1; i <= m; ++i) {
        t[static_cast<std::size_t>(i - 1)] = alpha * i / (m * harmonic);
    }
    return t;
}

std::vector<int> bh_reject(const std::vector<double>& p, double alpha) {
    const int m = static_cast<int>(p.size());
    std::vector<double> t = bh_thresholds(m, alpha);
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("bh_reject: p-value " + std::to_string(v) +
                                        " outside [0,1]");
        }
    }
    std::vector<int> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)]
                   ? p[static_cast<std::size_t>(a)] < p[static_cast<std::size_t>(b)]
                   : a < b;
    });
    int keep = 0;
    for (int i = 0; i < m; ++i) {
        if (p[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] <=
            t[static_cast<std::size_t>(i)]) {
            keep = i + 1;
        }
    }
    order.resize(static_cast<std::size_t>(keep));
    return order;
}

double ks_uniform(const std::vector<double>& p) {
    if (p.empty()) throw std::invalid_argument("ks_uniform: empty sample");
    std::vector<double> u = p;
    for (double v : u) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("ks_uniform: p-value " + std::to_string(v) +
                                        " outside [0,1]");
        }
    }
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double hi = (static_cast<double>(i) + 1.0) / n - u[i];
        const double lo = u[i] - static_cast<double>(i) / n;
        d = std::max(d, std::max(hi, lo));
    }
    return d;
}

double ks_pvalue(double d, std::size_t n) {
    if (!(d >= 0.0)) throw std::invalid_argument("ks_pvalue: negative distance");
    if (n == 0) throw std::invalid_argument("ks_pvalue: empty sample");
    if (d == 0.0) return 1.0;
    if (d >= 1.0) return 0.0;
    const double sn = std::sqrt(static_cast<double>(n));
    const double x = (sn + 0.12 + 0.11 / sn) * d;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * x * x);
        sum += (k % 2 == 1) ? term : -term;
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace aftkm
