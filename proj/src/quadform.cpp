#include "aftkm/quadform.hpp"

#include <algorithm>
#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace aftkm {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kPFloor = 1e-12;

double clip_p(double p) { return std::min(1.0, std::max(kPFloor, p)); }

// Imhof inversion integrand: P(Q >= x) = 1/2 + (1/pi) * Int_0^inf f(u) du
// with f(u) = sin(theta(u)) / (u * rho(u)).
struct Integrand {
    const std::vector<double>& lam;
    double x;
    double sum_lam;

    double operator()(double u) const {
        if (u <= 0.0) return 0.5 * (sum_lam - x);
        double th = 0.0, lr = 0.0;
        for (double l : lam) {
            double lu = l * u;
            th += std::atan(lu);
            lr += std::log1p(lu * lu);
        }
        th = 0.5 * th - 0.5 * x * u;
        return std::sin(th) * std::exp(-0.25 * lr) / u;
    }
};

// Upper bound on (1/pi) * |Int_U^inf f|.  The envelope 1/(u rho(u)) decays
// with local exponent 1 + k(U), which only grows with u, so integrating the
// frozen power law bounds the plain tail; when the phase speed |theta'| is
// bounded away from zero past U, integration by parts gives the sharper
// oscillatory bound 2 g(U) / |theta'|.
double tail_estimate(const std::vector<double>& lam, double x, double U) {
    double sumlog = 0.0, k = 0.0, aslope = 0.0;
    for (double l : lam) {
        double t = l * U * l * U;
        sumlog += std::log1p(t);
        k += 0.5 * t / (1.0 + t);
        aslope += 0.5 * std::abs(l) / (1.0 + t);
    }
    double g = std::exp(-0.25 * sumlog) / U;
    double bound = g * U / std::max(k, 0.5);
    if (x != 0.0 && aslope <= 0.25 * std::abs(x)) {
        bound = std::min(bound, 8.0 * g / std::abs(x));
    }
    return bound / kPi;
}

// log of the Chernoff bound min_t e^{-tx} E e^{tQ}; +inf means no certificate.
// Used to settle far-tail cases the absolute-accuracy integrator cannot.
double chernoff_log_tail(const std::vector<double>& lam, double x) {
    double lmax = 0.0, sum = 0.0;
    for (double l : lam) {
        lmax = std::max(lmax, l);
        sum += l;
    }
    if (sum >= x) return 0.0;  // minimum at t=0, bound is 1
    double tmax = lmax > 0.0 ? 0.5 / lmax : std::numeric_limits<double>::infinity();
    auto hprime = [&](double t) {
        double s = -x;
        for (double l : lam) s += l / (1.0 - 2.0 * t * l);
        return s;
    };
    // h is convex with h'(0) < 0; bracket the stationary point
    double lo = 0.0, hi = std::isfinite(tmax) ? tmax * (1.0 - 1e-12) : 1.0;
    if (!std::isfinite(tmax)) {
        while (hprime(hi) < 0.0 && hi < 1e300) hi *= 2.0;
    }
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (hprime(mid) < 0.0 ? lo : hi) = mid;
    }
    double t = lo;
    double h = -t * x;
    for (double l : lam) h -= 0.5 * std::log1p(-2.0 * t * l);
    return h;
}

struct BlockResult {
    double value = 0.0;
    bool converged = false;
};

// Adaptive trapezoid on [a, b]: halve the panel width until two successive
// estimates agree to tol or the shared node budget runs out.
BlockResult integrate_block(const Integrand& f, double a, double b, double tol,
                            double phase_speed, long& budget) {
    BlockResult out;
    double w = b - a;
    long panels = std::clamp(static_cast<long>(std::ceil(w * phase_speed)), 8L, 1L << 16);
    double h = w / static_cast<double>(panels);
    double T = 0.5 * (f(a) + f(b));
    for (long i = 1; i < panels; ++i) T += f(a + h * static_cast<double>(i));
    T *= h;
    budget -= panels + 1;
    while (budget > 0 && panels < (1L << 19)) {
        double mid = 0.0;
        for (long i = 0; i < panels; ++i) mid += f(a + h * (static_cast<double>(i) + 0.5));
        budget -= panels;
        double Tnext = 0.5 * T + 0.5 * h * mid;
        h *= 0.5;
        panels *= 2;
        bool close = std::abs(Tnext - T) <= tol;
        T = Tnext;
        if (close) {
            out.converged = true;
            break;
        }
    }
    out.value = T;
    return out;
}

}  // namespace

QuadFormResult davies_tail(const Eigen::VectorXd& lambda, double x, const QuadFormOptions& opts) {
    if (lambda.size() == 0) throw std::invalid_argument("davies_tail: empty weight vector");
    double amax = lambda.cwiseAbs().maxCoeff();
    if (!(amax > 0.0)) throw std::invalid_argument("davies_tail: all weights are zero");

    std::vector<double> lam;
    lam.reserve(static_cast<std::size_t>(lambda.size()));
    for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        if (std::abs(lambda[j]) >= 1e-12 * amax) lam.push_back(lambda[j]);
    }

    bool any_pos = false, any_neg = false;
    double s2sq = 0.0, s1abs = 0.0, sum = 0.0;
    for (double l : lam) {
        any_pos |= l > 0.0;
        any_neg |= l < 0.0;
        s2sq += l * l;
        s1abs += std::abs(l);
        sum += l;
    }
    if (any_pos && !any_neg && x <= 0.0) return {1.0, true, false};
    if (any_neg && !any_pos && x >= 0.0) return {kPFloor, true, false};

    // Far tails: settle by Chernoff certificate when the mass beyond x is
    // provably negligible relative to the clip floor.
    const double log_negligible = std::log(1e-13);
    if (chernoff_log_tail(lam, x) < log_negligible) return {kPFloor, true, false};
    {
        std::vector<double> neg(lam);
        for (double& l : neg) l = -l;
        if (chernoff_log_tail(neg, -x) < log_negligible) return {1.0, true, false};
    }

    Integrand f{lam, x, sum};
    const double acc = opts.accuracy;

    // truncation point
    double s2 = std::sqrt(s2sq);
    double U = 1.0 / s2;
    bool truncated = false;
    for (int it = 0; it < 240; ++it) {
        if (tail_estimate(lam, x, U) <= 0.5 * acc) {
            truncated = true;
            break;
        }
        U *= 2.0;
    }

    bool ok = truncated;
    double integral = 0.0;
    if (ok) {
        double b0 = std::min(U, 1.0 / s2);
        if (x != 0.0) b0 = std::min(b0, 8.0 / std::abs(x));
        std::vector<double> edges{0.0, b0};
        while (edges.back() < U && edges.size() < 130) {
            edges.push_back(std::min(2.0 * edges.back(), U));
        }
        if (edges.back() < U) ok = false;

        long budget = opts.max_nodes;
        double tol_block = 0.5 * acc / static_cast<double>(edges.size() - 1);
        for (std::size_t b = 0; ok && b + 1 < edges.size(); ++b) {
            double a = edges[b], e = edges[b + 1];
            double aslope = 0.0;
            for (double l : lam) aslope += 0.5 * std::abs(l) / (1.0 + l * a * l * a);
            double speed = 0.5 * std::abs(x) + aslope;
            auto blk = integrate_block(f, a, e, tol_block, speed, budget);
            integral += blk.value;
            ok = blk.converged;
        }
    }

    if (!ok) {
        return {clip_p(moment_match_tail(lambda, x)), false, true};
    }
    return {clip_p(0.5 + integral / kPi), true, false};
}

double moment_match_tail(const Eigen::VectorXd& lambda, double x) {
    double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0;
    for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        double l = lambda[j];
        c1 += l;
        c2 += l * l;
        c3 += l * l * l;
        c4 += l * l * l * l;
    }
    if (!(c2 > 0.0)) throw std::invalid_argument("moment_match_tail: quadratic form has zero variance");

    double s1 = c3 / std::pow(c2, 1.5);
    if (s1 < 0.0) {
        // mirror left-skewed forms so the chi-square surrogate faces right
        return clip_p(1.0 - moment_match_tail(-lambda, -x));
    }
    double s2 = c4 / (c2 * c2);
    double df, ncp;
    if (s1 * s1 > s2) {
        double a = 1.0 / (s1 - std::sqrt(s1 * s1 - s2));
        ncp = s1 * a * a * a - a * a;
        df = a * a - 2.0 * ncp;
    } else {
        df = 1.0 / s2;
        ncp = 0.0;
    }
    df = std::max(df, 1e-8);
    ncp = std::max(ncp, 0.0);

    double t = (x - c1) / std::sqrt(2.0 * c2);
    double q = (df + ncp) + t * std::sqrt(2.0 * (df + 2.0 * ncp));
    if (q <= 0.0) return 1.0;
    double p;
    if (ncp > 0.0) {
        boost::math::non_central_chi_squared dist(df, ncp);
        p = boost::math::cdf(boost::math::complement(dist, q));
    } else {
        p = boost::math::gamma_q(0.5 * df, 0.5 * q);
    }
    return clip_p(p);
}

}  // namespace aftkm
