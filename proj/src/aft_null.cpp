#include "aftkm/aft_null.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "aftkm/threading.hpp"
#include "nelder_mead.hpp"
#include "risk_sweep.hpp"

namespace aftkm {

namespace {

std::atomic<long> g_fit_null_calls{0};

// For discrete covariates under truncation the residual intervals of the
// covariate groups separate completely once |beta| is large enough, and every
// risk set at a cause event then holds a single covariate pattern. The score
// is identically zero there, a vacuous root that would beat the finite root
// in any objective comparison. Such points are priced out of the search.
constexpr double kSeparationPenalty = 1e300;

// squared scaled score, weighted by how much of the cause-event mass actually
// compares distinct covariate patterns. Just short of full separation only a
// handful of events still see a mixed risk set, so the raw score shrinks with
// the surviving information and a near-vacuous point can undercut the finite
// root. Scaling by (events / informative events)^2 leaves a fully informative
// fit untouched and grows without bound as the overlap drains away, which
// keeps those shoulders from winning the cross-start comparison.
double guarded_objective(const Eigen::MatrixXd& zt, const TransformedData& td,
                         const detail::RiskSweep& rs, double n) {
    Eigen::VectorXd score = zt * td.d;
    Eigen::VectorXd at_risk_sum = Eigen::VectorXd::Zero(zt.rows());
    double sqsum = 0.0;
    double events = 0.0;
    double informative = 0.0;
    detail::sweep(
        rs,
        [&](int i) {
            at_risk_sum += zt.col(i);
            sqsum += zt.col(i).squaredNorm();
        },
        [&](int i) {
            at_risk_sum -= zt.col(i);
            sqsum -= zt.col(i).squaredNorm();
        },
        [&](std::size_t k) {
            score.noalias() -= rs.coef[k] * at_risk_sum;
            const double m = rs.nrisk[k];
            events += rs.nevents[k];
            // m * sqsum - ||sum||^2 is m^2 times the risk-set variance of the
            // covariate rows; exactly zero when all rows coincide
            if (m * sqsum - at_risk_sum.squaredNorm() > 1e-12 * m * (1.0 + sqsum)) {
                informative += rs.nevents[k];
            }
        });
    if (informative == 0.0) return kSeparationPenalty;
    const double weight = events / informative;
    return weight * weight * (score / n).squaredNorm();
}

// Large-n counterpart of the section polish below. The exact breakpoint list
// costs O(n^2) per axis, so past the small-n regime an unconverged fit falls
// back to a zoomed grid scan of each axis: three levels of 65 points shrink
// the axis resolution by about 4000x, and the caller's closing simplex run
// handles the joint adjustment. Only runs when the multi-start missed its
// target, which healthy fits never do.
void refine_by_grid(const std::function<double(const Eigen::VectorXd&)>& objective,
                    const Dataset& data, double ftarget, Eigen::VectorXd& beta, double& fbest) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double lt = std::log(data.time[i]);
        lo = std::min(lo, lt);
        hi = std::max(hi, lt);
    }
    const double span = hi - lo;
    for (int pass = 0; pass < 2 && fbest > ftarget; ++pass) {
        bool improved = false;
        for (Eigen::Index k = 0; k < data.q(); ++k) {
            const double range = data.Z.col(k).maxCoeff() - data.Z.col(k).minCoeff();
            // a coefficient only matters through beta * range, so the scan
            // window covers every shift the observed spread can express
            double width = span / std::max(range, 0.02);
            double center = beta[k];
            for (int level = 0; level < 3; ++level) {
                double best_t = center;
                for (int g = 0; g <= 64; ++g) {
                    const double t = center - width + width * static_cast<double>(g) / 32.0;
                    Eigen::VectorXd cand = beta;
                    cand[k] = t;
                    const double fc = objective(cand);
                    if (fc < fbest) {
                        fbest = fc;
                        best_t = t;
                        improved = true;
                    }
                }
                center = best_t;
                width /= 8.0;
            }
            beta[k] = center;
        }
        if (!improved) break;
    }
}

// The squared score is piecewise constant in beta, and the simplex search can
// settle inside a wide plateau right next to a narrow better one. At small n
// the breakpoints of any axis section are just the pairwise residual
// crossings, so the section can be minimized exactly by evaluating one point
// per plateau. Runs as a polish stage after the multi-start when n is small
// enough for the O(n^2) candidate list to be cheap.
void refine_by_sections(const std::function<double(const Eigen::VectorXd&)>& objective,
                        const Dataset& data, Eigen::VectorXd& beta, double& fbest) {
    const Eigen::Index n = data.n();
    const Eigen::Index q = data.q();
    for (int pass = 0; pass < 4; ++pass) {
        bool improved = false;
        for (Eigen::Index k = 0; k < q; ++k) {
            const aftkm::TransformedData td = aftkm::transform_scale(beta, data);
            std::vector<double> brk;
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    const double denom = data.Z(i, k) - data.Z(j, k);
                    if (denom == 0.0) continue;
                    for (double t : {(td.e[i] - td.e[j]) / denom, (td.e[i] - td.e_a[j]) / denom,
                                     (td.e_a[i] - td.e[j]) / denom}) {
                        if (std::isfinite(t)) brk.push_back(t);
                    }
                }
            }
            std::sort(brk.begin(), brk.end());
            brk.erase(std::unique(brk.begin(), brk.end()), brk.end());
            std::vector<double> probes{0.0};
            if (!brk.empty()) {
                probes.push_back(brk.front() - 0.5);
                probes.push_back(brk.back() + 0.5);
                for (std::size_t i = 0; i + 1 < brk.size(); ++i) {
                    probes.push_back(0.5 * (brk[i] + brk[i + 1]));
                }
            }
            double tbest = 0.0;
            for (double t : probes) {
                if (t == 0.0) continue;
                Eigen::VectorXd cand = beta;
                cand[k] += t;
                const double fc = objective(cand);
                // strict improvement only, nearest plateau wins ties
                if (fc < fbest || (fc == fbest && tbest != 0.0 && std::abs(t) < std::abs(tbest))) {
                    fbest = fc;
                    tbest = t;
                }
            }
            if (tbest != 0.0) {
                beta[k] += tbest;
                improved = true;
            }
        }
        if (!improved) break;
    }
}

}  // namespace

TransformedData transform_scale(const Eigen::VectorXd& beta, const Dataset& data) {
    const Eigen::Index n = data.n();
    if (beta.size() != data.q()) {
        throw std::invalid_argument("transform_scale: beta length does not match covariate count");
    }
    if ((data.time.array() <= 0.0).any()) {
        throw std::invalid_argument("transform_scale: follow-up times must be positive");
    }
    TransformedData td;
    Eigen::VectorXd bz = beta.size() > 0 ? (data.Z * beta).eval() : Eigen::VectorXd::Zero(n);
    td.e.resize(n);
    td.e_a.resize(n);
    td.d.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        // scalar std::log, not Eigen's vectorized one, so residual times agree
        // bit for bit with any scalar cross-check
        td.e[i] = std::log(data.time[i]) - bz[i];
        td.e_a[i] = std::log(data.entry[i]) - bz[i];  // entry 0 maps to -inf
        td.d[i] = data.status[i] == data.cause ? 1.0 : 0.0;
    }
    return td;
}

double StepFunction::operator()(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

Eigen::VectorXd estimating_function(const Eigen::VectorXd& beta, const Dataset& data) {
    if (data.q() == 0) return Eigen::VectorXd(0);
    const TransformedData td = transform_scale(beta, data);
    const detail::RiskSweep rs = detail::make_sweep(td);
    Eigen::MatrixXd zt = data.Z.transpose();
    return detail::weighted_score(zt, td, rs) / static_cast<double>(data.n());
}

BetaFit fit_beta(const Dataset& data, const FitOptions& opts) {
    const Eigen::Index q = data.q();
    if (q == 0) return {Eigen::VectorXd(0), 0.0, true};

    const double n = static_cast<double>(data.n());
    double events = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        if (data.status[i] == data.cause) events += 1.0;
    }
    const double tol = opts.tol_scale * events / n;

    const Eigen::MatrixXd zt = data.Z.transpose();
    auto objective = [&](const Eigen::VectorXd& beta) {
        const TransformedData td = transform_scale(beta, data);
        const detail::RiskSweep rs = detail::make_sweep(td);
        return guarded_objective(zt, td, rs, n);
    };

    // deterministic starts: the origin plus +-start_step along each axis
    std::vector<Eigen::VectorXd> starts;
    starts.push_back(Eigen::VectorXd::Zero(q));
    for (Eigen::Index k = 0; k < q; ++k) {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(q);
        s[k] = opts.start_step;
        starts.push_back(s);
        s[k] = -opts.start_step;
        starts.push_back(s);
    }

    std::vector<detail::NelderMeadResult> results(starts.size());
    const double ftarget = tol * tol;
    parallel_for(static_cast<int>(starts.size()), opts.workers, [&](int j) {
        results[static_cast<std::size_t>(j)] = detail::nelder_mead(
            objective, starts[static_cast<std::size_t>(j)], 0.25, opts.max_evals, ftarget);
    });

    std::size_t best = 0;
    for (std::size_t j = 1; j < results.size(); ++j) {
        if (results[j].fx < results[best].fx) best = j;
    }
    Eigen::VectorXd beta = results[best].x;
    double fbest = results[best].fx;
    if (data.n() <= 64) {
        if (fbest > ftarget) refine_by_sections(objective, data, beta, fbest);
    } else if (fbest > ftarget) {
        refine_by_grid(objective, data, ftarget, beta, fbest);
        const detail::NelderMeadResult polish =
            detail::nelder_mead(objective, beta, 0.01, opts.max_evals, ftarget);
        if (polish.fx < fbest) {
            beta = polish.x;
            fbest = polish.fx;
        }
    }

    BetaFit out;
    out.beta_hat = std::move(beta);
    // reported from the plain score so a fully degenerate fit (constant
    // covariates) shows its true residual norm, not the search penalty
    {
        const TransformedData td = transform_scale(out.beta_hat, data);
        const detail::RiskSweep rs = detail::make_sweep(td);
        out.score_norm = (detail::weighted_score(zt, td, rs) / n).norm();
    }
    out.converged = out.score_norm <= tol;
    return out;
}

StepFunction nelson_aalen(const Eigen::VectorXd& beta, const Dataset& data) {
    const TransformedData td = transform_scale(beta, data);
    const detail::RiskSweep rs = detail::make_sweep(td);
    StepFunction sf;
    sf.times = rs.jumps;
    sf.increments = rs.coef;
    sf.values.resize(rs.coef.size());
    double cum = 0.0;
    for (std::size_t k = 0; k < rs.coef.size(); ++k) {
        cum += rs.coef[k];
        sf.values[k] = cum;
    }
    return sf;
}

Eigen::VectorXd martingale_residuals(const Eigen::VectorXd& beta, const StepFunction& lambda_eps,
                                     const Dataset& data) {
    const TransformedData td = transform_scale(beta, data);
    const detail::RiskSweep rs = detail::make_sweep(td);
    if (lambda_eps.times != rs.jumps) {
        throw std::invalid_argument("martingale_residuals: lambda_eps was not built from this (beta, data)");
    }
    Eigen::VectorXd m = td.d;
    Eigen::VectorXd at_risk = Eigen::VectorXd::Zero(td.e.size());
    detail::sweep(
        rs, [&](int i) { at_risk[i] = 1.0; }, [&](int i) { at_risk[i] = 0.0; },
        [&](std::size_t k) { m.noalias() -= lambda_eps.increments[k] * at_risk; });
    return m;
}

NullFit fit_null(const Dataset& data, const FitOptions& opts) {
    g_fit_null_calls.fetch_add(1, std::memory_order_relaxed);
    NullFit fit;
    BetaFit bf = fit_beta(data, opts);
    fit.beta_hat = std::move(bf.beta_hat);
    fit.score_norm = bf.score_norm;
    fit.converged = bf.converged;
    fit.lambda_eps = nelson_aalen(fit.beta_hat, data);
    fit.residuals = martingale_residuals(fit.beta_hat, fit.lambda_eps, data);
    fit.data = &data;
    return fit;
}

long fit_null_invocations() { return g_fit_null_calls.load(std::memory_order_relaxed); }

}  // namespace aftkm
