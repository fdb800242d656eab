#include "aftkm/asymptotics.hpp"

#include <cmath>
#include <stdexcept>

#include "aftkm/rng.hpp"
#include "linalg.hpp"
#include "risk_sweep.hpp"
#include "slope_ols.hpp"

namespace aftkm {

namespace {

// Identity-E1 shortcut: the residual score then reduces to the martingale
// residual arithmetic, which skips all column accumulation. Both paths are
// bitwise identical on identity input; this one is just cheaper, and the
// corrected-statistic calibration leans on it hard.
Eigen::VectorXd residual_score_identity(const TransformedData& td, const detail::RiskSweep& rs) {
    Eigen::VectorXd score = td.d;
    Eigen::VectorXd at_risk = Eigen::VectorXd::Zero(td.e.size());
    detail::sweep(
        rs, [&](int i) { at_risk[i] = 1.0; }, [&](int i) { at_risk[i] = 0.0; },
        [&](std::size_t k) { score.noalias() -= rs.coef[k] * at_risk; });
    return score;
}

Eigen::VectorXd score_at(const Eigen::VectorXd& beta, const Eigen::MatrixXd& E1,
                         const Dataset& data, bool identity) {
    const TransformedData td = transform_scale(beta, data);
    const detail::RiskSweep rs = detail::make_sweep(td);
    if (identity) return residual_score_identity(td, rs);
    return detail::weighted_score(E1, td, rs);
}

bool is_identity(const Eigen::MatrixXd& E1) {
    return E1.rows() == E1.cols() && E1.isIdentity(0.0);
}

}  // namespace

Eigen::VectorXd q_n(const Eigen::VectorXd& beta, const Eigen::MatrixXd& E1, const Dataset& data) {
    if (E1.cols() != data.n()) {
        throw std::invalid_argument("q_n: E1 must have one column per subject");
    }
    const TransformedData td = transform_scale(beta, data);
    const detail::RiskSweep rs = detail::make_sweep(td);
    return detail::weighted_score(E1, td, rs);
}

Eigen::MatrixXd estimate_B(const NullFit& fit, const Eigen::MatrixXd& E1, int L,
                           std::uint64_t seed, int workers) {
    const Dataset& data = *fit.data;
    const Eigen::Index q = data.q();
    if (E1.cols() != data.n()) {
        throw std::invalid_argument("estimate_B: E1 must have one column per subject");
    }
    if (q == 0) return Eigen::MatrixXd(E1.rows(), 0);
    if (L < 10 * static_cast<int>(q)) {
        throw std::invalid_argument("estimate_B: need at least 10 draws per coefficient");
    }
    const double sqn = std::sqrt(static_cast<double>(data.n()));
    const bool ident = is_identity(E1);
    const Eigen::VectorXd q0 = score_at(fit.beta_hat, E1, data, ident);
    auto response = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
        return (score_at(fit.beta_hat + w / sqn, E1, data, ident) - q0) / sqn;
    };
    return detail::mc_slope(q, L, make_stream(seed, Stream::slope_b), workers, response);
}

Eigen::MatrixXd estimate_A(const NullFit& fit, int L_tilde, std::uint64_t seed, int workers) {
    const Dataset& data = *fit.data;
    const Eigen::Index q = data.q();
    if (q == 0) return Eigen::MatrixXd(0, 0);
    if (L_tilde < 10 * static_cast<int>(q)) {
        throw std::invalid_argument("estimate_A: need at least 10 draws per coefficient");
    }
    const double sqn = std::sqrt(static_cast<double>(data.n()));
    auto response = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
        return sqn * estimating_function(fit.beta_hat + w / sqn, data);
    };
    Eigen::MatrixXd a = detail::mc_slope(q, L_tilde, make_stream(seed, Stream::slope_a), workers, response);
    const double cond = condition_number(a);
    if (!std::isfinite(cond) || cond > 1e12) {
        throw std::runtime_error("estimate_A: slope matrix is numerically singular (condition number " +
                                 std::to_string(cond) + ")");
    }
    return a;
}

double condition_number(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 1.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const double smin = svd.singularValues().minCoeff();
    if (smin == 0.0) return std::numeric_limits<double>::infinity();
    return svd.singularValues().maxCoeff() / smin;
}

NullSpectrum null_spectrum(const NullFit& fit, const Eigen::MatrixXd& E1,
                           const Eigen::MatrixXd& A_hat, const Eigen::MatrixXd& B_hat) {
    const Dataset& data = *fit.data;
    const Eigen::Index n = data.n();
    const Eigen::Index m = E1.rows();
    if (E1.cols() != n) {
        throw std::invalid_argument("null_spectrum: E1 must have one column per subject");
    }

    Eigen::MatrixXd C = E1;
    // B_hat == 0 means the score does not move with beta, so no correction;
    // this also covers rank-degenerate covariates where A_hat is unusable
    if (data.q() > 0 && B_hat.size() > 0 && !(B_hat.array() == 0.0).all()) {
        if (A_hat.rows() != data.q() || A_hat.cols() != data.q() || B_hat.rows() != m ||
            B_hat.cols() != data.q()) {
            throw std::invalid_argument("null_spectrum: slope matrix shapes do not match");
        }
        C.noalias() -= B_hat * A_hat.partialPivLu().solve(data.Z.transpose());
    }

    const TransformedData td = transform_scale(fit.beta_hat, data);
    const detail::RiskSweep rs = detail::make_sweep(td);
    const auto nj = static_cast<Eigen::Index>(rs.jumps.size());

    Eigen::VectorXd compensator = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd at_risk = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd crs = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd centering(m, nj);
    detail::sweep(
        rs,
        [&](int i) {
            at_risk[i] = 1.0;
            crs += C.col(i);
        },
        [&](int i) {
            at_risk[i] = 0.0;
            crs -= C.col(i);
        },
        [&](std::size_t k) {
            compensator.noalias() += rs.coef[k] * at_risk;
            centering.col(static_cast<Eigen::Index>(k)) =
                (std::sqrt(rs.nevents[k]) / rs.nrisk[k]) * crs;
        });

    Eigen::MatrixXd cw = C * compensator.cwiseSqrt().asDiagonal();
    Eigen::MatrixXd cov = cw * cw.transpose() - centering * centering.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();

    const detail::SymEig eig = detail::sym_eig(cov);
    NullSpectrum out;
    out.eigenvalues.resize(m);
    out.basis.resize(m, m);
    for (Eigen::Index r = 0; r < m; ++r) {
        const Eigen::Index src = m - 1 - r;  // ascending to descending
        out.eigenvalues[r] = std::max(eig.values[src], 0.0);
        out.basis.col(r) = eig.vectors.col(src);
    }
    out.cov = out.basis * out.eigenvalues.asDiagonal() * out.basis.transpose();
    return out;
}

}  // namespace aftkm
