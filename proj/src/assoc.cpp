#include "aftkm/assoc.hpp"

#include <cmath>
#include <stdexcept>

#include "linalg.hpp"

namespace aftkm {

const char* method_name(Method m) {
    switch (m) {
        case Method::R: return "R";
        case Method::R_het: return "R_het";
        case Method::Rc: return "Rc";
        case Method::Rc_het: return "Rc_het";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    if (name == "R") return Method::R;
    if (name == "R_het") return Method::R_het;
    if (name == "Rc") return Method::Rc;
    if (name == "Rc_het") return Method::Rc_het;
    throw std::invalid_argument("unknown test method '" + name +
                                "' (expected R, R_het, Rc or Rc_het)");
}

AssocContext::AssocContext(const NullFit& fit, TestOptions opts) : fit_(&fit), opts_(opts) {
    if (fit.data == nullptr) throw std::invalid_argument("AssocContext: fit has no dataset");
}

const Eigen::MatrixXd& AssocContext::A_hat() const {
    std::call_once(a_once_, [&] { a_ = estimate_A(*fit_, opts_.L_tilde, opts_.seed, opts_.workers); });
    return *a_;
}

const NullSpectrum& AssocContext::residual_cov() const {
    std::call_once(cov_once_, [&] {
        const Eigen::Index n = fit_->data->n();
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
        Eigen::MatrixXd b = estimate_B(*fit_, eye, opts_.L, opts_.seed, opts_.workers);
        const Eigen::MatrixXd& a = fit_->data->q() > 0 ? A_hat() : b;  // a unused when q = 0
        cov_ = null_spectrum(*fit_, eye, a, b);
    });
    return *cov_;
}

namespace {

void stamp_common(TestResult& res, const AssocContext& ctx, Method method) {
    res.method = method;
    res.score_norm = ctx.fit().score_norm;
    res.L_used = ctx.options().L;
    res.seed = ctx.options().seed;
}

void check_sizes(const AssocContext& ctx, const KernelMatrix& K) {
    if (K.n() != ctx.fit().data->n()) {
        throw std::invalid_argument("kernel and fitted data cover different subject counts");
    }
}

TestResult spectral_test(const AssocContext& ctx, const KernelMatrix& K, Method method) {
    check_sizes(ctx, K);
    const NullFit& fit = ctx.fit();
    TestResult res;
    stamp_common(res, ctx, method);
    res.statistic = fit.residuals.dot(K.K * fit.residuals);

    const Eigen::MatrixXd empty;
    const Eigen::MatrixXd& a = fit.data->q() > 0 ? ctx.A_hat() : empty;
    Eigen::MatrixXd b = estimate_B(fit, K.factor, ctx.options().L, ctx.options().seed,
                                   ctx.options().workers);
    NullSpectrum spec = null_spectrum(fit, K.factor, a, b);
    res.spectrum = spec.eigenvalues;

    if (res.spectrum.size() == 0 || res.spectrum.maxCoeff() <= 0.0) {
        res.degenerate = true;
        res.p_value = 1.0;
        return res;
    }
    QuadFormResult qf = davies_tail(res.spectrum, res.statistic, ctx.options().quad);
    res.p_value = qf.p;
    res.used_moment_fallback = qf.moment_fallback;
    res.p_converged = qf.converged;
    return res;
}

TestResult corrected_test(const AssocContext& ctx, const KernelMatrix& K, Method method) {
    check_sizes(ctx, K);
    const NullFit& fit = ctx.fit();
    const double mss = fit.residuals.squaredNorm();
    if (mss == 0.0) {
        throw std::invalid_argument("corrected statistic undefined: residual vector is zero "
                                    "(no cause events)");
    }
    TestResult res;
    stamp_common(res, ctx, method);
    const double c = fit.residuals.dot(K.K * fit.residuals) / mss;
    res.statistic = c;

    const NullSpectrum& cov = ctx.residual_cov();
    // congruence spectrum of Cov(M)^(1/2) (K - cI) Cov(M)^(1/2)
    Eigen::MatrixXd qg = K.K * cov.basis - c * cov.basis;
    Eigen::MatrixXd inner = cov.basis.transpose() * qg;
    const Eigen::VectorXd sq = cov.eigenvalues.cwiseSqrt();
    Eigen::MatrixXd m = sq.asDiagonal() * inner * sq.asDiagonal();
    m = 0.5 * (m + m.transpose()).eval();

    const detail::SymEig eig = detail::sym_eig(m);
    res.spectrum = eig.values.reverse();

    const double scale =
        cov.eigenvalues.size() == 0
            ? 0.0
            : cov.eigenvalues.maxCoeff() * (K.K.cwiseAbs().maxCoeff() + std::abs(c));
    if (scale == 0.0 || res.spectrum.cwiseAbs().maxCoeff() <= 1e-12 * scale) {
        res.degenerate = true;
        res.p_value = 1.0;
        return res;
    }
    QuadFormResult qf = davies_tail(res.spectrum, 0.0, ctx.options().quad);
    res.p_value = qf.p;
    res.used_moment_fallback = qf.moment_fallback;
    res.p_converged = qf.converged;
    return res;
}

}  // namespace

TestResult test_R(const AssocContext& ctx, const KernelMatrix& K) {
    return spectral_test(ctx, K, Method::R);
}

TestResult test_R_het(const AssocContext& ctx, const KernelMatrix& K, const KernelMatrix& H) {
    return spectral_test(ctx, heterogeneity_weight(K, H), Method::R_het);
}

TestResult test_R_corrected(const AssocContext& ctx, const KernelMatrix& K) {
    return corrected_test(ctx, K, Method::Rc);
}

TestResult test_Rc_het(const AssocContext& ctx, const KernelMatrix& K, const KernelMatrix& H) {
    return corrected_test(ctx, heterogeneity_weight(K, H), Method::Rc_het);
}

TestResult run_test(const AssocContext& ctx, Method method, const KernelMatrix& K,
                    const KernelMatrix* H) {
    const bool wants_h = method == Method::R_het || method == Method::Rc_het;
    if (wants_h && H == nullptr) {
        throw std::invalid_argument(std::string(method_name(method)) +
                                    " needs a heterogeneity kernel");
    }
    switch (method) {
        case Method::R: return test_R(ctx, K);
        case Method::R_het: return test_R_het(ctx, K, *H);
        case Method::Rc: return test_R_corrected(ctx, K);
        case Method::Rc_het: return test_Rc_het(ctx, K, *H);
    }
    throw std::logic_error("unreachable");
}

}  // namespace aftkm
