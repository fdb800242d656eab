#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>

#include "aftkm/aft_null.hpp"
#include "aftkm/asymptotics.hpp"
#include "aftkm/kernels.hpp"
#include "aftkm/quadform.hpp"

namespace aftkm {

enum class Method { R, R_het, Rc, Rc_het };

const char* method_name(Method m);
Method parse_method(const std::string& name);

struct TestOptions {
    int L = 1000;        // perturbation draws behind each kernel's slope
    int L_tilde = 1000;  // draws behind the estimating-function slope
    std::uint64_t seed = 0;
    int workers = 1;
    QuadFormOptions quad{};
};

struct TestResult {
    Method method = Method::R;
    double statistic = 0.0;
    double p_value = 1.0;
    Eigen::VectorXd spectrum;  // signed for the corrected methods
    bool degenerate = false;   // all-zero spectrum, p forced to 1
    bool used_moment_fallback = false;
    bool p_converged = true;
    double score_norm = 0.0;
    int L_used = 0;
    std::uint64_t seed = 0;
};

// Everything kernel-independent about a fitted null: the estimating-function
// slope and the residual covariance spectrum are computed at most once and
// shared across all gene-set tests, which may run concurrently.
class AssocContext {
  public:
    AssocContext(const NullFit& fit, TestOptions opts);

    const NullFit& fit() const { return *fit_; }
    const TestOptions& options() const { return opts_; }
    const Eigen::MatrixXd& A_hat() const;
    const NullSpectrum& residual_cov() const;

  private:
    const NullFit* fit_;
    TestOptions opts_;
    mutable std::once_flag a_once_;
    mutable std::once_flag cov_once_;
    mutable std::optional<Eigen::MatrixXd> a_;
    mutable std::optional<NullSpectrum> cov_;
};

// Quadratic-form statistic M'KM with its asymptotic tail probability.
TestResult test_R(const AssocContext& ctx, const KernelMatrix& K);

// Same statistic on the heterogeneity-weighted similarity (J + H) o K.
TestResult test_R_het(const AssocContext& ctx, const KernelMatrix& K, const KernelMatrix& H);

// Ratio statistic M'KM / M'M whose p-value is the chance that the indefinite
// form M'(K - c I)M lands at or above zero under the null.
TestResult test_R_corrected(const AssocContext& ctx, const KernelMatrix& K);

TestResult test_Rc_het(const AssocContext& ctx, const KernelMatrix& K, const KernelMatrix& H);

TestResult run_test(const AssocContext& ctx, Method method, const KernelMatrix& K,
                    const KernelMatrix* H = nullptr);

}  // namespace aftkm
