#pragma once

#include <Eigen/Dense>

#include <vector>

#include "aftkm/data.hpp"

namespace aftkm {

// Residual-scale view of a dataset at a given coefficient vector. Entry
// residuals are -inf for subjects observed from time zero.
struct TransformedData {
    Eigen::VectorXd e;    // log follow-up time minus beta'Z
    Eigen::VectorXd e_a;  // log entry time minus beta'Z
    Eigen::VectorXd d;    // 1.0 where status equals the cause of interest
};

TransformedData transform_scale(const Eigen::VectorXd& beta, const Dataset& data);

// Right-continuous non-decreasing step function, zero before the first jump.
// Increments are kept alongside the cumulative values so that consumers can
// reuse the exact jump heights instead of differencing the cumulative sums.
struct StepFunction {
    std::vector<double> times;
    std::vector<double> increments;
    std::vector<double> values;

    double operator()(double t) const;
};

struct FitOptions {
    // converged means ||U_n|| <= tol_scale * (cause events / n)
    double tol_scale = 1e-4;
    int max_evals = 2000;      // simplex budget per start
    double start_step = 0.5;   // axis offsets of the deterministic starts
    int workers = 1;           // starts run in parallel when > 1
};

struct BetaFit {
    Eigen::VectorXd beta_hat;
    double score_norm = 0.0;
    bool converged = false;
};

struct NullFit {
    Eigen::VectorXd beta_hat;
    StepFunction lambda_eps;
    Eigen::VectorXd residuals;
    double score_norm = 0.0;
    bool converged = false;
    const Dataset* data = nullptr;  // non-owning, must outlive the fit
};

// Rank-based estimating function with log-rank weights, U_n(beta).
Eigen::VectorXd estimating_function(const Eigen::VectorXd& beta, const Dataset& data);

// Minimizes ||U_n||^2 over beta by multi-start Nelder-Mead. Non-convergence
// is reported through the flag, not an exception, so calibration loops can
// keep the best point and move on.
BetaFit fit_beta(const Dataset& data, const FitOptions& opts = {});

// Nelson-Aalen estimate of the error cumulative hazard on the residual scale.
StepFunction nelson_aalen(const Eigen::VectorXd& beta, const Dataset& data);

// lambda_eps must come from the same (beta, data) pair.
Eigen::VectorXd martingale_residuals(const Eigen::VectorXd& beta, const StepFunction& lambda_eps,
                                     const Dataset& data);

NullFit fit_null(const Dataset& data, const FitOptions& opts = {});

// Process-wide count of fit_null calls. Callers that are supposed to reuse a
// fit across many tests can assert the count instead of timing anything.
long fit_null_invocations();

}  // namespace aftkm
