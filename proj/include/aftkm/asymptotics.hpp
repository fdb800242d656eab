#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "aftkm/aft_null.hpp"
#include "aftkm/data.hpp"

namespace aftkm {

// Monte-Carlo least-squares estimates of the two asymptotic slope matrices.
// A_hat is the slope of the estimating function in beta, B_hat the slope of
// the residual-score vector; both are recovered by regressing perturbed
// evaluations on the perturbations.
struct SlopeEstimates {
    Eigen::MatrixXd A_hat;  // q x q
    Eigen::MatrixXd B_hat;  // m x q
    int L = 0;
    int L_tilde = 0;
    std::uint64_t seed = 0;
    double cond_A = 0.0;  // condition number diagnostic, no hard threshold
};

// Estimated covariance of E1 * M_tilde together with its eigendecomposition.
// Eigenvalues are sorted descending and clipped at zero; cov is rebuilt from
// the clipped spectrum so that trace(cov) equals the eigenvalue sum.
struct NullSpectrum {
    Eigen::MatrixXd cov;
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd basis;  // columns aligned with eigenvalues
};

// Residual-score vector: sum over subjects of the E1 column at each event
// minus the at-risk average of E1 columns, accumulated at every jump. With
// E1 = Z' this is n times the estimating function.
Eigen::VectorXd q_n(const Eigen::VectorXd& beta, const Eigen::MatrixXd& E1, const Dataset& data);

// Least-squares slope of the residual score under N(0, I_q) perturbations of
// the fitted coefficients. Deterministic given the seed, for any worker count.
Eigen::MatrixXd estimate_B(const NullFit& fit, const Eigen::MatrixXd& E1, int L,
                           std::uint64_t seed, int workers = 1);

// Same scheme for the estimating function itself. Throws if the estimated
// matrix has condition number above 1e12.
Eigen::MatrixXd estimate_A(const NullFit& fit, int L_tilde, std::uint64_t seed, int workers = 1);

double condition_number(const Eigen::MatrixXd& m);

// Covariance estimator of E1 * M_tilde under the fitted null, combining the
// compensator term with the at-risk centering correction, then projecting to
// the positive semidefinite cone.
NullSpectrum null_spectrum(const NullFit& fit, const Eigen::MatrixXd& E1,
                           const Eigen::MatrixXd& A_hat, const Eigen::MatrixXd& B_hat);

}  // namespace aftkm
