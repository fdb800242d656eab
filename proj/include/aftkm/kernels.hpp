#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace aftkm {

// Marker similarity kernels and their factorizations.  Every test statistic
// consumes a KernelMatrix: the n x n PSD similarity K together with a factor
// E1 (m x n, K = E1' E1 up to rank truncation) whose rows span the kept
// eigendirections.

enum class KernelKind { linear, ibs, gaussian, laplacian, polynomial, identity };

struct KernelSpec {
    KernelKind kind = KernelKind::linear;
    double rho = -1.0;  // gaussian bandwidth / polynomial offset; -1 = default
    int degree = 2;     // polynomial only
};

struct KernelMatrix {
    Eigen::MatrixXd K;            // n x n symmetric PSD
    Eigen::MatrixXd factor;       // m x n with K ~= factor' * factor
    Eigen::VectorXd eigenvalues;  // kept eigenvalues, descending
    KernelSpec spec;
    double rho_used = 0.0;             // resolved bandwidth/offset parameter
    std::vector<int> dropped_columns;  // zero-variance columns removed (laplacian)

    Eigen::Index n() const { return K.rows(); }
    Eigen::Index m() const { return factor.rows(); }
};

// Builds K from the marker matrix and factorizes it.  Defaults resolved at
// build time: gaussian rho = 1/ncol, polynomial rho = 1 (degree 2).  The IBS
// kernel requires entries in [0, 2].  Column blocks are streamed so very wide
// matrices never materialize intermediate n x ncol temporaries.
KernelMatrix build_kernel(const Eigen::MatrixXd& G, const KernelSpec& spec);

// Same construction applied to the auxiliary trait matrix used by the
// heterogeneity-weighted statistics; identity is the usual choice for
// discrete group labels.
KernelMatrix build_subpop_kernel(const Eigen::MatrixXd& X, const KernelSpec& spec);

// W = (J + H) o K, elementwise.  PSD by the Schur product theorem; the
// result is refactorized and inherits K's spec for reporting.
KernelMatrix heterogeneity_weight(const KernelMatrix& K, const KernelMatrix& H);

// Eigendecomposition keeping components above 1e-8 * max eigenvalue.
// Throws std::invalid_argument when an eigenvalue falls below
// -1e-6 * max eigenvalue (the matrix is materially non-PSD).
KernelMatrix factorize(const Eigen::MatrixXd& K, const KernelSpec& spec);

// "ibs", "gaussian:0.05", "polynomial:1:3", ... used by the CLI and config.
KernelSpec parse_kernel_spec(const std::string& text);
std::string kernel_spec_string(const KernelSpec& spec, double rho_used);

}  // namespace aftkm
