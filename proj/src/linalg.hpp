#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#ifdef AFTKM_USE_LAPACKE
#include <lapacke.h>
#endif

namespace aftkm::detail {

struct SymEig {
    Eigen::VectorXd values;   // ascending
    Eigen::MatrixXd vectors;  // columns match values
};

// Full symmetric eigendecomposition.  dsyevd when LAPACKE is available
// (the n=500 solves dominate the large calibration runs), Eigen otherwise.
inline SymEig sym_eig(const Eigen::MatrixXd& M) {
    if (M.rows() != M.cols()) throw std::invalid_argument("sym_eig: matrix not square");
    SymEig out;
    if (M.rows() == 0) {
        // zero-rank inputs (empty kernel factor) reach here; both backends choke on them
        out.values.resize(0);
        out.vectors.resize(0, 0);
        return out;
    }
#ifdef AFTKM_USE_LAPACKE
    const lapack_int n = static_cast<lapack_int>(M.rows());
    out.vectors = M;
    out.values.resize(n);
    lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n,
                                     out.vectors.data(), n, out.values.data());
    if (info != 0) throw std::runtime_error("sym_eig: dsyevd failed, info=" + std::to_string(info));
#else
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success) throw std::runtime_error("sym_eig: eigensolver failed");
    out.values = es.eigenvalues();
    out.vectors = es.eigenvectors();
#endif
    return out;
}

}  // namespace aftkm::detail
