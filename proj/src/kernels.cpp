#include "aftkm/kernels.hpp"

#include <cmath>
#include <stdexcept>

#include "aftkm/data.hpp"
#include "linalg.hpp"

namespace aftkm {

namespace {

constexpr Eigen::Index kColBlock = 512;

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument("build_kernel: " + msg); }

// Sum of |g_ik - g_jk| over a column range, optionally per-column weighted.
void accumulate_absdiff(const Eigen::MatrixXd& G, Eigen::Index c0, Eigen::Index c1,
                        const Eigen::VectorXd* weights, Eigen::MatrixXd& D) {
    const Eigen::Index n = G.rows();
    for (Eigen::Index k = c0; k < c1; ++k) {
        const double w = weights ? (*weights)[k] : 1.0;
        if (w == 0.0) continue;
        const auto col = G.col(k);
        for (Eigen::Index j = 0; j < n; ++j) {
            D.col(j) += w * (col.array() - col[j]).abs().matrix();
        }
    }
}

Eigen::MatrixXd build_raw(const Eigen::MatrixXd& G, const KernelSpec& spec, double& rho_used,
                          std::vector<int>& dropped) {
    const Eigen::Index n = G.rows();
    const Eigen::Index p = G.cols();
    if (n == 0) bad("no rows");
    if (p == 0) bad("no columns");
    Eigen::MatrixXd K;

    switch (spec.kind) {
        case KernelKind::linear:
        case KernelKind::polynomial:
        case KernelKind::gaussian: {
            Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index c = 0; c < p; c += kColBlock) {
                const auto blk = G.middleCols(c, std::min(kColBlock, p - c));
                S.noalias() += blk * blk.transpose();
            }
            S = 0.5 * (S + S.transpose()).eval();
            if (spec.kind == KernelKind::linear) {
                K = std::move(S);
            } else if (spec.kind == KernelKind::polynomial) {
                rho_used = spec.rho < 0.0 ? 1.0 : spec.rho;
                if (spec.degree < 1) bad("polynomial degree must be >= 1");
                K = (S.array() + rho_used).pow(spec.degree).matrix();
            } else {
                rho_used = spec.rho < 0.0 ? 1.0 / static_cast<double>(p) : spec.rho;
                if (rho_used <= 0.0) bad("gaussian bandwidth must be positive");
                Eigen::VectorXd sq = S.diagonal();
                Eigen::MatrixXd D = sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * S;
                D = D.cwiseMax(0.0);
                D.diagonal().setZero();
                K = (-rho_used * D.array()).exp().matrix();
            }
            break;
        }
        case KernelKind::ibs: {
            if ((G.array() < 0.0).any() || (G.array() > 2.0).any()) {
                bad("ibs kernel requires marker entries in [0, 2]");
            }
            Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index c = 0; c < p; c += kColBlock) {
                accumulate_absdiff(G, c, std::min(c + kColBlock, p), nullptr, D);
            }
            K = Eigen::MatrixXd::Constant(n, n, 1.0) - D / (2.0 * static_cast<double>(p));
            break;
        }
        case KernelKind::laplacian: {
            Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
            double upsilon = 0.0;
            for (Eigen::Index k = 0; k < p; ++k) {
                const auto col = G.col(k);
                bool constant = (col.array() == col[0]).all();
                double sd = 0.0;
                if (!constant && n > 1) {
                    double mean = col.mean();
                    sd = std::sqrt((col.array() - mean).square().sum() /
                                   static_cast<double>(n - 1));
                }
                if (constant || sd == 0.0) {
                    dropped.push_back(static_cast<int>(k));
                } else {
                    w[k] = 1.0 / sd;
                    upsilon += w[k];
                }
            }
            if (upsilon == 0.0) bad("laplacian kernel: all columns have zero variance");
            Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index c = 0; c < p; c += kColBlock) {
                accumulate_absdiff(G, c, std::min(c + kColBlock, p), &w, D);
            }
            K = (-D.array() / upsilon).exp().matrix();
            K.diagonal().setOnes();
            break;
        }
        case KernelKind::identity: {
            K = Eigen::MatrixXd::Constant(n, n, 1.0);
            for (Eigen::Index k = 0; k < p; ++k) {
                const auto col = G.col(k);
                for (Eigen::Index j = 0; j < n; ++j) {
                    K.col(j).array() *= (col.array() == col[j]).cast<double>();
                }
            }
            break;
        }
    }
    return K;
}

}  // namespace

KernelMatrix factorize(const Eigen::MatrixXd& K, const KernelSpec& spec) {
    if (K.rows() != K.cols()) throw std::invalid_argument("factorize: kernel matrix not square");
    auto eig = detail::sym_eig(K);
    const Eigen::Index n = K.rows();
    double vmax = eig.values.size() ? eig.values.maxCoeff() : 0.0;
    double vmin = eig.values.size() ? eig.values.minCoeff() : 0.0;
    double scale = std::max(vmax, -vmin);
    if (vmin < -1e-6 * scale) {
        throw std::invalid_argument("factorize: kernel matrix is not positive semidefinite (min eigenvalue " +
                                    format_double(vmin) + ")");
    }
    const double keep = 1e-8 * vmax;
    Eigen::Index m = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (eig.values[i] > keep) ++m;
    }
    KernelMatrix out;
    out.K = K;
    out.spec = spec;
    out.eigenvalues.resize(m);
    out.factor.resize(m, n);
    // eig.values come back ascending; store the kept components descending
    for (Eigen::Index r = 0; r < m; ++r) {
        const Eigen::Index src = n - 1 - r;
        out.eigenvalues[r] = eig.values[src];
        out.factor.row(r) = std::sqrt(eig.values[src]) * eig.vectors.col(src).transpose();
    }
    return out;
}

KernelMatrix build_kernel(const Eigen::MatrixXd& G, const KernelSpec& spec) {
    double rho_used = 0.0;
    std::vector<int> dropped;
    Eigen::MatrixXd K = build_raw(G, spec, rho_used, dropped);
    KernelMatrix out = factorize(K, spec);
    out.rho_used = rho_used;
    out.dropped_columns = std::move(dropped);
    return out;
}

KernelMatrix build_subpop_kernel(const Eigen::MatrixXd& X, const KernelSpec& spec) {
    return build_kernel(X, spec);
}

KernelMatrix heterogeneity_weight(const KernelMatrix& K, const KernelMatrix& H) {
    if (K.n() != H.n()) {
        throw std::invalid_argument("heterogeneity_weight: kernel sizes differ");
    }
    Eigen::MatrixXd W = (Eigen::MatrixXd::Constant(K.n(), K.n(), 1.0) + H.K).cwiseProduct(K.K);
    KernelMatrix out = factorize(W, K.spec);
    out.rho_used = K.rho_used;
    return out;
}

KernelSpec parse_kernel_spec(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        auto colon = text.find(':', start);
        if (colon == std::string::npos) {
            parts.push_back(text.substr(start));
            break;
        }
        parts.push_back(text.substr(start, colon - start));
        start = colon + 1;
    }
    KernelSpec s;
    const std::string& name = parts[0];
    if (name == "linear") s.kind = KernelKind::linear;
    else if (name == "ibs") s.kind = KernelKind::ibs;
    else if (name == "gaussian") s.kind = KernelKind::gaussian;
    else if (name == "laplacian") s.kind = KernelKind::laplacian;
    else if (name == "polynomial") s.kind = KernelKind::polynomial;
    else if (name == "identity") s.kind = KernelKind::identity;
    else throw std::invalid_argument("unknown kernel '" + name + "'");

    auto parse_num = [&](const std::string& tok, const char* what) {
        try {
            std::size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (...) {
            throw std::invalid_argument(std::string("bad kernel ") + what + " '" + tok + "'");
        }
    };
    if (parts.size() > 1 && !parts[1].empty()) s.rho = parse_num(parts[1], "parameter");
    if (parts.size() > 2 && !parts[2].empty()) {
        s.degree = static_cast<int>(parse_num(parts[2], "degree"));
    }
    if (parts.size() > 3) throw std::invalid_argument("too many kernel parameters in '" + text + "'");
    return s;
}

std::string kernel_spec_string(const KernelSpec& spec, double rho_used) {
    std::string name;
    switch (spec.kind) {
        case KernelKind::linear: return "linear";
        case KernelKind::ibs: return "ibs";
        case KernelKind::identity: return "identity";
        case KernelKind::laplacian: return "laplacian";
        case KernelKind::gaussian: name = "gaussian"; break;
        case KernelKind::polynomial: name = "polynomial"; break;
    }
    name += ":" + format_double(rho_used);
    if (spec.kind == KernelKind::polynomial) name += ":" + std::to_string(spec.degree);
    return name;
}

}  // namespace aftkm
