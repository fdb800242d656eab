// Python surface for the association engine.  Arrays cross the boundary as
// numpy/Eigen copies and results come back as plain dicts so callers need
// nothing from this package beyond numpy itself.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftkm/aft_null.hpp"
#include "aftkm/assoc.hpp"
#include "aftkm/data.hpp"
#include "aftkm/kernels.hpp"
#include "aftkm/quadform.hpp"
#include "aftkm/rng.hpp"
#include "aftkm/simgen.hpp"
#include "aftkm/version.hpp"

namespace py = pybind11;
using namespace aftkm;

namespace {

Dataset make_dataset(const Eigen::VectorXd& entry, const Eigen::VectorXd& time,
                     const Eigen::VectorXi& status, const Eigen::MatrixXd& Z,
                     const Eigen::MatrixXd& G, const std::optional<Eigen::MatrixXd>& X,
                     int cause) {
    const auto n = entry.size();
    if (time.size() != n || status.size() != n || Z.rows() != n || G.rows() != n) {
        throw std::invalid_argument("entry, time, status and matrix rows must share one length");
    }
    if (X && X->rows() != n) {
        throw std::invalid_argument("subpopulation trait rows must match the sample size");
    }
    Dataset d;
    d.entry = entry;
    d.time = time;
    d.status = status;
    d.Z = Z;
    d.G = G;
    d.X = X ? *X : Z;
    d.cause = cause;
    d.ids.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d.ids.push_back("s" + std::to_string(i + 1));
    for (Eigen::Index j = 0; j < d.Z.cols(); ++j) d.z_names.push_back("z" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < d.G.cols(); ++j) d.g_names.push_back("g" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) d.x_names.push_back("x" + std::to_string(j + 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(time(i) > entry(i))) {
            throw std::invalid_argument("observation " + std::to_string(i + 1) +
                                        ": time must exceed the entry age");
        }
        if (status(i) < 0) throw std::invalid_argument("status codes must be nonnegative");
    }
    return d;
}

std::string flag_of(const TestResult& r) {
    if (r.degenerate) return "degenerate_spectrum";
    if (r.used_moment_fallback) return "moment_fallback";
    if (!r.p_converged) return "p_unconverged";
    return "-";
}

Scenario scenario_with(const std::string& name, int n, int p, double beta, std::uint64_t seed) {
    Scenario scn = default_scenario(parse_scenario(name));
    if (n > 0) scn.n = n;
    if (p > 0) scn.p = p;
    if (beta != 0.0) scn.beta = beta;
    scn.seed = seed;
    return scn;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "kernel association tests for left-truncated competing-risks data";
    m.attr("__version__") = kVersion;

    m.def(
        "fit_null",
        [](const Eigen::VectorXd& entry, const Eigen::VectorXd& time,
           const Eigen::VectorXi& status, const Eigen::MatrixXd& Z, int cause) {
            const Dataset d =
                make_dataset(entry, time, status, Z, Eigen::MatrixXd(entry.size(), 0),
                             std::nullopt, cause);
            const NullFit fit = fit_null(d);
            py::dict out;
            out["beta"] = fit.beta_hat;
            out["residuals"] = fit.residuals;
            out["score_norm"] = fit.score_norm;
            out["converged"] = fit.converged;
            out["events"] = static_cast<long>(d.n_events());
            return out;
        },
        py::arg("entry"), py::arg("time"), py::arg("status"), py::arg("Z"), py::arg("cause") = 1,
        "Fit the accelerated failure time null model and return the slope\n"
        "estimate with its residuals.");

    m.def(
        "association_test",
        [](const Eigen::VectorXd& entry, const Eigen::VectorXd& time,
           const Eigen::VectorXi& status, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& G,
           const std::string& method, const std::string& kernel,
           const std::optional<Eigen::MatrixXd>& X, const std::string& hkernel, int cause,
           int perturbations, std::uint64_t seed, int workers) {
            const Method mth = parse_method(method);
            const bool het = mth == Method::R_het || mth == Method::Rc_het;
            if (het && !X) {
                throw std::invalid_argument("heterogeneity methods need the X trait matrix");
            }
            const Dataset d = make_dataset(entry, time, status, Z, G, X, cause);
            const NullFit fit = fit_null(d);
            TestOptions opts;
            opts.L = opts.L_tilde = perturbations;
            opts.seed = seed;
            opts.workers = workers;
            const AssocContext ctx(fit, opts);
            const KernelMatrix K = build_kernel(d.G, parse_kernel_spec(kernel));
            std::optional<KernelMatrix> H;
            if (het) H.emplace(build_subpop_kernel(d.X, parse_kernel_spec(hkernel)));
            const TestResult res = run_test(ctx, mth, K, H ? &*H : nullptr);
            py::dict out;
            out["statistic"] = res.statistic;
            out["p_value"] = res.p_value;
            out["method"] = method_name(mth);
            out["kernel"] = kernel_spec_string(K.spec, K.rho_used);
            out["flag"] = flag_of(res);
            out["spectrum"] = res.spectrum;
            return out;
        },
        py::arg("entry"), py::arg("time"), py::arg("status"), py::arg("Z"), py::arg("G"),
        py::arg("method") = "Rc", py::arg("kernel") = "ibs", py::arg("X") = py::none(),
        py::arg("hkernel") = "identity", py::arg("cause") = 1, py::arg("perturbations") = 1000,
        py::arg("seed") = 0, py::arg("workers") = 1,
        "Run one kernel association test against the fitted null and return\n"
        "the statistic, p-value and diagnostic flag.");

    m.def(
        "simulate",
        [](const std::string& scenario, int n, int p, double beta, std::uint64_t seed) {
            const Scenario scn = scenario_with(scenario, n, p, beta, seed);
            auto gen = make_stream(seed, Stream::data_gen, 0);
            const SimDataset sim = gen_dataset(scn, gen);
            py::dict out;
            out["entry"] = sim.data.entry;
            out["time"] = sim.data.time;
            out["status"] = sim.data.status;
            out["Z"] = sim.data.Z;
            out["G"] = sim.data.G;
            out["X"] = sim.data.X;
            out["cause"] = sim.data.cause;
            out["redraw_fraction"] = sim.redraw_fraction;
            return out;
        },
        py::arg("scenario"), py::arg("n") = 0, py::arg("p") = 0, py::arg("beta") = 0.0,
        py::arg("seed") = 0,
        "Draw one synthetic dataset from a named scenario; n, p and beta of\n"
        "zero keep the scenario defaults.");

    m.def(
        "calibrate",
        [](const std::string& scenario, const std::vector<std::string>& methods, int replicates,
           const std::vector<double>& alphas, std::uint64_t seed, int workers, int perturbations,
           int n, int p, double beta) {
            const Scenario scn = scenario_with(scenario, n, p, beta, seed);
            std::vector<Method> ms;
            for (const auto& name : methods) ms.push_back(parse_method(name));
            const StudyReport rep =
                run_study(scn, ms, replicates, alphas, seed, workers, perturbations);
            py::dict out;
            out["p_values"] = rep.p_values;
            out["rejection_rate"] = rep.rejection_rate;
            out["rejection_se"] = rep.rejection_se;
            out["failed_replicates"] = rep.failed_replicates;
            out["mean_redraw_fraction"] = rep.mean_redraw_fraction;
            out["marker_kernel"] = rep.marker_kernel;
            out["subpop_kernel"] = rep.subpop_kernel;
            return out;
        },
        py::arg("scenario"), py::arg("methods"), py::arg("replicates"), py::arg("alphas"),
        py::arg("seed") = 0, py::arg("workers") = 1, py::arg("perturbations") = 1000,
        py::arg("n") = 0, py::arg("p") = 0, py::arg("beta") = 0.0,
        "Replicate a scenario and tabulate rejection rates per method and\n"
        "level.  Failed replicates appear as NaN rows in p_values.");

    m.def(
        "kernel_matrix",
        [](const Eigen::MatrixXd& G, const std::string& kernel) {
            const KernelMatrix K = build_kernel(G, parse_kernel_spec(kernel));
            py::dict out;
            out["matrix"] = K.K;
            out["spec"] = kernel_spec_string(K.spec, K.rho_used);
            out["eigenvalues"] = K.eigenvalues;
            return out;
        },
        py::arg("G"), py::arg("kernel") = "ibs",
        "Build a marker similarity matrix and report the resolved kernel\n"
        "parameters.");

    m.def(
        "davies_pvalue",
        [](const Eigen::VectorXd& weights, double x) { return davies_tail(weights, x).p; },
        py::arg("weights"), py::arg("x"),
        "Tail probability P(sum_j w_j chi2_1 >= x) of a weighted chi-square\n"
        "convolution.");
}
