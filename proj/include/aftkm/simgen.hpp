#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aftkm/assoc.hpp"
#include "aftkm/data.hpp"
#include "aftkm/kernels.hpp"

namespace aftkm {

// Competing-risks study generator.  Event times come from two cause-specific
// AFT hazards sharing the baseline lambda0(x) = x^2 + x; subjects are left
// truncated at A ~ U(0,1) (conditional sampling by redraw) and censored at
// C = A + E with E ~ exp(rate 0.1).  Each named scenario reproduces one of
// the published study designs.

enum class ScenarioName {
    s1_no_het,      // SNP set, shared marker effect, two adjustment covariates
    s_confound,     // expression markers driven quadratically by the covariates
    s_obs_het,      // effect differs between two observable groups (sex)
    s_latent2,      // two latent sub-populations, one inferential trait
    s_latent20,     // twenty latent sub-populations, 25 inferential traits
    s_genome_het,   // effect varies per genome profile, 1000 background SNPs
    s_small_nohet,  // small-sample variant of s1_no_het
    s_small_het,    // small-sample variant of s_obs_het
    s_coxgen,       // misspecification check: data from Cox-type hazards
};

const char* scenario_name(ScenarioName s);
ScenarioName parse_scenario(const std::string& text);

struct Scenario {
    ScenarioName name = ScenarioName::s1_no_het;
    int n = 400;
    int p = 20;
    // Cause-1 marker effects.  Which fields apply depends on the scenario
    // family; default_scenario() fills the size (null) configuration.
    double beta = 0.0;         // shared effect (s1_no_het, s_confound, s_small_nohet, s_coxgen)
    double beta0 = 0.0;        // group-common part, observable-heterogeneity designs
    double beta1 = 0.0;        // group-difference part, observable-heterogeneity designs
    double beta_group1 = 0.0;  // latent two-group designs, group 1
    double beta_group2 = 0.0;  // latent two-group designs, group 2
    double mu_beta = 0.0;      // mean of the random per-group / per-subject effect
    double sigma_beta = 0.0;   // standard deviation of that uniform draw; 0 = no spread
    // Cause-2 marker effect; every design fixes its published value.
    double alpha = 0.16;
    std::uint64_t seed = 0;
};

// Scenario with the published design constants and all cause-1 effects zero.
Scenario default_scenario(ScenarioName name);

struct SimDataset {
    Dataset data;
    // share of candidate subjects the truncation condition rejected; a
    // regression metric, not something callers should gate on
    double redraw_fraction = 0.0;
};

// One competing-risks draw given the two AFT linear predictors: T solves
// L0(T/theta1) + L0(T/theta2) = -log U with theta_j = exp(eta_j) and
// L0(x) = x^3/3 + x^2/2, then the cause is 1 with probability
// lambda1(T) / (lambda1(T) + lambda2(T)).  Consumes exactly two uniforms,
// time first.  eta2 = -infinity switches cause 2 off entirely.
std::pair<double, int> gen_competing_aft(double eta1, double eta2, std::mt19937_64& gen);

// Full scenario draw: covariates, markers, event times, truncation and
// censoring.  Heterogeneity designs are dispatched to
// gen_heterogeneity_scenario.  `censor = false` replaces the residual
// censoring draw with infinity so distributional checks see raw event times.
// Throws std::runtime_error when the truncation acceptance rate collapses
// below about 1e-3 (mis-specified scenario).
SimDataset gen_dataset(const Scenario& scn, std::mt19937_64& gen, bool censor = true);

// SNP matrix: latent rows ~ MVN(0, {0.5^|k-l|}), per-column minor allele
// frequency ~ Beta(2,5), thresholds at the Hardy-Weinberg genotype
// frequencies ((1-q)^2, 2q(1-q), q^2).
Eigen::MatrixXd gen_snps_mvn(int n, int p, std::mt19937_64& gen);

// Expression markers confounded by the two adjustment covariates:
// G_i = m(Z_i1, Z_i2) * 1_p + e_i with the quadratic mean surface
// 0.5 z1 + 0.5 z2 + 0.25 z1^2 + 0.25 z2^2 + 0.5 z1 z2 and row noise
// e ~ MVN(0, {0.1^|k-l|}).
Eigen::MatrixXd gen_expression_confounded(int n, int p, const Eigen::MatrixXd& Z,
                                          std::mt19937_64& gen);

// The heterogeneity designs (s_obs_het, s_latent2, s_latent20, s_genome_het,
// s_small_het).  Output datasets carry the inferential trait columns in X.
// Sub-population membership is positional: subject j belongs to group
// j mod k, so groups stay equal-sized to within one subject.
SimDataset gen_heterogeneity_scenario(const Scenario& scn, std::mt19937_64& gen,
                                      bool censor = true);

// Kernel pairings used in the published studies: the marker kernel for the
// statistic and the sub-population kernel for the heterogeneity weight.
KernelSpec scenario_kernel(const Scenario& scn);
KernelSpec scenario_hkernel(const Scenario& scn);

struct StudyReport {
    Scenario scenario;
    int replicates = 0;
    std::vector<Method> methods;
    std::vector<double> alphas;
    Eigen::MatrixXd p_values;        // replicates x methods; NaN marks a failed replicate
    Eigen::MatrixXd rejection_rate;  // methods x alphas, over the successful replicates
    Eigen::MatrixXd rejection_se;    // matching binomial standard errors
    int failed_replicates = 0;
    std::vector<std::string> failures;
    double mean_redraw_fraction = 0.0;
    std::string marker_kernel;  // resolved spec strings, recorded for provenance
    std::string subpop_kernel;
};

// Generates `replicates` datasets, fits the null once per dataset, runs every
// requested method, and tabulates rejection rates at each alpha.  Replicate k
// draws from streams keyed by (master_seed, stream, k), so the report is
// bit-identical for any worker count.  Individual replicate failures are
// collected; more than 5% of them is an error.  `perturbations` sets both
// slope-estimation draw counts (L and L-tilde).
StudyReport run_study(const Scenario& scn, const std::vector<Method>& methods, int replicates,
                      const std::vector<double>& alphas, std::uint64_t master_seed, int workers,
                      int perturbations = 1000);

namespace detail {

// cumulative baseline hazard: integral of x^2 + x
inline double cum_base(double x) { return x * x * x / 3.0 + x * x / 2.0; }

// root of L0(t/theta1) + L0(t/theta2) = -log(u) by bracketed bisection to
// absolute tolerance 1e-10; theta2 = 0 drops the second term
double solve_event_time(double theta1, double theta2, double u);

// lambda1(t) / (lambda1(t) + lambda2(t)) for the same parametrization
double cause1_fraction(double theta1, double theta2, double t);

double norm_quantile(double p);               // inverse standard normal CDF
double draw_beta(double a, double b, std::mt19937_64& gen);

// latent N(0,1) cut points giving HWE genotype frequencies for frequency q
std::pair<double, double> snp_cutoffs(double q);

// quadratic confounding mean surface
inline double expression_mean(double z1, double z2) {
    return 0.5 * z1 + 0.5 * z2 + 0.25 * z1 * z1 + 0.25 * z2 * z2 + 0.5 * z1 * z2;
}

// One truncation attempt at fixed AFT predictors: draws the event pair, then
// A ~ U(0,1); accepted iff T > A.  The censoring increment is drawn only for
// accepted subjects.  Exposed so distributional checks can sample the
// conditional law directly.
struct TruncationAttempt {
    double time = 0.0;
    double entry = 0.0;
    double censor = 0.0;
    int cause = 0;
    bool accepted = false;
};
TruncationAttempt attempt_subject(double eta1, double eta2, std::mt19937_64& gen,
                                  bool censor = true);

}  // namespace detail

}  // namespace aftkm
