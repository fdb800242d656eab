#include "aftkm/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "aftkm/aft_null.hpp"
#include "aftkm/rng.hpp"
#include "aftkm/threading.hpp"

namespace aftkm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Smallest t with f(t) >= target for increasing unbounded f, to absolute
// tolerance 1e-10.  The midpoint guard stops cleanly if the bracket hits
// floating-point resolution before the tolerance (huge t).
template <class F>
double solve_increasing(F f, double target) {
    double hi = 1.0;
    while (f(hi) < target) hi *= 2.0;
    double lo = 0.0;
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (f(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Cox-type draw used by the misspecification scenario: cause-specific
// hazards c_j (t + t^2) exp(g_j) with c_1 = 0.5 and c_2 = 0.1, inverted
// through the shared cumulative shape.
std::pair<double, int> gen_competing_cox(double g1, double g2, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(gen);
    const double v = unif(gen);
    const double r1 = 0.5 * std::exp(g1);
    const double r2 = 0.1 * std::exp(g2);
    const double target = -std::log(std::max(u, 1e-300)) / (r1 + r2);
    const double t = solve_increasing(detail::cum_base, target);
    const int cause = v < r1 / (r1 + r2) ? 1 : 2;
    return {t, cause};
}

// Latent SNP machinery: the marker covariance and per-column cut points are
// drawn once per dataset so truncation redraws only replace a subject's row.
struct SnpModel {
    Eigen::MatrixXd chol;  // lower factor of the AR(1) latent covariance
    Eigen::VectorXd lo, hi;
};

SnpModel make_snp_model(int p, std::mt19937_64& gen) {
    Eigen::MatrixXd sigma(p, p);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) sigma(i, j) = std::pow(0.5, std::abs(i - j));
    }
    SnpModel m;
    m.chol = sigma.llt().matrixL();
    m.lo.resize(p);
    m.hi.resize(p);
    for (int j = 0; j < p; ++j) {
        const double q = detail::draw_beta(2.0, 5.0, gen);
        const auto [lo, hi] = detail::snp_cutoffs(q);
        m.lo[j] = lo;
        m.hi[j] = hi;
    }
    return m;
}

Eigen::VectorXd draw_snp_row(const SnpModel& m, std::mt19937_64& gen) {
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::VectorXd z(m.lo.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = norm(gen);
    const Eigen::VectorXd latent = m.chol * z;
    Eigen::VectorXd g(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
        g[j] = latent[j] > m.hi[j] ? 2.0 : (latent[j] > m.lo[j] ? 1.0 : 0.0);
    }
    return g;
}

// Expression noise factor for the confounded design; rows are iid.
Eigen::MatrixXd expression_chol(int p) {
    Eigen::MatrixXd sigma(p, p);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) sigma(i, j) = std::pow(0.1, std::abs(i - j));
    }
    return sigma.llt().matrixL();
}

Eigen::VectorXd draw_expression_row(double z1, double z2, const Eigen::MatrixXd& chol,
                                    std::mt19937_64& gen) {
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::VectorXd z(chol.rows());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = norm(gen);
    return (detail::expression_mean(z1, z2) + (chol * z).array()).matrix();
}

bool is_het_scenario(ScenarioName s) {
    return s == ScenarioName::s_obs_het || s == ScenarioName::s_latent2 ||
           s == ScenarioName::s_latent20 || s == ScenarioName::s_genome_het ||
           s == ScenarioName::s_small_het;
}

int group_count(ScenarioName s) {
    if (s == ScenarioName::s_latent2) return 2;
    if (s == ScenarioName::s_latent20) return 20;
    return 1;
}

// uniform draw with the requested mean and standard deviation
double draw_effect(double mu, double sigma, std::mt19937_64& gen) {
    if (sigma == 0.0) return mu;
    const double half = std::sqrt(3.0) * sigma;
    std::uniform_real_distribution<double> unif(mu - half, mu + half);
    return unif(gen);
}

// rank-based genotype coding for the genome-profile traits: the n(1-q)^2
// lowest latent values become 0, the nq^2 highest become 2
void threshold_by_rank(Eigen::Ref<Eigen::VectorXd> col, double q) {
    const auto n = col.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return col[a] != col[b] ? col[a] < col[b] : a < b;
    });
    auto n0 = static_cast<Eigen::Index>(std::lround(static_cast<double>(n) * (1 - q) * (1 - q)));
    auto n2 = static_cast<Eigen::Index>(std::lround(static_cast<double>(n) * q * q));
    n0 = std::clamp<Eigen::Index>(n0, 0, n);
    n2 = std::clamp<Eigen::Index>(n2, 0, n - n0);
    for (Eigen::Index r = 0; r < n; ++r) {
        col[order[static_cast<std::size_t>(r)]] = r < n0 ? 0.0 : (r < n - n2 ? 1.0 : 2.0);
    }
}

struct ScenarioPlan {
    int q = 2;  // adjustment covariate count
    bool cox = false;
    bool expression = false;
    double z1_coef1 = 0.1, z2_coef1 = 0.1;  // covariate parts of the two predictors
    double z1_coef2 = 0.2, z2_coef2 = 0.2;
};

ScenarioPlan plan_for(const Scenario& scn) {
    ScenarioPlan pl;
    switch (scn.name) {
        case ScenarioName::s_confound:
            pl.expression = true;
            break;
        case ScenarioName::s_obs_het:
        case ScenarioName::s_small_het:
            pl.q = 1;
            pl.z1_coef1 = 0.5;
            pl.z1_coef2 = 1.0;
            break;
        case ScenarioName::s_coxgen:
            pl.cox = true;
            pl.z1_coef1 = pl.z2_coef1 = 0.05;
            pl.z1_coef2 = pl.z2_coef2 = 0.15;
            break;
        default:
            break;  // the shared 0.1 / 0.2 covariate effects
    }
    return pl;
}

SimDataset generate(const Scenario& scn, std::mt19937_64& gen, bool censor) {
    if (scn.n < 1 || scn.p < 1) throw std::invalid_argument("gen_dataset: n and p must be >= 1");
    if (scn.sigma_beta < 0.0 || !std::isfinite(scn.sigma_beta) || !std::isfinite(scn.mu_beta)) {
        throw std::invalid_argument("gen_dataset: effect spread parameters out of range");
    }
    const int n = scn.n;
    const int p = scn.p;
    const ScenarioPlan pl = plan_for(scn);
    const int groups = group_count(scn.name);

    // per-group or per-subject cause-1 marker effects, fixed before any
    // subject is drawn
    std::vector<double> effect;
    switch (scn.name) {
        case ScenarioName::s_latent2:
            effect = {scn.beta_group1, scn.beta_group2};
            break;
        case ScenarioName::s_latent20:
            effect.resize(20);
            for (double& e : effect) e = draw_effect(scn.mu_beta, scn.sigma_beta, gen);
            break;
        case ScenarioName::s_genome_het:
            effect.resize(static_cast<std::size_t>(n));
            for (double& e : effect) e = draw_effect(scn.mu_beta, scn.sigma_beta, gen);
            break;
        default:
            break;
    }

    std::optional<SnpModel> snps;
    Eigen::MatrixXd expr_chol;
    if (pl.expression) {
        expr_chol = expression_chol(p);
    } else {
        snps.emplace(make_snp_model(p, gen));
    }

    Dataset d;
    d.entry.resize(n);
    d.time.resize(n);
    d.status.resize(n);
    d.Z.resize(n, pl.q);
    d.G.resize(n, p);
    for (int j = 0; j < n; ++j) d.ids.push_back("s" + std::to_string(j + 1));
    for (int k = 0; k < pl.q; ++k) d.z_names.push_back("z" + std::to_string(k + 1));
    for (int k = 0; k < p; ++k) d.g_names.push_back("g" + std::to_string(k + 1));

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_real_distribution<double> unif02(0.0, 2.0);
    long attempts_total = 0;

    for (int j = 0; j < n; ++j) {
        const int group = j % groups;
        long tries = 0;
        for (;;) {
            if (++tries > 10000) {
                throw std::runtime_error(
                    "gen_dataset: truncation acceptance rate fell below 1e-3; scenario "
                    "parameters look mis-specified");
            }
            Eigen::VectorXd z(pl.q);
            z[0] = unif(gen) < 0.5 ? 1.0 : 0.0;
            if (pl.q > 1) z[1] = unif02(gen);
            const Eigen::VectorXd g = pl.expression
                                          ? draw_expression_row(z[0], pl.q > 1 ? z[1] : 0.0,
                                                                expr_chol, gen)
                                          : draw_snp_row(*snps, gen);
            const double gsum = g.sum();
            const double z2 = pl.q > 1 ? z[1] : 0.0;

            double coef1 = scn.beta;
            if (scn.name == ScenarioName::s_obs_het || scn.name == ScenarioName::s_small_het) {
                coef1 = scn.beta0 + scn.beta1 * z[0];
            } else if (scn.name == ScenarioName::s_latent2 ||
                       scn.name == ScenarioName::s_latent20) {
                coef1 = effect[static_cast<std::size_t>(group)];
            } else if (scn.name == ScenarioName::s_genome_het) {
                coef1 = effect[static_cast<std::size_t>(j)];
            }
            const double eta1 = coef1 * gsum + pl.z1_coef1 * z[0] + pl.z2_coef1 * z2;
            const double eta2 = scn.alpha * gsum + pl.z1_coef2 * z[0] + pl.z2_coef2 * z2;

            detail::TruncationAttempt a;
            if (pl.cox) {
                auto [t, cause] = gen_competing_cox(eta1, eta2, gen);
                a.time = t;
                a.cause = cause;
                a.entry = unif(gen);
                a.accepted = t > a.entry;
                if (a.accepted) {
                    std::exponential_distribution<double> resid(0.1);
                    a.censor = censor ? a.entry + resid(gen) : kInf;
                }
            } else {
                a = detail::attempt_subject(eta1, eta2, gen, censor);
            }
            if (!a.accepted) continue;

            d.entry[j] = a.entry;
            d.time[j] = std::min(a.time, a.censor);
            d.status[j] = a.time <= a.censor ? a.cause : 0;
            d.Z.row(j) = z.transpose();
            d.G.row(j) = g.transpose();
            break;
        }
        attempts_total += tries;
    }

    // inferential traits; none of them enter the hazards, so they are drawn
    // after the acceptance loops
    std::normal_distribution<double> noise(0.0, 0.5);
    switch (scn.name) {
        case ScenarioName::s_latent2: {
            d.X.resize(n, 1);
            d.x_names = {"x1"};
            for (int j = 0; j < n; ++j) d.X(j, 0) = (j % 2 == 0 ? 2.0 : 1.0) + noise(gen);
            break;
        }
        case ScenarioName::s_latent20: {
            d.X.resize(n, 25);
            for (int c = 0; c < 25; ++c) {
                d.x_names.push_back("x" + std::to_string(c + 1));
                std::vector<double> levels(20);
                std::iota(levels.begin(), levels.end(), 1.0);
                std::shuffle(levels.begin(), levels.end(), gen);
                for (int j = 0; j < n; ++j) {
                    d.X(j, c) = levels[static_cast<std::size_t>(j % 20)] + noise(gen);
                }
            }
            break;
        }
        case ScenarioName::s_genome_het: {
            const int px = 1000;
            d.X.resize(n, px);
            for (int c = 0; c < px; ++c) d.x_names.push_back("x" + std::to_string(c + 1));
            std::normal_distribution<double> stdnorm(0.0, 1.0);
            Eigen::MatrixXd chol;
            if (scn.sigma_beta > 0.0) {
                Eigen::MatrixXd sigma(n, n);
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < n; ++j) {
                        sigma(i, j) = std::exp(-std::abs(effect[static_cast<std::size_t>(i)] -
                                                         effect[static_cast<std::size_t>(j)]) /
                                               scn.sigma_beta);
                    }
                }
                Eigen::LLT<Eigen::MatrixXd> llt(sigma);
                if (llt.info() != Eigen::Success) {
                    sigma.diagonal().array() += 1e-10;
                    llt.compute(sigma);
                    if (llt.info() != Eigen::Success) {
                        throw std::runtime_error(
                            "gen_dataset: genome-profile covariance is not factorizable");
                    }
                }
                chol = llt.matrixL();
            }
            Eigen::VectorXd zvec(n);
            for (int c = 0; c < px; ++c) {
                for (int i = 0; i < n; ++i) zvec[i] = stdnorm(gen);
                if (chol.size() > 0) {
                    d.X.col(c) = chol * zvec;
                } else {
                    d.X.col(c) = zvec;  // independent profiles under the null
                }
                threshold_by_rank(d.X.col(c), detail::draw_beta(1.0, 3.0, gen));
            }
            break;
        }
        default:
            // the published pairings weight these designs by covariate
            // similarity, so the trait matrix is the covariate matrix
            d.X = d.Z;
            d.x_names = d.z_names;
            break;
    }

    SimDataset out;
    out.data = std::move(d);
    out.redraw_fraction = attempts_total == 0
                              ? 0.0
                              : static_cast<double>(attempts_total - n) /
                                    static_cast<double>(attempts_total);
    return out;
}

std::string join_first(const std::vector<std::string>& msgs, std::size_t limit) {
    std::string out;
    for (std::size_t i = 0; i < msgs.size() && i < limit; ++i) {
        if (!out.empty()) out += "; ";
        out += msgs[i];
    }
    return out;
}

}  // namespace

const char* scenario_name(ScenarioName s) {
    switch (s) {
        case ScenarioName::s1_no_het: return "s1_no_het";
        case ScenarioName::s_confound: return "s_confound";
        case ScenarioName::s_obs_het: return "s_obs_het";
        case ScenarioName::s_latent2: return "s_latent2";
        case ScenarioName::s_latent20: return "s_latent20";
        case ScenarioName::s_genome_het: return "s_genome_het";
        case ScenarioName::s_small_nohet: return "s_small_nohet";
        case ScenarioName::s_small_het: return "s_small_het";
        case ScenarioName::s_coxgen: return "s_coxgen";
    }
    return "?";
}

ScenarioName parse_scenario(const std::string& text) {
    static constexpr ScenarioName all[] = {
        ScenarioName::s1_no_het,   ScenarioName::s_confound,    ScenarioName::s_obs_het,
        ScenarioName::s_latent2,   ScenarioName::s_latent20,    ScenarioName::s_genome_het,
        ScenarioName::s_small_nohet, ScenarioName::s_small_het, ScenarioName::s_coxgen,
    };
    for (ScenarioName s : all) {
        if (text == scenario_name(s)) return s;
    }
    throw std::invalid_argument("unknown scenario '" + text +
                                "' (expected s1_no_het, s_confound, s_obs_het, s_latent2, "
                                "s_latent20, s_genome_het, s_small_nohet, s_small_het or "
                                "s_coxgen)");
}

Scenario default_scenario(ScenarioName name) {
    Scenario s;
    s.name = name;
    switch (name) {
        case ScenarioName::s1_no_het: s.alpha = 0.16; break;
        case ScenarioName::s_confound: s.alpha = 0.1; break;
        case ScenarioName::s_obs_het: s.alpha = 0.2; break;
        case ScenarioName::s_latent2: s.alpha = 0.02; break;
        case ScenarioName::s_latent20: s.alpha = 0.02; break;
        case ScenarioName::s_genome_het: s.alpha = 0.02; break;
        case ScenarioName::s_small_nohet: s.n = 100; s.p = 15; s.alpha = 0.2; break;
        case ScenarioName::s_small_het: s.n = 200; s.p = 10; s.alpha = 0.35; break;
        case ScenarioName::s_coxgen: s.p = 3; s.alpha = 0.2; break;
    }
    return s;
}

namespace detail {

double solve_event_time(double theta1, double theta2, double u) {
    const double target = -std::log(std::max(u, 1e-300));
    return solve_increasing(
        [&](double t) {
            double v = cum_base(t / theta1);
            if (theta2 > 0.0) v += cum_base(t / theta2);
            return v;
        },
        target);
}

double cause1_fraction(double theta1, double theta2, double t) {
    auto hazard = [t](double theta) {
        const double x = t / theta;
        return (x * x + x) / theta;
    };
    if (theta2 <= 0.0) return 1.0;
    const double l1 = hazard(theta1);
    const double l2 = hazard(theta2);
    if (l1 + l2 == 0.0) return 0.5;  // only at t = 0
    return l1 / (l1 + l2);
}

double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("norm_quantile: p outside (0,1)");
    // Newton on the CDF inside a shrinking bisection bracket
    double lo = -40.0, hi = 40.0, x = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
        (cdf < p ? lo : hi) = x;
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        double next = x - (cdf - p) / std::max(pdf, 1e-300);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) < 1e-14 * (1.0 + std::abs(x))) return next;
        x = next;
    }
    return x;
}

double draw_beta(double a, double b, std::mt19937_64& gen) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(gen);
    const double y = gb(gen);
    if (x + y == 0.0) return 0.5;
    return x / (x + y);
}

std::pair<double, double> snp_cutoffs(double q) {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("snp_cutoffs: frequency outside (0,1)");
    return {norm_quantile((1.0 - q) * (1.0 - q)), norm_quantile(1.0 - q * q)};
}

TruncationAttempt attempt_subject(double eta1, double eta2, std::mt19937_64& gen, bool censor) {
    TruncationAttempt a;
    auto [t, cause] = gen_competing_aft(eta1, eta2, gen);
    a.time = t;
    a.cause = cause;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    a.entry = unif(gen);
    a.accepted = a.time > a.entry;
    if (a.accepted) {
        std::exponential_distribution<double> resid(0.1);
        a.censor = censor ? a.entry + resid(gen) : kInf;
    }
    return a;
}

}  // namespace detail

std::pair<double, int> gen_competing_aft(double eta1, double eta2, std::mt19937_64& gen) {
    const bool single = eta2 == -kInf;
    if (!std::isfinite(eta1) || (!single && !std::isfinite(eta2))) {
        throw std::invalid_argument("gen_competing_aft: predictors must be finite"
                                    " (eta2 = -infinity selects the single-risk model)");
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(gen);  // event time first, cause second
    const double v = unif(gen);
    const double theta1 = std::exp(eta1);
    const double theta2 = single ? 0.0 : std::exp(eta2);
    const double t = detail::solve_event_time(theta1, theta2, u);
    const int cause = v < detail::cause1_fraction(theta1, theta2, t) ? 1 : 2;
    return {t, cause};
}

SimDataset gen_dataset(const Scenario& scn, std::mt19937_64& gen, bool censor) {
    return generate(scn, gen, censor);
}

SimDataset gen_heterogeneity_scenario(const Scenario& scn, std::mt19937_64& gen, bool censor) {
    if (!is_het_scenario(scn.name)) {
        throw std::invalid_argument(std::string("gen_heterogeneity_scenario: ") +
                                    scenario_name(scn.name) + " has no heterogeneity structure");
    }
    return generate(scn, gen, censor);
}

Eigen::MatrixXd gen_snps_mvn(int n, int p, std::mt19937_64& gen) {
    if (n < 1 || p < 1) throw std::invalid_argument("gen_snps_mvn: n and p must be >= 1");
    const SnpModel model = make_snp_model(p, gen);
    Eigen::MatrixXd g(n, p);
    for (int i = 0; i < n; ++i) g.row(i) = draw_snp_row(model, gen).transpose();
    return g;
}

Eigen::MatrixXd gen_expression_confounded(int n, int p, const Eigen::MatrixXd& Z,
                                          std::mt19937_64& gen) {
    if (n < 1 || p < 1) throw std::invalid_argument("gen_expression_confounded: n, p must be >= 1");
    if (Z.rows() != n || Z.cols() < 2) {
        throw std::invalid_argument(
            "gen_expression_confounded: Z must carry the two scenario covariates");
    }
    const Eigen::MatrixXd chol = expression_chol(p);
    Eigen::MatrixXd g(n, p);
    for (int i = 0; i < n; ++i) {
        g.row(i) = draw_expression_row(Z(i, 0), Z(i, 1), chol, gen).transpose();
    }
    return g;
}

KernelSpec scenario_kernel(const Scenario& scn) {
    KernelSpec k;
    k.kind = scn.name == ScenarioName::s_confound ? KernelKind::gaussian : KernelKind::ibs;
    return k;
}

KernelSpec scenario_hkernel(const Scenario& scn) {
    KernelSpec k;
    switch (scn.name) {
        case ScenarioName::s_obs_het:
        case ScenarioName::s_small_het:
            k.kind = KernelKind::identity;
            break;
        case ScenarioName::s_genome_het:
            k.kind = KernelKind::ibs;
            break;
        default:
            k.kind = KernelKind::gaussian;
            break;
    }
    return k;
}

StudyReport run_study(const Scenario& scn, const std::vector<Method>& methods, int replicates,
                      const std::vector<double>& alphas, std::uint64_t master_seed, int workers,
                      int perturbations) {
    if (replicates < 1) throw std::invalid_argument("run_study: need at least one replicate");
    if (methods.empty()) throw std::invalid_argument("run_study: no methods requested");
    if (perturbations < 1) throw std::invalid_argument("run_study: perturbations must be >= 1");
    for (double a : alphas) {
        if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("run_study: alpha outside (0,1)");
    }

    const auto nm = static_cast<Eigen::Index>(methods.size());
    const auto na = static_cast<Eigen::Index>(alphas.size());
    const bool needs_h = std::any_of(methods.begin(), methods.end(), [](Method m) {
        return m == Method::R_het || m == Method::Rc_het;
    });

    // resolve kernel defaults once so every replicate and the report agree
    KernelSpec kspec = scenario_kernel(scn);
    if (kspec.kind == KernelKind::gaussian && kspec.rho < 0.0) kspec.rho = 1.0 / scn.p;
    KernelSpec hspec = scenario_hkernel(scn);
    int x_cols = 2;
    switch (scn.name) {
        case ScenarioName::s_obs_het:
        case ScenarioName::s_small_het:
        case ScenarioName::s_latent2: x_cols = 1; break;
        case ScenarioName::s_latent20: x_cols = 25; break;
        case ScenarioName::s_genome_het: x_cols = 1000; break;
        default: x_cols = 2; break;  // traits mirror the covariates
    }
    if (hspec.kind == KernelKind::gaussian && hspec.rho < 0.0) hspec.rho = 1.0 / x_cols;

    StudyReport rep;
    rep.scenario = scn;
    rep.replicates = replicates;
    rep.methods = methods;
    rep.alphas = alphas;
    rep.marker_kernel = kernel_spec_string(kspec, kspec.rho);
    rep.subpop_kernel = kernel_spec_string(hspec, hspec.rho);
    rep.p_values = Eigen::MatrixXd::Constant(replicates, nm,
                                             std::numeric_limits<double>::quiet_NaN());

    std::vector<std::string> errors(static_cast<std::size_t>(replicates));
    std::vector<double> redraw(static_cast<std::size_t>(replicates), 0.0);

    parallel_for(replicates, workers, [&](int r) {
        try {
            auto gen = make_stream(master_seed, Stream::data_gen, static_cast<std::uint64_t>(r));
            const SimDataset sim = gen_dataset(scn, gen);
            redraw[static_cast<std::size_t>(r)] = sim.redraw_fraction;
            const NullFit fit = fit_null(sim.data);
            TestOptions opts;
            opts.L = perturbations;
            opts.L_tilde = perturbations;
            opts.seed = mix_seed({master_seed, static_cast<std::uint64_t>(Stream::study),
                                  static_cast<std::uint64_t>(r)});
            opts.workers = 1;  // replicates are the parallel unit
            AssocContext ctx(fit, opts);
            const KernelMatrix K = build_kernel(sim.data.G, kspec);
            std::optional<KernelMatrix> H;
            if (needs_h) H.emplace(build_subpop_kernel(sim.data.X, hspec));
            for (Eigen::Index m = 0; m < nm; ++m) {
                rep.p_values(r, m) =
                    run_test(ctx, methods[static_cast<std::size_t>(m)], K, H ? &*H : nullptr)
                        .p_value;
            }
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(r)] = e.what();
        }
    });

    double redraw_sum = 0.0;
    int ok = 0;
    for (int r = 0; r < replicates; ++r) {
        if (errors[static_cast<std::size_t>(r)].empty()) {
            redraw_sum += redraw[static_cast<std::size_t>(r)];
            ++ok;
        } else {
            ++rep.failed_replicates;
            rep.failures.push_back("replicate " + std::to_string(r) + ": " +
                                   errors[static_cast<std::size_t>(r)]);
        }
    }
    if (rep.failed_replicates > 0.05 * replicates) {
        throw std::runtime_error("run_study: " + std::to_string(rep.failed_replicates) + " of " +
                                 std::to_string(replicates) + " replicates failed (" +
                                 join_first(rep.failures, 3) + ")");
    }
    rep.mean_redraw_fraction = ok > 0 ? redraw_sum / ok : 0.0;

    rep.rejection_rate.resize(nm, na);
    rep.rejection_se.resize(nm, na);
    for (Eigen::Index m = 0; m < nm; ++m) {
        int count = 0;
        for (int r = 0; r < replicates; ++r) {
            if (!std::isnan(rep.p_values(r, m))) ++count;
        }
        for (Eigen::Index a = 0; a < na; ++a) {
            if (count == 0) {
                rep.rejection_rate(m, a) = std::numeric_limits<double>::quiet_NaN();
                rep.rejection_se(m, a) = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            int hits = 0;
            for (int r = 0; r < replicates; ++r) {
                const double pv = rep.p_values(r, m);
                if (!std::isnan(pv) && pv <= alphas[static_cast<std::size_t>(a)]) ++hits;
            }
            const double rate = static_cast<double>(hits) / count;
            rep.rejection_rate(m, a) = rate;
            rep.rejection_se(m, a) = std::sqrt(rate * (1.0 - rate) / count);
        }
    }
    return rep;
}

}  // namespace aftkm
