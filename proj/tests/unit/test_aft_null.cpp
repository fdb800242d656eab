#include "aftkm/aft_null.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

using aftkm::Dataset;
using aftkm::FitOptions;
using aftkm::StepFunction;

namespace {

Dataset make_ds(std::vector<double> entry, std::vector<double> time, std::vector<int> status,
                std::vector<std::vector<double>> zcols) {
    Dataset ds;
    const auto n = static_cast<Eigen::Index>(time.size());
    ds.entry = Eigen::Map<Eigen::VectorXd>(entry.data(), n);
    ds.time = Eigen::Map<Eigen::VectorXd>(time.data(), n);
    ds.status = Eigen::Map<Eigen::VectorXi>(status.data(), n);
    ds.Z.resize(n, static_cast<Eigen::Index>(zcols.size()));
    for (std::size_t k = 0; k < zcols.size(); ++k) {
        ds.Z.col(static_cast<Eigen::Index>(k)) =
            Eigen::Map<Eigen::VectorXd>(zcols[k].data(), n);
    }
    ds.G.resize(n, 0);
    for (Eigen::Index i = 0; i < n; ++i) ds.ids.push_back("s" + std::to_string(i));
    return ds;
}

Eigen::VectorXd beta1(double b) {
    Eigen::VectorXd v(1);
    v[0] = b;
    return v;
}

// Three uncensored subjects, worked through by hand throughout this file:
// Z = (0,1,2), event times (1,2,3), no truncation.
Dataset hand_ds() { return make_ds({0, 0, 0}, {1, 2, 3}, {1, 1, 1}, {{0, 1, 2}}); }

}  // namespace

TEST_CASE("estimating function on the hand-worked 3-subject dataset") {
    Dataset ds = hand_ds();
    Eigen::VectorXd u = aftkm::estimating_function(beta1(0.0), ds);
    REQUIRE(u.size() == 1);
    // jumps at 0, log2, log3: contributions (0-1), (1-1.5), (2-2), divided by 3
    CHECK(std::abs(u[0] - (-0.5)) < 1e-15);
}

TEST_CASE("estimating function vanishes when all covariates are identical") {
    Dataset ds = make_ds({0, 0, 0, 0}, {1, 3, 2, 5}, {1, 1, 0, 1}, {{0.3, 0.3, 0.3, 0.3}});
    for (double b : {-1.0, 0.0, 2.5}) {
        CHECK(aftkm::estimating_function(beta1(b), ds).norm() < 1e-14);
    }
}

TEST_CASE("estimating function is the zero vector without cause events") {
    Dataset ds = make_ds({0, 0, 0}, {1, 2, 3}, {0, 2, 0}, {{0, 1, 2}});
    CHECK(aftkm::estimating_function(beta1(0.4), ds).norm() == 0.0);
}

TEST_CASE("estimating function unchanged by a common shift of the log times") {
    std::vector<double> entry{0, 0, 0.2, 0, 0.5, 0, 0, 0.1};
    std::vector<double> time{1.3, 0.7, 2.1, 3.4, 1.9, 0.9, 2.8, 4.2};
    std::vector<int> status{1, 1, 0, 1, 1, 0, 1, 1};
    std::vector<double> z{-0.8, 0.4, 1.1, -0.2, 0.9, 1.7, -1.3, 0.5};
    Dataset ds = make_ds(entry, time, status, {z});

    const double c = std::exp(0.7);
    std::vector<double> entry2 = entry;
    std::vector<double> time2 = time;
    for (auto& v : entry2) v *= c;
    for (auto& v : time2) v *= c;
    Dataset shifted = make_ds(entry2, time2, status, {z});

    for (double b : {-0.3, 0.0, 0.8}) {
        Eigen::VectorXd u0 = aftkm::estimating_function(beta1(b), ds);
        Eigen::VectorXd u1 = aftkm::estimating_function(beta1(b), shifted);
        CHECK((u0 - u1).norm() < 1e-15);
    }
}

TEST_CASE("nelson_aalen on the hand-worked dataset") {
    Dataset ds = hand_ds();
    Eigen::VectorXd beta0(0);
    Dataset free = ds;
    free.Z.resize(3, 0);
    StepFunction sf = aftkm::nelson_aalen(beta0, free);

    REQUIRE(sf.times.size() == 3);
    CHECK(sf.times[0] == 0.0);
    CHECK(std::abs(sf.times[1] - std::log(2.0)) < 1e-15);
    CHECK(std::abs(sf.increments[0] - 1.0 / 3.0) < 1e-15);
    CHECK(std::abs(sf.increments[1] - 0.5) < 1e-15);
    CHECK(std::abs(sf.increments[2] - 1.0) < 1e-15);
    CHECK(std::abs(sf(std::log(3.0)) - 11.0 / 6.0) < 1e-15);
    CHECK(std::abs(sf(std::log(2.5)) - 5.0 / 6.0) < 1e-15);
    CHECK(sf(-0.1) == 0.0);

    SUBCASE("constant extrapolation past the last jump") {
        CHECK(sf(1e6) == sf(std::log(3.0)));
    }
}

TEST_CASE("nelson_aalen degenerate shapes") {
    SUBCASE("no cause events gives the zero function") {
        Dataset ds = make_ds({0, 0}, {1, 2}, {0, 2}, {});
        StepFunction sf = aftkm::nelson_aalen(Eigen::VectorXd(0), ds);
        CHECK(sf.times.empty());
        CHECK(sf(5.0) == 0.0);
    }
    SUBCASE("one subject, one event: single jump of height 1") {
        Dataset ds = make_ds({0}, {2.5}, {1}, {});
        StepFunction sf = aftkm::nelson_aalen(Eigen::VectorXd(0), ds);
        REQUIRE(sf.times.size() == 1);
        CHECK(sf.increments[0] == 1.0);
    }
    SUBCASE("event at the entry time stays in its own risk set") {
        Dataset ds = make_ds({2.0, 0.0}, {2.0, 1.0}, {1, 0}, {});
        StepFunction sf = aftkm::nelson_aalen(Eigen::VectorXd(0), ds);
        REQUIRE(sf.times.size() == 1);
        CHECK(sf.increments[0] == 1.0);
    }
}

TEST_CASE("nelson_aalen matches an independent textbook implementation") {
    // censoring and tied events, no truncation, no covariates
    std::vector<double> time{3, 1, 4, 1, 5, 9, 2, 6, 5, 3.5};
    std::vector<int> status{1, 1, 0, 1, 1, 0, 1, 1, 1, 0};
    const auto n = time.size();
    Dataset ds = make_ds(std::vector<double>(n, 0.0), time, status, {});
    StepFunction sf = aftkm::nelson_aalen(Eigen::VectorXd(0), ds);

    std::vector<double> logt(n);
    for (std::size_t i = 0; i < n; ++i) logt[i] = std::log(time[i]);
    std::vector<double> distinct;
    for (std::size_t i = 0; i < n; ++i) {
        if (status[i] == 1) distinct.push_back(logt[i]);
    }
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    REQUIRE(sf.times == distinct);
    double cum = 0.0;
    for (double s : distinct) {
        double d = 0.0;
        double atrisk = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (status[i] == 1 && logt[i] == s) d += 1.0;
            if (logt[i] >= s) atrisk += 1.0;
        }
        cum += d / atrisk;
        CHECK(std::abs(sf(s) - cum) < 1e-12);
    }
}

TEST_CASE("martingale residuals on the hand-worked dataset") {
    Dataset ds = hand_ds();
    Eigen::VectorXd beta = beta1(0.0);
    StepFunction sf = aftkm::nelson_aalen(beta, ds);
    Eigen::VectorXd m = aftkm::martingale_residuals(beta, sf, ds);

    REQUIRE(m.size() == 3);
    CHECK(std::abs(m[0] - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(m[1] - 1.0 / 6.0) < 1e-15);
    CHECK(std::abs(m[2] + 5.0 / 6.0) < 1e-15);
    CHECK(std::abs(m.sum()) < 1e-15);
}

TEST_CASE("martingale residuals degenerate shapes") {
    SUBCASE("fully censored data gives the zero vector") {
        Dataset ds = make_ds({0, 0, 0}, {1, 2, 3}, {0, 0, 0}, {});
        Eigen::VectorXd beta(0);
        Eigen::VectorXd m = aftkm::martingale_residuals(beta, aftkm::nelson_aalen(beta, ds), ds);
        CHECK(m.norm() == 0.0);
    }
    SUBCASE("single uncensored subject") {
        Dataset ds = make_ds({0}, {3}, {1}, {});
        Eigen::VectorXd beta(0);
        Eigen::VectorXd m = aftkm::martingale_residuals(beta, aftkm::nelson_aalen(beta, ds), ds);
        CHECK(m[0] == 0.0);
    }
    SUBCASE("hazard from a different beta is rejected") {
        Dataset ds = hand_ds();
        StepFunction sf = aftkm::nelson_aalen(beta1(0.0), ds);
        CHECK_THROWS_AS(aftkm::martingale_residuals(beta1(1.0), sf, ds), std::invalid_argument);
    }
}

TEST_CASE("residual invariants hold at arbitrary beta with censoring and truncation") {
    std::mt19937_64 gen(991);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int n = 120;
    std::vector<double> entry(n), time(n), z1(n), z2(n);
    std::vector<int> status(n);
    for (int i = 0; i < n; ++i) {
        z1[i] = norm(gen);
        z2[i] = unif(gen) < 0.4 ? 1.0 : 0.0;
        entry[i] = unif(gen) < 0.5 ? 0.0 : 0.3 * unif(gen);
        double t = entry[i] + 0.2 + 2.0 * unif(gen);
        time[i] = t;
        double r = unif(gen);
        status[i] = r < 0.5 ? 1 : (r < 0.75 ? 2 : 0);
    }
    Dataset ds = make_ds(entry, time, status, {z1, z2});

    for (double b1 : {-0.4, 0.0, 0.7}) {
        Eigen::VectorXd beta(2);
        beta << b1, 0.3;
        StepFunction sf = aftkm::nelson_aalen(beta, ds);
        Eigen::VectorXd m = aftkm::martingale_residuals(beta, sf, ds);
        CHECK(std::abs(m.sum()) < 1e-10 * n);
        CHECK(m.maxCoeff() <= 1.0 + 1e-15);
    }
}

TEST_CASE("fit_beta recovers a null coefficient on simulated data") {
    std::mt19937_64 gen(2024);
    std::normal_distribution<double> norm(0.0, 1.0);
    const int n = 400;
    std::vector<double> entry(n, 0.0), time(n), z(n);
    std::vector<int> status(n, 1);
    for (int i = 0; i < n; ++i) {
        z[i] = norm(gen);
        time[i] = std::exp(norm(gen));  // no covariate effect
    }
    Dataset ds = make_ds(entry, time, status, {z});

    auto fit = aftkm::fit_beta(ds);
    CHECK(std::abs(fit.beta_hat[0]) < 0.3);
    CHECK(fit.score_norm <= 1e-3);
}

TEST_CASE("fit_beta with identical covariates returns zero and converges") {
    Dataset ds = make_ds({0, 0, 0, 0}, {1, 2, 3, 4}, {1, 1, 1, 0}, {{1.5, 1.5, 1.5, 1.5}});
    auto fit = aftkm::fit_beta(ds);
    CHECK(fit.beta_hat[0] == 0.0);
    CHECK(fit.converged);
}

TEST_CASE("fit_beta on a single-event dataset returns a finite best point") {
    Dataset ds = make_ds({0, 0, 0}, {1, 2, 3}, {0, 1, 0}, {{0.0, 1.0, 2.0}});
    auto fit = aftkm::fit_beta(ds);
    CHECK(std::isfinite(fit.beta_hat[0]));
    CHECK(std::isfinite(fit.score_norm));
}

TEST_CASE("fit_beta objective matches an exhaustive grid search") {
    std::vector<double> z{-1.2, -0.4, 0.1, 0.7, 1.5, 2.2};
    std::vector<double> noise{0.3, -0.8, 0.9, -0.2, 0.5, -0.6};
    std::vector<double> time(6);
    for (int i = 0; i < 6; ++i) time[i] = std::exp(0.35 * z[i] + noise[i]);
    Dataset ds = make_ds(std::vector<double>(6, 0.0), time, std::vector<int>(6, 1), {z});

    double best_grid = std::numeric_limits<double>::infinity();
    for (int k = -3000; k <= 3000; ++k) {
        double b = static_cast<double>(k) * 1e-3;
        best_grid = std::min(best_grid, aftkm::estimating_function(beta1(b), ds).squaredNorm());
    }
    auto fit = aftkm::fit_beta(ds);
    double impl = fit.score_norm * fit.score_norm;
    CHECK(std::abs(impl - best_grid) < 1e-6);
}

TEST_CASE("adding c'Z to the log times shifts the fitted coefficient by c") {
    std::mt19937_64 gen(77);
    std::normal_distribution<double> norm(0.0, 1.0);
    const int n = 80;
    std::vector<double> entry(n, 0.0), time(n), z(n);
    std::vector<int> status(n, 1);
    for (int i = 0; i < n; ++i) {
        z[i] = norm(gen);
        time[i] = std::exp(0.4 * z[i] + norm(gen));
    }
    Dataset ds = make_ds(entry, time, status, {z});
    auto fit0 = aftkm::fit_beta(ds);

    const double c = 0.5;
    std::vector<double> time2(n);
    for (int i = 0; i < n; ++i) time2[i] = time[i] * std::exp(c * z[i]);
    Dataset shifted = make_ds(entry, time2, status, {z});
    auto fit1 = aftkm::fit_beta(shifted);

    CHECK(std::abs(fit1.beta_hat[0] - fit0.beta_hat[0] - c) < 0.05);
}

TEST_CASE("fit_beta escapes the vacuous separation root of a truncated binary covariate") {
    // with left truncation and a binary covariate, extreme beta pushes the two
    // groups' risk windows apart until every risk set is single-group and the
    // score is identically zero; that vacuous root must lose to the finite one
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> norm(0.0, 0.5);
    const int n = 300;
    std::vector<double> entry(n), time(n), z(n);
    std::vector<int> status(n, 1);
    const double shift = 2.5;
    for (int i = 0; i < n; ++i) {
        z[i] = i % 2 ? 1.0 : 0.0;
        entry[i] = 0.2 + 0.8 * unif(gen);
        do {
            time[i] = std::exp(norm(gen) + shift * z[i]);
        } while (time[i] <= entry[i]);
        if (z[i] == 1.0 && unif(gen) < 0.5) status[i] = 0;  // one-sided censoring
    }
    Dataset ds = make_ds(entry, time, status, {z});

    // the trap really is in this dataset: at extreme beta the score vanishes
    CHECK(aftkm::estimating_function(beta1(-12.0), ds)[0] == 0.0);
    CHECK(aftkm::estimating_function(beta1(12.0), ds)[0] == 0.0);

    auto fit = aftkm::fit_beta(ds);
    CHECK(std::abs(fit.beta_hat[0] - shift) < 0.6);
    CHECK(fit.score_norm < 1e-2);
}

TEST_CASE("fit_null composition and bookkeeping") {
    long before = aftkm::fit_null_invocations();

    SUBCASE("no covariates") {
        Dataset ds = make_ds({0, 0, 0, 0}, {1, 2, 3, 4}, {1, 0, 1, 1}, {});
        auto fit = aftkm::fit_null(ds);
        CHECK(fit.beta_hat.size() == 0);
        CHECK(fit.converged);
        CHECK(std::abs(fit.residuals.sum()) < 1e-12);
        CHECK(aftkm::fit_null_invocations() == before + 1);
    }
    SUBCASE("no cause events") {
        Dataset ds = make_ds({0, 0, 0}, {1, 2, 3}, {0, 2, 2}, {{0.1, 0.5, 0.9}});
        auto fit = aftkm::fit_null(ds);
        CHECK(fit.lambda_eps.times.empty());
        CHECK(fit.residuals.norm() == 0.0);
        CHECK(fit.converged);
    }
    SUBCASE("small full fit keeps every invariant") {
        Dataset ds = make_ds({0, 0, 0.5, 0, 0, 0.2, 0, 0}, {1.3, 0.7, 2.1, 3.4, 1.9, 0.9, 2.8, 4.2},
                             {1, 1, 0, 1, 1, 0, 1, 2}, {{-0.8, 0.4, 1.1, -0.2, 0.9, 1.7, -1.3, 0.5}});
        auto fit = aftkm::fit_null(ds);
        CHECK(std::abs(fit.residuals.sum()) < 1e-10 * 8);
        CHECK(fit.residuals.maxCoeff() <= 1.0 + 1e-15);
        CHECK(fit.data == &ds);
    }
}
