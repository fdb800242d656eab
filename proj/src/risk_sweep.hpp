#pragma once

// Shared machinery for single-pass sweeps over residual-scale event times.
// Everything downstream (estimating function, Nelson-Aalen, martingale
// residuals, residual scores, covariance accumulation) walks the same jump
// list with the same at-risk bookkeeping, so the conventions live here once:
// the at-risk set at a jump s is {j : e_a_j < s <= e_j}, and a subject whose
// event lands exactly on its own entry residual is nudged into the risk set
// to avoid a zero-at-risk singularity.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftkm/aft_null.hpp"

namespace aftkm::detail {

struct RiskSweep {
    std::vector<double> jumps;    // distinct cause-event residual times, ascending
    std::vector<double> nevents;  // tied events at each jump
    std::vector<double> nrisk;    // at-risk count at each jump
    std::vector<double> coef;     // nevents / nrisk, the Nelson-Aalen increments
    std::vector<int> enter_order;  // subject indices sorted by effective entry
    std::vector<int> exit_order;   // subject indices sorted by exit residual
    Eigen::VectorXd entry_eff;     // entry residuals after the boundary nudge
    Eigen::VectorXd exit_res;
};

inline Eigen::VectorXd effective_entry(const TransformedData& td) {
    Eigen::VectorXd entry = td.e_a;
    for (Eigen::Index i = 0; i < td.e.size(); ++i) {
        if (td.d[i] == 1.0 && td.e[i] == td.e_a[i]) {
            entry[i] = std::nextafter(td.e_a[i], -std::numeric_limits<double>::infinity());
        }
    }
    return entry;
}

// Ties in the sort keys are broken by subject index so that summation order,
// and with it every floating-point accumulation downstream, is reproducible.
inline std::vector<int> order_by(const Eigen::VectorXd& key) {
    std::vector<int> idx(static_cast<std::size_t>(key.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (key[a] != key[b]) return key[a] < key[b];
        return a < b;
    });
    return idx;
}

inline RiskSweep make_sweep(const TransformedData& td) {
    const Eigen::Index n = td.e.size();
    RiskSweep rs;
    rs.entry_eff = effective_entry(td);
    rs.exit_res = td.e;
    rs.enter_order = order_by(rs.entry_eff);
    rs.exit_order = order_by(rs.exit_res);

    std::vector<double> ev;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (td.d[i] == 1.0) ev.push_back(td.e[i]);
    }
    std::sort(ev.begin(), ev.end());
    for (std::size_t i = 0; i < ev.size();) {
        std::size_t j = i;
        while (j < ev.size() && ev[j] == ev[i]) ++j;
        rs.jumps.push_back(ev[i]);
        rs.nevents.push_back(static_cast<double>(j - i));
        i = j;
    }

    std::size_t pe = 0;
    std::size_t px = 0;
    double risk = 0.0;
    const std::size_t un = static_cast<std::size_t>(n);
    for (std::size_t k = 0; k < rs.jumps.size(); ++k) {
        const double s = rs.jumps[k];
        while (pe < un && rs.entry_eff[rs.enter_order[pe]] < s) {
            risk += 1.0;
            ++pe;
        }
        while (px < un && rs.exit_res[rs.exit_order[px]] < s) {
            risk -= 1.0;
            ++px;
        }
        if (risk <= 0.0) {
            throw std::runtime_error("no subjects at risk at residual time " + std::to_string(s));
        }
        rs.nrisk.push_back(risk);
        rs.coef.push_back(rs.nevents[k] / risk);
    }
    return rs;
}

// Walks the jumps in ascending order, firing enter(i)/leave(i) for risk-set
// membership changes strictly before each jump(k) call.
template <class Enter, class Leave, class Jump>
void sweep(const RiskSweep& rs, Enter&& enter, Leave&& leave, Jump&& jump) {
    std::size_t pe = 0;
    std::size_t px = 0;
    const std::size_t n = rs.enter_order.size();
    for (std::size_t k = 0; k < rs.jumps.size(); ++k) {
        const double s = rs.jumps[k];
        while (pe < n && rs.entry_eff[rs.enter_order[pe]] < s) {
            enter(rs.enter_order[pe]);
            ++pe;
        }
        while (px < n && rs.exit_res[rs.exit_order[px]] < s) {
            leave(rs.exit_order[px]);
            ++px;
        }
        jump(k);
    }
}

// sum_i d_i E1_i minus sum over jumps of coef_k times the at-risk column sum
// of E1. With E1 = Z' and a 1/n factor this is the estimating function; with
// a general E1 it is the residual-score vector Q_n.
inline Eigen::VectorXd weighted_score(const Eigen::MatrixXd& E1, const TransformedData& td,
                                      const RiskSweep& rs) {
    Eigen::VectorXd score = E1 * td.d;
    Eigen::VectorXd at_risk_sum = Eigen::VectorXd::Zero(E1.rows());
    sweep(
        rs, [&](int i) { at_risk_sum += E1.col(i); }, [&](int i) { at_risk_sum -= E1.col(i); },
        [&](std::size_t k) { score.noalias() -= rs.coef[k] * at_risk_sum; });
    return score;
}

}  // namespace aftkm::detail
