#pragma once

// Empirical checks of the one-step descent inequality
//   gamma (1 - L B gamma / 2) r_t <= (1 + L A gamma^2) delta_t - delta_{t+1} + L C gamma^2 / 2
// on consecutive logged iterates, and of its reshuffling analogue between
// epoch boundaries
//   delta_{e+1} <= (1 + calA L^2 n^2 gamma^3) delta_e - (gamma n / 2)(1 - gamma^2 L^2 n^2) r_e + L^2 gamma^3 n^2 calB / 2.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tailsgd/core.hpp"

namespace tailsgd {

enum class AuditMode { deterministic, ensemble };

struct AuditReport {
    std::vector<std::size_t> violations;
    double max_violation = 0.0;  // largest lhs - rhs - allowance seen (may be negative)
    std::size_t steps = 0;

    double violation_fraction() const {
        return steps == 0 ? 0.0 : static_cast<double>(violations.size()) / static_cast<double>(steps);
    }
    std::string summary() const {
        return std::to_string(violations.size()) + " violations / " + std::to_string(steps) + " steps";
    }
};

struct AuditOptions {
    double relative_tolerance = 1e-12;
    double standard_errors = 3.0;  // ensemble mode allowance
};

namespace detail {

struct StepTerms {
    double lhs;
    double rhs;
    double scale;  // magnitude the relative tolerance is applied to
    bool invalid;  // negative r_hat: the trace cannot come from a real run
};

inline StepTerms descent_terms(const TracePoint& a, const TracePoint& b, double L, const ESConstants& es) {
    const double g = a.gamma_t;
    StepTerms s;
    s.lhs = g * (1.0 - 0.5 * L * es.B * g) * a.r_hat;
    s.rhs = (1.0 + L * es.A * g * g) * a.delta_hat - b.delta_hat + 0.5 * L * es.C * g * g;
    s.scale = std::max({1.0, std::abs(a.delta_hat), std::abs(b.delta_hat), std::abs(s.lhs)});
    s.invalid = a.r_hat < 0.0;
    return s;
}

/// Written as lhs <= rhs with lhs = (gamma n / 2)(1 - gamma^2 L^2 n^2) r_e.
inline StepTerms rr_terms(const TracePoint& a, const TracePoint& b, double L, std::size_t n,
                          const RRVarianceConstants& rr) {
    const double g = a.gamma_t;
    const double nn = static_cast<double>(n);
    const double g3 = g * g * g;
    StepTerms s;
    s.lhs = 0.5 * g * nn * (1.0 - g * g * L * L * nn * nn) * a.r_hat;
    s.rhs = (1.0 + rr.calA * L * L * nn * nn * g3) * a.delta_hat - b.delta_hat + 0.5 * L * L * g3 * nn * nn * rr.calB;
    s.scale = std::max({1.0, std::abs(a.delta_hat), std::abs(b.delta_hat), std::abs(s.lhs)});
    s.invalid = a.r_hat < 0.0;
    return s;
}

template <class TermsFn>
AuditReport audit_pairs(std::span<const std::vector<TracePoint>> runs, AuditMode mode, const AuditOptions& opt,
                        TermsFn terms) {
    if (runs.empty()) throw Error("audit needs at least one trace");
    const auto& ref = runs.front();
    for (const auto& r : runs) {
        if (r.size() != ref.size()) throw Error("audited traces have mismatched logged index sets");
        for (std::size_t k = 0; k < r.size(); ++k)
            if (r[k].t != ref[k].t) throw Error("audited traces have mismatched logged index sets");
    }
    if (mode == AuditMode::ensemble && runs.size() < 2)
        throw Error("ensemble audit needs at least two seeds");

    AuditReport rep;
    rep.max_violation = -std::numeric_limits<double>::infinity();
    const double R = static_cast<double>(runs.size());
    std::vector<double> q(runs.size());
    for (std::size_t k = 0; k + 1 < ref.size(); ++k) {
        ++rep.steps;
        bool invalid = false;
        double scale = 0.0;
        for (std::size_t s = 0; s < runs.size(); ++s) {
            const StepTerms st = terms(runs[s][k], runs[s][k + 1]);
            q[s] = st.lhs - st.rhs;
            scale = std::max(scale, st.scale);
            invalid = invalid || st.invalid;
        }
        double excess = 0.0;
        if (mode == AuditMode::deterministic) {
            excess = *std::max_element(q.begin(), q.end()) - opt.relative_tolerance * scale;
        } else {
            double mean = 0.0;
            for (double v : q) mean += v;
            mean /= R;
            double var = 0.0;
            for (double v : q) var += (v - mean) * (v - mean);
            const double se = std::sqrt(var / (R - 1.0) / R);
            excess = mean - opt.standard_errors * se - opt.relative_tolerance * scale;
        }
        rep.max_violation = std::max(rep.max_violation, excess);
        if (excess > 0.0 || invalid) rep.violations.push_back(ref[k].t);
    }
    if (rep.steps == 0) rep.max_violation = 0.0;
    return rep;
}

inline void require_consecutive(const Trace& trace) {
    for (std::size_t k = 1; k < trace.points.size(); ++k)
        if (trace.points[k].t != trace.points[k - 1].t + 1)
            throw Error("audit needs consecutive iterates; trace was logged with stride > 1 near t = " +
                        std::to_string(trace.points[k - 1].t));
}

}  // namespace detail

/// Deterministic mode checks every seed's every step; ensemble mode flags a
/// step when the seed-mean of (lhs - rhs) exceeds its standard error times
/// `standard_errors`. Negative r_hat is always a violation.
inline AuditReport audit_descent(std::span<const Trace> traces, double L, const ESConstants& es, AuditMode mode,
                                 const AuditOptions& opt = {}) {
    std::vector<std::vector<TracePoint>> runs;
    for (const auto& tr : traces) {
        detail::require_consecutive(tr);
        runs.push_back(tr.points);
    }
    return detail::audit_pairs(std::span<const std::vector<TracePoint>>(runs), mode, opt,
                               [&](const TracePoint& a, const TracePoint& b) {
                                   return detail::descent_terms(a, b, L, es);
                               });
}

inline AuditReport audit_descent(const Trace& trace, double L, const ESConstants& es,
                                 AuditMode mode = AuditMode::deterministic, const AuditOptions& opt = {}) {
    return audit_descent(std::span<const Trace>(&trace, 1), L, es, mode, opt);
}

/// Epoch-to-epoch audit of reshuffling traces. n is the number of steps per
/// epoch (the dataset size for batch size 1).
inline AuditReport audit_rr_epochs(std::span<const Trace> traces, double L, const RRVarianceConstants& rr,
                                   AuditMode mode, const AuditOptions& opt = {}) {
    std::vector<std::vector<TracePoint>> runs;
    std::size_t n = 0;
    for (const auto& tr : traces) {
        n = tr.steps_per_epoch;
        std::vector<TracePoint> boundaries;
        for (const auto& p : tr.points)
            if (p.t % tr.steps_per_epoch == 0) boundaries.push_back(p);
        for (std::size_t k = 1; k < boundaries.size(); ++k)
            if (boundaries[k].t != boundaries[k - 1].t + tr.steps_per_epoch)
                throw Error("reshuffling audit needs every epoch boundary logged");
        runs.push_back(std::move(boundaries));
    }
    return detail::audit_pairs(std::span<const std::vector<TracePoint>>(runs), mode, opt,
                               [&](const TracePoint& a, const TracePoint& b) {
                                   return detail::rr_terms(a, b, L, n, rr);
                               });
}

}  // namespace tailsgd
