#pragma once

// Numerical stand-ins for the problem constants the theory assumes known:
// F* by running gradient descent to a tight stationarity tolerance, and the
// expected-smoothness / reshuffling-variance constants by a grid search over
// probe points.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "tailsgd/bounds.hpp"
#include "tailsgd/core.hpp"
#include "tailsgd/losses.hpp"
#include "tailsgd/optimizers.hpp"
#include "tailsgd/rng.hpp"

namespace tailsgd {

struct FStarOptions {
    std::size_t max_steps = 1'000'000;
    double grad_tolerance = 1e-14;  // on ||grad F||^2
    std::optional<Vector> x0;
    std::optional<double> L;
};

/// Gradient descent with step 1/L; f_star = min loss seen - ||grad F||^2 / (2L).
/// Hitting the step cap returns the estimate with converged = false.
template <SmoothObjective Obj>
OptimumEstimate estimate_f_star(const Obj& obj, const FStarOptions& opt = {}) {
    const double L = opt.L ? *opt.L : smoothness_constant(obj).L;
    Vector x = opt.x0 ? *opt.x0 : Vector(obj.dim(), 0.0);
    detail::check_dim(obj.dim(), x.size());
    Vector g(obj.dim());
    OptimumEstimate est;
    est.method = "gradient-descent";
    double best = std::numeric_limits<double>::infinity();
    double r = 0.0;
    std::size_t step = 0;
    for (;; ++step) {
        const double v = obj.value_and_gradient(x, g);
        r = linalg::squared_norm(g);
        if (!std::isfinite(v) || !std::isfinite(r)) throw NumericalError("f* estimation diverged");
        if (v < best) {
            best = v;
            est.argmin = x;
        }
        if (r <= opt.grad_tolerance || step == opt.max_steps) break;
        for (std::size_t j = 0; j < x.size(); ++j) x[j] -= g[j] / L;
    }
    est.steps = step;
    est.converged = r <= opt.grad_tolerance;
    est.residual_grad_norm = std::sqrt(r);
    est.f_star = best - r / (2.0 * L);
    return est;
}

/// Composite version: proximal gradient descent on f + h, stopping on ||G_{1/L}||^2.
template <SmoothObjective Smooth>
OptimumEstimate estimate_f_star(const CompositeObjective<Smooth>& obj, const FStarOptions& opt = {}) {
    const Smooth& f = obj.smooth_part;
    const double L = opt.L ? *opt.L : smoothness_constant(f).L;
    const double step_size = 1.0 / L;
    Vector x = opt.x0 ? *opt.x0 : Vector(f.dim(), 0.0);
    detail::check_dim(f.dim(), x.size());
    Vector g(f.dim());
    Vector v(f.dim());
    OptimumEstimate est;
    est.method = "proximal-gradient-descent";
    double best = std::numeric_limits<double>::infinity();
    double r = 0.0;
    std::size_t step = 0;
    for (;; ++step) {
        const double value = f.value_and_gradient(x, g) + obj.h.value(x);
        for (std::size_t j = 0; j < x.size(); ++j) v[j] = x[j] - step_size * g[j];
        Vector next = prox(obj.h, step_size, v);
        r = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double gm = (x[j] - next[j]) / step_size;
            r += gm * gm;
        }
        if (!std::isfinite(value) || !std::isfinite(r)) throw NumericalError("f* estimation diverged");
        if (value < best) {
            best = value;
            est.argmin = x;
        }
        if (r <= opt.grad_tolerance || step == opt.max_steps) break;
        x = std::move(next);
    }
    est.steps = step;
    est.converged = r <= opt.grad_tolerance;
    est.residual_grad_norm = std::sqrt(r);
    est.f_star = best - r / (2.0 * L);
    return est;
}

/// delta = F(x) - F*, r = ||grad F(x)||^2, m = (1/n) sum ||grad f_i(x)||^2.
struct ProbeStats {
    double delta = 0.0;
    double r = 0.0;
    double m = 0.0;
};

template <SmoothObjective Obj>
std::vector<ProbeStats> probe_stats(const Obj& obj, std::span<const Vector> probes, const OptimumEstimate& f_star) {
    std::vector<ProbeStats> out;
    out.reserve(probes.size());
    Vector g(obj.dim());
    for (const auto& x : probes) {
        ProbeStats s;
        s.delta = obj.value_and_gradient(x, g) - f_star.f_star;
        s.r = linalg::squared_norm(g);
        s.m = obj.mean_squared_sample_gradient(x);
        out.push_back(s);
    }
    return out;
}

/// `count` points with iid N(0, scale^2) coordinates.
inline std::vector<Vector> gaussian_probes(std::size_t dim, std::size_t count, std::uint64_t seed,
                                           double scale = 1.0) {
    Rng rng(seed);
    std::vector<Vector> out(count, Vector(dim));
    for (auto& x : out)
        for (auto& v : x) v = scale * rng.normal();
    return out;
}

/// Iterates of a batch-1 SGD pilot run, one every `stride` steps.
template <SmoothObjective Obj>
std::vector<Vector> pilot_probes(const Obj& obj, const OptimumEstimate& f_star, double gamma, std::size_t T,
                                 std::size_t stride, std::uint64_t seed) {
    RunConfig cfg;
    cfg.T = T;
    cfg.seed = seed;
    cfg.schedule = {ScheduleKind::constant, gamma};
    cfg.log_stride = stride;
    std::vector<Vector> out;
    RunOptions opt;
    opt.on_log = [&](std::size_t, std::span<const double> x) { out.emplace_back(x.begin(), x.end()); };
    run_sgd(obj, cfg, f_star, opt);
    return out;
}

struct EsCandidate {
    ESConstants es;
    double T_required = std::numeric_limits<double>::infinity();  // A = 0 cannot be ranked
};

struct EsEstimate {
    ESConstants es;
    double T_required = 0.0;
    std::vector<EsCandidate> candidates;
    double max_residual = 0.0;  // max over probes of m - (2A delta + B r + C), <= 0 by construction
    std::size_t probes = 0;
};

struct EsOptions {
    double L = 1.0;
    double delta0 = 0.0;
    double reference_epsilon = 0.1;
    double reference_eta = 0.2;
};

/// Largest m - (2A delta + B r + C) over the probes; positive means infeasible.
inline double es_residual(std::span<const ProbeStats> stats, const ESConstants& es) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& s : stats) worst = std::max(worst, s.m - (2.0 * es.A * s.delta + es.B * s.r + es.C));
    return worst;
}

/// Objectives that can differentiate the second moment m(x) and apply their Hessian.
template <class Obj>
concept HasMomentCurvature = SmoothObjective<Obj> && requires(const Obj& o, std::span<const double> x,
                                                             std::span<double> g) {
    o.second_moment_gradient(x, g);
    o.hessian_vector(x, x, g);
};

struct AscentOptions {
    std::size_t starts = 4;  // ascend from this many worst probes per candidate
    std::size_t max_iterations = 300;
};

namespace detail {

/// psi(x) = m(x) - a (F(x) - F*) - b ||grad F(x)||^2 and, if requested, its gradient
/// grad m - a grad F - 2 b H grad F.
template <HasMomentCurvature Obj>
double residual_psi(const Obj& obj, std::span<const double> x, double f_star, double a, double b, Vector* grad) {
    Vector g(obj.dim());
    const double F = obj.value_and_gradient(x, g);
    const double psi = obj.mean_squared_sample_gradient(x) - a * (F - f_star) - b * linalg::squared_norm(g);
    if (grad) {
        Vector dm(obj.dim()), hg(obj.dim());
        obj.second_moment_gradient(x, dm);
        obj.hessian_vector(x, g, hg);
        grad->resize(obj.dim());
        for (std::size_t j = 0; j < g.size(); ++j) (*grad)[j] = dm[j] - a * g[j] - 2.0 * b * hg[j];
    }
    return psi;
}

/// Gradient ascent on psi with Armijo backtracking; returns the last accepted point.
template <HasMomentCurvature Obj>
Vector ascend_psi(const Obj& obj, Vector x, double f_star, double a, double b, std::size_t max_iterations) {
    Vector grad;
    double value = residual_psi(obj, x, f_star, a, b, &grad);
    double step = 1.0;
    Vector y(x.size());
    for (std::size_t it = 0; it < max_iterations; ++it) {
        const double gn = linalg::squared_norm(grad);
        if (!(gn > 1e-24)) break;
        bool moved = false;
        while (step > 1e-16) {
            for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] + step * grad[j];
            const double vy = residual_psi(obj, y, f_star, a, b, nullptr);
            if (std::isfinite(vy) && vy >= value + 1e-4 * step * gn) {
                x = y;
                value = residual_psi(obj, x, f_star, a, b, &grad);
                step *= 2.0;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    return x;
}

/// Worst `k` probes for weights (a, b) as ascent starting points.
inline std::vector<std::size_t> worst_probes(std::span<const ProbeStats> stats, double a, double b, std::size_t k) {
    std::vector<std::size_t> order(stats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto psi = [&](std::size_t i) { return stats[i].m - a * stats[i].delta - b * stats[i].r; };
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t i, std::size_t j) { return psi(i) > psi(j); });
    order.resize(k);
    return order;
}

/// Probe statistics at the ascent end points started from the worst probes.
template <class Obj>
std::vector<ProbeStats> ascended_stats(const Obj& obj, std::span<const Vector> probes, std::span<const ProbeStats> stats,
                                       const OptimumEstimate& f_star, double a, double b, const AscentOptions& opt) {
    std::vector<ProbeStats> out;
    if constexpr (HasMomentCurvature<Obj>) {
        std::vector<Vector> ends;
        for (std::size_t i : worst_probes(stats, a, b, opt.starts))
            ends.push_back(ascend_psi(obj, probes[i], f_star.f_star, a, b, opt.max_iterations));
        out = probe_stats(obj, std::span<const Vector>(ends), f_star);
    }
    return out;
}

}  // namespace detail

/// Grid A in {0, L/2, L, 2L}, B in {0, 1, 2}; C is the smallest value that
/// makes the triple feasible on every probe. The candidate needing the fewest
/// iterations for the reference (epsilon, eta) is returned. `extra(A, B)`
/// may supply additional probe statistics specific to a candidate.
template <class Extra>
EsEstimate estimate_es_constants(std::span<const ProbeStats> stats, const EsOptions& opt, Extra&& extra) {
    if (stats.empty()) throw Error("ES estimation needs at least one probe point");
    EsEstimate est;
    est.probes = stats.size();
    const double L = opt.L;
    bool have = false;
    for (double A : {0.0, 0.5 * L, L, 2.0 * L}) {
        for (double B : {0.0, 1.0, 2.0}) {
            EsCandidate c;
            c.es = {A, B, 0.0};
            double worst = es_residual(stats, c.es);
            if (A > 0.0) {
                const std::vector<ProbeStats> more = extra(A, B);
                if (!more.empty()) worst = std::max(worst, es_residual(more, c.es));
            }
            c.es.C = std::max(0.0, worst);
            if (A > 0.0)
                c.T_required = threshold_theorem3(opt.reference_epsilon, opt.reference_eta, L, c.es, opt.delta0).T_real;
            est.candidates.push_back(c);
            if (!have || c.T_required < est.T_required) {
                est.es = c.es;
                est.T_required = c.T_required;
                have = true;
            }
        }
    }
    est.max_residual = es_residual(stats, est.es);
    return est;
}

inline EsEstimate estimate_es_constants(std::span<const ProbeStats> stats, const EsOptions& opt) {
    return estimate_es_constants(stats, opt, [](double, double) { return std::vector<ProbeStats>{}; });
}

/// Probe-based estimate. For objectives with second-moment derivatives the
/// probe set of each candidate is augmented by local maximizers of its
/// residual, found by ascent from the worst probes.
template <SmoothObjective Obj>
EsEstimate estimate_es_constants(const Obj& obj, std::span<const Vector> probes, const OptimumEstimate& f_star,
                                 const EsOptions& opt, const AscentOptions& ascent = {}) {
    if (probes.empty()) throw Error("ES estimation needs at least one probe point");
    const auto stats = probe_stats(obj, probes, f_star);
    const std::span<const ProbeStats> view(stats);
    return estimate_es_constants(view, opt, [&](double A, double B) {
        return detail::ascended_stats(obj, probes, view, f_star, 2.0 * A, B, ascent);
    });
}

struct RrEstimate {
    RRVarianceConstants rr;
    double T_required = 0.0;
    double max_residual = 0.0;
    std::size_t probes = 0;
};

struct RrOptions {
    double L = 1.0;
    std::size_t n = 1;
    double delta0 = 0.0;
    double reference_epsilon = 0.1;
    double reference_eta = 0.2;
};

/// Largest (m - r) - (2 calA delta + calB) over the probes.
inline double rr_residual(std::span<const ProbeStats> stats, const RRVarianceConstants& rr) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& s : stats) worst = std::max(worst, (s.m - s.r) - (2.0 * rr.calA * s.delta + rr.calB));
    return worst;
}

/// Grid calA in {L/2, L, 2L} with minimal feasible calB, ranked by the
/// reshuffling epoch threshold.
template <class Extra>
RrEstimate estimate_rr_constants(std::span<const ProbeStats> stats, const RrOptions& opt, Extra&& extra) {
    if (stats.empty()) throw Error("variance estimation needs at least one probe point");
    RrEstimate est;
    est.probes = stats.size();
    bool have = false;
    for (double calA : {0.5 * opt.L, opt.L, 2.0 * opt.L}) {
        RRVarianceConstants rr{calA, 0.0};
        double worst = rr_residual(stats, rr);
        const std::vector<ProbeStats> more = extra(calA);
        if (!more.empty()) worst = std::max(worst, rr_residual(more, rr));
        rr.calB = std::max(0.0, worst);
        const double T = rr_threshold_theorem8(opt.reference_epsilon, opt.reference_eta, opt.L, opt.n, rr, opt.delta0)
                             .T_real;
        if (!have || T < est.T_required) {
            est.rr = rr;
            est.T_required = T;
            have = true;
        }
    }
    est.max_residual = rr_residual(stats, est.rr);
    return est;
}

inline RrEstimate estimate_rr_constants(std::span<const ProbeStats> stats, const RrOptions& opt) {
    return estimate_rr_constants(stats, opt, [](double) { return std::vector<ProbeStats>{}; });
}

template <SmoothObjective Obj>
RrEstimate estimate_rr_constants(const Obj& obj, std::span<const Vector> probes, const OptimumEstimate& f_star,
                                 const RrOptions& opt, const AscentOptions& ascent = {}) {
    if (probes.empty()) throw Error("variance estimation needs at least one probe point");
    const auto stats = probe_stats(obj, probes, f_star);
    const std::span<const ProbeStats> view(stats);
    // The variance m - r has residual weights (2 calA, 1).
    return estimate_rr_constants(view, opt, [&](double calA) {
        return detail::ascended_stats(obj, probes, view, f_star, 2.0 * calA, 1.0, ascent);
    });
}

}  // namespace tailsgd
