#pragma once

// SGD (iid sampling), random-reshuffling SGD, proximal SGD and full-batch
// gradient descent, each producing a Trace of full-gradient diagnostics.

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "tailsgd/core.hpp"
#include "tailsgd/data.hpp"
#include "tailsgd/losses.hpp"
#include "tailsgd/rng.hpp"

namespace tailsgd {

/// Constants a schedule is checked against.
struct StepSizeContext {
    double L = 0.0;
    ESConstants es;
    std::size_t T = 1;
};

/// gamma_t for t >= 0. The power schedule is gamma * t^-alpha for t >= 1 and
/// reuses gamma_1 = gamma at t = 0.
inline double schedule_gamma(const Schedule& s, std::size_t t) {
    double g = 0.0;
    switch (s.kind) {
        case ScheduleKind::constant: g = s.gamma; break;
        case ScheduleKind::inverse_sqrt: g = s.gamma / std::sqrt(static_cast<double>(t) + 1.0); break;
        case ScheduleKind::power:
            g = t == 0 ? s.gamma : s.gamma * std::pow(static_cast<double>(t), -s.alpha);
            break;
    }
    if (!(g > 0.0) || !std::isfinite(g)) throw Error("internal: schedule produced a nonpositive step");
    return g;
}

struct ScheduleValidity {
    double max_gamma = 0.0;
    bool below_inverse_LB = true;  // gamma_t <= 1/(L B) for all t (vacuous when B = 0)
    bool theorem4_ok = true;       // inverse_sqrt only: gamma_0^2 < 1/(L A ln(T+1)) (vacuous when A = 0)
};

inline ScheduleValidity schedule_validity(const Schedule& s, const StepSizeContext& ctx) {
    ScheduleValidity v;
    // Every supported schedule is non-increasing, so t = 0 carries the max.
    v.max_gamma = schedule_gamma(s, 0);
    if (ctx.es.B > 0.0) v.below_inverse_LB = v.max_gamma <= 1.0 / (ctx.L * ctx.es.B);
    if (s.kind == ScheduleKind::inverse_sqrt && ctx.es.A > 0.0) {
        v.theorem4_ok = s.gamma * s.gamma < 1.0 / (ctx.L * ctx.es.A * std::log(static_cast<double>(ctx.T) + 1.0));
    }
    return v;
}

/// Constant step sqrt(ln 3 / ((T+1) L A)), which keeps (1 + L gamma^2 A)^(T+1) <= 3.
inline double theorem3_step(std::size_t T, double L, double A) {
    if (!(L > 0.0 && A > 0.0)) throw Error("constant-step recipe needs L > 0 and A > 0");
    return std::sqrt(std::log(3.0) / ((static_cast<double>(T) + 1.0) * L * A));
}

/// Reshuffling epoch step (ln 3 / ((T+1) calA L^2 n^2))^(1/3), T in epochs.
inline double theorem8_step(std::size_t T, double L, std::size_t n, double calA) {
    if (!(L > 0.0 && calA > 0.0)) throw Error("reshuffling step recipe needs L > 0 and calA > 0");
    const double nn = static_cast<double>(n);
    return std::cbrt(std::log(3.0) / ((static_cast<double>(T) + 1.0) * calA * L * L * nn * nn));
}

struct RunOptions {
    std::optional<Vector> x0;
    /// Called with (t, x_t) at every logged iterate.
    std::function<void(std::size_t, std::span<const double>)> on_log;
    /// Called with (step, indices) for every minibatch used in an update.
    std::function<void(std::size_t, std::span<const std::size_t>)> on_batch;
};

namespace detail {

inline bool should_log(std::size_t t, std::size_t horizon, std::size_t stride) {
    return t % stride == 0 || t == horizon;
}

template <SmoothObjective Obj>
Vector initial_point(const Obj& obj, const RunOptions& opt) {
    if (opt.x0) {
        check_dim(obj.dim(), opt.x0->size());
        return *opt.x0;
    }
    return Vector(obj.dim(), 0.0);
}

/// Turns grad f(x) (in g) into G_eta(x) in place. Leaves g untouched for h = 0.
inline void gradient_to_mapping(const Regularizer& h, std::span<const double> x, std::span<double> g, double eta) {
    if (h.kind == RegularizerKind::zero) return;
    Vector v(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) v[j] = x[j] - eta * g[j];
    const Vector p = prox(h, eta, v);
    for (std::size_t j = 0; j < x.size(); ++j) g[j] = (x[j] - p[j]) / eta;
}

/// Records one logged point; returns false (and marks divergence) if non-finite.
inline bool record(Trace& trace, TracePoint p, std::span<const double> x, const RunOptions& opt) {
    if (!std::isfinite(p.loss) || !std::isfinite(p.r_hat) || !linalg::all_finite(x)) {
        trace.diverged = true;
        return false;
    }
    trace.points.push_back(p);
    trace.last_finite_t = p.t;
    if (opt.on_log) opt.on_log(p.t, x);
    return true;
}

inline void finish(Trace& trace, Vector x) { trace.final_iterate = std::move(x); }

}  // namespace detail

/// x_{t+1} = x_t - gamma_t g_t with g_t the mean gradient over a
/// with-replacement minibatch. x_0 = 0 unless overridden.
template <SmoothObjective Obj>
Trace run_sgd(const Obj& obj, const RunConfig& config, const OptimumEstimate& f_star, const RunOptions& opt = {}) {
    config.validate(obj.n());
    Trace trace;
    trace.config = config;
    Rng rng(config.seed);
    Vector x = detail::initial_point(obj, opt);
    Vector g(obj.dim());
    Vector full(obj.dim());
    for (std::size_t t = 0; t <= config.T; ++t) {
        const double gamma = schedule_gamma(config.schedule, t);
        const bool last = t == config.T;
        MinibatchSample batch;
        if (!last) batch = sample_iid(obj.n(), config.batch_size, rng, t);
        if (detail::should_log(t, config.T, config.log_stride)) {
            TracePoint p;
            p.t = t;
            p.gamma_t = gamma;
            p.loss = obj.value_and_gradient(x, full);
            p.r_hat = linalg::squared_norm(full);
            p.delta_hat = p.loss - f_star.f_star;
            if (!last) p.minibatch_loss = obj.batch_value(x, batch.indices);
            if (!detail::record(trace, p, x, opt)) break;
        }
        if (last) break;
        if (opt.on_batch) opt.on_batch(t, batch.indices);
        obj.batch_gradient(x, batch.indices, g);
        if (!linalg::all_finite(g)) {
            trace.diverged = true;
            break;
        }
        for (std::size_t j = 0; j < x.size(); ++j) x[j] -= gamma * g[j];
    }
    detail::finish(trace, std::move(x));
    return trace;
}

/// Random reshuffling: T epochs, each a fresh permutation cut into
/// consecutive blocks of batch_size, one step per block, step constant within
/// an epoch (gamma indexed by epoch). Trace t counts steps; epoch boundaries
/// are always logged.
template <SmoothObjective Obj>
Trace run_rr_sgd(const Obj& obj, const RunConfig& config, const OptimumEstimate& f_star, const RunOptions& opt = {}) {
    config.validate(obj.n());
    Trace trace;
    trace.config = config;
    const std::size_t n = obj.n();
    const std::size_t b = config.batch_size;
    const std::size_t spe = (n + b - 1) / b;
    trace.steps_per_epoch = spe;
    const std::size_t total = config.T * spe;
    Rng rng(config.seed);
    Vector x = detail::initial_point(obj, opt);
    Vector g(obj.dim());
    Vector full(obj.dim());
    EpochPermutation perm;
    bool stopped = false;
    for (std::size_t epoch = 0; epoch <= config.T && !stopped; ++epoch) {
        const double gamma = schedule_gamma(config.schedule, epoch);
        const bool last_epoch = epoch == config.T;
        if (!last_epoch) perm = next_permutation(n, rng, epoch);
        const std::size_t blocks = last_epoch ? 1 : spe;
        for (std::size_t blk = 0; blk < blocks; ++blk) {
            const std::size_t s = epoch * spe + blk;
            const bool last = s == total;
            std::span<const std::size_t> idx;
            if (!last) {
                const std::size_t lo = blk * b;
                idx = std::span<const std::size_t>(perm.perm).subspan(lo, std::min(b, n - lo));
            }
            if (s % config.log_stride == 0 || blk == 0 || last) {
                TracePoint p;
                p.t = s;
                p.gamma_t = gamma;
                p.loss = obj.value_and_gradient(x, full);
                p.r_hat = linalg::squared_norm(full);
                p.delta_hat = p.loss - f_star.f_star;
                if (!last) p.minibatch_loss = obj.batch_value(x, idx);
                if (!detail::record(trace, p, x, opt)) {
                    stopped = true;
                    break;
                }
            }
            if (last) break;
            if (opt.on_batch) opt.on_batch(s, idx);
            obj.batch_gradient(x, idx, g);
            if (!linalg::all_finite(g)) {
                trace.diverged = true;
                stopped = true;
                break;
            }
            for (std::size_t j = 0; j < x.size(); ++j) x[j] -= gamma * g[j];
        }
    }
    detail::finish(trace, std::move(x));
    return trace;
}

/// x_{t+1} = prox(h, gamma_t, x_t - gamma_t g_t). r_hat holds ||G_eta(x_t)||^2
/// with eta = gamma_t; loss holds f + h.
template <SmoothObjective Smooth>
Trace run_prox_sgd(const CompositeObjective<Smooth>& obj, const RunConfig& config, const OptimumEstimate& f_star,
                   const RunOptions& opt = {}) {
    const Smooth& f = obj.smooth_part;
    config.validate(f.n());
    Trace trace;
    trace.config = config;
    Rng rng(config.seed);
    Vector x = detail::initial_point(f, opt);
    Vector g(f.dim());
    Vector mapping(f.dim());
    for (std::size_t t = 0; t <= config.T; ++t) {
        const double gamma = schedule_gamma(config.schedule, t);
        const bool last = t == config.T;
        MinibatchSample batch;
        if (!last) batch = sample_iid(f.n(), config.batch_size, rng, t);
        if (detail::should_log(t, config.T, config.log_stride)) {
            TracePoint p;
            p.t = t;
            p.gamma_t = gamma;
            p.loss = f.value_and_gradient(x, mapping) + obj.h.value(x);
            detail::gradient_to_mapping(obj.h, x, mapping, gamma);
            p.r_hat = linalg::squared_norm(mapping);
            p.delta_hat = p.loss - f_star.f_star;
            if (!last) p.minibatch_loss = f.batch_value(x, batch.indices) + obj.h.value(x);
            if (!detail::record(trace, p, x, opt)) break;
        }
        if (last) break;
        if (opt.on_batch) opt.on_batch(t, batch.indices);
        f.batch_gradient(x, batch.indices, g);
        if (!linalg::all_finite(g)) {
            trace.diverged = true;
            break;
        }
        for (std::size_t j = 0; j < x.size(); ++j) g[j] = x[j] - gamma * g[j];
        x = prox(obj.h, gamma, g);
    }
    detail::finish(trace, std::move(x));
    return trace;
}

/// Deterministic gradient descent on the full objective.
template <SmoothObjective Obj>
Trace run_full_gd(const Obj& obj, const RunConfig& config, const OptimumEstimate& f_star, const RunOptions& opt = {}) {
    config.validate(obj.n());
    Trace trace;
    trace.config = config;
    Vector x = detail::initial_point(obj, opt);
    Vector g(obj.dim());
    for (std::size_t t = 0; t <= config.T; ++t) {
        const double gamma = schedule_gamma(config.schedule, t);
        const bool last = t == config.T;
        const double value = obj.value_and_gradient(x, g);
        if (detail::should_log(t, config.T, config.log_stride)) {
            TracePoint p;
            p.t = t;
            p.gamma_t = gamma;
            p.loss = value;
            p.r_hat = linalg::squared_norm(g);
            p.delta_hat = p.loss - f_star.f_star;
            if (!last) p.minibatch_loss = value;
            if (!detail::record(trace, p, x, opt)) break;
        }
        if (last) break;
        if (!linalg::all_finite(g)) {
            trace.diverged = true;
            break;
        }
        for (std::size_t j = 0; j < x.size(); ++j) x[j] -= gamma * g[j];
    }
    detail::finish(trace, std::move(x));
    return trace;
}

/// Runs `run(seed)` for every seed on a bounded pool of worker threads.
/// Results keep the order of `seeds`.
inline std::vector<Trace> run_seeds(const std::vector<std::uint64_t>& seeds,
                                    const std::function<Trace(std::uint64_t)>& run, unsigned threads = 0) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, seeds.size())));
    std::vector<Trace> out(seeds.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
        for (std::size_t k = next++; k < seeds.size(); k = next++) {
            try {
                out[k] = run(seeds[k]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    for (unsigned w = 1; w < threads; ++w) pool.emplace_back(worker);
    worker();
    pool.clear();
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace tailsgd
