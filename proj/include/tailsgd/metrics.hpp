#pragma once

// Empirical stationary sets, tail-window statistics and seed ensembles.
// Everything operates on logged iterates only; the horizon T is the last
// logged t and the tail window is [ceil((1 - eta) T), T].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "tailsgd/core.hpp"

namespace tailsgd {

struct EnsemblePoint {
    std::size_t t = 0;
    double r_hat_mean = 0.0;
    double r_hat_sd = 0.0;
    double delta_hat_mean = 0.0;
    double delta_hat_sd = 0.0;
    double loss_mean = 0.0;
    double loss_sd = 0.0;
    double gamma_t = 0.0;

    friend bool operator==(const EnsemblePoint&, const EnsemblePoint&) = default;
};

struct EnsembleTrace {
    std::vector<EnsemblePoint> points;
    std::size_t seeds = 0;
};

/// (t, r) pairs a metric is computed on: a single trace's r_hat or the
/// per-iterate ensemble mean.
struct Series {
    std::vector<std::size_t> t;
    std::vector<double> r;

    std::size_t horizon() const { return t.empty() ? 0 : t.back(); }
};

inline Series series_of(const Trace& trace) {
    Series s;
    for (const auto& p : trace.points) {
        s.t.push_back(p.t);
        s.r.push_back(p.r_hat);
    }
    return s;
}

inline Series series_of(const EnsembleTrace& e) {
    Series s;
    for (const auto& p : e.points) {
        s.t.push_back(p.t);
        s.r.push_back(p.r_hat_mean);
    }
    return s;
}

/// The first T' logged points (t <= T').
inline Series prefix(const Series& s, std::size_t horizon) {
    Series out;
    for (std::size_t k = 0; k < s.t.size() && s.t[k] <= horizon; ++k) {
        out.t.push_back(s.t[k]);
        out.r.push_back(s.r[k]);
    }
    return out;
}

/// ceil((1 - eta) T), robust to eta*T being an integer up to roundoff.
inline std::size_t window_start(double eta, std::size_t T) {
    if (!(eta > 0.0 && eta <= 1.0)) throw Error("eta must lie in (0, 1]");
    const double x = (1.0 - eta) * static_cast<double>(T);
    const double c = std::ceil(x - 1e-9 * std::max(1.0, x));
    return static_cast<std::size_t>(std::max(0.0, c));
}

struct StationarySet {
    double epsilon = 0.0;
    std::vector<std::size_t> indices;
    std::size_t T = 0;
};

inline StationarySet stationary_set(const Series& s, double epsilon) {
    if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
    StationarySet out;
    out.epsilon = epsilon;
    out.T = s.horizon();
    for (std::size_t k = 0; k < s.t.size(); ++k)
        if (s.r[k] <= epsilon) out.indices.push_back(s.t[k]);
    return out;
}

inline StationarySet stationary_set(const Trace& trace, double epsilon) {
    return stationary_set(series_of(trace), epsilon);
}
inline StationarySet stationary_set(const EnsembleTrace& e, double epsilon) {
    return stationary_set(series_of(e), epsilon);
}

struct DensityReport {
    double epsilon = 0.0;
    double eta = 0.0;
    std::size_t T = 0;
    std::size_t window_start = 0;
    std::size_t window_size = 0;  // logged iterates in the window
    std::size_t count = 0;
    double density = 0.0;
    std::size_t stride = 1;  // smallest gap between logged iterates in the window
    std::optional<double> theory_lower_bound;
};

inline DensityReport tail_density(const Series& s, double epsilon, double eta) {
    if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
    DensityReport d;
    d.epsilon = epsilon;
    d.eta = eta;
    d.T = s.horizon();
    d.window_start = window_start(eta, d.T);
    std::size_t prev = 0;
    d.stride = 0;
    for (std::size_t k = 0; k < s.t.size(); ++k) {
        if (s.t[k] < d.window_start) continue;
        if (d.window_size > 0 && (d.stride == 0 || s.t[k] - prev < d.stride)) d.stride = s.t[k] - prev;
        prev = s.t[k];
        ++d.window_size;
        if (s.r[k] <= epsilon) ++d.count;
    }
    if (d.window_size == 0) throw Error("tail window contains no logged iterates");
    if (d.stride == 0) d.stride = 1;
    d.density = static_cast<double>(d.count) / static_cast<double>(d.window_size);
    return d;
}

inline DensityReport tail_density(const Trace& trace, double epsilon, double eta) {
    return tail_density(series_of(trace), epsilon, eta);
}
inline DensityReport tail_density(const EnsembleTrace& e, double epsilon, double eta) {
    return tail_density(series_of(e), epsilon, eta);
}

struct TailMin {
    std::size_t t_argmin = 0;
    double value = 0.0;
};

inline TailMin tail_min(const Series& s, double eta) {
    const std::size_t start = window_start(eta, s.horizon());
    std::optional<TailMin> best;
    for (std::size_t k = 0; k < s.t.size(); ++k) {
        if (s.t[k] < start) continue;
        if (!best || s.r[k] < best->value) best = TailMin{s.t[k], s.r[k]};
    }
    if (!best) throw Error("tail window contains no logged iterates");
    return *best;
}

inline TailMin tail_min(const Trace& trace, double eta) { return tail_min(series_of(trace), eta); }
inline TailMin tail_min(const EnsembleTrace& e, double eta) { return tail_min(series_of(e), eta); }

/// Density of S_{eps,eta} recomputed with each T' in `horizons` as the horizon.
inline std::vector<DensityReport> density_curve(const Series& s, double epsilon, double eta,
                                                std::span<const std::size_t> horizons) {
    std::vector<DensityReport> out;
    for (std::size_t h : horizons) {
        if (h > s.horizon()) throw Error("prefix horizon " + std::to_string(h) + " beyond the trace");
        out.push_back(tail_density(prefix(s, h), epsilon, eta));
    }
    return out;
}

/// Per-iterate mean and population standard deviation across seeds.
inline EnsembleTrace ensemble_mean(std::span<const Trace> traces) {
    if (traces.empty()) throw Error("ensemble needs at least one trace");
    const auto& ref = traces.front().points;
    for (const auto& tr : traces) {
        if (tr.points.size() != ref.size()) throw Error("ensemble traces have mismatched logged index sets");
        for (std::size_t k = 0; k < ref.size(); ++k)
            if (tr.points[k].t != ref[k].t) throw Error("ensemble traces have mismatched logged index sets");
    }
    const double R = static_cast<double>(traces.size());
    const auto stats = [&](std::size_t k, auto field) {
        double mean = 0.0;
        for (const auto& tr : traces) mean += field(tr.points[k]);
        mean /= R;
        double var = 0.0;
        for (const auto& tr : traces) {
            const double d = field(tr.points[k]) - mean;
            var += d * d;
        }
        return std::pair{mean, std::sqrt(var / R)};
    };
    EnsembleTrace e;
    e.seeds = traces.size();
    e.points.reserve(ref.size());
    for (std::size_t k = 0; k < ref.size(); ++k) {
        EnsemblePoint p;
        p.t = ref[k].t;
        p.gamma_t = ref[k].gamma_t;
        std::tie(p.r_hat_mean, p.r_hat_sd) = stats(k, [](const TracePoint& q) { return q.r_hat; });
        std::tie(p.delta_hat_mean, p.delta_hat_sd) = stats(k, [](const TracePoint& q) { return q.delta_hat; });
        std::tie(p.loss_mean, p.loss_sd) = stats(k, [](const TracePoint& q) { return q.loss; });
        e.points.push_back(p);
    }
    return e;
}

}  // namespace tailsgd
