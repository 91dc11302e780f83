#pragma once

// Shared domain types for the finite-sum problem, step-size schedules, run
// configuration and iterate traces.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tailsgd {

using Vector = std::vector<double>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (dataset, trace CSV, config file).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite values, divergence, or an iteration cap that prevents a result.
class NumericalError : public Error {
public:
    using Error::Error;
};

struct SparseEntry {
    std::size_t index;
    double value;

    friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// Sparse row with strictly increasing 0-based indices, all < dim, no stored zeros.
class SparseVector {
public:
    SparseVector() = default;

    SparseVector(std::vector<SparseEntry> entries, std::size_t dim)
        : entries_(std::move(entries)), dim_(dim) {
        validate();
    }

    const std::vector<SparseEntry>& entries() const noexcept { return entries_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t nnz() const noexcept { return entries_.size(); }

    double dot(std::span<const double> x) const noexcept {
        double sum = 0.0;
        for (const auto& e : entries_) sum += e.value * x[e.index];
        return sum;
    }

    double squared_norm() const noexcept {
        double sum = 0.0;
        for (const auto& e : entries_) sum += e.value * e.value;
        return sum;
    }

    /// Same entries, new (larger or equal) dimension.
    SparseVector with_dim(std::size_t dim) const { return SparseVector(entries_, dim); }

    SparseVector scaled(double factor) const {
        std::vector<SparseEntry> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) {
            const double v = e.value * factor;
            if (v != 0.0) out.push_back({e.index, v});
        }
        return SparseVector(std::move(out), dim_);
    }

    friend bool operator==(const SparseVector&, const SparseVector&) = default;

private:
    void validate() const {
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            if (entries_[k].index >= dim_) throw Error("sparse index out of range");
            if (k > 0 && entries_[k].index <= entries_[k - 1].index)
                throw Error("sparse indices must be strictly increasing");
            if (entries_[k].value == 0.0) throw Error("explicit zero stored in sparse vector");
        }
    }

    std::vector<SparseEntry> entries_;
    std::size_t dim_ = 0;
};

/// Finite-sum problem data. Labels are already folded into the rows.
class Dataset {
public:
    Dataset(std::vector<SparseVector> rows, std::size_t dim, std::string provenance)
        : rows_(std::move(rows)), dim_(dim), provenance_(std::move(provenance)) {
        if (rows_.empty()) throw Error("dataset must have at least one row");
        for (const auto& r : rows_)
            if (r.dim() != dim_) throw Error("dataset row dimension mismatch");
    }

    std::size_t n() const noexcept { return rows_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<SparseVector>& rows() const noexcept { return rows_; }
    const SparseVector& row(std::size_t i) const { return rows_.at(i); }
    const std::string& provenance() const noexcept { return provenance_; }

    std::size_t nnz() const noexcept {
        std::size_t total = 0;
        for (const auto& r : rows_) total += r.nnz();
        return total;
    }

private:
    std::vector<SparseVector> rows_;
    std::size_t dim_;
    std::string provenance_;
};

/// Expected-smoothness triple: E||g||^2 <= 2A(F - F*) + B||grad F||^2 + C.
struct ESConstants {
    double A = 0.0;
    double B = 0.0;
    double C = 0.0;

    void validate() const {
        if (!(A >= 0.0 && B >= 0.0 && C >= 0.0)) throw Error("ES constants must be nonnegative");
    }
};

/// Gradient-variance constants for random reshuffling:
/// (1/n) sum ||grad f_i - grad F||^2 <= 2*calA (F - F*) + calB.
struct RRVarianceConstants {
    double calA = 0.0;
    double calB = 0.0;
};

enum class SmoothnessMethod { analytic, power_iteration, user_supplied };

struct SmoothnessInfo {
    double L = 0.0;
    SmoothnessMethod method = SmoothnessMethod::analytic;
    std::size_t iterations = 0;
};

enum class ScheduleKind { constant, inverse_sqrt, power };

/// constant: gamma_t = gamma; inverse_sqrt: gamma/sqrt(t+1); power: gamma * t^-alpha.
struct Schedule {
    ScheduleKind kind = ScheduleKind::constant;
    double gamma = 0.0;
    double alpha = 0.75;

    void validate() const {
        if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error("schedule gamma must be positive");
        if (kind == ScheduleKind::power && !(alpha > 0.5 && alpha < 1.0))
            throw Error("power schedule requires alpha in (1/2, 1)");
    }
};

enum class RunMode { iid_sgd, rr_sgd, prox_sgd, full_gd };

struct RunConfig {
    std::size_t T = 1;  // iterations; epochs for rr_sgd
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    Schedule schedule;
    std::size_t log_stride = 1;
    RunMode mode = RunMode::iid_sgd;

    void validate(std::size_t n) const {
        if (T < 1) throw Error("T must be >= 1");
        if (batch_size < 1 || batch_size > n) throw Error("batch_size must be in [1, n]");
        if (log_stride < 1) throw Error("log_stride must be >= 1");
        schedule.validate();
    }
};

struct TracePoint {
    std::size_t t = 0;
    double r_hat = 0.0;      // ||grad F(x_t)||^2 (or ||G_eta(x_t)||^2 for composite runs)
    double delta_hat = 0.0;  // F(x_t) - F*_estimate
    double gamma_t = 0.0;
    double loss = 0.0;
    std::optional<double> minibatch_loss;

    friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct Trace {
    RunConfig config;
    std::vector<TracePoint> points;
    Vector final_iterate;
    std::size_t steps_per_epoch = 1;  // > 1 only for rr_sgd with n/batch blocks per epoch
    bool diverged = false;
    std::size_t last_finite_t = 0;

    /// Horizon of the logged run (last logged t).
    std::size_t horizon() const { return points.empty() ? 0 : points.back().t; }
};

struct OptimumEstimate {
    double f_star = 0.0;
    std::string method = "analytic";
    double residual_grad_norm = 0.0;
    bool converged = true;
    std::size_t steps = 0;
    Vector argmin;
};

inline const char* to_string(RunMode m) {
    switch (m) {
        case RunMode::iid_sgd: return "iid_sgd";
        case RunMode::rr_sgd: return "rr_sgd";
        case RunMode::prox_sgd: return "prox_sgd";
        case RunMode::full_gd: return "full_gd";
    }
    return "?";
}

inline const char* to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::constant: return "constant";
        case ScheduleKind::inverse_sqrt: return "inverse_sqrt";
        case ScheduleKind::power: return "power";
    }
    return "?";
}

inline const char* to_string(SmoothnessMethod m) {
    switch (m) {
        case SmoothnessMethod::analytic: return "analytic";
        case SmoothnessMethod::power_iteration: return "power-iteration";
        case SmoothnessMethod::user_supplied: return "user-supplied";
    }
    return "?";
}

inline RunMode parse_run_mode(const std::string& s) {
    if (s == "iid_sgd") return RunMode::iid_sgd;
    if (s == "rr_sgd") return RunMode::rr_sgd;
    if (s == "prox_sgd") return RunMode::prox_sgd;
    if (s == "full_gd") return RunMode::full_gd;
    throw Error("unknown mode '" + s + "'");
}

inline ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "constant") return ScheduleKind::constant;
    if (s == "inverse_sqrt") return ScheduleKind::inverse_sqrt;
    if (s == "power") return ScheduleKind::power;
    throw Error("unknown schedule kind '" + s + "'");
}

namespace linalg {

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) noexcept { return dot(a, a); }

inline bool all_finite(std::span<const double> a) noexcept {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace linalg

}  // namespace tailsgd
