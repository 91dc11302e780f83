#pragma once

// Objectives: nonconvex-regularized logistic regression over a finite sum,
// a synthetic quadratic with known constants, and composite f + h objectives
// with an l1 (or zero) regularizer handled through its prox operator.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tailsgd/core.hpp"

namespace tailsgd {

/// ln(1 + exp(-z)) without overflow for large |z|.
inline double softplus_neg(double z) noexcept { return std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0); }

/// 1 / (1 + exp(z)), i.e. the logistic sigmoid evaluated at -z.
inline double sigmoid_neg(double z) noexcept {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

/// Any smooth finite-sum objective F = (1/n) sum f_i.
template <class T>
concept SmoothObjective = requires(const T& obj, std::span<const double> x, std::span<double> g,
                                   std::span<const std::size_t> idx, std::size_t i) {
    { obj.n() } -> std::convertible_to<std::size_t>;
    { obj.dim() } -> std::convertible_to<std::size_t>;
    { obj.value(x) } -> std::convertible_to<double>;
    { obj.value_and_gradient(x, g) } -> std::convertible_to<double>;
    { obj.batch_value(x, idx) } -> std::convertible_to<double>;
    obj.batch_gradient(x, idx, g);
    obj.sample_gradient(x, i, g);
    { obj.mean_squared_sample_gradient(x) } -> std::convertible_to<double>;
};

namespace detail {
inline void check_dim(std::size_t expected, std::size_t got) {
    if (expected != got)
        throw Error("dimension mismatch: expected " + std::to_string(expected) + ", got " + std::to_string(got));
}
}  // namespace detail

/// F(x) = (c/2) ||x||^2 as a single-sample finite sum: L = c, (A, B, C) = (0, 1, 0).
class SyntheticQuadratic {
public:
    explicit SyntheticQuadratic(double curvature, std::size_t dim = 1) : curvature_(curvature), dim_(dim) {
        if (!(curvature > 0.0)) throw Error("quadratic curvature must be positive");
    }

    double curvature() const noexcept { return curvature_; }
    std::size_t n() const noexcept { return 1; }
    std::size_t dim() const noexcept { return dim_; }

    double value(std::span<const double> x) const {
        detail::check_dim(dim_, x.size());
        return 0.5 * curvature_ * linalg::squared_norm(x);
    }

    double value_and_gradient(std::span<const double> x, std::span<double> g) const {
        gradient(x, g);
        return value(x);
    }

    void gradient(std::span<const double> x, std::span<double> g) const {
        detail::check_dim(dim_, x.size());
        for (std::size_t j = 0; j < dim_; ++j) g[j] = curvature_ * x[j];
    }

    double batch_value(std::span<const double> x, std::span<const std::size_t>) const { return value(x); }
    void batch_gradient(std::span<const double> x, std::span<const std::size_t>, std::span<double> g) const {
        gradient(x, g);
    }
    void sample_gradient(std::span<const double> x, std::size_t i, std::span<double> g) const {
        if (i != 0) throw Error("sample index out of range");
        gradient(x, g);
    }
    double mean_squared_sample_gradient(std::span<const double> x) const {
        return curvature_ * curvature_ * linalg::squared_norm(x);
    }
    void second_moment_gradient(std::span<const double> x, std::span<double> out) const {
        detail::check_dim(dim_, x.size());
        for (std::size_t j = 0; j < dim_; ++j) out[j] = 2.0 * curvature_ * curvature_ * x[j];
    }
    void hessian_vector(std::span<const double>, std::span<const double> v, std::span<double> out) const {
        for (std::size_t j = 0; j < dim_; ++j) out[j] = curvature_ * v[j];
    }

private:
    double curvature_;
    std::size_t dim_;
};

/// F(x) = (1/n) sum ln(1 + exp(-a_i^T x)) + lambda sum_j x_j^2 / (1 + x_j^2).
/// The regularizer is carried by every f_i, so (1/n) sum grad f_i = grad F.
class SmoothNcxLogistic {
public:
    SmoothNcxLogistic(std::shared_ptr<const Dataset> data, double lambda) : data_(std::move(data)), lambda_(lambda) {
        if (!data_) throw Error("logistic objective needs a dataset");
        if (!(lambda > 0.0)) throw Error("lambda must be positive");
    }

    SmoothNcxLogistic(Dataset data, double lambda)
        : SmoothNcxLogistic(std::make_shared<const Dataset>(std::move(data)), lambda) {}

    const Dataset& data() const noexcept { return *data_; }
    std::shared_ptr<const Dataset> data_ptr() const noexcept { return data_; }
    double lambda() const noexcept { return lambda_; }
    std::size_t n() const noexcept { return data_->n(); }
    std::size_t dim() const noexcept { return data_->dim(); }

    double penalty(std::span<const double> x) const noexcept {
        double s = 0.0;
        for (double v : x) {
            const double sq = v * v;
            s += sq / (1.0 + sq);
        }
        return lambda_ * s;
    }

    double value(std::span<const double> x) const {
        detail::check_dim(dim(), x.size());
        return accumulate(x, AllRows{n()}, nullptr);
    }

    double value_and_gradient(std::span<const double> x, std::span<double> g) const {
        detail::check_dim(dim(), x.size());
        return accumulate(x, AllRows{n()}, &g);
    }

    void gradient(std::span<const double> x, std::span<double> g) const { value_and_gradient(x, g); }

    double batch_value(std::span<const double> x, std::span<const std::size_t> idx) const {
        detail::check_dim(dim(), x.size());
        return accumulate(x, Subset{idx, n()}, nullptr);
    }

    /// Mean of the per-sample gradients over `idx` (repeats count repeatedly).
    void batch_gradient(std::span<const double> x, std::span<const std::size_t> idx, std::span<double> g) const {
        detail::check_dim(dim(), x.size());
        accumulate(x, Subset{idx, n()}, &g);
    }

    void sample_gradient(std::span<const double> x, std::size_t i, std::span<double> g) const {
        if (i >= n()) throw Error("sample index " + std::to_string(i) + " out of range");
        const std::size_t one[1] = {i};
        batch_gradient(x, one, g);
    }

    /// (1/n) sum_i ||grad f_i(x)||^2, evaluated exactly.
    double mean_squared_sample_gradient(std::span<const double> x) const {
        detail::check_dim(dim(), x.size());
        Vector p(dim());
        penalty_gradient(x, p);
        const double pp = linalg::squared_norm(p);
        double sum = 0.0;
        for (const auto& row : data_->rows()) {
            const double s = sigmoid_neg(row.dot(x));
            sum += s * s * row.squared_norm() - 2.0 * s * row.dot(p);
        }
        return sum / static_cast<double>(n()) + pp;
    }

    /// Gradient of mean_squared_sample_gradient:
    /// (2/n) sum_i s_i (1 - s_i)(a_i . grad f_i) a_i + 2 p'(x) * grad F(x).
    void second_moment_gradient(std::span<const double> x, std::span<double> out) const {
        detail::check_dim(dim(), x.size());
        Vector p(dim());
        penalty_gradient(x, p);
        Vector full(dim());
        value_and_gradient(x, full);
        std::fill(out.begin(), out.end(), 0.0);
        for (const auto& row : data_->rows()) {
            const double s = sigmoid_neg(row.dot(x));
            const double proj = -s * row.squared_norm() + row.dot(p);
            const double w = s * (1.0 - s) * proj;
            for (const auto& e : row.entries()) out[e.index] += w * e.value;
        }
        const double scale = 2.0 / static_cast<double>(n());
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = scale * out[j] + 2.0 * penalty_curvature(x[j]) * full[j];
    }

    /// Hessian of F at x applied to v.
    void hessian_vector(std::span<const double> x, std::span<const double> v, std::span<double> out) const {
        detail::check_dim(dim(), x.size());
        std::fill(out.begin(), out.end(), 0.0);
        for (const auto& row : data_->rows()) {
            const double s = sigmoid_neg(row.dot(x));
            const double w = s * (1.0 - s) * row.dot(v);
            for (const auto& e : row.entries()) out[e.index] += w * e.value;
        }
        const double inv_n = 1.0 / static_cast<double>(n());
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = inv_n * out[j] + penalty_curvature(x[j]) * v[j];
    }

    /// Second derivative of lambda x^2 / (1 + x^2).
    double penalty_curvature(double x) const noexcept {
        const double den = 1.0 + x * x;
        return lambda_ * 2.0 * (1.0 - 3.0 * x * x) / (den * den * den);
    }

    void penalty_gradient(std::span<const double> x, std::span<double> out) const noexcept {
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double den = 1.0 + x[j] * x[j];
            out[j] = lambda_ * 2.0 * x[j] / (den * den);
        }
    }

private:
    struct AllRows {
        std::size_t count;
        std::size_t size() const noexcept { return count; }
        std::size_t operator[](std::size_t k) const noexcept { return k; }
    };
    struct Subset {
        std::span<const std::size_t> idx;
        std::size_t n;
        std::size_t size() const noexcept { return idx.size(); }
        std::size_t operator[](std::size_t k) const {
            if (idx[k] >= n) throw Error("sample index " + std::to_string(idx[k]) + " out of range");
            return idx[k];
        }
    };

    // Every value/gradient path goes through here so that full-batch and
    // single-sample evaluations round identically when n = 1.
    template <class Rows>
    double accumulate(std::span<const double> x, const Rows& rows, std::span<double>* grad) const {
        if (rows.size() == 0) throw Error("empty minibatch");
        if (grad) std::fill(grad->begin(), grad->end(), 0.0);
        double data_term = 0.0;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const SparseVector& a = data_->rows()[rows[k]];
            const double margin = a.dot(x);
            data_term += softplus_neg(margin);
            if (grad) {
                const double s = sigmoid_neg(margin);
                for (const auto& e : a.entries()) (*grad)[e.index] += -s * e.value;
            }
        }
        const double count = static_cast<double>(rows.size());
        if (grad) {
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double den = 1.0 + x[j] * x[j];
                (*grad)[j] = (*grad)[j] / count + lambda_ * 2.0 * x[j] / (den * den);
            }
        }
        return data_term / count + penalty(x);
    }

    std::shared_ptr<const Dataset> data_;
    double lambda_;
};

enum class RegularizerKind { zero, l1 };

struct Regularizer {
    RegularizerKind kind = RegularizerKind::zero;
    double tau = 0.0;

    static Regularizer zero() { return {}; }
    static Regularizer l1(double tau) {
        if (!(tau >= 0.0)) throw Error("l1 weight must be nonnegative");
        return {RegularizerKind::l1, tau};
    }

    double value(std::span<const double> x) const {
        if (kind == RegularizerKind::zero) return 0.0;
        double s = 0.0;
        for (double v : x) s += std::abs(v);
        return tau * s;
    }
};

/// f(x) + h(x) with f smooth and h simple; eta parametrizes the gradient mapping.
template <SmoothObjective Smooth>
struct CompositeObjective {
    Smooth smooth_part;
    Regularizer h;
    double eta = 1.0;

    CompositeObjective(Smooth smooth, Regularizer reg, double eta_)
        : smooth_part(std::move(smooth)), h(reg), eta(eta_) {
        if (!(eta > 0.0)) throw Error("composite eta must be positive");
    }

    std::size_t n() const { return smooth_part.n(); }
    std::size_t dim() const { return smooth_part.dim(); }
};

// --- free-function interface -------------------------------------------------

template <SmoothObjective Obj>
double loss(const Obj& obj, std::span<const double> x) {
    return obj.value(x);
}

template <SmoothObjective Smooth>
double loss(const CompositeObjective<Smooth>& obj, std::span<const double> x) {
    return obj.smooth_part.value(x) + obj.h.value(x);
}

template <SmoothObjective Obj>
Vector full_gradient(const Obj& obj, std::span<const double> x) {
    detail::check_dim(obj.dim(), x.size());
    Vector g(obj.dim());
    obj.value_and_gradient(x, g);
    return g;
}

template <SmoothObjective Obj>
Vector per_sample_gradient(const Obj& obj, std::span<const double> x, std::size_t i) {
    detail::check_dim(obj.dim(), x.size());
    Vector g(obj.dim());
    obj.sample_gradient(x, i, g);
    return g;
}

/// Soft threshold for h = tau ||.||_1, identity for h = 0.
inline Vector prox(const Regularizer& h, double step, std::span<const double> v) {
    if (!(step > 0.0)) throw Error("prox step must be positive");
    switch (h.kind) {
        case RegularizerKind::zero: return Vector(v.begin(), v.end());
        case RegularizerKind::l1: {
            Vector out(v.size());
            const double thr = step * h.tau;
            for (std::size_t j = 0; j < v.size(); ++j) {
                const double mag = std::abs(v[j]) - thr;
                out[j] = mag > 0.0 ? std::copysign(mag, v[j]) : 0.0;
            }
            return out;
        }
    }
    throw Error("unsupported regularizer");
}

/// G_eta(x) = (x - prox_{eta h}(x - eta grad f(x))) / eta. With h = 0 this is
/// grad f(x) exactly (no round trip through the prox).
template <SmoothObjective Smooth>
Vector gradient_mapping(const CompositeObjective<Smooth>& obj, std::span<const double> x, double eta) {
    if (!(eta > 0.0)) throw Error("gradient mapping eta must be positive");
    Vector g = full_gradient(obj.smooth_part, x);
    if (obj.h.kind == RegularizerKind::zero) return g;
    Vector v(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) v[j] = x[j] - eta * g[j];
    const Vector p = prox(obj.h, eta, v);
    for (std::size_t j = 0; j < x.size(); ++j) g[j] = (x[j] - p[j]) / eta;
    return g;
}

template <SmoothObjective Smooth>
Vector gradient_mapping(const CompositeObjective<Smooth>& obj, std::span<const double> x) {
    return gradient_mapping(obj, x, obj.eta);
}

// --- smoothness ----------------------------------------------------------------

struct PowerIterationOptions {
    std::size_t max_iterations = 100000;
    double tolerance = 1e-13;
};

inline SmoothnessInfo smoothness_constant(const SyntheticQuadratic& q) {
    return {q.curvature(), SmoothnessMethod::analytic, 0};
}

/// L = lambda_max(A^T A / (4n)) + 2 lambda. The logistic curvature is at most
/// 1/4 and the penalty's second derivative (2 - 6x^2)/(1 + x^2)^3 peaks at 2.
inline SmoothnessInfo smoothness_constant(const SmoothNcxLogistic& obj, PowerIterationOptions opt = {}) {
    const std::size_t d = obj.dim();
    const double scale = 1.0 / (4.0 * static_cast<double>(obj.n()));
    Vector v(d, 1.0 / std::sqrt(static_cast<double>(d)));
    Vector w(d);
    double theta = 0.0;
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
        std::fill(w.begin(), w.end(), 0.0);
        for (const auto& row : obj.data().rows()) {
            const double m = row.dot(v);
            if (m == 0.0) continue;
            for (const auto& e : row.entries()) w[e.index] += m * e.value;
        }
        for (auto& wj : w) wj *= scale;
        const double next = linalg::dot(v, w);
        const double norm = std::sqrt(linalg::squared_norm(w));
        if (norm == 0.0) return {2.0 * obj.lambda(), SmoothnessMethod::power_iteration, it};
        for (std::size_t j = 0; j < d; ++j) v[j] = w[j] / norm;
        if (it > 1 && std::abs(next - theta) <= opt.tolerance * std::abs(next)) {
            return {next + 2.0 * obj.lambda(), SmoothnessMethod::power_iteration, it};
        }
        theta = next;
    }
    throw NumericalError("power iteration did not converge after " + std::to_string(opt.max_iterations) +
                         " iterations");
}

template <SmoothObjective Smooth>
SmoothnessInfo smoothness_constant(const CompositeObjective<Smooth>& obj) {
    return smoothness_constant(obj.smooth_part);
}

}  // namespace tailsgd
