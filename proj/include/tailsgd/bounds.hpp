#pragma once

// Closed-form convergence bounds, tail-window thresholds and stationary-point
// density lower bounds for SGD under expected smoothness, plus the
// random-reshuffling iteration threshold.
//
// Calculators evaluate outside their validity regions and report the failed
// preconditions instead of refusing; only structurally undefined inputs
// (C/A with A = 0, empty tail window, alpha out of range) throw.
// Products of (1 + L A gamma_t^2) are accumulated as exp(sum log1p(.)).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tailsgd/core.hpp"

namespace tailsgd {

struct BoundInputs {
    double delta0 = 0.0;  // F(x_0) - F*
    double L = 1.0;
    ESConstants es;
    std::size_t T = 1;
    double eta = 1.0;              // tail fraction, (0, 1]
    double gamma = 0.0;            // constant step, gamma_0, or power-law scale
    std::optional<double> alpha;   // power-law exponent
};

struct Precondition {
    std::string name;
    bool ok = true;
};

struct BoundResult {
    double value = 0.0;
    std::vector<Precondition> preconditions;

    bool preconditions_ok() const {
        return std::all_of(preconditions.begin(), preconditions.end(), [](const auto& p) { return p.ok; });
    }
};

enum class BindingTerm { epsilon_term, stepsize_term, eta_term };

inline const char* to_string(BindingTerm b) {
    switch (b) {
        case BindingTerm::epsilon_term: return "epsilon_term";
        case BindingTerm::stepsize_term: return "stepsize_term";
        case BindingTerm::eta_term: return "eta_term";
    }
    return "?";
}

struct ThresholdReport {
    std::uint64_t T_required = 1;
    double T_real = 0.0;  // the max of the three terms before rounding up
    std::array<double, 3> terms{};
    BindingTerm binding_term = BindingTerm::epsilon_term;
    std::vector<Precondition> preconditions;
};

namespace detail {

inline double log3() { return std::log(3.0); }

/// C/A, defined as 0 when C = 0 and A = 0.
inline double c_over_a(const ESConstants& es) {
    if (es.A > 0.0) return es.C / es.A;
    if (es.C == 0.0) return 0.0;
    throw Error("C/A is undefined: A = 0 with C > 0");
}

inline void require_positive_A(double A, const char* what) {
    if (!(A > 0.0)) throw Error(std::string(what) + " requires A > 0");
}

inline void require_eta(double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) throw Error("eta must lie in (0, 1]");
}

inline void require_epsilon(double eps) {
    if (!(eps > 0.0)) throw Error("epsilon must be positive");
}

inline double log_product(double LA, std::span<const double> gammas) {
    double s = 0.0;
    for (double g : gammas) s += std::log1p(LA * g * g);
    return s;
}

/// ceil(x), ignoring relative excess of 1e-12 (x computed from decimal inputs).
inline std::uint64_t ceil_count(double x) {
    if (!(x > 0.0)) return 0;
    if (x >= 1.8e19) return std::numeric_limits<std::uint64_t>::max();
    const double c = std::ceil(x * (1.0 - 1e-12));
    return static_cast<std::uint64_t>(c);
}

/// floor(x) that tolerates x landing a relative 1e-9 below an integer.
inline double floor_count(double x) { return std::floor(x + 1e-9 * std::max(1.0, std::abs(x))); }

inline ThresholdReport make_threshold(std::array<double, 3> terms, std::vector<Precondition> pre) {
    ThresholdReport r;
    r.terms = terms;
    const auto it = std::max_element(terms.begin(), terms.end());
    r.binding_term = static_cast<BindingTerm>(it - terms.begin());
    r.T_real = *it;
    r.T_required = std::max<std::uint64_t>(1, ceil_count(r.T_real));
    r.preconditions = std::move(pre);
    return r;
}

}  // namespace detail

/// (2 delta0 + C/A) D_T with D_T = prod_{t=1}^T (1 + L A gamma_t^2);
/// bounds sum_t gamma_t r_{t-1}.
inline BoundResult bound_theorem1(const BoundInputs& in, std::span<const double> gammas) {
    const double ca = detail::c_over_a(in.es);
    BoundResult r;
    bool step_ok = true;
    if (in.es.B > 0.0)
        for (double g : gammas) step_ok = step_ok && g <= 1.0 / (in.L * in.es.B);
    r.preconditions.push_back({"gamma_t <= 1/(L B)", step_ok});
    const double logD = detail::log_product(in.L * in.es.A, gammas);
    r.value = (2.0 * in.delta0 + ca) * std::exp(logD);
    return r;
}

/// 3 sqrt(L A) / (ln 3 sqrt(T)) (2 delta0 + C/A): min_{1<=t<=T} r_t for the
/// constant step sqrt(ln 3 / (L A T)).
inline BoundResult bound_corollary1(const BoundInputs& in) {
    detail::require_positive_A(in.es.A, "constant-step corollary");
    const double T = static_cast<double>(in.T);
    BoundResult r;
    r.preconditions.push_back({"T >= ln3 L B^2 / A", T >= detail::log3() * in.L * in.es.B * in.es.B / in.es.A});
    r.value = 3.0 * std::sqrt(in.L * in.es.A) / (detail::log3() * std::sqrt(T)) * (2.0 * in.delta0 + in.es.C / in.es.A);
    return r;
}

/// (1 - alpha) / (gamma T^(1-alpha)) (2 delta0 + C/A) exp(2 alpha gamma^2 L A / (2 alpha - 1))
/// for gamma_t = gamma t^-alpha.
inline BoundResult bound_corollary2(const BoundInputs& in) {
    detail::require_positive_A(in.es.A, "power-step corollary");
    if (!in.alpha || !(*in.alpha > 0.5 && *in.alpha < 1.0)) throw Error("alpha must lie in (1/2, 1)");
    const double a = *in.alpha;
    const double T = static_cast<double>(in.T);
    BoundResult r;
    r.preconditions.push_back({"gamma <= 1/(L B)", in.es.B == 0.0 || in.gamma <= 1.0 / (in.L * in.es.B)});
    r.value = (1.0 - a) / (in.gamma * std::pow(T, 1.0 - a)) * (2.0 * in.delta0 + in.es.C / in.es.A) *
              std::exp(2.0 * a * in.gamma * in.gamma * in.L * in.es.A / (2.0 * a - 1.0));
    return r;
}

struct TailBound {
    double refined = 0.0;
    double coarse = 0.0;
    std::vector<Precondition> preconditions;
};

/// Bounds on min_{k<=t<=T} r_t. gammas[t-1] is gamma_t for t = 1..T.
///   refined = (2 delta0 + C/A - 2 delta_T / D_T - min_{t<k} r_t / (L A gamma_1)) L A gamma_k D_k
///   coarse  = (2 delta0 + C/A) L A gamma_k D_k
/// Missing observations contribute zero.
inline TailBound bound_theorem2_tail(const BoundInputs& in, std::span<const double> gammas, std::size_t k,
                                     std::optional<double> observed_head_min = std::nullopt,
                                     std::optional<double> observed_delta_T = std::nullopt) {
    detail::require_positive_A(in.es.A, "tail bound");
    const std::size_t T = gammas.size();
    if (k < 1 || k > T) throw Error("k must lie in [1, T]");
    const double LA = in.L * in.es.A;
    const double logDk = detail::log_product(LA, gammas.first(k));
    const double logDT = detail::log_product(LA, gammas);
    const double factor = LA * gammas[k - 1] * std::exp(logDk);
    const double base = 2.0 * in.delta0 + in.es.C / in.es.A;
    TailBound r;
    r.coarse = base * factor;
    double refined_base = base;
    if (observed_delta_T) refined_base -= 2.0 * *observed_delta_T / std::exp(logDT);
    if (observed_head_min) refined_base -= *observed_head_min / (LA * gammas[0]);
    r.refined = refined_base * factor;
    bool step_ok = true;
    if (in.es.B > 0.0)
        for (double g : gammas) step_ok = step_ok && g <= 1.0 / (in.L * in.es.B);
    r.preconditions.push_back({"gamma_t <= 1/(L B)", step_ok});
    return r;
}

/// 2 (3 delta0 + C/A) / ((eta T - 1) gamma): min of r_t over [(1-eta)T, T]
/// for a constant step.
inline BoundResult tail_min_bound_constant(const BoundInputs& in) {
    detail::require_positive_A(in.es.A, "constant-step tail bound");
    detail::require_eta(in.eta);
    const double T = static_cast<double>(in.T);
    const double window = in.eta * T - 1.0;
    if (!(window > 0.0)) throw Error("empty tail window: eta T <= 1");
    const double x = in.L * in.gamma * in.gamma * in.es.A;
    BoundResult r;
    r.preconditions.push_back({"L B gamma <= 1", in.L * in.es.B * in.gamma <= 1.0});
    r.preconditions.push_back({"(1 + L gamma^2 A)^(T+1) <= 3", std::exp((T + 1.0) * std::log1p(x)) <= 3.0});
    r.value = 2.0 * (3.0 * in.delta0 + in.es.C / in.es.A) / (window * in.gamma);
    return r;
}

/// Iterations after which an eps-stationary point exists in the last eta T:
///   max{ (4 sqrt(2 L A)(3 delta0 + C/A) / (eps eta sqrt(ln 3)))^2, L B^2 ln3 / A - 1, 2 / eta }.
inline ThresholdReport threshold_theorem3(double epsilon, double eta, double L, const ESConstants& es,
                                          double delta0) {
    detail::require_epsilon(epsilon);
    detail::require_eta(eta);
    detail::require_positive_A(es.A, "iteration threshold");
    const double root = 4.0 * std::sqrt(2.0 * L * es.A) * (3.0 * delta0 + es.C / es.A) /
                        (epsilon * eta * std::sqrt(detail::log3()));
    const std::array<double, 3> terms{root * root, L * es.B * es.B * detail::log3() / es.A - 1.0, 2.0 / eta};
    return detail::make_threshold(terms, {});
}

enum class Theorem4Variant { theorem_stated, derivation };

/// Decreasing step gamma_0 / sqrt(t+1):
///   (delta0 + (L C gamma_0^2 / 2)(ln(T+1) + 1)) / ((1 - L A gamma_0^2 ln(T+1)) Cc)
///   Cc = gamma_0 w sqrt(T+1) - (L B gamma_0^2 / 2) ln(T+1) + (L B gamma_0^2 / 2) ln(floor((1-eta)T) + 1)
/// with w = eta (stated) or 1 - sqrt(1 - eta) (derivation, the default).
inline BoundResult bound_theorem4_decreasing(const BoundInputs& in,
                                             Theorem4Variant variant = Theorem4Variant::derivation) {
    detail::require_positive_A(in.es.A, "decreasing-step bound");
    detail::require_eta(in.eta);
    const double T = static_cast<double>(in.T);
    const double g0 = in.gamma;
    const double lnT1 = std::log(T + 1.0);
    const double damping = 1.0 - in.L * in.es.A * g0 * g0 * lnT1;
    if (!(damping > 0.0)) throw Error("decreasing-step bound requires gamma_0^2 < 1/(L A ln(T+1))");
    const double w = variant == Theorem4Variant::theorem_stated ? in.eta : 1.0 - std::sqrt(1.0 - in.eta);
    const double half_LB = 0.5 * in.L * in.es.B * g0 * g0;
    const double cc = g0 * w * std::sqrt(T + 1.0) - half_LB * lnT1 +
                      half_LB * std::log(detail::floor_count((1.0 - in.eta) * T) + 1.0);
    BoundResult r;
    r.preconditions.push_back({"tail weight positive", cc > 0.0});
    const double numerator = in.delta0 + 0.5 * in.L * in.es.C * g0 * g0 * (lnT1 + 1.0);
    r.value = numerator / (damping * cc);
    return r;
}

/// |S_{eps,eta}| / (eta T) >= 1 - ln((6 delta0 L gamma A + 2 C L gamma)/eps + 1)
///                                / (T eta ln(1 + L gamma^2 A)), constant step.
inline BoundResult density_lower_bound_constant(const BoundInputs& in, double epsilon) {
    detail::require_epsilon(epsilon);
    detail::require_eta(in.eta);
    detail::require_positive_A(in.es.A, "density bound");
    const double T = static_cast<double>(in.T);
    const double Lg = in.L * in.gamma;
    const double x = Lg * in.gamma * in.es.A;
    const double numer = std::log1p((6.0 * in.delta0 * Lg * in.es.A + 2.0 * in.es.C * Lg) / epsilon);
    BoundResult r;
    r.value = 1.0 - numer / (T * in.eta * std::log1p(x));
    r.preconditions.push_back({"L B gamma <= 1", Lg * in.es.B <= 1.0});
    r.preconditions.push_back({"(1 + L gamma^2 A)^(T+1) <= 3", std::exp((T + 1.0) * std::log1p(x)) <= 3.0});
    r.preconditions.push_back({"non-vacuous (>= 0)", r.value >= 0.0});
    return r;
}

struct DecreasingDensityBound {
    double value = 0.0;
    double D = 0.0;
};

/// Density bound for gamma_0 / sqrt(t+1):
///   D = (delta0 + (L C / 2) gamma_0^2 (ln(T+1) + 1)) / (1 + L gamma_0^2 A (T+1)) + (L B gamma_0^2 / 2) ln(T+1)
///   bound = 1 - 2 D / (gamma_0 eta sqrt(T)) + D^2 / (gamma_0^2 eta T)
inline DecreasingDensityBound density_lower_bound_decreasing(const BoundInputs& in, double epsilon) {
    detail::require_epsilon(epsilon);
    detail::require_eta(in.eta);
    detail::require_positive_A(in.es.A, "decreasing-step density bound");
    if (!(in.gamma > 0.0)) throw Error("gamma_0 must be positive");
    const double T = static_cast<double>(in.T);
    const double g0 = in.gamma;
    const double lnT1 = std::log(T + 1.0);
    DecreasingDensityBound r;
    r.D = (in.delta0 + 0.5 * in.L * in.es.C * g0 * g0 * (lnT1 + 1.0)) / (1.0 + in.L * g0 * g0 * in.es.A * (T + 1.0)) +
          0.5 * in.L * in.es.B * g0 * g0 * lnT1;
    r.value = 1.0 - 2.0 * r.D / (g0 * in.eta * std::sqrt(T)) + r.D * r.D / (g0 * g0 * in.eta * T);
    return r;
}

struct PowerTailIterations {
    std::uint64_t k = 1;
    double k_real = 0.0;
};

/// k >= ((1 - alpha)/(gamma eps) (2 delta0 + C/A) exp(2 alpha gamma^2 L A / (2 alpha - 1)))^(1/(1-alpha))
/// iterations give min_{k<=t<=T} r_t <= eps for gamma_t = gamma t^-alpha.
/// k = 0 (any k works) is reported as 1.
inline PowerTailIterations bound_corollary3_power(double epsilon, double gamma, double alpha, double L,
                                                  const ESConstants& es, double delta0) {
    detail::require_epsilon(epsilon);
    detail::require_positive_A(es.A, "power-step iteration count");
    if (!(alpha > 0.5 && alpha < 1.0)) throw Error("alpha must lie in (1/2, 1)");
    const double inner = (1.0 - alpha) / (gamma * epsilon) * (2.0 * delta0 + es.C / es.A) *
                         std::exp(2.0 * alpha * gamma * gamma * L * es.A / (2.0 * alpha - 1.0));
    PowerTailIterations r;
    r.k_real = std::pow(inner, 1.0 / (1.0 - alpha));
    r.k = std::max<std::uint64_t>(1, detail::ceil_count(r.k_real));
    return r;
}

/// Epochs after which reshuffling SGD has an eps-stationary epoch in the last eta T:
///   max{ 27 (3 delta0 + calB/calA)^3 calA L^2 / (n eta^2 eps^2), 8 L n ln3 / calA - 1, 2 / eta }.
inline ThresholdReport rr_threshold_theorem8(double epsilon, double eta, double L, std::size_t n,
                                             const RRVarianceConstants& rr, double delta0) {
    detail::require_epsilon(epsilon);
    detail::require_eta(eta);
    if (!(rr.calA > 0.0)) throw Error("reshuffling threshold requires calA > 0");
    if (n < 1) throw Error("n must be >= 1");
    const double nn = static_cast<double>(n);
    const double base = 3.0 * delta0 + rr.calB / rr.calA;
    const std::array<double, 3> terms{27.0 * base * base * base * rr.calA * L * L / (nn * eta * eta * epsilon * epsilon),
                                      8.0 * L * nn * detail::log3() / rr.calA - 1.0, 2.0 / eta};
    return detail::make_threshold(terms, {});
}

}  // namespace tailsgd
