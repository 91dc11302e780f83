#include <gtest/gtest.h>

#include <sstream>

#include "tailsgd/experiment.hpp"

using namespace tailsgd;

namespace {

const SmoothNcxLogistic& a1a() {
    static const SmoothNcxLogistic f(load_a1a_or_surrogate().data, 0.5);
    return f;
}

ExperimentConfig config(const std::string& text) {
    std::istringstream in(text);
    return parse_experiment_config(parse_key_values(in));
}

}  // namespace

TEST(FStar, QuadraticIsZero) {
    const SyntheticQuadratic q(1.5, 4);
    FStarOptions opt;
    opt.x0 = Vector{1.0, -1.0, 2.0, 0.5};
    const auto est = estimate_f_star(q, opt);
    EXPECT_TRUE(est.converged);
    EXPECT_NEAR(est.f_star, 0.0, 1e-14);
}

TEST(FStar, PenaltyOnlyProblemIsZero) {
    std::vector<SparseVector> rows(3, SparseVector({}, 5));
    const SmoothNcxLogistic f(Dataset(std::move(rows), 5, "test"), 0.5);
    FStarOptions opt;
    opt.x0 = Vector(5, 0.3);
    const auto est = estimate_f_star(f, opt);
    EXPECT_TRUE(est.converged);
    // every row contributes ln 2, the penalty vanishes at 0
    EXPECT_NEAR(est.f_star, std::log(2.0), 1e-12);
}

TEST(FStar, A1aStableUnderPerturbedRestarts) {
    const double L = smoothness_constant(a1a()).L;
    const auto base = estimate_f_star(a1a(), FStarOptions{.L = L});
    ASSERT_TRUE(base.converged);
    Rng rng(9);
    for (int k = 0; k < 3; ++k) {
        Vector x0(a1a().dim());
        for (auto& v : x0) v = 0.1 * rng.normal();
        FStarOptions opt;
        opt.L = L;
        opt.x0 = x0;
        const auto est = estimate_f_star(a1a(), opt);
        EXPECT_TRUE(est.converged);
        EXPECT_NEAR(est.f_star, base.f_star, 1e-8);
    }
    EXPECT_LT(base.f_star, a1a().value(Vector(a1a().dim(), 0.0)));
}

TEST(FStar, CompositeNeverBelowSmoothPart) {
    const double L = smoothness_constant(a1a()).L;
    const auto smooth = estimate_f_star(a1a(), FStarOptions{.L = L});
    const CompositeObjective<SmoothNcxLogistic> c(a1a(), Regularizer::l1(0.01), 1.0);
    const auto comp = estimate_f_star(c, FStarOptions{.L = L});
    EXPECT_TRUE(comp.converged);
    EXPECT_GE(comp.f_star, smooth.f_star);
    EXPECT_EQ(comp.method, "proximal-gradient-descent");
}

TEST(FStar, StepCapReportsNotConverged) {
    FStarOptions opt;
    opt.max_steps = 3;
    const auto est = estimate_f_star(a1a(), opt);
    EXPECT_FALSE(est.converged);
    EXPECT_EQ(est.steps, 3u);
}

TEST(EsConstants, QuadraticNeedsNoConstantTerm) {
    // One sample: the stochastic gradient is exact, so m = r everywhere.
    const SyntheticQuadratic q(2.0, 3);
    const auto probes = gaussian_probes(3, 50, 5);
    const OptimumEstimate fs;
    const auto est = estimate_es_constants(q, std::span<const Vector>(probes), fs, EsOptions{2.0, 1.0});
    EXPECT_EQ(est.es.B, 1.0);
    EXPECT_EQ(est.es.C, 0.0);
    EXPECT_LE(est.max_residual, 0.0);
    bool found = false;
    for (const auto& c : est.candidates)
        if (c.es.A == 0.0 && c.es.B == 1.0) {
            found = true;
            EXPECT_EQ(c.es.C, 0.0);
        }
    EXPECT_TRUE(found);
}

TEST(EsConstants, FeasibleOnEveryProbeByConstruction) {
    const double L = smoothness_constant(a1a()).L;
    const auto fs = estimate_f_star(a1a(), FStarOptions{.L = L});
    auto probes = gaussian_probes(a1a().dim(), 50, 11);
    const auto pilot = pilot_probes(a1a(), fs, theorem3_step(2000, L, L), 2000, 40, 12);
    probes.insert(probes.end(), pilot.begin(), pilot.end());
    const auto stats = probe_stats(a1a(), std::span<const Vector>(probes), fs);
    const double d0 = a1a().value(Vector(a1a().dim(), 0.0)) - fs.f_star;
    const auto est = estimate_es_constants(std::span<const ProbeStats>(stats), EsOptions{L, d0});
    EXPECT_LE(est.max_residual, 1e-15);
    EXPECT_EQ(est.candidates.size(), 12u);
    for (const auto& c : est.candidates) {
        EXPECT_LE(es_residual(stats, c.es), 1e-15);
        if (c.es.A > 0.0) EXPECT_GE(c.T_required, est.T_required);
    }
    EXPECT_GT(est.es.A, 0.0);

    const auto rr = estimate_rr_constants(std::span<const ProbeStats>(stats), RrOptions{L, a1a().n(), d0});
    EXPECT_LE(rr_residual(stats, rr.rr), 1e-15);
    EXPECT_GE(rr.rr.calB, 0.0);
}

TEST(EsConstants, EmptyProbeSetIsAnError) {
    EXPECT_THROW(estimate_es_constants(std::span<const ProbeStats>{}, EsOptions{}), Error);
    EXPECT_THROW(estimate_rr_constants(std::span<const ProbeStats>{}, RrOptions{}), Error);
}

TEST(EsConstants, A1aEstimateHoldsOnHoldoutProbes) {
    const auto cfg = config("schedule.gamma = theorem3\nT = 20000\n");
    const auto built = build_problem(cfg);
    const auto s = resolve_problem(std::get<SmoothNcxLogistic>(built.objective), cfg, built);
    EXPECT_TRUE(s.es_estimated);
    EXPECT_GT(s.es.A, 0.0);
    EXPECT_LE(s.es_holdout_residual, 1e-9);
    EXPECT_TRUE(s.es_certified());
    EXPECT_EQ(s.gamma, theorem3_step(20000, s.smooth.L, s.es.A));
}

TEST(EsConstants, UserConstantsBypassEstimation) {
    const auto cfg = config(
        "schedule.gamma = theorem3\nT = 100\nconstants.L = 2\nconstants.f_star = 0.5\n"
        "constants.A = 1\nconstants.B = 1\nconstants.C = 0.25\n");
    const auto built = build_problem(cfg);
    const auto s = resolve_problem(std::get<SmoothNcxLogistic>(built.objective), cfg, built);
    EXPECT_FALSE(s.es_estimated);
    EXPECT_EQ(s.smooth.method, SmoothnessMethod::user_supplied);
    EXPECT_EQ(s.f_star.f_star, 0.5);
    EXPECT_EQ(s.es.C, 0.25);
    EXPECT_DOUBLE_EQ(s.gamma, std::sqrt(std::log(3.0) / (101.0 * 2.0)));
    EXPECT_NEAR(s.delta0, std::log(2.0) - 0.5, 1e-13);
}
