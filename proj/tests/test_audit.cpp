#include <gtest/gtest.h>

#include <sstream>

#include "tailsgd/audit.hpp"
#include "tailsgd/experiment.hpp"

using namespace tailsgd;

namespace {

ExperimentConfig config(const std::string& text) {
    std::istringstream in(text);
    return parse_experiment_config(parse_key_values(in));
}

const SmoothNcxLogistic& a1a() {
    static const SmoothNcxLogistic f(load_a1a_or_surrogate().data, 0.5);
    return f;
}

RunConfig run_cfg(std::size_t T, double gamma, std::uint64_t seed, RunMode mode) {
    RunConfig rc;
    rc.T = T;
    rc.seed = seed;
    rc.schedule = Schedule{ScheduleKind::constant, gamma, 0.0};
    rc.mode = mode;
    return rc;
}

}  // namespace

TEST(Audit, QuadraticHoldsWithEquality) {
    // n = 1, so the stochastic gradient is exact and (A, B, C) = (0, 1, 0).
    RunOptions opt;
    opt.x0 = Vector{1.0, -2.0, 0.5, 3.0, -0.1};
    const SyntheticQuadratic q(2.0, 5);
    for (double gamma : {0.1, 0.4, 0.9}) {
        const auto tr = run_sgd(q, run_cfg(200, gamma, 1, RunMode::iid_sgd), OptimumEstimate{}, opt);
        const auto rep = audit_descent(tr, 2.0, {0, 1, 0});
        EXPECT_EQ(rep.violations.size(), 0u) << gamma;
        EXPECT_EQ(rep.steps, 200u);
        // equality up to rounding: the slack is the tolerance itself
        EXPECT_LE(rep.max_violation, 0.0);
        EXPECT_GT(rep.max_violation, -1e-10);
    }
}

TEST(Audit, FullGradientDescentOnA1aHasNoViolations) {
    const double L = smoothness_constant(a1a()).L;
    const auto fs = estimate_f_star(a1a(), FStarOptions{.L = L});
    const auto tr = run_full_gd(a1a(), run_cfg(1000, 1.0 / L, 1, RunMode::full_gd), fs);
    const auto rep = audit_descent(tr, L, {0, 1, 0});
    EXPECT_EQ(rep.violations.size(), 0u);
    EXPECT_EQ(rep.steps, 1000u);
    EXPECT_EQ(rep.summary(), "0 violations / 1000 steps");
}

TEST(Audit, NegatedGradientNormsAreFlaggedEverywhere) {
    const double L = smoothness_constant(a1a()).L;
    auto tr = run_full_gd(a1a(), run_cfg(100, 1.0 / L, 1, RunMode::full_gd), OptimumEstimate{});
    for (auto& p : tr.points) p.r_hat = -p.r_hat;
    const auto rep = audit_descent(tr, L, {0, 1, 0});
    EXPECT_EQ(rep.violations.size(), 100u);
}

TEST(Audit, UnderstatedSmoothnessViolates) {
    RunOptions opt;
    opt.x0 = Vector{1.0};
    const auto tr = run_sgd(SyntheticQuadratic(1.0, 1), run_cfg(5, 0.5, 1, RunMode::iid_sgd), OptimumEstimate{}, opt);
    EXPECT_EQ(audit_descent(tr, 1.0, {0, 1, 0}).violations.size(), 0u);
    // An understated L inflates the certified decrease beyond the real one.
    EXPECT_EQ(audit_descent(tr, 0.1, {0, 1, 0}).violations.size(), 5u);
}

TEST(Audit, RejectsStridedTraces) {
    auto rc = run_cfg(20, 0.1, 1, RunMode::iid_sgd);
    rc.log_stride = 5;
    const auto tr = run_sgd(SyntheticQuadratic(1.0, 2), rc, OptimumEstimate{});
    EXPECT_THROW(audit_descent(tr, 1.0, {0, 1, 0}), Error);
}

TEST(Audit, EnsembleNeedsTwoSeedsAndAlignedTraces) {
    const auto a = run_sgd(SyntheticQuadratic(1.0, 2), run_cfg(10, 0.1, 1, RunMode::iid_sgd), OptimumEstimate{});
    const auto b = run_sgd(SyntheticQuadratic(1.0, 2), run_cfg(12, 0.1, 2, RunMode::iid_sgd), OptimumEstimate{});
    EXPECT_THROW(audit_descent(std::span<const Trace>(&a, 1), 1.0, {0, 1, 0}, AuditMode::ensemble), Error);
    const Trace pair[] = {a, b};
    EXPECT_THROW(audit_descent(pair, 1.0, {0, 1, 0}, AuditMode::ensemble), Error);
}

TEST(Audit, SgdEnsembleWithEstimatedConstants) {
    const auto cfg = config("schedule.gamma = theorem3\nT = 2000\nseeds = 1-10\nestimate.pilot_T = 2000\n");
    const auto r = run_experiment(cfg);
    ASSERT_TRUE(r.summary.es_estimated);
    const auto rep = audit_descent(r.traces, r.summary.smooth.L, r.summary.es, AuditMode::ensemble);
    EXPECT_EQ(rep.steps, 2000u);
    EXPECT_LE(rep.violation_fraction(), 0.01) << rep.summary();
}

TEST(Audit, ReshufflingEpochs) {
    const auto cfg = config(
        "mode = rr_sgd\nschedule.gamma = theorem8\nT = 20\nseeds = 1-5\nlog_stride = 1605\nestimate.pilot_T = 2000\n");
    const auto r = run_experiment(cfg);
    ASSERT_TRUE(r.summary.rr);
    const auto rep = audit_rr_epochs(r.traces, r.summary.smooth.L, *r.summary.rr, AuditMode::ensemble);
    EXPECT_EQ(rep.steps, 20u);
    EXPECT_LE(rep.violations.size(), 1u) << rep.summary();

    // every epoch boundary must be logged
    auto gappy = r.traces[0];
    std::erase_if(gappy.points, [&](const TracePoint& p) { return p.t == 3 * gappy.steps_per_epoch; });
    EXPECT_THROW(audit_rr_epochs(std::span<const Trace>(&gappy, 1), 1.0, {1, 1}, AuditMode::deterministic), Error);
}
