#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "tailsgd/metrics.hpp"
#include "tailsgd/rng.hpp"

using namespace tailsgd;

namespace {

/// Random logged trace: t = 0, stride, 2 stride, ..., with the horizon always
/// logged; r values straddle eps so both outcomes occur.
Series random_series(Rng& rng) {
    Series s;
    const std::size_t T = 1 + rng.uniform_index(3000);
    const std::size_t stride = 1 + rng.uniform_index(7);
    for (std::size_t t = 0; t <= T; t += stride) s.t.push_back(t);
    if (s.t.back() != T) s.t.push_back(T);
    for (std::size_t k = 0; k < s.t.size(); ++k) s.r.push_back(std::exp(-6.0 * rng.uniform01()));
    return s;
}

Trace trace_of(const std::vector<double>& r) {
    Trace tr;
    for (std::size_t t = 0; t < r.size(); ++t) tr.points.push_back(TracePoint{t, r[t], 0.0, 0.1, 0.0, {}});
    return tr;
}

}  // namespace

TEST(Density, MatchesBruteForceOnRandomTraces) {
    Rng rng(606);
    const double etas[] = {0.2, 0.1, 0.3, 0.5, 1.0, 0.7, 0.05};
    for (int k = 0; k < 1000; ++k) {
        const Series s = random_series(rng);
        const double eta = etas[rng.uniform_index(7)];
        const double eps = std::exp(-6.0 * rng.uniform01());
        std::size_t window = 0;
        const std::size_t count = oracle::count_tail(s.t, s.r, eps, eta, window);
        if (window == 0) {
            EXPECT_THROW(tail_density(s, eps, eta), Error);
            continue;
        }
        const auto d = tail_density(s, eps, eta);
        ASSERT_EQ(d.window_size, window) << "T=" << s.horizon() << " eta=" << eta;
        ASSERT_EQ(d.count, count);
        ASSERT_EQ(d.density, static_cast<double>(count) / window);

        // tail min by scanning
        double best = INFINITY;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < s.t.size(); ++j)
            if (s.t[j] >= d.window_start && s.r[j] < best) best = s.r[j], arg = s.t[j];
        const auto m = tail_min(s, eta);
        ASSERT_EQ(m.value, best);
        ASSERT_EQ(m.t_argmin, arg);

        // stationary set by scanning
        std::vector<std::size_t> want;
        for (std::size_t j = 0; j < s.t.size(); ++j)
            if (s.r[j] <= eps) want.push_back(s.t[j]);
        ASSERT_EQ(stationary_set(s, eps).indices, want);
    }
}

TEST(Density, CurveMatchesRecountOnPrefixes) {
    Rng rng(607);
    for (int k = 0; k < 50; ++k) {
        const Series s = random_series(rng);
        if (s.horizon() < 20) continue;
        const std::size_t h[] = {s.horizon() / 4, s.horizon() / 2, s.horizon()};
        const auto curve = density_curve(s, 0.1, 0.2, h);
        ASSERT_EQ(curve.size(), 3u);
        for (int j = 0; j < 3; ++j) {
            const Series p = prefix(s, h[j]);
            std::size_t window = 0;
            const std::size_t c = oracle::count_tail(p.t, p.r, 0.1, 0.2, window);
            EXPECT_EQ(curve[j].count, c);
            EXPECT_EQ(curve[j].window_size, window);
            EXPECT_EQ(curve[j].T, p.horizon());
        }
    }
    Series s{{0, 1, 2}, {1, 1, 1}};
    const std::size_t too_far[] = {5};
    EXPECT_THROW(density_curve(s, 0.1, 0.2, too_far), Error);
}

TEST(Density, WholeTraceWhenEtaIsOne) {
    const auto d = tail_density(trace_of({0.5, 2.0, 0.01, 0.3}), 0.4, 1.0);
    EXPECT_EQ(d.window_start, 0u);
    EXPECT_EQ(d.window_size, 4u);
    EXPECT_EQ(d.count, 2u);
    EXPECT_EQ(d.density, 0.5);
}

TEST(Density, WindowStartIsExactForDecimalEta) {
    // 0.8 * 10 rounds to 8.000000000000002 in binary; t = 8 must stay inside.
    EXPECT_EQ(window_start(0.2, 10), 8u);
    EXPECT_EQ(window_start(0.2, 20000), 16000u);
    EXPECT_EQ(window_start(0.3, 10), 7u);
    EXPECT_EQ(window_start(0.25, 9), 7u);
    EXPECT_THROW(window_start(0.0, 10), Error);
    EXPECT_THROW(window_start(1.5, 10), Error);
}

TEST(Density, RejectsNonPositiveEpsilon) {
    EXPECT_THROW(tail_density(trace_of({1.0, 1.0}), 0.0, 0.5), Error);
    EXPECT_THROW(stationary_set(trace_of({1.0}), -1.0), Error);
}

TEST(Density, ReportsLoggingStride) {
    Series s;
    for (std::size_t t = 0; t <= 100; t += 10) {
        s.t.push_back(t);
        s.r.push_back(0.0);
    }
    EXPECT_EQ(tail_density(s, 1.0, 0.5).stride, 10u);
    EXPECT_EQ(tail_density(trace_of({1, 1, 1}), 1.0, 1.0).stride, 1u);
}

TEST(TailMin, MonotoneDecreasingTraceAttainsMinAtHorizon) {
    std::vector<double> r;
    for (int t = 0; t <= 500; ++t) r.push_back(1.0 / (1.0 + t));
    const auto m = tail_min(trace_of(r), 0.2);
    EXPECT_EQ(m.t_argmin, 500u);
    EXPECT_EQ(m.value, r.back());
}

TEST(TailMin, TiesPickTheEarliest) {
    const auto m = tail_min(trace_of({5, 1, 0.5, 0.5, 2}), 1.0);
    EXPECT_EQ(m.t_argmin, 2u);
}

TEST(Ensemble, MeanAndPopulationSd) {
    auto a = trace_of({0.0, 1.0});
    auto b = trace_of({2.0, 1.0});
    b.points[0].loss = 4.0;
    const Trace both[] = {a, b};
    const auto e = ensemble_mean(both);
    ASSERT_EQ(e.points.size(), 2u);
    EXPECT_EQ(e.seeds, 2u);
    EXPECT_EQ(e.points[0].r_hat_mean, 1.0);
    EXPECT_EQ(e.points[0].r_hat_sd, 1.0);
    EXPECT_EQ(e.points[1].r_hat_sd, 0.0);
    EXPECT_EQ(e.points[0].loss_mean, 2.0);
    EXPECT_EQ(e.points[0].loss_sd, 2.0);
    EXPECT_EQ(e.points[1].gamma_t, 0.1);
}

TEST(Ensemble, MatchesBruteForce) {
    Rng rng(608);
    std::vector<Trace> runs;
    for (int s = 0; s < 7; ++s) {
        std::vector<double> r(200);
        for (auto& v : r) v = rng.uniform01();
        runs.push_back(trace_of(r));
    }
    const auto e = ensemble_mean(runs);
    for (std::size_t k = 0; k < 200; ++k) {
        oracle::mp m = 0, v = 0;
        for (const auto& tr : runs) m += tr.points[k].r_hat;
        m /= 7;
        for (const auto& tr : runs) v += (tr.points[k].r_hat - m) * (tr.points[k].r_hat - m);
        EXPECT_LT(oracle::rel_err(e.points[k].r_hat_mean, m), 1e-14);
        EXPECT_LT(oracle::rel_err(e.points[k].r_hat_sd, sqrt(v / 7)), 1e-12);
    }
}

TEST(Ensemble, RejectsMisalignedTraces) {
    const Trace a = trace_of({1, 2, 3});
    Trace b = trace_of({1, 2, 3});
    b.points[2].t = 5;
    const Trace pair[] = {a, b};
    EXPECT_THROW(ensemble_mean(pair), Error);
    const Trace shorter[] = {a, trace_of({1, 2})};
    EXPECT_THROW(ensemble_mean(shorter), Error);
    EXPECT_THROW(ensemble_mean(std::span<const Trace>{}), Error);
}
