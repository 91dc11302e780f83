// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "tailsgd/tailsgd.hpp"

using namespace tailsgd;
using oracle::mp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

const SmoothNcxLogistic& a1a() {
    static const SmoothNcxLogistic f(load_a1a_or_surrogate().data, 0.5);
    return f;
}

double a1a_L() {
    static const double L = smoothness_constant(a1a()).L;
    return L;
}

ExperimentConfig config(const std::string& text) {
    std::istringstream in(text);
    return parse_experiment_config(parse_key_values(in));
}

double log_uniform(Rng& rng, double lo, double hi) {
    return std::exp(std::log(lo) + rng.uniform01() * (std::log(hi) - std::log(lo)));
}

RunConfig constant_run(std::size_t T, double gamma, std::uint64_t seed, RunMode mode) {
    RunConfig rc;
    rc.T = T;
    rc.seed = seed;
    rc.schedule = Schedule{ScheduleKind::constant, gamma, 0.0};
    rc.mode = mode;
    return rc;
}

// --- 1 ---------------------------------------------------------------------

template <SmoothObjective Obj>
double worst_fd_error(const Obj& f, Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        Vector x(f.dim());
        for (auto& v : x) v = rng.normal();
        const Vector g = full_gradient(f, x);
        double num = 0.0, den = 0.0;
        const double h = 1e-6;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double keep = x[j];
            x[j] = keep + h;
            const double up = f.value(x);
            x[j] = keep - h;
            const double down = f.value(x);
            x[j] = keep;
            const double fd = (up - down) / (2.0 * h);
            num += (g[j] - fd) * (g[j] - fd);
            den += fd * fd;
        }
        worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-12));
    }
    return worst;
}

Outcome finite_differences() {
    Rng rng(1001);
    const double e1 = worst_fd_error(a1a(), rng);
    const double e2 = worst_fd_error(SyntheticQuadratic(2.5, 20), rng);
    const double worst = std::max(e1, e2);
    return {worst <= 1e-5, "max rel err logistic " + fmt("%.2e", e1) + ", quadratic " + fmt("%.2e", e2) +
                               " (tol 1e-5)"};
}

// --- 2 ---------------------------------------------------------------------

Outcome gd_audit() {
    const auto fs = estimate_f_star(a1a(), FStarOptions{.L = a1a_L()});
    const auto tr = run_full_gd(a1a(), constant_run(1000, 1.0 / a1a_L(), 1, RunMode::full_gd), fs);
    const auto rep = audit_descent(tr, a1a_L(), {0, 1, 0});
    return {rep.violations.empty() && rep.steps == 1000, rep.summary()};
}

// --- 3 ---------------------------------------------------------------------

Outcome calculators() {
    Rng rng(3003);
    std::map<std::string, double> worst;
    const auto check = [&](const std::string& name, double got, const mp& want) {
        worst[name] = std::max(worst[name], oracle::rel_err(got, want));
    };
    const auto es = [&](double b_hi) {
        return ESConstants{log_uniform(rng, 0.05, 20), rng.uniform01() * b_hi, log_uniform(rng, 1e-4, 10)};
    };
    const auto inputs = [](double d0, double L, ESConstants e, std::size_t T, double eta, double gamma,
                           std::optional<double> alpha = std::nullopt) {
        BoundInputs in;
        in.delta0 = d0;
        in.L = L;
        in.es = e;
        in.T = T;
        in.eta = eta;
        in.gamma = gamma;
        in.alpha = alpha;
        return in;
    };
    const auto T_draw = [&](double lo, double hi) { return static_cast<std::size_t>(log_uniform(rng, lo, hi)); };

    for (int k = 0; k < 100; ++k) {
        const auto e = es(2);
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        std::vector<double> g(1 + rng.uniform_index(2000));
        const double cap = std::sqrt(5.0 / (L * e.A * g.size()));
        for (auto& v : g) v = cap * log_uniform(rng, 1e-3, 1);
        check("theorem1", bound_theorem1(inputs(d0, L, e, g.size(), 1, g[0]), g).value,
              oracle::theorem1(d0, L, e.A, e.C, g));
        const std::size_t kk = 1 + rng.uniform_index(g.size());
        const double head = 0.01 * rng.uniform01() * L * e.A * g[0] * d0, dT = 0.01 * rng.uniform01() * d0;
        const auto tail = bound_theorem2_tail(inputs(d0, L, e, g.size(), 1, g[0]), g, kk, head, dT);
        const auto want = oracle::theorem2(d0, L, e.A, e.C, g, kk, head, dT);
        check("theorem2.coarse", tail.coarse, want.coarse);
        check("theorem2.refined", tail.refined, want.refined);
    }
    for (int k = 0; k < 100; ++k) {
        const auto e = es(2);
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        const std::size_t T = T_draw(1, 1e9);
        check("corollary1", bound_corollary1(inputs(d0, L, e, T, 1, 0.1)).value, oracle::corollary1(d0, L, e.A, e.C, T));
        const double alpha = 0.55 + 0.4 * rng.uniform01(), gamma = log_uniform(rng, 1e-3, 0.2);
        check("corollary2", bound_corollary2(inputs(d0, L, e, T, 1, gamma, alpha)).value,
              oracle::corollary2(d0, L, e.A, e.C, T, gamma, alpha));
    }
    for (int k = 0; k < 100; ++k) {
        const auto e = es(2);
        const double d0 = log_uniform(rng, 1e-4, 10), gamma = log_uniform(rng, 1e-4, 1);
        const std::size_t T = T_draw(100, 1e9);
        const double eta = 0.05 + 0.95 * rng.uniform01();
        check("tailmin", tail_min_bound_constant(inputs(d0, 1.0, e, T, eta, gamma)).value,
              oracle::tail_min(d0, e.A, e.C, T, eta, gamma));
    }
    for (int k = 0; k < 100; ++k) {
        const auto e = es(20);
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        const double eps = log_uniform(rng, 1e-4, 10), eta = 0.01 + 0.99 * rng.uniform01();
        check("theorem3", threshold_theorem3(eps, eta, L, e, d0).T_real,
              oracle::max_of(oracle::theorem3_terms(eps, eta, L, e.A, e.B, e.C, d0)));
    }
    for (int k = 0; k < 100;) {
        const auto e = es(0.5);
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        const std::size_t T = T_draw(10, 1e7);
        const double g0 = std::sqrt((0.05 + 0.85 * rng.uniform01()) / (L * e.A * std::log(T + 1.0)));
        const double eta = 0.05 + 0.95 * rng.uniform01();
        const mp d = oracle::theorem4(d0, L, e.A, e.B, e.C, T, eta, g0, true);
        const mp s = oracle::theorem4(d0, L, e.A, e.B, e.C, T, eta, g0, false);
        if (d <= 0 || s <= 0) continue;
        ++k;
        const auto in = inputs(d0, L, e, T, eta, g0);
        check("theorem4.derivation", bound_theorem4_decreasing(in, Theorem4Variant::derivation).value, d);
        check("theorem4.stated", bound_theorem4_decreasing(in, Theorem4Variant::theorem_stated).value, s);
    }
    for (int k = 0; k < 100;) {
        const auto e = es(2);
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        const std::size_t T = T_draw(100, 1e9);
        const double gamma = std::sqrt(std::log(3.0) / ((T + 1.0) * L * e.A)) * (0.1 + 0.9 * rng.uniform01());
        const double eta = 0.05 + 0.95 * rng.uniform01(), eps = log_uniform(rng, 1e-4, 10);
        const mp want = oracle::theorem5(d0, L, e.A, e.C, T, eta, gamma, eps);
        if (abs(want) < 1e-2) continue;
        ++k;
        check("theorem5", density_lower_bound_constant(inputs(d0, L, e, T, eta, gamma), eps).value, want);
    }
    for (int k = 0; k < 100;) {
        const auto e = es(2);
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        const std::size_t T = T_draw(100, 1e9);
        const double g0 = log_uniform(rng, 1e-3, 1), eta = 0.05 + 0.95 * rng.uniform01();
        const auto want = oracle::theorem6(d0, L, e.A, e.B, e.C, T, eta, g0);
        if (abs(want.value) < 1e-2) continue;
        ++k;
        const auto got = density_lower_bound_decreasing(inputs(d0, L, e, T, eta, g0), 1.0);
        check("theorem6", got.value, want.value);
        check("theorem6.D", got.D, want.D);
    }
    for (int k = 0; k < 100; ++k) {
        const auto e = es(2);
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        const double alpha = 0.55 + 0.35 * rng.uniform01(), gamma = log_uniform(rng, 1e-3, 0.1);
        const double eps = log_uniform(rng, 1e-2, 10);
        check("corollary3", bound_corollary3_power(eps, gamma, alpha, L, e, d0).k_real,
              oracle::corollary3(eps, gamma, alpha, L, e.A, e.C, d0));
    }
    for (int k = 0; k < 100; ++k) {
        const double L = log_uniform(rng, 0.1, 10), d0 = log_uniform(rng, 1e-4, 10);
        const double calA = log_uniform(rng, 0.05, 20), calB = log_uniform(rng, 1e-4, 10);
        const std::size_t n = 1 + rng.uniform_index(5000);
        const double eps = log_uniform(rng, 1e-4, 10), eta = 0.01 + 0.99 * rng.uniform01();
        check("theorem8", rr_threshold_theorem8(eps, eta, L, n, {calA, calB}, d0).T_real,
              oracle::max_of(oracle::theorem8_terms(eps, eta, L, n, calA, calB, d0)));
    }
    double max_err = 0.0;
    std::string worst_name;
    for (const auto& [name, err] : worst)
        if (err >= max_err) max_err = err, worst_name = name;
    return {max_err <= 1e-12, std::to_string(worst.size()) + " calculators x 100 inputs, max rel err " +
                                  fmt("%.2e", max_err) + " (" + worst_name + ", tol 1e-12)"};
}

// --- 4, 5, 6 ---------------------------------------------------------------

struct SmoothRun {
    ExperimentResult result;
    std::vector<DensityReport> curve;
    double window_fraction = 0.0;
};

const SmoothRun& smooth_run() {
    static const SmoothRun run = [] {
        SmoothRun r;
        r.result = run_experiment(config("schedule.gamma = theorem3\nT = 20000\nseeds = 1-10\n"));
        const Series s = series_of(r.result.ensemble);
        const std::size_t start = window_start(0.2, s.horizon());
        std::size_t in = 0, below = 0;
        for (std::size_t k = 0; k < s.t.size(); ++k) {
            if (s.t[k] < start) continue;
            ++in;
            below += s.r[k] <= 0.1;
        }
        r.window_fraction = static_cast<double>(below) / in;
        const std::size_t horizons[] = {2000, 5000, 10000, 20000};
        r.curve = density_curve(s, 1e-2, 0.2, horizons);
        return r;
    }();
    return run;
}

Outcome ensemble_window() {
    const auto& r = smooth_run();
    const auto& s = r.result.summary;
    return {r.window_fraction >= 0.9,
            fmt("%.4f", r.window_fraction) + " of the final 20% has mean r_hat <= 0.1 (need >= 0.9); gamma=" +
                fmt("%.6g", s.gamma) + " A=" + fmt("%.6g", s.es.A) + " B=" + fmt("%.6g", s.es.B) + " C=" +
                fmt("%.6g", s.es.C) + " holdout residual " + fmt("%.3g", s.es_holdout_residual)};
}

Outcome density_growth() {
    const auto& c = smooth_run().curve;
    std::size_t drops = 0;
    std::string values;
    for (std::size_t k = 0; k < c.size(); ++k) {
        if (k > 0 && c[k].density < c[k - 1].density) ++drops;
        values += (k ? ", " : "") + fmt("%.4f", c[k].density);
    }
    return {drops <= 1 && c.back().density >= 0.9,
            "densities at T' = 2e3, 5e3, 1e4, 2e4: " + values + " (" + std::to_string(drops) + " decreases)"};
}

Outcome density_bound() {
    const auto& r = smooth_run();
    const auto& s = r.result.summary;
    const double empirical = r.curve.back().density;
    const auto bound = theory_density_bound(s, ScheduleKind::constant, RunMode::iid_sgd, 20000, 0.2, 1e-2);
    if (!bound) return {false, "no bound computed"};
    return {*bound <= empirical + 0.02,
            "bound " + fmt("%.4f", *bound) + " vs empirical " + fmt("%.4f", empirical) +
                (*bound < 0 ? " (bound is vacuous for these constants)" : "")};
}

// --- 7 ---------------------------------------------------------------------

Outcome reshuffling() {
    const std::size_t n = a1a().n();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    std::vector<std::vector<std::size_t>> visits(100);
    RunOptions opt;
    opt.on_batch = [&](std::size_t step, std::span<const std::size_t> idx) {
        for (auto i : idx) visits[step / n].push_back(i);
    };
    auto rc = constant_run(100, 1e-3, 7, RunMode::rr_sgd);
    rc.log_stride = n;
    run_rr_sgd(a1a(), rc, OptimumEstimate{}, opt);
    std::size_t bad_epochs = 0;
    for (auto& v : visits) {
        std::sort(v.begin(), v.end());
        bad_epochs += v != all;
    }
    Rng rng(77);
    std::map<std::vector<std::size_t>, std::size_t> freq;
    for (std::size_t k = 0; k < 60000; ++k) ++freq[next_permutation(3, rng, k).perm];
    double dev = 0.0;
    for (const auto& [p, c] : freq) dev = std::max(dev, std::abs(c / 60000.0 - 1.0 / 6.0));
    return {bad_epochs == 0 && freq.size() == 6 && dev <= 0.01,
            std::to_string(100 - bad_epochs) + "/100 epochs cover [n]; n=3 permutation max |freq - 1/6| = " +
                fmt("%.4f", dev)};
}

// --- 8 ---------------------------------------------------------------------

Outcome metrics_brute_force() {
    Rng rng(8008);
    const double etas[] = {0.2, 0.1, 0.3, 0.5, 1.0, 0.05};
    std::size_t mismatches = 0;
    for (int k = 0; k < 1000; ++k) {
        Series s;
        const std::size_t T = 1 + rng.uniform_index(3000), stride = 1 + rng.uniform_index(7);
        for (std::size_t t = 0; t <= T; t += stride) s.t.push_back(t);
        if (s.t.back() != T) s.t.push_back(T);
        for (std::size_t j = 0; j < s.t.size(); ++j) s.r.push_back(std::exp(-6.0 * rng.uniform01()));
        const double eta = etas[rng.uniform_index(6)], eps = std::exp(-6.0 * rng.uniform01());
        std::size_t window = 0;
        const std::size_t count = oracle::count_tail(s.t, s.r, eps, eta, window);
        if (window == 0) continue;
        const auto d = tail_density(s, eps, eta);
        double best = INFINITY;
        for (std::size_t j = 0; j < s.t.size(); ++j)
            if (s.t[j] >= d.window_start) best = std::min(best, s.r[j]);
        if (d.count != count || d.window_size != window || tail_min(s, eta).value != best) ++mismatches;
    }
    return {mismatches == 0, std::to_string(mismatches) + " mismatches on 1000 random traces"};
}

// --- 9 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome reproducible() {
    const fs::path dir = fs::temp_directory_path() / "tailsgd_acceptance_rerun";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream cfg(dir / "run.cfg");
        cfg << "schedule.gamma = theorem3\nT = 2000\nseeds = 1-3\nestimate.pilot_T = 2000\nthreads = 3\n";
    }
    std::ostringstream log;
    const int a = cmd_run((dir / "run.cfg").string(), (dir / "a").string(), log);
    const int b = cmd_run((dir / "run.cfg").string(), (dir / "b").string(), log);
    std::size_t same = 0, files = 0;
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        const auto name = entry.path().filename();
        if (name.extension() != ".csv") continue;
        ++files;
        same += slurp(entry.path()) == slurp(dir / "b" / name);
    }
    fs::remove_all(dir);
    return {a == 0 && b == 0 && files >= 3 && same == files,
            std::to_string(same) + "/" + std::to_string(files) + " CSV files byte-identical across reruns"};
}

// --- 10 --------------------------------------------------------------------

Outcome prox_reduction() {
    const CompositeObjective<SmoothNcxLogistic> c(a1a(), Regularizer::zero(), 1.0);
    auto rc = constant_run(1000, 0.05, 10, RunMode::iid_sgd);
    const auto sgd = run_sgd(a1a(), rc, OptimumEstimate{});
    rc.mode = RunMode::prox_sgd;
    const auto prox_run = run_prox_sgd(c, rc, OptimumEstimate{});
    const bool identical = sgd.points == prox_run.points && sgd.final_iterate == prox_run.final_iterate;

    Rng rng(1010);
    std::size_t wrong = 0;
    for (int k = 0; k < 10000; ++k) {
        const double v = 4.0 * rng.normal(), tau = 2.0 * rng.uniform01(), step = 0.01 + rng.uniform01();
        const double t = step * tau;
        const double want = v > t ? v - t : (v < -t ? v + t : 0.0);
        wrong += prox(Regularizer::l1(tau), step, Vector{v})[0] != want;
    }
    return {identical && wrong == 0, std::string(identical ? "h=0 trace bit-identical to SGD" : "h=0 trace differs") +
                                         "; " + std::to_string(wrong) + "/10000 soft-threshold mismatches"};
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    std::printf("dataset: %s (n=%zu, d=%zu)%s\n", a1a().data().provenance().c_str(), a1a().n(), a1a().dim(),
                load_a1a_or_surrogate().is_real_a1a ? "" : " [real a1a not found; deterministic surrogate]");
    const std::vector<std::pair<int, std::function<Outcome()>>> checks{
        {1, finite_differences}, {2, gd_audit},    {3, calculators},         {4, ensemble_window},
        {5, density_growth},     {6, density_bound}, {7, reshuffling},       {8, metrics_brute_force},
        {9, reproducible},       {10, prox_reduction}};
    int failed = 0;
    for (const auto& [id, fn] : checks) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %2d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d of %zu criteria passed in %.1f s\n", static_cast<int>(checks.size()) - failed, checks.size(), secs);
    return failed == 0 ? 0 : 1;
}
