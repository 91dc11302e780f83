#pragma once

// Config-driven experiments: build the problem, resolve (L, F*, A, B, C) by
// override or estimation, run seeded ensembles, and emit traces, ensemble and
// density tables, SVG figures and a manifest that reruns the experiment.
// Also the front ends behind the `bounds`, `audit` and `estimate` commands.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "tailsgd/audit.hpp"
#include "tailsgd/bounds.hpp"
#include "tailsgd/config.hpp"
#include "tailsgd/core.hpp"
#include "tailsgd/data.hpp"
#include "tailsgd/estimation.hpp"
#include "tailsgd/losses.hpp"
#include "tailsgd/metrics.hpp"
#include "tailsgd/optimizers.hpp"
#include "tailsgd/surrogate.hpp"
#include "tailsgd/svg.hpp"
#include "tailsgd/trace_io.hpp"

namespace tailsgd {

using SmoothVariant = std::variant<SyntheticQuadratic, SmoothNcxLogistic>;

struct BuiltProblem {
    SmoothVariant objective;
    std::string provenance;
    bool real_a1a = false;
};

inline BuiltProblem build_problem(const ExperimentConfig& cfg) {
    if (cfg.loss == "quadratic" || cfg.dataset == "synthetic:quadratic") {
        if (cfg.loss != "quadratic") throw Error("dataset synthetic:quadratic needs loss = quadratic");
        return {SyntheticQuadratic(cfg.curvature, cfg.dim), "synthetic:quadratic", false};
    }
    if (cfg.dataset == "synthetic:a1a") {
        auto loaded = load_a1a_or_surrogate();
        const std::string prov = loaded.data.provenance();
        return {SmoothNcxLogistic(std::move(loaded.data), cfg.lambda), prov, loaded.is_real_a1a};
    }
    Dataset data = fold_labels(parse_libsvm_file(cfg.dataset, cfg.dim_override), "libsvm:" + cfg.dataset);
    return {SmoothNcxLogistic(std::move(data), cfg.lambda), "libsvm:" + cfg.dataset, false};
}

inline Regularizer build_regularizer(const ExperimentConfig& cfg) {
    return cfg.regularizer == "l1" ? Regularizer::l1(cfg.tau) : Regularizer::zero();
}

/// Everything the runs and the theory need, with where each value came from.
struct ProblemSummary {
    std::string provenance;
    bool real_a1a = false;
    std::size_t n = 0;
    std::size_t dim = 0;
    SmoothnessInfo smooth;
    OptimumEstimate f_star;         // for the objective being run (f + h in prox mode)
    OptimumEstimate smooth_f_star;  // for the smooth part; what the ES inequality uses
    double delta0 = 0.0;
    ESConstants es;
    bool es_estimated = false;
    double es_T_required = 0.0;
    double es_holdout_residual = 0.0;
    std::optional<RRVarianceConstants> rr;
    bool rr_estimated = false;
    double rr_holdout_residual = 0.0;
    std::size_t steps_per_epoch = 1;
    double gamma = 0.0;
    ScheduleValidity validity;

    bool es_certified() const { return !es_estimated || es_holdout_residual <= 1e-9; }
};

namespace detail {

template <SmoothObjective Obj>
std::vector<Vector> probe_set(const Obj& obj, const OptimumEstimate& f_star, double L, const ExperimentConfig& cfg,
                              std::uint64_t seed) {
    std::vector<Vector> probes;
    const std::size_t stride = std::max<std::size_t>(1, cfg.pilot_T / 100);
    std::uint64_t k = 0;
    for (double A : {0.5 * L, L, 2.0 * L}) {
        auto p = pilot_probes(obj, f_star, theorem3_step(cfg.pilot_T, L, A), cfg.pilot_T, stride, seed + (++k));
        probes.insert(probes.end(), p.begin(), p.end());
    }
    auto g = gaussian_probes(obj.dim(), cfg.gaussian_probes, seed + 7);
    probes.insert(probes.end(), g.begin(), g.end());
    return probes;
}

}  // namespace detail

template <SmoothObjective Obj>
ProblemSummary resolve_problem(const Obj& obj, const ExperimentConfig& cfg, const BuiltProblem& built) {
    ProblemSummary s;
    s.provenance = built.provenance;
    s.real_a1a = built.real_a1a;
    s.n = obj.n();
    s.dim = obj.dim();
    if (cfg.batch_size > s.n) throw Error("batch_size exceeds the number of samples");
    s.steps_per_epoch = (s.n + cfg.batch_size - 1) / cfg.batch_size;

    s.smooth = cfg.constants.L ? SmoothnessInfo{*cfg.constants.L, SmoothnessMethod::user_supplied, 0}
                               : smoothness_constant(obj);
    const double L = s.smooth.L;
    const Regularizer h = build_regularizer(cfg);

    FStarOptions fo;
    fo.L = L;
    if (cfg.constants.f_star) {
        s.f_star.f_star = *cfg.constants.f_star;
        s.f_star.method = "user-supplied";
        s.smooth_f_star = s.f_star;
    } else {
        s.smooth_f_star = estimate_f_star(obj, fo);
        s.f_star = h.kind == RegularizerKind::zero ? s.smooth_f_star
                                                   : estimate_f_star(CompositeObjective<Obj>(obj, h, 1.0), fo);
    }
    const Vector start(obj.dim(), cfg.x0);
    s.delta0 = obj.value(start) + h.value(start) - s.f_star.f_star;

    const bool need_rr = cfg.mode == RunMode::rr_sgd;
    std::vector<Vector> probes, holdout;
    if (!cfg.constants.es || (need_rr && !cfg.constants.rr)) {
        probes = detail::probe_set(obj, s.smooth_f_star, L, cfg, cfg.estimate_seed);
        if (!s.smooth_f_star.argmin.empty()) probes.push_back(s.smooth_f_star.argmin);
        holdout = detail::probe_set(obj, s.smooth_f_star, L, cfg, cfg.estimate_seed + 1000);
    }
    const auto hold_stats = probe_stats(obj, std::span<const Vector>(holdout), s.smooth_f_star);
    const double smooth_delta0 = obj.value(start) - s.smooth_f_star.f_star;
    if (cfg.constants.es) {
        s.es = *cfg.constants.es;
        s.es.validate();
    } else {
        const auto est = estimate_es_constants(obj, std::span<const Vector>(probes), s.smooth_f_star,
                                               EsOptions{L, smooth_delta0});
        s.es = est.es;
        s.es_estimated = true;
        s.es_T_required = est.T_required;
        s.es_holdout_residual = es_residual(hold_stats, s.es);
    }
    if (need_rr) {
        if (cfg.constants.rr) {
            s.rr = *cfg.constants.rr;
        } else {
            const auto est = estimate_rr_constants(obj, std::span<const Vector>(probes), s.smooth_f_star,
                                                   RrOptions{L, s.steps_per_epoch, smooth_delta0});
            s.rr = est.rr;
            s.rr_estimated = true;
            s.rr_holdout_residual = rr_residual(hold_stats, *s.rr);
        }
    }

    switch (cfg.recipe) {
        case StepRecipe::fixed: s.gamma = cfg.gamma; break;
        case StepRecipe::theorem3: s.gamma = theorem3_step(cfg.T, L, s.es.A); break;
        case StepRecipe::theorem8: s.gamma = theorem8_step(cfg.T, L, s.steps_per_epoch, s.rr->calA); break;
    }
    s.validity = schedule_validity(Schedule{cfg.schedule_kind, s.gamma, cfg.alpha}, StepSizeContext{L, s.es, cfg.T});
    return s;
}

inline RunConfig run_config_for(const ExperimentConfig& cfg, const ProblemSummary& s, std::uint64_t seed) {
    RunConfig rc;
    rc.T = cfg.T;
    rc.batch_size = cfg.batch_size;
    rc.seed = seed;
    rc.schedule = Schedule{cfg.schedule_kind, s.gamma, cfg.alpha};
    rc.log_stride = cfg.log_stride;
    rc.mode = cfg.mode;
    return rc;
}

template <SmoothObjective Obj>
Trace run_one(const Obj& obj, const ExperimentConfig& cfg, const ProblemSummary& s, std::uint64_t seed) {
    const RunConfig rc = run_config_for(cfg, s, seed);
    RunOptions opt;
    if (cfg.x0 != 0.0) opt.x0 = Vector(obj.dim(), cfg.x0);
    switch (cfg.mode) {
        case RunMode::iid_sgd: return run_sgd(obj, rc, s.f_star, opt);
        case RunMode::rr_sgd: return run_rr_sgd(obj, rc, s.f_star, opt);
        case RunMode::full_gd: return run_full_gd(obj, rc, s.f_star, opt);
        case RunMode::prox_sgd:
            return run_prox_sgd(CompositeObjective<Obj>(obj, build_regularizer(cfg), s.gamma), rc, s.f_star, opt);
    }
    throw Error("unsupported mode");
}

struct ExperimentResult {
    ProblemSummary summary;
    std::vector<Trace> traces;
    EnsembleTrace ensemble;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    const BuiltProblem built = build_problem(cfg);
    return std::visit(
        [&](const auto& obj) {
            ExperimentResult r;
            r.summary = resolve_problem(obj, cfg, built);
            r.traces = run_seeds(
                cfg.seeds, [&](std::uint64_t seed) { return run_one(obj, cfg, r.summary, seed); }, cfg.threads);
            bool aligned = true;
            for (const auto& t : r.traces) aligned = aligned && !t.diverged && t.points.size() == r.traces[0].points.size();
            if (aligned) r.ensemble = ensemble_mean(r.traces);
            return r;
        },
        built.objective);
}

/// Density lower bound for a constant-step run, when the theory applies at all.
inline std::optional<double> theory_density_bound(const ProblemSummary& s, ScheduleKind kind, RunMode mode,
                                                  std::size_t T, double eta, double epsilon) {
    if (kind != ScheduleKind::constant || mode == RunMode::rr_sgd || !(s.es.A > 0.0)) return std::nullopt;
    BoundInputs in;
    in.delta0 = std::max(0.0, s.delta0);
    in.L = s.smooth.L;
    in.es = s.es;
    in.T = std::max<std::size_t>(1, T);
    in.eta = eta;
    in.gamma = s.gamma;
    return density_lower_bound_constant(in, epsilon).value;
}

/// Ten evenly spaced prefixes, each snapped down to a logged iterate.
inline std::vector<std::size_t> default_horizons(const Series& s) {
    std::vector<std::size_t> out;
    const std::size_t T = s.horizon();
    for (std::size_t k = 1; k <= 10; ++k) {
        const std::size_t target = T * k / 10;
        std::size_t best = 0;
        bool found = false;
        for (std::size_t t : s.t)
            if (t <= target && t > 0) best = t, found = true;
        if (found && (out.empty() || out.back() != best)) out.push_back(best);
    }
    if (out.empty()) out.push_back(T);
    return out;
}

namespace detail {

inline std::string list_text(const std::vector<double>& v) {
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + format_real(v[k]);
    return out;
}

template <class T>
std::string int_list_text(const std::vector<T>& v) {
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

inline std::string bool_text(bool b) { return b ? "true" : "false"; }

/// At most `limit` evenly spaced samples (always keeping the last).
inline std::vector<std::size_t> thin(std::size_t size, std::size_t limit) {
    std::vector<std::size_t> idx;
    const std::size_t step = std::max<std::size_t>(1, (size + limit - 1) / limit);
    for (std::size_t k = 0; k < size; k += step) idx.push_back(k);
    if (size > 0 && idx.back() != size - 1) idx.push_back(size - 1);
    return idx;
}

}  // namespace detail

/// The resolved configuration (rerunnable as-is) followed by result.* diagnostics.
inline std::string manifest_text(const ExperimentConfig& cfg, const ExperimentResult& r,
                                 const std::string& output_dir) {
    const auto& s = r.summary;
    std::ostringstream o;
    o << "# tailsgd run manifest; rerun with: tailsgd run <this file>\n";
    o << "dataset = " << (cfg.loss == "quadratic" ? "synthetic:quadratic" : cfg.dataset) << '\n';
    if (cfg.dim_override) o << "dim_override = " << *cfg.dim_override << '\n';
    o << "loss = " << cfg.loss << '\n'
      << "lambda = " << format_real(cfg.lambda) << '\n'
      << "curvature = " << format_real(cfg.curvature) << '\n'
      << "dim = " << cfg.dim << '\n'
      << "x0 = " << format_real(cfg.x0) << '\n'
      << "regularizer = " << cfg.regularizer << '\n'
      << "tau = " << format_real(cfg.tau) << '\n'
      << "mode = " << to_string(cfg.mode) << '\n'
      << "T = " << cfg.T << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "log_stride = " << cfg.log_stride << '\n'
      << "schedule.kind = " << to_string(cfg.schedule_kind) << '\n'
      << "schedule.gamma = " << format_real(s.gamma) << '\n'
      << "schedule.alpha = " << format_real(cfg.alpha) << '\n'
      << "seeds = " << detail::int_list_text(cfg.seeds) << '\n'
      << "epsilon_grid = " << detail::list_text(cfg.epsilon_grid) << '\n'
      << "eta_grid = " << detail::list_text(cfg.eta_grid) << '\n';
    if (!cfg.density_horizons.empty()) o << "density_horizons = " << detail::int_list_text(cfg.density_horizons) << '\n';
    o << "output_dir = " << output_dir << '\n'
      << "constants.L = " << format_real(s.smooth.L) << '\n'
      << "constants.f_star = " << format_real(s.f_star.f_star) << '\n'
      << "constants.A = " << format_real(s.es.A) << '\n'
      << "constants.B = " << format_real(s.es.B) << '\n'
      << "constants.C = " << format_real(s.es.C) << '\n';
    if (s.rr) o << "constants.calA = " << format_real(s.rr->calA) << '\n' << "constants.calB = " << format_real(s.rr->calB) << '\n';
    o << "estimate.seed = " << cfg.estimate_seed << '\n'
      << "estimate.pilot_T = " << cfg.pilot_T << '\n'
      << "estimate.gaussian_probes = " << cfg.gaussian_probes << '\n'
      << "threads = " << cfg.threads << '\n';

    o << "result.provenance = " << s.provenance << '\n'
      << "result.real_a1a = " << detail::bool_text(s.real_a1a) << '\n'
      << "result.n = " << s.n << '\n'
      << "result.dim = " << s.dim << '\n'
      << "result.L_method = " << to_string(s.smooth.method) << '\n'
      << "result.L_iterations = " << s.smooth.iterations << '\n'
      << "result.f_star_method = " << s.f_star.method << '\n'
      << "result.f_star_converged = " << detail::bool_text(s.f_star.converged) << '\n'
      << "result.f_star_residual_grad_norm = " << format_real(s.f_star.residual_grad_norm) << '\n'
      << "result.delta0 = " << format_real(s.delta0) << '\n'
      << "result.es_source = " << (s.es_estimated ? "estimated" : "user-supplied") << '\n';
    if (s.es_estimated) {
        o << "result.es_holdout_residual = " << format_real(s.es_holdout_residual) << '\n'
          << "result.es_certified = " << detail::bool_text(s.es_certified()) << '\n';
    }
    if (s.rr_estimated) o << "result.rr_holdout_residual = " << format_real(s.rr_holdout_residual) << '\n';
    o << "result.gamma_le_inverse_LB = " << detail::bool_text(s.validity.below_inverse_LB) << '\n';
    if (cfg.schedule_kind == ScheduleKind::inverse_sqrt)
        o << "result.decreasing_step_precondition = " << detail::bool_text(s.validity.theorem4_ok) << '\n';
    if (s.es.A > 0.0) {
        const auto th = threshold_theorem3(cfg.epsilon_grid.front(), cfg.eta_grid.front(), s.smooth.L, s.es,
                                           std::max(0.0, s.delta0));
        o << "result.theorem3_T_required = " << th.T_required << '\n'
          << "result.theorem3_binding_term = " << to_string(th.binding_term) << '\n';
    }
    std::size_t diverged = 0;
    for (const auto& t : r.traces) diverged += t.diverged ? 1 : 0;
    o << "result.diverged_seeds = " << diverged << '\n';
    for (std::size_t k = 0; k < r.traces.size(); ++k) {
        o << "result.trace." << cfg.seeds[k] << " = trace_seed" << cfg.seeds[k] << ".csv\n";
        if (r.traces[k].diverged)
            o << "result.trace." << cfg.seeds[k] << ".last_finite_t = " << r.traces[k].last_finite_t << '\n';
    }
    return o.str();
}

/// Density rows over the (epsilon, eta, horizon) grid on the series.
inline std::vector<DensityReport> density_grid(const Series& series, const std::vector<double>& eps_grid,
                                               const std::vector<double>& eta_grid,
                                               const std::vector<std::size_t>& horizons,
                                               const std::function<std::optional<double>(std::size_t, double, double)>&
                                                   theory) {
    std::vector<DensityReport> rows;
    for (double eps : eps_grid)
        for (double eta : eta_grid)
            for (auto d : density_curve(series, eps, eta, horizons)) {
                if (theory) d.theory_lower_bound = theory(d.T, eta, eps);
                rows.push_back(d);
            }
    return rows;
}

inline std::string density_svg(const std::vector<DensityReport>& rows, const std::string& title) {
    SvgChart chart;
    chart.title = title;
    chart.x_label = "horizon T";
    chart.y_label = "|S(eps, eta)| / window";
    std::map<std::pair<double, double>, SvgSeries> by_key;
    for (const auto& d : rows) {
        auto& s = by_key[{d.epsilon, d.eta}];
        s.label = "eps=" + detail::tick_text(d.epsilon) + " eta=" + detail::tick_text(d.eta);
        s.x.push_back(static_cast<double>(d.T));
        s.y.push_back(d.density);
    }
    for (auto& [k, s] : by_key) chart.series.push_back(std::move(s));
    chart.references.push_back({"1", 1.0});
    return render_svg(chart);
}

inline std::string rhat_svg(const EnsembleTrace& e, const std::vector<double>& eps_grid) {
    SvgChart chart;
    chart.title = "full-gradient norm squared, mean of " + std::to_string(e.seeds) + " runs";
    chart.x_label = "iteration t";
    chart.y_label = "r_hat (log scale)";
    chart.log_y = true;
    SvgSeries s;
    s.label = "mean r_hat +/- sd";
    for (std::size_t k : detail::thin(e.points.size(), 2000)) {
        const auto& p = e.points[k];
        s.x.push_back(static_cast<double>(p.t));
        s.y.push_back(p.r_hat_mean);
        s.lower.push_back(p.r_hat_mean - p.r_hat_sd);
        s.upper.push_back(p.r_hat_mean + p.r_hat_sd);
    }
    chart.series.push_back(std::move(s));
    for (double eps : eps_grid) chart.references.push_back({"eps=" + detail::tick_text(eps), eps});
    return render_svg(chart);
}

/// Directory precedence: explicit > config > $TAILSGD_OUTPUT_DIR > ./out.
inline std::string resolve_output_dir(const std::string& explicit_dir, const std::string& config_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (!config_dir.empty()) return config_dir;
    if (const char* env = std::getenv("TAILSGD_OUTPUT_DIR"); env && *env) return env;
    return "out";
}

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitNumerical = 2 };

inline int cmd_run(const std::string& config_path, const std::string& output_override, std::ostream& log) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    const std::string out_dir = resolve_output_dir(output_override, cfg.output_dir);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);

    const ExperimentResult r = run_experiment(cfg);
    const auto& s = r.summary;
    log << "dataset " << s.provenance << " (n=" << s.n << ", d=" << s.dim << ")"
        << (s.real_a1a || s.provenance.rfind("synthetic:a1a", 0) != 0 ? "" : " [a1a not found; using the surrogate]")
        << '\n';
    log << "L=" << format_real(s.smooth.L) << " f*=" << format_real(s.f_star.f_star) << " A=" << format_real(s.es.A)
        << " B=" << format_real(s.es.B) << " C=" << format_real(s.es.C) << " gamma=" << format_real(s.gamma) << '\n';
    if (!s.es_certified())
        log << "warning: ES constants failed holdout certification (residual " << format_real(s.es_holdout_residual)
            << ")\n";

    for (std::size_t k = 0; k < r.traces.size(); ++k)
        write_trace_file((dir / ("trace_seed" + std::to_string(cfg.seeds[k]) + ".csv")).string(), r.traces[k]);
    detail::write_text(dir / "manifest.txt", manifest_text(cfg, r, out_dir));

    std::size_t diverged = 0;
    for (const auto& t : r.traces) diverged += t.diverged ? 1 : 0;
    if (diverged > 0) {
        log << diverged << " of " << r.traces.size() << " seeds diverged; traces end at the last finite iterate\n";
        return kExitNumerical;
    }

    {
        std::ofstream out(dir / "ensemble.csv", std::ios::binary);
        write_ensemble_csv(out, r.ensemble);
    }
    const Series series = series_of(r.ensemble);
    const auto horizons = cfg.density_horizons.empty() ? default_horizons(series) : cfg.density_horizons;
    const auto theory = [&](std::size_t T, double eta, double eps) {
        // Horizons are in logged steps; for constant-step SGD they equal iterations.
        return theory_density_bound(s, cfg.schedule_kind, cfg.mode, T, eta, eps);
    };
    const auto curve = density_grid(series, cfg.epsilon_grid, cfg.eta_grid, horizons, theory);
    {
        std::ofstream out(dir / "density.csv", std::ios::binary);
        write_density_csv(out, curve);
    }
    {
        std::ofstream out(dir / "density_seeds.csv", std::ios::binary);
        out << "seed,epsilon,eta,T,count,density\n";
        for (std::size_t k = 0; k < r.traces.size(); ++k)
            for (double eps : cfg.epsilon_grid)
                for (double eta : cfg.eta_grid) {
                    const auto d = tail_density(r.traces[k], eps, eta);
                    out << cfg.seeds[k] << ',' << format_real(eps) << ',' << format_real(eta) << ',' << d.T << ','
                        << d.count << ',' << format_real(d.density) << '\n';
                }
    }
    detail::write_text(dir / "fig_rhat.svg", rhat_svg(r.ensemble, cfg.epsilon_grid));
    detail::write_text(dir / "fig_density.svg", density_svg(curve, "density of eps-stationary iterates in the tail"));

    for (const auto& d : curve)
        if (d.T == series.horizon())
            log << "eps=" << format_real(d.epsilon) << " eta=" << format_real(d.eta) << " density="
                << format_real(d.density) << " (" << d.count << "/" << d.window_size << ")\n";
    log << "wrote " << r.traces.size() << " traces to " << out_dir << '\n';
    return kExitOk;
}

/// Seed-numbered trace files in a run directory, in seed order.
inline std::vector<std::pair<std::uint64_t, std::string>> find_traces(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error("trace directory '" + dir + "' does not exist");
    static const std::regex pattern(R"(trace_seed(\d+)\.csv)");
    std::vector<std::pair<std::uint64_t, std::string>> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) out.emplace_back(std::stoull(m[1].str()), entry.path().string());
    }
    if (out.empty()) throw Error("no trace_seed<k>.csv files in '" + dir + "'");
    std::sort(out.begin(), out.end());
    return out;
}

struct DensityRequest {
    std::string trace_dir;
    std::vector<double> epsilon_grid;
    std::vector<double> eta_grid;
    std::vector<std::size_t> horizons;
    std::string output_dir;  // defaults to trace_dir
};

inline int cmd_density(const DensityRequest& req, std::ostream& log) {
    if (req.epsilon_grid.empty()) throw Error("epsilon grid must be nonempty");
    if (req.eta_grid.empty()) throw Error("eta grid must be nonempty");
    const auto files = find_traces(req.trace_dir);
    std::vector<Trace> traces;
    for (const auto& [seed, path] : files) traces.push_back(read_trace_file(path));
    const EnsembleTrace e = ensemble_mean(traces);
    const Series series = series_of(e);
    const auto horizons = req.horizons.empty() ? default_horizons(series) : req.horizons;

    // Theory column when the run directory carries a manifest with constants.
    std::function<std::optional<double>(std::size_t, double, double)> theory;
    const auto manifest = std::filesystem::path(req.trace_dir) / "manifest.txt";
    std::optional<ExperimentConfig> cfg;
    if (std::filesystem::is_regular_file(manifest)) {
        cfg = load_experiment_config(manifest.string());
        if (cfg->constants.L && cfg->constants.es && cfg->constants.f_star) {
            ProblemSummary s;
            s.smooth.L = *cfg->constants.L;
            s.es = *cfg->constants.es;
            s.gamma = cfg->gamma;
            const ExperimentConfig c = *cfg;
            const BuiltProblem built = build_problem(c);
            const Regularizer h = build_regularizer(c);
            s.delta0 = std::visit(
                           [&](const auto& obj) {
                               const Vector x0(obj.dim(), c.x0);
                               return obj.value(x0) + h.value(x0);
                           },
                           built.objective) -
                       *c.constants.f_star;
            theory = [s, c](std::size_t T, double eta, double eps) {
                return theory_density_bound(s, c.schedule_kind, c.mode, T, eta, eps);
            };
        }
    }
    for (double eps : req.epsilon_grid)
        if (!(eps > 0.0)) throw Error("epsilon values must be positive");
    const auto rows = density_grid(series, req.epsilon_grid, req.eta_grid, horizons, theory);
    const std::filesystem::path out_dir(req.output_dir.empty() ? req.trace_dir : req.output_dir);
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "density.csv", std::ios::binary);
        write_density_csv(out, rows);
    }
    {
        std::ofstream out(out_dir / "density_seeds.csv", std::ios::binary);
        out << "seed,epsilon,eta,T,count,density\n";
        for (std::size_t k = 0; k < traces.size(); ++k)
            for (double eps : req.epsilon_grid)
                for (double eta : req.eta_grid) {
                    const auto d = tail_density(traces[k], eps, eta);
                    out << files[k].first << ',' << format_real(eps) << ',' << format_real(eta) << ',' << d.T << ','
                        << d.count << ',' << format_real(d.density) << '\n';
                }
    }
    detail::write_text(out_dir / "fig_density.svg", density_svg(rows, "density of eps-stationary iterates in the tail"));
    write_density_csv(log, rows);
    return kExitOk;
}

// --- bounds ----------------------------------------------------------------

struct BoundsRequest {
    std::string theorem;
    std::map<std::string, std::string> values;  // flag name without dashes -> text
    std::string variant = "derivation";
    std::string schedule = "constant";
};

namespace detail {

struct BoundsArgs {
    const BoundsRequest& req;
    std::vector<std::string> missing;

    std::optional<double> get(const std::string& key) const {
        const auto it = req.values.find(key);
        if (it == req.values.end()) return std::nullopt;
        const auto v = parse_real(trim(it->second));
        if (!v) throw Error("--" + key + ": expected a number, got '" + it->second + "'");
        return v;
    }
    double need(const std::string& key) {
        const auto v = get(key);
        if (!v) {
            missing.push_back("--" + key);
            return std::numeric_limits<double>::quiet_NaN();
        }
        return *v;
    }
    std::size_t need_count(const std::string& key) {
        const double v = need(key);
        if (std::isnan(v)) return 1;
        if (!(v >= 1.0) || v != std::floor(v)) throw Error("--" + key + " must be a positive integer");
        return static_cast<std::size_t>(v);
    }
    void check() const {
        if (missing.empty()) return;
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw Error("missing flags for --theorem " + req.theorem + ": " + list);
    }
};

inline void emit(std::vector<std::pair<std::string, std::string>>& rows, const std::string& k, double v) {
    rows.emplace_back(k, format_real(v));
}

inline void emit_pre(std::vector<std::pair<std::string, std::string>>& rows, const std::vector<Precondition>& pre) {
    for (const auto& p : pre) rows.emplace_back("precondition[" + p.name + "]", bool_text(p.ok));
}

}  // namespace detail

inline const std::vector<std::string>& known_theorems() {
    static const std::vector<std::string> ids{"1", "corollary1", "corollary2", "2", "tailmin", "3",
                                              "4", "5",          "6",          "corollary3", "8"};
    return ids;
}

inline int cmd_bounds(const BoundsRequest& req, std::ostream& out) {
    if (std::find(known_theorems().begin(), known_theorems().end(), req.theorem) == known_theorems().end()) {
        std::string ids;
        for (const auto& t : known_theorems()) ids += (ids.empty() ? "" : ", ") + t;
        throw Error("unknown theorem id '" + req.theorem + "' (expected one of " + ids + ")");
    }
    detail::BoundsArgs a{req, {}};
    std::vector<std::pair<std::string, std::string>> rows;
    rows.emplace_back("theorem", req.theorem);
    const std::string& id = req.theorem;

    const auto es_inputs = [&] {
        ESConstants es{a.need("A"), a.need("B"), a.need("C")};
        return es;
    };
    const auto base_inputs = [&](bool with_T, bool with_gamma, bool with_eta) {
        BoundInputs in;
        in.L = a.need("L");
        in.es = es_inputs();
        in.delta0 = a.need("delta0");
        if (with_T) in.T = a.need_count("T");
        if (with_gamma) in.gamma = a.need("gamma");
        if (with_eta) in.eta = a.need("eta");
        in.alpha = a.get("alpha");
        return in;
    };
    const auto step_sequence = [&](const BoundInputs& in) {
        Schedule s{parse_schedule_kind(req.schedule), in.gamma, in.alpha.value_or(0.75)};
        s.validate();
        std::vector<double> g(in.T);
        for (std::size_t t = 1; t <= in.T; ++t) g[t - 1] = schedule_gamma(s, t);
        return g;
    };
    const auto threshold_rows = [&](const ThresholdReport& th) {
        rows.emplace_back("T_required", std::to_string(th.T_required));
        detail::emit(rows, "T_real", th.T_real);
        rows.emplace_back("binding_term", to_string(th.binding_term));
        detail::emit(rows, "epsilon_term", th.terms[0]);
        detail::emit(rows, "stepsize_term", th.terms[1]);
        detail::emit(rows, "eta_term", th.terms[2]);
    };

    if (id == "1") {
        auto in = base_inputs(true, true, false);
        a.check();
        const auto g = step_sequence(in);
        const auto r = bound_theorem1(in, g);
        detail::emit(rows, "value", r.value);
        detail::emit_pre(rows, r.preconditions);
    } else if (id == "corollary1") {
        auto in = base_inputs(true, false, false);
        a.check();
        const auto r = bound_corollary1(in);
        detail::emit(rows, "value", r.value);
        detail::emit_pre(rows, r.preconditions);
    } else if (id == "corollary2") {
        auto in = base_inputs(true, true, false);
        if (!in.alpha) a.missing.push_back("--alpha");
        a.check();
        const auto r = bound_corollary2(in);
        detail::emit(rows, "value", r.value);
        detail::emit_pre(rows, r.preconditions);
    } else if (id == "2") {
        auto in = base_inputs(true, true, false);
        const std::size_t k = a.need_count("k");
        a.check();
        const auto g = step_sequence(in);
        const auto r = bound_theorem2_tail(in, g, k, a.get("head_min"), a.get("delta_T"));
        detail::emit(rows, "refined", r.refined);
        detail::emit(rows, "coarse", r.coarse);
        detail::emit_pre(rows, r.preconditions);
    } else if (id == "tailmin") {
        auto in = base_inputs(true, true, true);
        a.check();
        const auto r = tail_min_bound_constant(in);
        detail::emit(rows, "value", r.value);
        detail::emit_pre(rows, r.preconditions);
    } else if (id == "3") {
        const double eps = a.need("epsilon"), eta = a.need("eta"), L = a.need("L");
        const ESConstants es = es_inputs();
        const double d0 = a.need("delta0");
        a.check();
        threshold_rows(threshold_theorem3(eps, eta, L, es, d0));
    } else if (id == "4") {
        auto in = base_inputs(true, true, true);
        a.check();
        if (req.variant != "derivation" && req.variant != "theorem_stated")
            throw Error("--variant must be derivation or theorem_stated");
        const auto r = bound_theorem4_decreasing(
            in, req.variant == "derivation" ? Theorem4Variant::derivation : Theorem4Variant::theorem_stated);
        rows.emplace_back("variant", req.variant);
        detail::emit(rows, "value", r.value);
        detail::emit_pre(rows, r.preconditions);
    } else if (id == "5") {
        auto in = base_inputs(true, true, true);
        const double eps = a.need("epsilon");
        a.check();
        const auto r = density_lower_bound_constant(in, eps);
        detail::emit(rows, "value", r.value);
        detail::emit_pre(rows, r.preconditions);
    } else if (id == "6") {
        auto in = base_inputs(true, true, true);
        const double eps = a.need("epsilon");
        a.check();
        const auto r = density_lower_bound_decreasing(in, eps);
        detail::emit(rows, "value", r.value);
        detail::emit(rows, "D", r.D);
    } else if (id == "corollary3") {
        const double eps = a.need("epsilon"), gamma = a.need("gamma"), alpha = a.need("alpha"), L = a.need("L");
        const ESConstants es = es_inputs();
        const double d0 = a.need("delta0");
        a.check();
        const auto r = bound_corollary3_power(eps, gamma, alpha, L, es, d0);
        rows.emplace_back("k", std::to_string(r.k));
        detail::emit(rows, "k_real", r.k_real);
    } else if (id == "8") {
        const double eps = a.need("epsilon"), eta = a.need("eta"), L = a.need("L");
        const std::size_t n = a.need_count("n");
        const RRVarianceConstants rr{a.need("calA"), a.need("calB")};
        const double d0 = a.need("delta0");
        a.check();
        const auto th = rr_threshold_theorem8(eps, eta, L, n, rr, d0);
        threshold_rows(th);
        detail::emit(rows, "epoch_step", theorem8_step(th.T_required, L, n, rr.calA));
    }

    for (const auto& [k, v] : rows) out << k << '=' << v << '\n';
    out << "\nquantity,value\n";
    for (const auto& [k, v] : rows) out << k << ',' << v << '\n';
    return kExitOk;
}

// --- audit -----------------------------------------------------------------

struct AuditRequest {
    std::vector<std::string> trace_files;
    double L = 0.0;
    ESConstants es{0.0, 1.0, 0.0};
    std::string mode = "deterministic";  // deterministic | ensemble | rr
    std::optional<RRVarianceConstants> rr;
    std::size_t steps_per_epoch = 0;     // rr mode
    double tolerance = 1e-12;
};

inline int cmd_audit(const AuditRequest& req, std::ostream& out) {
    if (req.trace_files.empty()) throw Error("audit needs at least one trace file");
    if (!(req.L > 0.0)) throw Error("--L must be positive");
    std::vector<Trace> traces;
    for (const auto& f : req.trace_files) traces.push_back(read_trace_file(f));
    AuditOptions opt;
    opt.relative_tolerance = req.tolerance;
    AuditReport rep;
    if (req.mode == "deterministic" || req.mode == "ensemble") {
        rep = audit_descent(std::span<const Trace>(traces), req.L, req.es,
                            req.mode == "ensemble" ? AuditMode::ensemble : AuditMode::deterministic, opt);
    } else if (req.mode == "rr") {
        if (!req.rr) throw Error("rr audit needs --calA and --calB");
        if (req.steps_per_epoch < 1) throw Error("rr audit needs --steps-per-epoch");
        for (auto& t : traces) t.steps_per_epoch = req.steps_per_epoch;
        rep = audit_rr_epochs(std::span<const Trace>(traces), req.L, *req.rr,
                              traces.size() > 1 ? AuditMode::ensemble : AuditMode::deterministic, opt);
    } else {
        throw Error("unknown audit mode '" + req.mode + "'");
    }
    const std::size_t shown = std::min<std::size_t>(rep.violations.size(), 50);
    for (std::size_t k = 0; k < shown; ++k) out << "violation t=" << rep.violations[k] << '\n';
    if (shown < rep.violations.size()) out << "... " << rep.violations.size() - shown << " more\n";
    out << "max_violation=" << format_real(rep.max_violation) << '\n';
    out << rep.summary() << '\n';
    return kExitOk;
}

// --- estimate --------------------------------------------------------------

inline std::string constants_text(const ProblemSummary& s) {
    std::ostringstream o;
    o << "constants.L = " << format_real(s.smooth.L) << '\n'
      << "constants.f_star = " << format_real(s.f_star.f_star) << '\n'
      << "constants.A = " << format_real(s.es.A) << '\n'
      << "constants.B = " << format_real(s.es.B) << '\n'
      << "constants.C = " << format_real(s.es.C) << '\n';
    if (s.rr) o << "constants.calA = " << format_real(s.rr->calA) << '\n' << "constants.calB = " << format_real(s.rr->calB) << '\n';
    o << "result.provenance = " << s.provenance << '\n'
      << "result.L_method = " << to_string(s.smooth.method) << '\n'
      << "result.f_star_converged = " << detail::bool_text(s.f_star.converged) << '\n'
      << "result.f_star_residual_grad_norm = " << format_real(s.f_star.residual_grad_norm) << '\n'
      << "result.delta0 = " << format_real(s.delta0) << '\n';
    if (s.es_estimated) {
        o << "result.es_T_required = " << format_real(s.es_T_required) << '\n'
          << "result.es_holdout_residual = " << format_real(s.es_holdout_residual) << '\n'
          << "result.es_certified = " << detail::bool_text(s.es_certified()) << '\n';
    }
    if (s.rr_estimated) o << "result.rr_holdout_residual = " << format_real(s.rr_holdout_residual) << '\n';
    o << "result.gamma = " << format_real(s.gamma) << '\n';
    return o.str();
}

inline int cmd_estimate(const std::string& config_path, const std::string& output_file, std::ostream& out) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    const BuiltProblem built = build_problem(cfg);
    const ProblemSummary s =
        std::visit([&](const auto& obj) { return resolve_problem(obj, cfg, built); }, built.objective);
    const std::string text = constants_text(s);
    if (!output_file.empty()) {
        const auto parent = std::filesystem::path(output_file).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        detail::write_text(output_file, text);
    }
    out << text;
    return s.f_star.converged ? kExitOk : kExitNumerical;
}

}  // namespace tailsgd
