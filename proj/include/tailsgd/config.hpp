#pragma once

// Flat `key = value` experiment configuration. `#` starts a comment, blank
// lines are ignored, keys are unique. Keys prefixed with `result.` are
// informational (written by a run's manifest) and skipped on load, so a
// manifest can be fed back as a config.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tailsgd/core.hpp"
#include "tailsgd/data.hpp"

namespace tailsgd {

struct KeyValueFile {
    std::map<std::string, std::string> values;
    std::map<std::string, std::size_t> lines;
};

inline KeyValueFile parse_key_values(std::istream& in) {
    KeyValueFile kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        view = detail::trim(view);
        if (view.empty()) continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
        const std::string key(detail::trim(view.substr(0, eq)));
        const std::string value(detail::trim(view.substr(eq + 1)));
        if (key.empty()) throw ParseError("empty key", line_no);
        if (key.starts_with("result.")) continue;
        if (kv.values.count(key)) throw ParseError("duplicate key '" + key + "'", line_no);
        kv.values[key] = value;
        kv.lines[key] = line_no;
    }
    return kv;
}

struct ConstantOverrides {
    std::optional<double> L;
    std::optional<double> f_star;
    std::optional<ESConstants> es;
    std::optional<RRVarianceConstants> rr;
};

enum class StepRecipe { fixed, theorem3, theorem8 };

struct ExperimentConfig {
    std::string dataset = "synthetic:a1a";  // path, synthetic:a1a or synthetic:quadratic
    std::optional<std::size_t> dim_override;
    std::string loss = "logistic_ncvx";      // logistic_ncvx | quadratic
    double lambda = 0.5;
    double curvature = 1.0;
    std::size_t dim = 1;                     // quadratic only
    double x0 = 0.0;                         // every coordinate of the starting point
    std::string regularizer = "none";        // none | l1 (prox_sgd only)
    double tau = 0.0;
    RunMode mode = RunMode::iid_sgd;
    std::size_t T = 1000;
    std::size_t batch_size = 1;
    std::size_t log_stride = 1;
    ScheduleKind schedule_kind = ScheduleKind::constant;
    StepRecipe recipe = StepRecipe::fixed;
    double gamma = 0.0;                      // used when recipe == fixed
    double alpha = 0.75;
    std::vector<std::uint64_t> seeds{1};
    std::vector<double> epsilon_grid{1e-2};
    std::vector<double> eta_grid{0.2};
    std::vector<std::size_t> density_horizons;  // empty: ten evenly spaced prefixes
    std::string output_dir;
    ConstantOverrides constants;
    std::uint64_t estimate_seed = 20240601;
    std::size_t pilot_T = 20000;
    std::size_t gaussian_probes = 100;
    unsigned threads = 0;
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(const KeyValueFile& kv) : kv_(kv) {}

    std::optional<std::string> take(const std::string& key) {
        const auto it = kv_.values.find(key);
        if (it == kv_.values.end()) return std::nullopt;
        used_.push_back(key);
        return it->second;
    }

    double real(const std::string& key, double fallback) {
        const auto v = take(key);
        return v ? to_real(key, *v) : fallback;
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        const auto v = take(key);
        return v ? to_count(key, *v) : fallback;
    }

    double to_real(const std::string& key, std::string_view text) const {
        const auto v = parse_real(trim(text));
        if (!v) fail(key, "expected a number, got '" + std::string(text) + "'");
        return *v;
    }

    std::size_t to_count(const std::string& key, std::string_view text) const {
        const auto v = parse_index(trim(text));
        if (!v) fail(key, "expected a nonnegative integer, got '" + std::string(text) + "'");
        return *v;
    }

    /// Comma-separated list; integers additionally accept `a-b` ranges.
    std::vector<std::string_view> items(const std::string& key, std::string_view text) const {
        std::vector<std::string_view> out;
        for (const auto part : split(text)) {
            const auto item = trim(part);
            if (item.empty()) fail(key, "empty list item");
            out.push_back(item);
        }
        return out;
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        const auto it = kv_.lines.find(key);
        throw ParseError("key '" + key + "': " + what, it == kv_.lines.end() ? 0 : it->second);
    }

    void reject_unknown() const {
        for (const auto& [key, value] : kv_.values) {
            bool used = false;
            for (const auto& u : used_) used = used || u == key;
            if (!used) fail(key, "unknown key");
        }
    }

private:
    static std::vector<std::string_view> split(std::string_view text) {
        std::vector<std::string_view> out;
        std::size_t start = 0;
        while (true) {
            const auto comma = text.find(',', start);
            out.push_back(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        return out;
    }

    const KeyValueFile& kv_;
    std::vector<std::string> used_;
};

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const KeyValueFile& kv) {
    detail::ConfigReader rd(kv);
    ExperimentConfig c;
    if (auto v = rd.take("dataset")) c.dataset = *v;
    if (auto v = rd.take("dim_override")) c.dim_override = rd.to_count("dim_override", *v);
    if (auto v = rd.take("loss")) c.loss = *v;
    if (c.loss != "logistic_ncvx" && c.loss != "quadratic") rd.fail("loss", "expected logistic_ncvx or quadratic");
    c.lambda = rd.real("lambda", c.lambda);
    c.curvature = rd.real("curvature", c.curvature);
    c.dim = rd.count("dim", c.dim);
    c.x0 = rd.real("x0", c.x0);
    if (auto v = rd.take("regularizer")) c.regularizer = *v;
    if (c.regularizer != "none" && c.regularizer != "l1") rd.fail("regularizer", "expected none or l1");
    c.tau = rd.real("tau", c.tau);
    if (auto v = rd.take("mode")) {
        try {
            c.mode = parse_run_mode(*v);
        } catch (const Error& e) {
            rd.fail("mode", e.what());
        }
    }
    c.T = rd.count("T", c.T);
    c.batch_size = rd.count("batch_size", c.batch_size);
    c.log_stride = rd.count("log_stride", c.log_stride);
    if (auto v = rd.take("schedule.kind")) {
        try {
            c.schedule_kind = parse_schedule_kind(*v);
        } catch (const Error& e) {
            rd.fail("schedule.kind", e.what());
        }
    }
    if (auto v = rd.take("schedule.gamma")) {
        if (*v == "theorem3") {
            c.recipe = StepRecipe::theorem3;
        } else if (*v == "theorem8") {
            c.recipe = StepRecipe::theorem8;
        } else {
            c.recipe = StepRecipe::fixed;
            c.gamma = rd.to_real("schedule.gamma", *v);
        }
    } else {
        rd.fail("schedule.gamma", "missing (a number, theorem3 or theorem8)");
    }
    c.alpha = rd.real("schedule.alpha", c.alpha);
    if (c.recipe != StepRecipe::fixed && c.schedule_kind != ScheduleKind::constant)
        rd.fail("schedule.gamma", "step recipes require schedule.kind = constant");
    if (c.recipe == StepRecipe::theorem8 && c.mode != RunMode::rr_sgd)
        rd.fail("schedule.gamma", "theorem8 applies to mode = rr_sgd");

    if (auto v = rd.take("seeds")) {
        c.seeds.clear();
        for (const auto item : rd.items("seeds", *v)) {
            if (const auto dash = item.find('-'); dash != std::string_view::npos) {
                const auto lo = rd.to_count("seeds", item.substr(0, dash));
                const auto hi = rd.to_count("seeds", item.substr(dash + 1));
                if (hi < lo) rd.fail("seeds", "empty range");
                for (auto s = lo; s <= hi; ++s) c.seeds.push_back(s);
            } else {
                c.seeds.push_back(rd.to_count("seeds", item));
            }
        }
    }
    if (auto v = rd.take("epsilon_grid")) {
        c.epsilon_grid.clear();
        for (const auto item : rd.items("epsilon_grid", *v)) c.epsilon_grid.push_back(rd.to_real("epsilon_grid", item));
    }
    if (auto v = rd.take("eta_grid")) {
        c.eta_grid.clear();
        for (const auto item : rd.items("eta_grid", *v)) c.eta_grid.push_back(rd.to_real("eta_grid", item));
    }
    if (auto v = rd.take("density_horizons")) {
        for (const auto item : rd.items("density_horizons", *v))
            c.density_horizons.push_back(rd.to_count("density_horizons", item));
    }
    if (auto v = rd.take("output_dir")) c.output_dir = *v;

    if (auto v = rd.take("constants.L")) c.constants.L = rd.to_real("constants.L", *v);
    if (auto v = rd.take("constants.f_star")) c.constants.f_star = rd.to_real("constants.f_star", *v);
    {
        auto a = rd.take("constants.A");
        auto b = rd.take("constants.B");
        auto cc = rd.take("constants.C");
        if (a || b || cc) {
            if (!(a && b && cc)) rd.fail(a ? "constants.A" : (b ? "constants.B" : "constants.C"),
                                         "constants.A, constants.B and constants.C must be given together");
            c.constants.es = ESConstants{rd.to_real("constants.A", *a), rd.to_real("constants.B", *b),
                                         rd.to_real("constants.C", *cc)};
        }
        auto ra = rd.take("constants.calA");
        auto rb = rd.take("constants.calB");
        if (ra || rb) {
            if (!(ra && rb)) rd.fail(ra ? "constants.calA" : "constants.calB",
                                     "constants.calA and constants.calB must be given together");
            c.constants.rr = RRVarianceConstants{rd.to_real("constants.calA", *ra), rd.to_real("constants.calB", *rb)};
        }
    }
    c.estimate_seed = rd.count("estimate.seed", c.estimate_seed);
    c.pilot_T = rd.count("estimate.pilot_T", c.pilot_T);
    c.gaussian_probes = rd.count("estimate.gaussian_probes", c.gaussian_probes);
    c.threads = static_cast<unsigned>(rd.count("threads", c.threads));
    rd.reject_unknown();

    if (c.seeds.empty()) rd.fail("seeds", "at least one seed is required");
    if (c.epsilon_grid.empty()) rd.fail("epsilon_grid", "grid must be nonempty");
    if (c.eta_grid.empty()) rd.fail("eta_grid", "grid must be nonempty");
    for (double e : c.epsilon_grid)
        if (!(e > 0.0)) rd.fail("epsilon_grid", "epsilon values must be positive");
    for (double e : c.eta_grid)
        if (!(e > 0.0 && e <= 1.0)) rd.fail("eta_grid", "eta values must lie in (0, 1]");
    if (c.T < 1) rd.fail("T", "must be >= 1");
    if (c.log_stride < 1) rd.fail("log_stride", "must be >= 1");
    if (c.batch_size < 1) rd.fail("batch_size", "must be >= 1");
    if (c.recipe == StepRecipe::fixed && !(c.gamma > 0.0)) rd.fail("schedule.gamma", "must be positive");
    if (c.regularizer == "l1" && c.mode != RunMode::prox_sgd)
        rd.fail("regularizer", "an l1 regularizer needs mode = prox_sgd");
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    return parse_experiment_config(parse_key_values(in));
}

}  // namespace tailsgd
