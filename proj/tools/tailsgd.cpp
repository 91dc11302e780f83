#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tailsgd/tailsgd.hpp"

namespace {

std::vector<double> parse_grid(const std::string& text, const char* what) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto item = tailsgd::detail::trim(std::string_view(text).substr(start, comma - start));
        const auto v = tailsgd::detail::parse_real(item);
        if (!v) throw tailsgd::Error(std::string(what) + ": bad value '" + std::string(item) + "'");
        out.push_back(*v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tailsgd: tail behaviour of SGD on nonconvex problems"};
    app.require_subcommand(1);

    std::string config_path, output_dir;
    auto* run = app.add_subcommand("run", "run a configured experiment");
    run->add_option("config", config_path, "key = value config file")->required();
    run->add_option("-o,--output-dir", output_dir, "output directory");

    tailsgd::DensityRequest dreq;
    std::string eps_text = "0.01", eta_text = "0.2", horizons_text;
    auto* density = app.add_subcommand("density", "tail density of stationary iterates from saved traces");
    density->add_option("trace_dir", dreq.trace_dir, "directory with trace_seed<k>.csv files")->required();
    density->add_option("--epsilon", eps_text, "comma-separated epsilon grid");
    density->add_option("--eta", eta_text, "comma-separated eta grid");
    density->add_option("--horizons", horizons_text, "comma-separated prefix horizons");
    density->add_option("-o,--output-dir", dreq.output_dir, "output directory (default: trace_dir)");

    tailsgd::BoundsRequest breq;
    auto* bounds = app.add_subcommand("bounds", "evaluate a bound or iteration threshold");
    bounds->add_option("--theorem", breq.theorem, "1, corollary1, corollary2, 2, tailmin, 3, 4, 5, 6, corollary3, 8")
        ->required();
    const std::vector<std::pair<std::string, std::string>> scalar_flags{
        {"--epsilon", "epsilon"}, {"--eta", "eta"},     {"--L", "L"},           {"--A", "A"},
        {"--B", "B"},             {"--C", "C"},         {"--delta0", "delta0"}, {"--T", "T"},
        {"--gamma", "gamma"},     {"--alpha", "alpha"}, {"--k", "k"},           {"--head-min", "head_min"},
        {"--delta-T", "delta_T"}, {"--n", "n"},         {"--calA", "calA"},     {"--calB", "calB"}};
    std::map<std::string, std::string> bound_text;
    for (const auto& [flag, key] : scalar_flags) bounds->add_option(flag, bound_text[key]);
    bounds->add_option("--variant", breq.variant, "decreasing-step bound: derivation or theorem_stated");
    bounds->add_option("--schedule", breq.schedule, "constant, inverse_sqrt or power");

    tailsgd::AuditRequest areq;
    std::optional<double> cal_a, cal_b;
    auto* audit = app.add_subcommand("audit", "check the descent inequality along saved traces");
    audit->add_option("traces", areq.trace_files, "trace CSV files")->required();
    audit->add_option("--L", areq.L, "smoothness constant")->required();
    audit->add_option("--A", areq.es.A);
    audit->add_option("--B", areq.es.B);
    audit->add_option("--C", areq.es.C);
    audit->add_option("--mode", areq.mode, "deterministic, ensemble or rr");
    audit->add_option("--calA", cal_a);
    audit->add_option("--calB", cal_b);
    audit->add_option("--steps-per-epoch", areq.steps_per_epoch);
    audit->add_option("--tolerance", areq.tolerance, "relative tolerance");

    std::string constants_out;
    auto* estimate = app.add_subcommand("estimate", "estimate L, F*, (A, B, C) for a config");
    estimate->add_option("config", config_path, "key = value config file")->required();
    estimate->add_option("-o,--output", constants_out, "write the constants file here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : tailsgd::kExitUsage;
    }

    try {
        if (*run) return tailsgd::cmd_run(config_path, output_dir, std::cout);
        if (*density) {
            dreq.epsilon_grid = parse_grid(eps_text, "--epsilon");
            dreq.eta_grid = parse_grid(eta_text, "--eta");
            if (!horizons_text.empty())
                for (double h : parse_grid(horizons_text, "--horizons")) {
                    if (!(h >= 1.0) || h != std::floor(h)) throw tailsgd::Error("--horizons must be positive integers");
                    dreq.horizons.push_back(static_cast<std::size_t>(h));
                }
            return tailsgd::cmd_density(dreq, std::cout);
        }
        if (*bounds) {
            for (const auto& [key, text] : bound_text)
                if (!text.empty()) breq.values[key] = text;
            return tailsgd::cmd_bounds(breq, std::cout);
        }
        if (*audit) {
            if (cal_a || cal_b) {
                if (!(cal_a && cal_b)) throw tailsgd::Error("--calA and --calB must be given together");
                areq.rr = tailsgd::RRVarianceConstants{*cal_a, *cal_b};
            }
            return tailsgd::cmd_audit(areq, std::cout);
        }
        if (*estimate) {
            if (constants_out.empty())
                constants_out = (std::filesystem::path(tailsgd::resolve_output_dir("", "")) / "constants.txt").string();
            return tailsgd::cmd_estimate(config_path, constants_out, std::cout);
        }
    } catch (const tailsgd::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return tailsgd::kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tailsgd::kExitUsage;
    }
    return tailsgd::kExitUsage;
}
