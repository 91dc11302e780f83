#pragma once

// CSV serialization for traces, ensembles and density tables. Reals are
// written with 17 significant digits so every value reads back bit-exactly.

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tailsgd/core.hpp"
#include "tailsgd/data.hpp"
#include "tailsgd/metrics.hpp"

namespace tailsgd {

inline constexpr std::string_view kTraceHeader = "t,r_hat,delta_hat,gamma_t,loss,minibatch_loss";
inline constexpr std::string_view kEnsembleHeader =
    "t,r_hat_mean,r_hat_sd,delta_hat_mean,delta_hat_sd,loss_mean,loss_sd,gamma_t";
inline constexpr std::string_view kDensityHeader = "epsilon,eta,T,count,density,theory_lb";

/// Shortest text that parses back to the same double.
inline std::string format_real(double v) { return detail::format_shortest(v); }

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline double csv_real(std::string_view field, std::size_t line_no) {
    // nan/inf never appear in finished traces, but tolerate them on read.
    const auto v = parse_real(trim(field));
    if (!v) throw ParseError("malformed number '" + std::string(field) + "'", line_no);
    return *v;
}

inline std::size_t csv_index(std::string_view field, std::size_t line_no) {
    const auto v = parse_index(trim(field));
    if (!v) throw ParseError("malformed integer '" + std::string(field) + "'", line_no);
    return *v;
}

/// Reads the header line and yields each subsequent non-empty row split on commas.
template <class Fn>
void read_csv(std::istream& in, std::string_view header, std::size_t columns, Fn&& row) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    if (trim(line) != header) throw ParseError("unexpected header '" + line + "'", 1);
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = trim(line);
        if (view.empty()) continue;
        const auto fields = split_commas(view);
        if (fields.size() != columns)
            throw ParseError("expected " + std::to_string(columns) + " fields, got " + std::to_string(fields.size()),
                             line_no);
        row(fields, line_no);
    }
}

}  // namespace detail

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
    out << kTraceHeader << '\n';
    for (const auto& p : trace.points) {
        out << p.t << ',' << format_real(p.r_hat) << ',' << format_real(p.delta_hat) << ','
            << format_real(p.gamma_t) << ',' << format_real(p.loss) << ',';
        if (p.minibatch_loss) out << format_real(*p.minibatch_loss);
        out << '\n';
    }
}

inline std::string trace_csv_string(const Trace& trace) {
    std::ostringstream os;
    write_trace_csv(os, trace);
    return os.str();
}

/// Only the logged points are restored; config fields keep their defaults.
inline Trace read_trace_csv(std::istream& in) {
    Trace trace;
    detail::read_csv(in, kTraceHeader, 6, [&](const auto& f, std::size_t ln) {
        TracePoint p;
        p.t = detail::csv_index(f[0], ln);
        p.r_hat = detail::csv_real(f[1], ln);
        p.delta_hat = detail::csv_real(f[2], ln);
        p.gamma_t = detail::csv_real(f[3], ln);
        p.loss = detail::csv_real(f[4], ln);
        if (!detail::trim(f[5]).empty()) p.minibatch_loss = detail::csv_real(f[5], ln);
        if (!trace.points.empty() && p.t <= trace.points.back().t)
            throw ParseError("iteration indices must be strictly increasing", ln);
        trace.points.push_back(p);
    });
    if (!trace.points.empty()) trace.last_finite_t = trace.points.back().t;
    trace.config.T = trace.horizon();
    if (trace.points.size() > 1) {
        std::size_t stride = trace.points[1].t - trace.points[0].t;
        for (std::size_t k = 2; k < trace.points.size(); ++k)
            stride = std::min(stride, trace.points[k].t - trace.points[k - 1].t);
        trace.config.log_stride = std::max<std::size_t>(1, stride);
    }
    return trace;
}

inline void write_trace_file(const std::string& path, const Trace& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    write_trace_csv(out, trace);
}

inline Trace read_trace_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open trace '" + path + "'");
    return read_trace_csv(in);
}

inline void write_ensemble_csv(std::ostream& out, const EnsembleTrace& e) {
    out << kEnsembleHeader << '\n';
    for (const auto& p : e.points) {
        out << p.t << ',' << format_real(p.r_hat_mean) << ',' << format_real(p.r_hat_sd) << ','
            << format_real(p.delta_hat_mean) << ',' << format_real(p.delta_hat_sd) << ','
            << format_real(p.loss_mean) << ',' << format_real(p.loss_sd) << ',' << format_real(p.gamma_t) << '\n';
    }
}

inline EnsembleTrace read_ensemble_csv(std::istream& in) {
    EnsembleTrace e;
    detail::read_csv(in, kEnsembleHeader, 8, [&](const auto& f, std::size_t ln) {
        EnsemblePoint p;
        p.t = detail::csv_index(f[0], ln);
        p.r_hat_mean = detail::csv_real(f[1], ln);
        p.r_hat_sd = detail::csv_real(f[2], ln);
        p.delta_hat_mean = detail::csv_real(f[3], ln);
        p.delta_hat_sd = detail::csv_real(f[4], ln);
        p.loss_mean = detail::csv_real(f[5], ln);
        p.loss_sd = detail::csv_real(f[6], ln);
        p.gamma_t = detail::csv_real(f[7], ln);
        e.points.push_back(p);
    });
    return e;
}

inline void write_density_csv(std::ostream& out, const std::vector<DensityReport>& rows) {
    out << kDensityHeader << '\n';
    for (const auto& d : rows) {
        out << format_real(d.epsilon) << ',' << format_real(d.eta) << ',' << d.T << ',' << d.count << ','
            << format_real(d.density) << ',';
        if (d.theory_lower_bound) out << format_real(*d.theory_lower_bound);
        out << '\n';
    }
}

/// Reads back epsilon, eta, T, count, density and theory_lb; window fields stay unset.
inline std::vector<DensityReport> read_density_csv(std::istream& in) {
    std::vector<DensityReport> rows;
    detail::read_csv(in, kDensityHeader, 6, [&](const auto& f, std::size_t ln) {
        DensityReport d;
        d.epsilon = detail::csv_real(f[0], ln);
        d.eta = detail::csv_real(f[1], ln);
        d.T = detail::csv_index(f[2], ln);
        d.count = detail::csv_index(f[3], ln);
        d.density = detail::csv_real(f[4], ln);
        if (!detail::trim(f[5]).empty()) d.theory_lower_bound = detail::csv_real(f[5], ln);
        rows.push_back(d);
    });
    return rows;
}

}  // namespace tailsgd
