#pragma once

// LIBSVM text ingestion, label folding, and the two sampling regimes
// (iid with replacement, per-epoch random permutation).

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tailsgd/core.hpp"
#include "tailsgd/rng.hpp"

namespace tailsgd {

struct LabeledRow {
    double label = 0.0;
    SparseVector features;
};

struct RawDataset {
    std::vector<LabeledRow> rows;
    std::size_t dim = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_real(std::string_view tok) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
    return v;
}

inline std::optional<std::size_t> parse_index(std::string_view tok) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
    return v;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_shortest(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace detail

/// Parses `<label> <idx>:<val> ...` lines with 1-based strictly increasing
/// indices. Blank lines and `#` comments are skipped; explicit zero values are
/// dropped. dim is the largest index seen unless `dim_override` is given.
inline RawDataset parse_libsvm(std::istream& in, std::optional<std::size_t> dim_override = std::nullopt) {
    struct Pending {
        double label;
        std::vector<SparseEntry> entries;
    };
    std::vector<Pending> pending;
    std::size_t max_index = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        view = detail::trim(view);
        if (view.empty()) continue;

        Pending row{};
        bool first = true;
        std::size_t prev = 0;
        while (!view.empty()) {
            const auto end = view.find_first_of(" \t");
            const std::string_view tok = view.substr(0, end);
            view = end == std::string_view::npos ? std::string_view{} : detail::trim(view.substr(end));
            if (first) {
                const auto label = detail::parse_real(tok);
                if (!label) throw ParseError("malformed label '" + std::string(tok) + "'", line_no);
                row.label = *label;
                first = false;
                continue;
            }
            const auto colon = tok.find(':');
            if (colon == std::string_view::npos)
                throw ParseError("malformed feature token '" + std::string(tok) + "'", line_no);
            const auto idx = detail::parse_index(tok.substr(0, colon));
            const auto val = detail::parse_real(tok.substr(colon + 1));
            if (!idx || !val || *idx == 0)
                throw ParseError("malformed feature token '" + std::string(tok) + "'", line_no);
            if (*idx <= prev) throw ParseError("feature indices must be strictly increasing", line_no);
            prev = *idx;
            max_index = std::max(max_index, *idx);
            if (*val != 0.0) row.entries.push_back({*idx - 1, *val});
        }
        pending.push_back(std::move(row));
    }
    if (pending.empty()) throw ParseError("empty dataset", 0);

    std::size_t dim = max_index;
    if (dim_override) {
        if (*dim_override < max_index)
            throw Error("dim override " + std::to_string(*dim_override) + " is below max index " +
                        std::to_string(max_index));
        dim = *dim_override;
    }
    RawDataset raw;
    raw.dim = dim;
    raw.rows.reserve(pending.size());
    for (auto& p : pending) raw.rows.push_back({p.label, SparseVector(std::move(p.entries), dim)});
    return raw;
}

inline RawDataset parse_libsvm_file(const std::string& path, std::optional<std::size_t> dim_override = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset '" + path + "'");
    return parse_libsvm(in, dim_override);
}

inline void write_libsvm(std::ostream& out, const RawDataset& raw) {
    for (const auto& row : raw.rows) {
        out << (row.label > 0 ? "+" : "") << detail::format_shortest(row.label);
        for (const auto& e : row.features.entries())
            out << ' ' << (e.index + 1) << ':' << detail::format_shortest(e.value);
        out << '\n';
    }
}

/// a_i := y_i * x_i so the loss needs no labels. Labels must be +1 or -1.
inline Dataset fold_labels(const RawDataset& raw, std::string provenance = "unknown") {
    std::vector<SparseVector> rows;
    rows.reserve(raw.rows.size());
    for (std::size_t i = 0; i < raw.rows.size(); ++i) {
        const double y = raw.rows[i].label;
        if (y != 1.0 && y != -1.0)
            throw Error("row " + std::to_string(i + 1) + ": label must be +1 or -1");
        rows.push_back(y == 1.0 ? raw.rows[i].features : raw.rows[i].features.scaled(-1.0));
    }
    return Dataset(std::move(rows), raw.dim, std::move(provenance));
}

struct MinibatchSample {
    std::vector<std::size_t> indices;
    std::size_t t = 0;
};

struct EpochPermutation {
    std::vector<std::size_t> perm;
    std::size_t epoch = 0;
};

/// batch_size indices drawn uniformly from [0, n) with replacement.
inline MinibatchSample sample_iid(std::size_t n, std::size_t batch_size, Rng& rng, std::size_t t = 0) {
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    MinibatchSample s;
    s.t = t;
    s.indices.resize(batch_size);
    for (auto& idx : s.indices) idx = static_cast<std::size_t>(rng.uniform_index(n));
    return s;
}

/// Uniform random permutation of [0, n) by Fisher-Yates.
inline EpochPermutation next_permutation(std::size_t n, Rng& rng, std::size_t epoch) {
    if (n < 1) throw Error("permutation size must be >= 1");
    EpochPermutation p;
    p.epoch = epoch;
    p.perm.resize(n);
    std::iota(p.perm.begin(), p.perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_index(i + 1));
        std::swap(p.perm[i], p.perm[j]);
    }
    return p;
}

}  // namespace tailsgd
