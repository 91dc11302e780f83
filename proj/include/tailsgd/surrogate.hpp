#pragma once

// Deterministic stand-in for the LIBSVM a1a file when the real file is not
// available: 1605 rows, 123 binary features one-hot encoded over the 14
// attribute groups of the UCI adult data (group sizes sum to 123), occasional
// missing attributes, and labels drawn from a planted logistic model with a
// positive rate near a1a's (about 24.6%).

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tailsgd/data.hpp"
#include "tailsgd/rng.hpp"

namespace tailsgd {

inline constexpr std::size_t kA1aRows = 1605;
inline constexpr std::size_t kA1aDim = 123;

inline RawDataset make_a1a_surrogate(std::uint64_t seed = 20240601) {
    // age, workclass, fnlwgt, education, education-num, marital-status,
    // occupation, relationship, race, sex, capital-gain, capital-loss,
    // hours-per-week, native-country
    constexpr std::array<std::size_t, 14> group_sizes{5, 8, 5, 16, 5, 7, 14, 6, 5, 2, 2, 2, 5, 41};
    constexpr std::array<double, 14> missing_rate{0, 0.05, 0, 0, 0, 0, 0.05, 0, 0, 0, 0, 0, 0, 0.02};

    Rng rng(seed);
    std::vector<std::vector<double>> category_weights;
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (std::size_t g = 0; g < group_sizes.size(); ++g) {
        std::vector<double> w(group_sizes[g]);
        double total = 0.0;
        for (auto& v : w) {
            v = std::exp(1.2 * rng.normal());
            total += v;
        }
        for (auto& v : w) v /= total;
        category_weights.push_back(std::move(w));
        offsets.push_back(offset);
        offset += group_sizes[g];
    }

    std::vector<double> planted(kA1aDim);
    for (auto& v : planted) v = 0.9 * rng.normal();

    std::vector<std::vector<std::size_t>> active(kA1aRows);
    std::vector<double> score(kA1aRows, 0.0);
    for (std::size_t i = 0; i < kA1aRows; ++i) {
        for (std::size_t g = 0; g < group_sizes.size(); ++g) {
            const double u = rng.uniform01();
            const bool missing = rng.uniform01() < missing_rate[g];
            if (missing) continue;
            double acc = 0.0;
            std::size_t pick = group_sizes[g] - 1;
            for (std::size_t k = 0; k < group_sizes[g]; ++k) {
                acc += category_weights[g][k];
                if (u < acc) {
                    pick = k;
                    break;
                }
            }
            active[i].push_back(offsets[g] + pick);
        }
    }
    // dim is the max index seen, so make sure the last country column occurs.
    bool has_last = false;
    for (const auto& a : active) has_last = has_last || (!a.empty() && a.back() == kA1aDim - 1);
    for (std::size_t i = 0; !has_last && i < kA1aRows; ++i) {
        if (!active[i].empty() && active[i].back() >= offsets.back()) {
            active[i].back() = kA1aDim - 1;
            has_last = true;
        }
    }
    for (std::size_t i = 0; i < kA1aRows; ++i)
        for (std::size_t j : active[i]) score[i] += planted[j];

    // Intercept chosen by bisection so the expected positive rate is 0.246.
    const auto positive_rate = [&](double b) {
        double s = 0.0;
        for (double z : score) s += 1.0 / (1.0 + std::exp(-(z + b)));
        return s / static_cast<double>(kA1aRows);
    };
    double lo = -30.0, hi = 30.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (positive_rate(mid) < 0.246 ? lo : hi) = mid;
    }
    const double bias = 0.5 * (lo + hi);

    RawDataset raw;
    raw.dim = kA1aDim;
    for (std::size_t i = 0; i < kA1aRows; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-(score[i] + bias)));
        const double label = rng.uniform01() < p ? 1.0 : -1.0;
        std::vector<SparseEntry> entries;
        for (std::size_t j : active[i]) entries.push_back({j, 1.0});
        raw.rows.push_back({label, SparseVector(std::move(entries), kA1aDim)});
    }
    return raw;
}

struct LoadedDataset {
    Dataset data;
    bool is_real_a1a = false;
};

/// The real a1a file from `path`, $TAILSGD_A1A, or ./data/a1a if any exists;
/// otherwise the surrogate.
inline LoadedDataset load_a1a_or_surrogate(const std::string& path = "") {
    std::vector<std::string> candidates;
    if (!path.empty()) candidates.push_back(path);
    if (const char* env = std::getenv("TAILSGD_A1A")) candidates.emplace_back(env);
    candidates.emplace_back("data/a1a");
    for (const auto& c : candidates) {
        if (std::filesystem::is_regular_file(c)) {
            return {fold_labels(parse_libsvm_file(c, kA1aDim), "libsvm:" + c), true};
        }
    }
    return {fold_labels(make_a1a_surrogate(), "synthetic:a1a_surrogate"), false};
}

}  // namespace tailsgd
