#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cohort.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "util.hpp"

namespace vcohort {

inline double mae(const std::vector<double>& predictions, const std::vector<double>& targets) {
    if (predictions.size() != targets.size()) throw ContractError("mae: length mismatch");
    if (predictions.empty()) throw ContractError("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(predictions[i] - targets[i]);
    return s / static_cast<double>(predictions.size());
}

// Last observed value of the target feature among the inputs (no-change hypothesis).
inline std::optional<double> constant_baseline(const PredictionPair& pair) {
    for (auto it = pair.input_visits.rbegin(); it != pair.input_visits.rend(); ++it)
        if (it->mask[pair.target_feature_index]) return it->values[static_cast<Eigen::Index>(pair.target_feature_index)];
    return std::nullopt;
}

struct BaselineScore {
    double mae = 0.0;
    std::size_t n_used = 0;
    std::size_t n_excluded = 0;  // target feature never observed in the inputs
};

inline BaselineScore constant_baseline_mae(const std::vector<PredictionPair>& pairs) {
    std::vector<double> pred, target;
    BaselineScore out;
    for (const auto& p : pairs) {
        if (auto b = constant_baseline(p)) {
            pred.push_back(*b);
            target.push_back(p.target_value);
        } else {
            ++out.n_excluded;
        }
    }
    out.n_used = pred.size();
    if (!pred.empty()) out.mae = mae(pred, target);
    return out;
}

// Mean absolute deviation of a centered Gaussian with std raw_std, on the
// normalized scale.
inline double noise_floor(double raw_std, double raw_max) {
    if (!(raw_std >= 0.0) || !(raw_max > 0.0)) throw ContractError("noise_floor: need raw_std >= 0 and raw_max > 0");
    return (raw_std / raw_max) * std::sqrt(2.0 / kPi);
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw ContractError("ks_statistic: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

inline std::vector<double> pooled_values(const Dataset& ds, std::size_t feature) {
    std::vector<double> v;
    for (const auto& p : ds.patients)
        for (const auto& visit : p.visits)
            if (visit.mask[feature]) v.push_back(visit.values[static_cast<Eigen::Index>(feature)]);
    return v;
}

inline constexpr int kReportBins = 30;

struct FeatureDistribution {
    std::string name;
    bool present = true;  // false when either cohort has no observed value
    std::vector<double> real_hist, simulated_hist;  // bin fractions on [0, 1]
    std::vector<double> real_cdf, simulated_cdf;    // empirical CDF at upper bin edges
    double ks = 0.0;
    std::size_t n_real = 0, n_simulated = 0;
};

namespace detail {

inline void histogram_and_cdf(const std::vector<double>& values, std::vector<double>& hist, std::vector<double>& cdf) {
    hist.assign(kReportBins, 0.0);
    for (double v : values) {
        const int bin = std::clamp(static_cast<int>(v * kReportBins), 0, kReportBins - 1);
        hist[static_cast<std::size_t>(bin)] += 1.0;
    }
    cdf.assign(kReportBins, 0.0);
    double acc = 0.0;
    for (int b = 0; b < kReportBins; ++b) {
        hist[static_cast<std::size_t>(b)] /= static_cast<double>(values.size());
        acc += hist[static_cast<std::size_t>(b)];
        cdf[static_cast<std::size_t>(b)] = acc;
    }
}

}  // namespace detail

inline std::vector<FeatureDistribution> distribution_report(const Dataset& real, const Dataset& simulated) {
    if (real.feature_names() != simulated.feature_names())
        throw ContractError("distribution_report: feature sets differ");
    std::vector<FeatureDistribution> out;
    for (std::size_t k = 0; k < real.dim(); ++k) {
        FeatureDistribution fd;
        fd.name = real.features[k].name;
        const auto a = pooled_values(real, k);
        const auto b = pooled_values(simulated, k);
        fd.n_real = a.size();
        fd.n_simulated = b.size();
        if (a.empty() || b.empty()) {
            fd.present = false;
        } else {
            detail::histogram_and_cdf(a, fd.real_hist, fd.real_cdf);
            detail::histogram_and_cdf(b, fd.simulated_hist, fd.simulated_cdf);
            fd.ks = ks_statistic(a, b);
        }
        out.push_back(std::move(fd));
    }
    return out;
}

}  // namespace vcohort
