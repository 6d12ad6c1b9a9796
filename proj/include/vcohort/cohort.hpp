#pragma once

// Cohort ingestion and the ΔT prediction-pair construction.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "util.hpp"

namespace vcohort {

inline constexpr std::string_view kSimulatedPrefix = "sim-";

// Absorbs floating-point error in visit-interval comparisons.
inline constexpr double kAgeEpsilon = 1e-9;

inline double normalize(double raw, const FeatureSpec& spec) {
    const double v = raw / spec.raw_max;
    return spec.direction == Direction::decreasing ? 1.0 - v : v;
}

inline double denormalize(double value, const FeatureSpec& spec) {
    const double v = spec.direction == Direction::decreasing ? 1.0 - value : value;
    return v * spec.raw_max;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last && std::isfinite(out);
}

inline std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

}  // namespace detail

// CSV columns: patient_id, age, then one column per feature (blank = missing).
// Rows without any observed feature carry no information and are skipped.
inline Dataset parse_dataset(std::istream& in, const std::vector<FeatureSpec>& specs) {
    for (const auto& s : specs)
        if (!(s.raw_max > 0.0)) throw ConfigError("feature '" + s.name + "' has non-positive raw_max");
    std::string line;
    if (!std::getline(in, line)) throw DataError("row 1: missing header");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || detail::trim(header[0]) != "patient_id" || detail::trim(header[1]) != "age")
        throw DataError("row 1: header must start with patient_id,age");

    std::vector<std::size_t> column_feature;  // header column -> spec index
    std::set<std::size_t> seen;
    for (std::size_t c = 2; c < header.size(); ++c) {
        const std::string name = detail::trim(header[c]);
        auto it = std::find_if(specs.begin(), specs.end(), [&](const FeatureSpec& s) { return s.name == name; });
        if (it == specs.end()) throw DataError("row 1: unknown column '" + name + "'");
        const auto k = static_cast<std::size_t>(it - specs.begin());
        if (!seen.insert(k).second) throw DataError("row 1: duplicate column '" + name + "'");
        column_feature.push_back(k);
    }
    for (std::size_t k = 0; k < specs.size(); ++k)
        if (!seen.count(k)) throw DataError("row 1: missing column '" + specs[k].name + "'");

    Dataset ds;
    ds.features = specs;
    std::map<std::string, std::size_t> index;
    const std::size_t d = specs.size();
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        const std::string where = "row " + std::to_string(row) + ": ";
        if (cells.size() != header.size()) throw DataError(where + "expected " + std::to_string(header.size()) + " cells");
        const std::string id = detail::trim(cells[0]);
        if (id.empty()) throw DataError(where + "empty patient_id");
        Visit v;
        if (!detail::parse_double(detail::trim(cells[1]), v.age)) throw DataError(where + "non-numeric age");
        v.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
        v.mask.assign(d, false);
        for (std::size_t c = 2; c < cells.size(); ++c) {
            const std::string cell = detail::trim(cells[c]);
            if (cell.empty()) continue;
            const std::size_t k = column_feature[c - 2];
            double raw = 0.0;
            if (!detail::parse_double(cell, raw)) throw DataError(where + "non-numeric value for '" + specs[k].name + "'");
            if (raw < 0.0 || raw > specs[k].raw_max)
                throw DataError(where + "value " + cell + " outside [0, " + detail::format_double(specs[k].raw_max) +
                                "] for '" + specs[k].name + "'");
            v.values[static_cast<Eigen::Index>(k)] = normalize(raw, specs[k]);
            v.mask[k] = true;
        }
        if (v.n_observed() == 0) continue;
        auto [it, inserted] = index.emplace(id, ds.patients.size());
        if (inserted) ds.patients.push_back({id, {}});
        ds.patients[it->second].visits.push_back(std::move(v));
    }
    for (auto& p : ds.patients) {
        std::stable_sort(p.visits.begin(), p.visits.end(),
                         [](const Visit& a, const Visit& b) { return a.age < b.age; });
        for (std::size_t j = 1; j < p.visits.size(); ++j)
            if (p.visits[j].age == p.visits[j - 1].age)
                throw DataError("patient '" + p.id + "': two visits at age " + detail::format_double(p.visits[j].age));
    }
    return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, const std::vector<FeatureSpec>& specs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return parse_dataset(in, specs);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline std::string format_dataset(const Dataset& ds) {
    std::ostringstream out;
    out << "patient_id,age";
    for (const auto& f : ds.features) out << ',' << f.name;
    out << '\n';
    for (const auto& p : ds.patients) {
        for (const auto& v : p.visits) {
            out << p.id << ',' << detail::format_double(v.age);
            for (std::size_t k = 0; k < ds.dim(); ++k) {
                out << ',';
                if (v.mask[k]) out << detail::format_double(denormalize(v.values[static_cast<Eigen::Index>(k)], ds.features[k]));
            }
            out << '\n';
        }
    }
    return out.str();
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
    write_file_atomic(path, format_dataset(ds));
}

struct PredictionPair {
    std::string patient_id;
    std::vector<Visit> input_visits;
    double target_age = 0.0;
    double target_value = 0.0;
    std::size_t target_feature_index = 0;
    double delta_t = 0.0;
    std::size_t last_input_index = 0;  // visit indices in the source series
    std::size_t target_index = 0;
};

struct SplitResult {
    std::vector<PredictionPair> pairs;
    std::vector<std::string> discarded_ids;
};

// All (k, p*) with t_p* - t_k within delta_t ± tolerance and the target
// feature observed at p*.
inline std::vector<std::pair<std::size_t, std::size_t>> admissible_pairs(const PatientSeries& p, double delta_t,
                                                                         double tolerance, std::size_t feature) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t k = 0; k < p.visits.size(); ++k) {
        for (std::size_t t = k + 1; t < p.visits.size(); ++t) {
            const double gap = p.visits[t].age - p.visits[k].age;
            if (std::abs(gap - delta_t) <= tolerance + kAgeEpsilon && p.visits[t].mask[feature])
                out.emplace_back(k, t);
        }
    }
    return out;
}

inline PredictionPair make_prediction_pair(const PatientSeries& p, std::size_t last_input, std::size_t target,
                                           std::size_t feature, double delta_t) {
    PredictionPair pair;
    pair.patient_id = p.id;
    pair.input_visits.assign(p.visits.begin(), p.visits.begin() + static_cast<std::ptrdiff_t>(last_input + 1));
    pair.target_age = p.visits[target].age;
    pair.target_value = p.visits[target].values[static_cast<Eigen::Index>(feature)];
    pair.target_feature_index = feature;
    pair.delta_t = delta_t;
    pair.last_input_index = last_input;
    pair.target_index = target;
    return pair;
}

inline SplitResult split_delta_t(const Dataset& ds, double delta_t, double tolerance, std::size_t feature_index,
                                 Rng& rng) {
    if (!(delta_t > 0.0)) throw ContractError("split_delta_t: delta_t must be positive");
    if (!(tolerance >= 0.0)) throw ContractError("split_delta_t: tolerance must be non-negative");
    if (feature_index >= ds.dim()) throw ContractError("split_delta_t: feature index out of range");
    SplitResult out;
    for (const auto& p : ds.patients) {
        const auto candidates = admissible_pairs(p, delta_t, tolerance, feature_index);
        if (candidates.empty()) {
            out.discarded_ids.push_back(p.id);
            continue;
        }
        const auto [k, t] = candidates[uniform_index(rng, candidates.size())];
        out.pairs.push_back(make_prediction_pair(p, k, t, feature_index, delta_t));
    }
    return out;
}

struct PartitionScheme {
    double test_fraction = 0.5;
    double validation_fraction = 0.1;
    double delta_t = 1.0;
    double tolerance = 0.25;
    std::size_t feature_index = 0;
};

struct Partition {
    Dataset estimation;
    Dataset test;
    Dataset validation;
    // Estimation-set patients that had at least one admissible pair.
    std::vector<std::string> estimation_eligible_ids;
};

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.features = ds.features;
    for (std::size_t i : indices) out.patients.push_back(ds.patients[i]);
    return out;
}

// Patient-level split. Subjects without an admissible ΔT pair always go to
// the estimation set; eligible subjects are shuffled and cut with floor
// rounding per named set, the remainder joining estimation.
inline Partition partition(const Dataset& ds, const PartitionScheme& scheme, Rng& rng) {
    if (scheme.test_fraction < 0.0 || scheme.validation_fraction < 0.0 ||
        scheme.test_fraction + scheme.validation_fraction > 1.0)
        throw ConfigError("partition: fractions must be non-negative and sum to at most 1");
    std::vector<std::size_t> eligible, discarded;
    for (std::size_t i = 0; i < ds.patients.size(); ++i) {
        if (admissible_pairs(ds.patients[i], scheme.delta_t, scheme.tolerance, scheme.feature_index).empty())
            discarded.push_back(i);
        else
            eligible.push_back(i);
    }
    for (std::size_t i = eligible.size(); i > 1; --i) std::swap(eligible[i - 1], eligible[uniform_index(rng, i)]);

    const auto n = static_cast<double>(eligible.size());
    const auto n_test = static_cast<std::size_t>(std::floor(scheme.test_fraction * n + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(scheme.validation_fraction * n + 1e-9));
    if (n_test == 0) throw DataError("partition: empty test set (" + std::to_string(eligible.size()) + " eligible patients)");

    std::vector<std::size_t> test(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> val(eligible.begin() + static_cast<std::ptrdiff_t>(n_test),
                                 eligible.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    std::vector<std::size_t> est_eligible(eligible.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), eligible.end());
    std::vector<std::size_t> est = discarded;
    est.insert(est.end(), est_eligible.begin(), est_eligible.end());
    for (auto* v : {&test, &val, &est, &est_eligible}) std::sort(v->begin(), v->end());

    Partition out;
    out.estimation = subset(ds, est);
    out.test = subset(ds, test);
    out.validation = subset(ds, val);
    for (std::size_t i : est_eligible) out.estimation_eligible_ids.push_back(ds.patients[i].id);
    return out;
}

inline Dataset select_patients(const Dataset& ds, const std::vector<std::string>& ids) {
    const std::set<std::string> wanted(ids.begin(), ids.end());
    Dataset out;
    out.features = ds.features;
    for (const auto& p : ds.patients)
        if (wanted.count(p.id)) out.patients.push_back(p);
    return out;
}

// True iff every training id is simulated and none matches a real estimation id.
inline bool strict_simulated_training_guard(const Dataset& training, const std::vector<std::string>& estimation_ids) {
    const std::set<std::string> real(estimation_ids.begin(), estimation_ids.end());
    for (const auto& p : training.patients) {
        if (!p.id.starts_with(kSimulatedPrefix)) return false;
        if (real.count(p.id)) return false;
    }
    return true;
}

}  // namespace vcohort
