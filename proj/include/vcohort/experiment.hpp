#pragma once

// End-to-end experiments comparing a predictor trained on the real training
// split ("standard") with one trained on a virtual cohort simulated from a
// model calibrated on the estimation split ("augmented").
//
// Every stage of every run draws from its own stream derived from
// (seed, run, stage), so both modes see identical partitions and test pairs
// for a given seed and results do not depend on the thread count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "calibration.hpp"
#include "cohort.hpp"
#include "errors.hpp"
#include "lstm.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "personalization.hpp"
#include "simulation.hpp"
#include "util.hpp"

namespace vcohort {

enum class ExperimentMode { standard, augmented };

inline std::string to_string(ExperimentMode m) { return m == ExperimentMode::standard ? "standard" : "augmented"; }

struct ExperimentConfig {
    ExperimentMode mode = ExperimentMode::augmented;
    double delta_t = 3.0;
    double tolerance = 0.25;
    std::string target_feature;             // empty selects the first feature
    std::vector<std::string> feature_set;   // empty selects every feature
    int n_simulated_patients = 500;
    std::vector<int> simulated_sweep;       // extra cohort sizes evaluated in the same runs
    int n_runs = 10;
    std::uint64_t seed = 0;
    double test_fraction = 0.5;
    double validation_fraction = 0.15;
    bool strict_guard = true;               // train on simulated patients only
    int simulated_min_visits = 0;           // 0 derives ceil(delta_t / spacing) + 2
    int simulated_max_visits = 0;           // 0 derives ceil(delta_t / spacing) + 5
    double visit_spacing = 1.0;
    bool simulate_noise = true;
    double noise_raw_std_lo = 1.3;          // test/retest noise in raw target units
    double noise_raw_std_hi = 2.8;
    double flat_tolerance = 0.005;          // MAE spread regarded as flat in the sweep
    SaemConfig saem;
    PersonalizeConfig personalize;
    TrainConfig train;
    unsigned threads = 1;

    void validate() const {
        if (n_runs < 1) throw ConfigError("experiment.n_runs must be >= 1");
        if (!(delta_t > 0.0)) throw ConfigError("experiment.delta_t must be positive");
        if (!(tolerance >= 0.0)) throw ConfigError("experiment.tolerance must be non-negative");
        if (n_simulated_patients < 1) throw ConfigError("experiment.n_simulated_patients must be >= 1");
        for (int n : simulated_sweep)
            if (n < 1) throw ConfigError("experiment.simulated_sweep entries must be >= 1");
        if (!(visit_spacing > 0.0)) throw ConfigError("experiment.visit_spacing must be positive");
        if (!(noise_raw_std_lo >= 0.0 && noise_raw_std_hi >= noise_raw_std_lo))
            throw ConfigError("experiment noise band must satisfy 0 <= lo <= hi");
        saem.validate();
        personalize.validate();
        train.validate();
    }
};

struct RunRecord {
    int run = 0;
    int n_simulated = 0;  // 0 in standard mode
    double mae = 0.0;
    double baseline_mae = 0.0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::size_t n_validation = 0;
    std::size_t n_estimation = 0;
    std::size_t n_baseline_excluded = 0;
    int epochs = 0;
    bool guard_checked = false;
    bool guard_passed = false;
    std::size_t real_ids_in_training = 0;
};

struct RunFailure {
    int run = 0;
    std::string stage;
    std::string message;
};

struct SizeSummary {
    int n_simulated = 0;
    std::vector<int> runs;    // run index of each entry in `mae`
    std::vector<double> mae;  // per successful run
    double mean = 0.0;
    double std = 0.0;
    // Paired MAE change from the next smaller size, over runs that succeeded
    // at both sizes; zero for the smallest size.
    double step_mean = 0.0;
    double step_se = 0.0;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::string target_feature;
    std::vector<std::string> feature_set;
    std::vector<RunRecord> runs;  // every (run, cohort size) evaluation
    std::vector<double> per_run_mae;  // primary cohort size, successful runs
    double mean_mae = 0.0;
    double std_mae = 0.0;
    double min_mae = 0.0;
    double max_mae = 0.0;
    double baseline_mean_mae = 0.0;
    double noise_lo = 0.0;
    double noise_hi = 0.0;
    double mean_n_train = 0.0;
    double mean_n_test = 0.0;
    std::vector<SizeSummary> sweep;
    std::string sweep_trend;  // "flat", "monotone", "non-monotone" or empty
    std::vector<RunFailure> failures;
    bool partial = false;
    double wall_clock_seconds = 0.0;
};

namespace detail {

enum Stage : std::uint64_t {
    kPartition = 1,
    kTestSplit,
    kValidationSplit,
    kTrainSplit,
    kCalibration,
    kPersonalization,
    kSimulation,
    kSimulatedSplit,
    kTraining,
};

inline Dataset restrict_features(const Dataset& ds, const std::vector<std::size_t>& keep) {
    Dataset out;
    for (std::size_t k : keep) out.features.push_back(ds.features[k]);
    for (const auto& p : ds.patients) {
        PatientSeries q{p.id, {}};
        for (const auto& v : p.visits) {
            Visit w;
            w.age = v.age;
            w.values.resize(static_cast<Eigen::Index>(keep.size()));
            w.mask.resize(keep.size());
            for (std::size_t j = 0; j < keep.size(); ++j) {
                w.values[static_cast<Eigen::Index>(j)] = v.values[static_cast<Eigen::Index>(keep[j])];
                w.mask[j] = v.mask[keep[j]];
            }
            if (w.n_observed() > 0) q.visits.push_back(std::move(w));
        }
        if (!q.visits.empty()) out.patients.push_back(std::move(q));
    }
    return out;
}

// Sizes must be sorted ascending. Every size shares the run's partition and
// test pairs, so consecutive sizes are compared run by run.
inline void fill_paired_steps(std::vector<SizeSummary>& sweep) {
    for (std::size_t i = 1; i < sweep.size(); ++i) {
        std::vector<double> diff;
        for (std::size_t a = 0; a < sweep[i].runs.size(); ++a)
            for (std::size_t b = 0; b < sweep[i - 1].runs.size(); ++b)
                if (sweep[i].runs[a] == sweep[i - 1].runs[b]) diff.push_back(sweep[i].mae[a] - sweep[i - 1].mae[b]);
        sweep[i].step_mean = mean_of(diff);
        sweep[i].step_se = diff.size() < 2 ? 0.0 : stddev_of(diff) / std::sqrt(static_cast<double>(diff.size()));
    }
}

// "flat" when every mean lies within flat_tolerance of every other. Otherwise
// "monotone" unless some step up in size raises the paired MAE by more than
// both flat_tolerance and two paired standard errors.
inline std::string classify_trend(const std::vector<SizeSummary>& sweep, double flat_tolerance) {
    if (sweep.size() < 2) return {};
    double lo = sweep.front().mean, hi = sweep.front().mean;
    bool monotone = true;
    for (std::size_t i = 1; i < sweep.size(); ++i) {
        lo = std::min(lo, sweep[i].mean);
        hi = std::max(hi, sweep[i].mean);
        if (sweep[i].step_mean > std::max(flat_tolerance, 2.0 * sweep[i].step_se)) monotone = false;
    }
    if (hi - lo <= flat_tolerance) return "flat";
    return monotone ? "monotone" : "non-monotone";
}

}  // namespace detail

inline ExperimentReport run_experiment(const Dataset& data, const ExperimentConfig& cfg) {
    const auto started = std::chrono::steady_clock::now();
    cfg.validate();
    validate(data);

    std::vector<std::size_t> keep;
    if (cfg.feature_set.empty()) {
        for (std::size_t k = 0; k < data.dim(); ++k) keep.push_back(k);
    } else {
        for (const auto& name : cfg.feature_set) {
            auto it = std::find_if(data.features.begin(), data.features.end(),
                                   [&](const FeatureSpec& f) { return f.name == name; });
            if (it == data.features.end()) throw ConfigError("unknown feature '" + name + "' in feature_set");
            keep.push_back(static_cast<std::size_t>(it - data.features.begin()));
        }
    }
    const Dataset ds = detail::restrict_features(data, keep);
    const std::string target = cfg.target_feature.empty() ? ds.features.front().name : cfg.target_feature;
    const auto names = ds.feature_names();
    const auto target_it = std::find(names.begin(), names.end(), target);
    if (target_it == names.end()) throw ConfigError("target feature '" + target + "' not in feature set");
    const auto feature = static_cast<std::size_t>(target_it - names.begin());
    const std::size_t d = ds.dim();

    std::vector<int> sizes;
    if (cfg.mode == ExperimentMode::augmented) {
        sizes.push_back(cfg.n_simulated_patients);
        for (int n : cfg.simulated_sweep)
            if (std::find(sizes.begin(), sizes.end(), n) == sizes.end()) sizes.push_back(n);
    } else {
        sizes.push_back(0);
    }

    const int spacing_steps = static_cast<int>(std::ceil(cfg.delta_t / cfg.visit_spacing - 1e-9));
    const int sim_min = cfg.simulated_min_visits > 0 ? cfg.simulated_min_visits : spacing_steps + 2;
    const int sim_max = cfg.simulated_max_visits > 0 ? cfg.simulated_max_visits : spacing_steps + 5;

    ExperimentReport report;
    report.config = cfg;
    report.target_feature = target;
    report.feature_set = names;
    const FeatureSpec& spec = ds.features[feature];
    report.noise_lo = noise_floor(cfg.noise_raw_std_lo, spec.raw_max);
    report.noise_hi = noise_floor(cfg.noise_raw_std_hi, spec.raw_max);

    std::vector<std::vector<RunRecord>> records(static_cast<std::size_t>(cfg.n_runs));
    std::vector<std::vector<RunFailure>> failures(static_cast<std::size_t>(cfg.n_runs));

    parallel_for(static_cast<std::size_t>(cfg.n_runs), cfg.threads, [&](std::size_t r) {
        const auto run = static_cast<std::uint64_t>(r);
        std::string stage = "partition";
        try {
            PartitionScheme scheme{cfg.test_fraction, cfg.validation_fraction, cfg.delta_t, cfg.tolerance, feature};
            Rng part_rng = make_rng(cfg.seed, run, detail::kPartition);
            const Partition parts = partition(ds, scheme, part_rng);

            stage = "split";
            Rng test_rng = make_rng(cfg.seed, run, detail::kTestSplit);
            Rng val_rng = make_rng(cfg.seed, run, detail::kValidationSplit);
            const auto test_pairs = split_delta_t(parts.test, cfg.delta_t, cfg.tolerance, feature, test_rng).pairs;
            const auto val_pairs = split_delta_t(parts.validation, cfg.delta_t, cfg.tolerance, feature, val_rng).pairs;
            if (val_pairs.empty()) throw DataError("empty validation set");
            std::vector<double> targets;
            for (const auto& p : test_pairs) targets.push_back(p.target_value);
            const BaselineScore baseline = constant_baseline_mae(test_pairs);

            Rng train_rng = make_rng(cfg.seed, run, detail::kTrainSplit);
            const Dataset real_train = select_patients(parts.estimation, parts.estimation_eligible_ids);
            const auto real_train_pairs = split_delta_t(real_train, cfg.delta_t, cfg.tolerance, feature, train_rng).pairs;

            TrainConfig tcfg = cfg.train;
            tcfg.seed = derive_seed(cfg.seed, run, detail::kTraining);

            auto evaluate = [&](const std::vector<PredictionPair>& train_pairs, RunRecord rec) {
                stage = "train";
                if (train_pairs.empty()) throw DataError("empty training set");
                const TrainResult fit = train(train_pairs, val_pairs, d, tcfg);
                stage = "evaluate";
                rec.run = static_cast<int>(r);
                rec.mae = mae(predict(fit.params, test_pairs, d), targets);
                rec.baseline_mae = baseline.mae;
                rec.n_baseline_excluded = baseline.n_excluded;
                rec.n_train = train_pairs.size();
                rec.n_test = test_pairs.size();
                rec.n_validation = val_pairs.size();
                rec.n_estimation = parts.estimation.patients.size();
                rec.epochs = static_cast<int>(fit.history.size());
                records[r].push_back(rec);
            };

            if (cfg.mode == ExperimentMode::standard) {
                evaluate(real_train_pairs, RunRecord{});
                return;
            }

            stage = "calibrate";
            SaemConfig scfg = cfg.saem;
            scfg.seed = derive_seed(cfg.seed, run, detail::kCalibration);
            scfg.threads = 1;
            const CalibrationResult calib = calibrate(parts.estimation, scfg);

            stage = "personalize";
            PersonalizeConfig pcfg = cfg.personalize;
            pcfg.seed = derive_seed(cfg.seed, run, detail::kPersonalization);
            pcfg.threads = 1;
            const auto fitted = ordered_effects(parts.estimation, batch_personalize(parts.estimation, calib.theta, pcfg));

            std::vector<std::string> estimation_ids;
            for (const auto& p : parts.estimation.patients) estimation_ids.push_back(p.id);

            for (std::size_t si = 0; si < sizes.size(); ++si) {
                stage = "simulate";
                SimulationConfig sim;
                sim.n_patients = sizes[si];
                sim.min_visits = sim_min;
                sim.max_visits = sim_max;
                sim.visit_spacing = cfg.visit_spacing;
                sim.baseline_ages = baseline_ages(parts.estimation);
                sim.add_noise = cfg.simulate_noise;
                sim.seed = derive_seed(cfg.seed, run, detail::kSimulation + 16 * static_cast<std::uint64_t>(sizes[si]));
                const Dataset virtual_cohort = simulate_cohort(calib.theta, fitted, sim, ds.features);

                RunRecord rec;
                rec.n_simulated = sizes[si];
                Rng sim_split_rng = make_rng(cfg.seed, run, detail::kSimulatedSplit + 16 * static_cast<std::uint64_t>(sizes[si]));
                auto train_pairs = split_delta_t(virtual_cohort, cfg.delta_t, cfg.tolerance, feature, sim_split_rng).pairs;
                if (cfg.strict_guard) {
                    stage = "guard";
                    rec.guard_checked = true;
                    rec.guard_passed = strict_simulated_training_guard(virtual_cohort, estimation_ids);
                    if (!rec.guard_passed) throw DataError("simulated-only training guard rejected the training set");
                } else {
                    train_pairs.insert(train_pairs.end(), real_train_pairs.begin(), real_train_pairs.end());
                }
                for (const auto& p : train_pairs)
                    if (!p.patient_id.starts_with(kSimulatedPrefix)) ++rec.real_ids_in_training;
                evaluate(train_pairs, rec);
            }
        } catch (const std::exception& e) {
            failures[r].push_back({static_cast<int>(r), stage, e.what()});
        }
    });

    for (std::size_t r = 0; r < records.size(); ++r) {
        report.runs.insert(report.runs.end(), records[r].begin(), records[r].end());
        report.failures.insert(report.failures.end(), failures[r].begin(), failures[r].end());
    }
    report.partial = !report.failures.empty();

    std::vector<double> baselines, n_train, n_test;
    for (int n : sizes) {
        SizeSummary s;
        s.n_simulated = n;
        for (const auto& rec : report.runs) {
            if (rec.n_simulated != n) continue;
            s.runs.push_back(rec.run);
            s.mae.push_back(rec.mae);
            if (n == sizes.front()) {
                baselines.push_back(rec.baseline_mae);
                n_train.push_back(static_cast<double>(rec.n_train));
                n_test.push_back(static_cast<double>(rec.n_test));
            }
        }
        s.mean = mean_of(s.mae);
        s.std = stddev_of(s.mae);
        report.sweep.push_back(std::move(s));
    }
    report.per_run_mae = report.sweep.front().mae;
    report.mean_mae = report.sweep.front().mean;
    report.std_mae = report.sweep.front().std;
    if (!report.per_run_mae.empty()) {
        report.min_mae = *std::min_element(report.per_run_mae.begin(), report.per_run_mae.end());
        report.max_mae = *std::max_element(report.per_run_mae.begin(), report.per_run_mae.end());
    }
    report.baseline_mean_mae = mean_of(baselines);
    report.mean_n_train = mean_of(n_train);
    report.mean_n_test = mean_of(n_test);

    if (cfg.mode == ExperimentMode::augmented && sizes.size() > 1) {
        std::vector<SizeSummary> ordered = report.sweep;
        std::sort(ordered.begin(), ordered.end(),
                  [](const SizeSummary& a, const SizeSummary& b) { return a.n_simulated < b.n_simulated; });
        detail::fill_paired_steps(ordered);
        report.sweep = ordered;
        report.sweep_trend = detail::classify_trend(ordered, cfg.flat_tolerance);
    } else if (cfg.mode == ExperimentMode::standard) {
        report.sweep.clear();
    }
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace vcohort
