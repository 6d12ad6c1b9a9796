// Command-line front end: synth, calibrate, personalize, simulate, split,
// train, evaluate and experiment.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vcohort/calibration.hpp"
#include "vcohort/cohort.hpp"
#include "vcohort/errors.hpp"
#include "vcohort/experiment.hpp"
#include "vcohort/io.hpp"
#include "vcohort/lstm.hpp"
#include "vcohort/metrics.hpp"
#include "vcohort/personalization.hpp"
#include "vcohort/simulation.hpp"
#include "vcohort/synth.hpp"

namespace fs = std::filesystem;
using namespace vcohort;

namespace {

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = ".";
    unsigned threads = 1;
    json config = json::object();

    const json& section(const char* name) const {
        static const json empty = json::object();
        return config.contains(name) ? config.at(name) : empty;
    }
};

json parse_json_file(const fs::path& path, bool is_config) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        if (is_config) throw ConfigError(e.what());
        throw DataError(e.what());
    }
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        const std::string msg = path.string() + ": " + e.what();
        if (is_config) throw ConfigError(msg);
        throw DataError(msg);
    }
}

void load_config(Common& c) {
    if (c.config_path.empty()) return;
    c.config = parse_json_file(c.config_path, true);
    if (!c.config.is_object()) throw ConfigError(c.config_path + ": top level must be an object");
    if (!c.seed_set && c.config.contains("seed")) c.seed = c.config.at("seed").get<std::uint64_t>();
    if (c.config.contains("threads") && c.threads == 1) c.threads = c.config.at("threads").get<unsigned>();
}

// Feature specs come from the config; otherwise the CSV header is taken with
// raw_max 1 and increasing direction (data already on the [0, 1] scale).
std::vector<FeatureSpec> feature_specs(const Common& c, const fs::path& csv) {
    if (c.config.contains("features")) return features_from_json(c.config.at("features"));
    std::ifstream in(csv);
    if (!in) throw DataError("cannot open " + csv.string());
    std::string header;
    std::getline(in, header);
    const auto cells = detail::split_csv_line(header);
    if (cells.size() < 3) throw DataError(csv.string() + ": row 1: header must start with patient_id,age");
    std::vector<FeatureSpec> specs;
    for (std::size_t i = 2; i < cells.size(); ++i) specs.push_back({detail::trim(cells[i]), 1.0, Direction::increasing});
    return specs;
}

Dataset load(const Common& c, const fs::path& csv) {
    Dataset ds = load_dataset(csv, feature_specs(c, csv));
    validate(ds);
    return ds;
}

fs::path out_path(const Common& c, const std::string& name) {
    fs::create_directories(c.out_dir);
    return fs::path(c.out_dir) / name;
}

void write_json(const fs::path& path, const json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
    std::cerr << "wrote " << path.string() << '\n';
}

std::size_t feature_index(const Dataset& ds, const std::string& name) {
    if (name.empty()) return 0;
    const auto names = ds.feature_names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("unknown target feature '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

Dataset dataset_for_model(const StoredModel& m) {
    Dataset ds;
    ds.features = m.features;
    return ds;
}

// ---- subcommands -----------------------------------------------------------

struct SynthArgs {
    int n_long = 100;
    int n_short = 300;
    int n_patients = -1;  // plain cohort instead of the benchmark mix
    double missing_rate = 0.0;
    double sigma = -1.0;
};

void run_synth(const Common& c, SynthArgs a) {
    const json& s = c.section("synth");
    a.n_long = s.value("n_long", a.n_long);
    a.n_short = s.value("n_short", a.n_short);
    a.n_patients = s.value("n_patients", a.n_patients);
    a.missing_rate = s.value("missing_rate", a.missing_rate);
    a.sigma = s.value("sigma", a.sigma);
    FixedEffects theta = ground_truth_theta();
    if (a.sigma > 0.0) theta.sigma = a.sigma;
    SynthCohort cohort;
    if (a.n_patients >= 0) {
        VisitPlan plan;
        cohort = synth_cohort(theta, a.n_patients, plan, a.missing_rate, c.seed);
    } else {
        cohort = benchmark_cohort(theta, a.n_long, a.n_short, c.seed);
    }
    write_dataset(cohort.dataset, out_path(c, "cohort.csv"));
    std::cerr << "wrote " << out_path(c, "cohort.csv").string() << '\n';
    json truth = {{"version", kFormatVersion}, {"theta", to_json(theta)}, {"effects", json::object()}};
    for (std::size_t i = 0; i < cohort.truth.size(); ++i)
        truth["effects"][cohort.dataset.patients[i].id] = to_json(cohort.truth[i]);
    write_json(out_path(c, "truth.json"), truth);
}

void run_calibrate(const Common& c, const std::string& data) {
    const Dataset ds = load(c, data);
    SaemConfig cfg;
    read_into(c.section("saem"), cfg);
    cfg.seed = c.seed;
    cfg.threads = c.threads;
    const CalibrationResult r = calibrate(ds, cfg);
    std::cerr << "calibrated on " << ds.patients.size() << " patients, sigma = " << r.theta.sigma << '\n';
    write_json(out_path(c, "calibration.json"), calibration_to_json(r, ds));
}

void run_personalize(const Common& c, const std::string& data, const std::string& model) {
    const StoredModel m = calibration_from_json(parse_json_file(model, false));
    const Dataset ds = load(c, data);
    if (ds.feature_names() != dataset_for_model(m).feature_names())
        throw DataError("cohort features do not match the calibrated model");
    PersonalizeConfig cfg;
    read_into(c.section("personalize"), cfg);
    cfg.seed = c.seed;
    cfg.threads = c.threads;
    const BatchPersonalization fits = batch_personalize(ds, m.theta, cfg);
    for (const auto& id : fits.warnings) std::cerr << "warning: patient '" << id << "' fell back to the prior mode\n";
    write_json(out_path(c, "personalization.json"), personalization_to_json(fits));
}

void run_simulate(const Common& c, const std::string& data, const std::string& model, const std::string& effects,
                  int n_patients) {
    const StoredModel m = calibration_from_json(parse_json_file(model, false));
    const Dataset ds = load(c, data);
    std::vector<RandomEffects> zs;
    if (!effects.empty()) {
        const BatchPersonalization fits = personalization_from_json(parse_json_file(effects, false));
        for (const auto& [id, z] : fits.effects) zs.push_back(z);
    } else {
        zs = m.z_chain_last;
    }
    if (zs.empty()) throw DataError("no fitted random effects to simulate from");
    for (const auto& z : zs)
        if (z.s.size() != static_cast<Eigen::Index>(m.theta.n_sources()))
            throw DataError("fitted random effects do not match the model's number of sources");

    SimulationConfig cfg;
    const json& s = c.section("simulation");
    cfg.n_patients = s.value("n_patients", cfg.n_patients);
    cfg.min_visits = s.value("min_visits", cfg.min_visits);
    cfg.max_visits = s.value("max_visits", cfg.max_visits);
    cfg.visit_spacing = s.value("visit_spacing", cfg.visit_spacing);
    cfg.add_noise = s.value("add_noise", cfg.add_noise);
    if (n_patients > 0) cfg.n_patients = n_patients;
    cfg.baseline_ages = baseline_ages(ds);
    cfg.seed = c.seed;
    cfg.threads = c.threads;
    const Dataset sim = simulate_cohort(m.theta, zs, cfg, m.features);
    write_dataset(sim, out_path(c, "simulated.csv"));
    std::cerr << "wrote " << out_path(c, "simulated.csv").string() << '\n';
}

struct PairArgs {
    double delta_t = -1.0;
    double tolerance = -1.0;
    std::string feature;

    void resolve(const Common& c) {
        const json& e = c.section("experiment");
        if (delta_t <= 0.0) delta_t = e.value("delta_t", 3.0);
        if (tolerance < 0.0) tolerance = e.value("tolerance", 0.25);
        if (feature.empty()) feature = e.value("target_feature", std::string());
        if (!(delta_t > 0.0)) throw ConfigError("delta_t must be positive");
    }
};

void run_split(const Common& c, const std::string& data, PairArgs a) {
    a.resolve(c);
    const Dataset ds = load(c, data);
    const std::size_t k = feature_index(ds, a.feature);
    Rng rng = make_rng(c.seed, 0);
    const SplitResult s = split_delta_t(ds, a.delta_t, a.tolerance, k, rng);
    std::cerr << s.pairs.size() << " pairs, " << s.discarded_ids.size() << " patients discarded\n";
    write_json(out_path(c, "split.json"), split_manifest_json(s, a.delta_t, a.tolerance, ds.features[k].name));
}

void run_train(const Common& c, const std::string& data, const std::string& validation, PairArgs a) {
    a.resolve(c);
    const Dataset ds = load(c, data);
    const std::size_t k = feature_index(ds, a.feature);
    Rng rng = make_rng(c.seed, 1);
    std::vector<PredictionPair> train_pairs = split_delta_t(ds, a.delta_t, a.tolerance, k, rng).pairs;
    std::vector<PredictionPair> val_pairs;
    if (!validation.empty()) {
        const Dataset vds = load(c, validation);
        if (vds.feature_names() != ds.feature_names()) throw DataError("validation cohort features differ");
        val_pairs = split_delta_t(vds, a.delta_t, a.tolerance, k, rng).pairs;
    } else {
        // Hold out 15% of the pairs (at least one) for early stopping.
        for (std::size_t i = train_pairs.size(); i > 1; --i) std::swap(train_pairs[i - 1], train_pairs[uniform_index(rng, i)]);
        const std::size_t n_val = std::max<std::size_t>(1, train_pairs.size() * 15 / 100);
        if (train_pairs.size() < 2) throw DataError("need at least two prediction pairs to train");
        val_pairs.assign(train_pairs.end() - static_cast<std::ptrdiff_t>(n_val), train_pairs.end());
        train_pairs.resize(train_pairs.size() - n_val);
    }
    if (train_pairs.empty() || val_pairs.empty()) throw DataError("empty training or validation set");
    TrainConfig cfg;
    read_into(c.section("train"), cfg);
    cfg.seed = c.seed;
    const TrainResult fit = train(train_pairs, val_pairs, ds.dim(), cfg);
    std::cerr << "trained " << fit.history.size() << " epochs, best epoch " << fit.best_epoch << '\n';
    write_json(out_path(c, "checkpoint.json"), checkpoint_json(fit.params, ds.feature_names(), ds.features[k].name));
    write_file_atomic(out_path(c, "history.csv"), history_csv(fit.history));
    std::cerr << "wrote " << out_path(c, "history.csv").string() << '\n';
}

void run_evaluate(const Common& c, const std::string& data, const std::string& model, const std::string& simulated,
                  PairArgs a) {
    const Dataset ds = load(c, data);
    if (!simulated.empty()) {
        const Dataset sim = load(c, simulated);
        const auto report = distribution_report(ds, sim);
        write_json(out_path(c, "distribution.json"), distribution_json(report));
        std::ostringstream csv;
        csv.precision(17);
        csv << "feature,bin,bin_lo,bin_hi,real_fraction,simulated_fraction,real_cdf,simulated_cdf\n";
        for (const auto& f : report) {
            if (!f.present) continue;
            for (int b = 0; b < kReportBins; ++b) {
                const auto i = static_cast<std::size_t>(b);
                csv << f.name << ',' << b << ',' << static_cast<double>(b) / kReportBins << ','
                    << static_cast<double>(b + 1) / kReportBins << ',' << f.real_hist[i] << ',' << f.simulated_hist[i]
                    << ',' << f.real_cdf[i] << ',' << f.simulated_cdf[i] << '\n';
            }
        }
        write_file_atomic(out_path(c, "distribution.csv"), csv.str());
        for (const auto& f : report)
            std::cout << f.name << " ks=" << (f.present ? std::to_string(f.ks) : std::string("absent")) << '\n';
        return;
    }
    if (model.empty()) throw ConfigError("evaluate needs --model or --simulated");
    const StoredPredictor p = checkpoint_from_json(parse_json_file(model, false));
    if (!p.feature_names.empty() && p.feature_names != ds.feature_names())
        throw DataError("checkpoint features do not match the cohort");
    if (a.feature.empty()) a.feature = p.target_feature;
    a.resolve(c);
    const std::size_t k = feature_index(ds, a.feature);
    if (p.params.input_dim() != static_cast<Eigen::Index>(encoded_input_dim(ds.dim())))
        throw DataError("checkpoint input dimension does not match the cohort");
    Rng rng = make_rng(c.seed, 2);
    const auto pairs = split_delta_t(ds, a.delta_t, a.tolerance, k, rng).pairs;
    if (pairs.empty()) throw DataError("no prediction pairs at delta_t " + detail::format_double(a.delta_t));
    std::vector<double> targets;
    for (const auto& q : pairs) targets.push_back(q.target_value);
    const double model_mae = mae(predict(p.params, pairs, ds.dim()), targets);
    const BaselineScore base = constant_baseline_mae(pairs);
    const json& e = c.section("experiment");
    const double raw_max = ds.features[k].raw_max;
    const json report = {{"version", kFormatVersion},
                         {"target_feature", ds.features[k].name},
                         {"delta_t", a.delta_t},
                         {"n_pairs", pairs.size()},
                         {"mae", model_mae},
                         {"constant_baseline_mae", base.mae},
                         {"n_baseline_excluded", base.n_excluded},
                         {"noise_band",
                          {noise_floor(e.value("noise_raw_std_lo", 1.3), raw_max),
                           noise_floor(e.value("noise_raw_std_hi", 2.8), raw_max)}}};
    write_json(out_path(c, "evaluation.json"), report);
    std::cout << "mae=" << model_mae << " baseline=" << base.mae << '\n';
}

void run_experiment_cmd(const Common& c, const std::string& data, const std::string& mode, double delta_t, int n_runs,
                        bool no_timing) {
    ExperimentConfig cfg;
    read_into(c.section("experiment"), cfg);
    read_into(c.section("saem"), cfg.saem);
    read_into(c.section("personalize"), cfg.personalize);
    read_into(c.section("train"), cfg.train);
    if (!mode.empty()) read_into(json{{"mode", mode}}, cfg);
    if (delta_t > 0.0) cfg.delta_t = delta_t;
    if (n_runs > 0) cfg.n_runs = n_runs;
    cfg.seed = c.seed;
    cfg.threads = c.threads;

    Dataset ds;
    if (data.empty()) {
        const json& s = c.section("synth");
        ds = benchmark_cohort(ground_truth_theta(), s.value("n_long", 100), s.value("n_short", 300), c.seed).dataset;
        std::cerr << "no --data given; using the synthetic benchmark cohort\n";
    } else {
        ds = load(c, data);
    }
    const ExperimentReport r = run_experiment(ds, cfg);
    for (const auto& f : r.failures) std::cerr << "run " << f.run << " failed at " << f.stage << ": " << f.message << '\n';
    write_json(out_path(c, "report.json"), report_json(r, !no_timing));
    write_file_atomic(out_path(c, "report.csv"), report_tidy_csv(r));
    std::cerr << "wrote " << out_path(c, "report.csv").string() << '\n';
    std::cout << to_string(cfg.mode) << " delta_t=" << cfg.delta_t << " mae=" << r.mean_mae << " +- " << r.std_mae
              << " baseline=" << r.baseline_mean_mae << " runs=" << r.per_run_mae.size() << '/' << cfg.n_runs << '\n';
    if (r.per_run_mae.empty()) throw DataError("every run failed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Virtual cohort calibration, simulation and prediction"};
    app.require_subcommand(1);
    Common common;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON configuration file");
        sub->add_option("--seed", common.seed, "Random seed")->each([&](const std::string&) { common.seed_set = true; });
        sub->add_option("--out-dir", common.out_dir, "Output directory");
        sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
    };

    std::string data, model, effects, simulated, validation, mode;
    int n_patients = 0, n_runs = 0;
    bool no_timing = false;
    PairArgs pair_args;
    SynthArgs synth_args;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort from the ground-truth model");
    add_common(synth);
    synth->add_option("--n-long", synth_args.n_long, "Patients with long follow-up");
    synth->add_option("--n-short", synth_args.n_short, "Patients with short follow-up");
    synth->add_option("--n-patients", synth_args.n_patients, "Plain cohort of 6 annual visits instead");
    synth->add_option("--missing-rate", synth_args.missing_rate, "Per-value missingness");
    synth->add_option("--sigma", synth_args.sigma, "Observation noise override");

    auto* calib = app.add_subcommand("calibrate", "Fit the mixed-effects model with MCMC-SAEM");
    add_common(calib);
    calib->add_option("--data", data, "Estimation cohort CSV")->required();

    auto* pers = app.add_subcommand("personalize", "Fit per-patient random effects under a calibrated model");
    add_common(pers);
    pers->add_option("--data", data, "Cohort CSV")->required();
    pers->add_option("--model", model, "Calibration JSON")->required();

    auto* sim = app.add_subcommand("simulate", "Simulate a virtual cohort");
    add_common(sim);
    sim->add_option("--data", data, "Estimation cohort CSV (baseline ages)")->required();
    sim->add_option("--model", model, "Calibration JSON")->required();
    sim->add_option("--effects", effects, "Personalization JSON (defaults to the final MCMC state)");
    sim->add_option("--n-patients", n_patients, "Number of virtual patients");

    auto add_pair_options = [&](CLI::App* sub) {
        sub->add_option("--delta-t", pair_args.delta_t, "Prediction horizon in years");
        sub->add_option("--tolerance", pair_args.tolerance, "Target-age tolerance in years");
        sub->add_option("--feature", pair_args.feature, "Target feature name");
    };

    auto* split = app.add_subcommand("split", "Build delta-t prediction pairs and write a manifest");
    add_common(split);
    add_pair_options(split);
    split->add_option("--data", data, "Cohort CSV")->required();

    auto* trn = app.add_subcommand("train", "Train the LSTM predictor");
    add_common(trn);
    add_pair_options(trn);
    trn->add_option("--data", data, "Training cohort CSV")->required();
    trn->add_option("--validation", validation, "Validation cohort CSV");

    auto* eval = app.add_subcommand("evaluate", "Score a checkpoint, or compare real and simulated distributions");
    add_common(eval);
    add_pair_options(eval);
    eval->add_option("--data", data, "Real cohort CSV")->required();
    eval->add_option("--model", model, "Checkpoint JSON");
    eval->add_option("--simulated", simulated, "Simulated cohort CSV");

    auto* exp = app.add_subcommand("experiment", "Run the standard or augmented experiment");
    add_common(exp);
    exp->add_option("--data", data, "Cohort CSV (synthetic benchmark if omitted)");
    exp->add_option("--mode", mode, "standard or augmented")->check(CLI::IsMember({"standard", "augmented"}));
    exp->add_option("--delta-t", pair_args.delta_t, "Prediction horizon in years");
    exp->add_option("--runs", n_runs, "Number of runs");
    exp->add_flag("--no-timing", no_timing, "Omit wall-clock time from the report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        load_config(common);
        if (*synth) run_synth(common, synth_args);
        else if (*calib) run_calibrate(common, data);
        else if (*pers) run_personalize(common, data, model);
        else if (*sim) run_simulate(common, data, model, effects, n_patients);
        else if (*split) run_split(common, data, pair_args);
        else if (*trn) run_train(common, data, validation, pair_args);
        else if (*eval) run_evaluate(common, data, model, simulated, pair_args);
        else if (*exp) run_experiment_cmd(common, data, mode, pair_args.delta_t, n_runs, no_timing);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
