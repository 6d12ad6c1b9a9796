#pragma once

// JSON and CSV (de)serialization for models, fits, manifests and reports.

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "calibration.hpp"
#include "cohort.hpp"
#include "errors.hpp"
#include "experiment.hpp"
#include "lstm.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "personalization.hpp"

namespace vcohort {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Row-major flattening.
inline json matrix_json(const Eigen::MatrixXd& m) {
    std::vector<double> out;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

inline Eigen::MatrixXd matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols) {
    const auto v = j.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw DataError("matrix has wrong number of entries");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
    return m;
}

inline void check_version(const json& j, const char* what) {
    if (!j.contains("version") || j.at("version").get<int>() != kFormatVersion)
        throw DataError(std::string(what) + ": unsupported or missing version");
}

}  // namespace detail

inline json to_json(const FixedEffects& t) {
    return {{"t0", t.t0},
            {"rho", detail::vector_json(t.rho)},
            {"delta", detail::vector_json(t.delta)},
            {"n_sources", t.n_sources()},
            {"A", detail::matrix_json(t.A)},
            {"sigma", t.sigma},
            {"prior_xi_std", t.prior_xi_std},
            {"prior_tau_std", t.prior_tau_std},
            {"prior_s_std", t.prior_s_std}};
}

inline FixedEffects theta_from_json(const json& j) {
    FixedEffects t;
    t.t0 = j.at("t0").get<double>();
    t.rho = detail::vector_from(j.at("rho"));
    t.delta = detail::vector_from(j.at("delta"));
    t.A = detail::matrix_from(j.at("A"), t.rho.size(), j.at("n_sources").get<Eigen::Index>());
    t.sigma = j.at("sigma").get<double>();
    t.prior_xi_std = j.at("prior_xi_std").get<double>();
    t.prior_tau_std = j.at("prior_tau_std").get<double>();
    t.prior_s_std = j.at("prior_s_std").get<double>();
    t.validate();
    return t;
}

inline json to_json(const RandomEffects& z) { return {{"xi", z.xi}, {"tau", z.tau}, {"s", detail::vector_json(z.s)}}; }

inline RandomEffects effects_from_json(const json& j) {
    RandomEffects z;
    z.xi = j.at("xi").get<double>();
    z.tau = j.at("tau").get<double>();
    z.s = detail::vector_from(j.at("s"));
    return z;
}

struct StoredModel {
    std::vector<FeatureSpec> features;
    FixedEffects theta;
    std::vector<std::string> patient_ids;
    std::vector<RandomEffects> z_chain_last;
    std::vector<TraceEntry> trace;
};

inline json features_json(const std::vector<FeatureSpec>& features) {
    json arr = json::array();
    for (const auto& f : features)
        arr.push_back({{"name", f.name},
                       {"raw_max", f.raw_max},
                       {"direction", f.direction == Direction::increasing ? "increasing" : "decreasing"}});
    return arr;
}

inline std::vector<FeatureSpec> features_from_json(const json& arr) {
    std::vector<FeatureSpec> out;
    for (const auto& f : arr) {
        FeatureSpec s;
        s.name = f.at("name").get<std::string>();
        s.raw_max = f.value("raw_max", 1.0);
        const std::string dir = f.value("direction", std::string("increasing"));
        if (dir == "increasing")
            s.direction = Direction::increasing;
        else if (dir == "decreasing")
            s.direction = Direction::decreasing;
        else
            throw ConfigError("feature '" + s.name + "': direction must be increasing or decreasing");
        if (!(s.raw_max > 0.0)) throw ConfigError("feature '" + s.name + "': raw_max must be positive");
        out.push_back(std::move(s));
    }
    return out;
}

inline json calibration_to_json(const CalibrationResult& r, const Dataset& estimation_set) {
    json trace_sigma = json::array(), trace_ll = json::array();
    for (const auto& e : r.trace) {
        trace_sigma.push_back(e.sigma);
        trace_ll.push_back(e.data_log_likelihood);
    }
    json chain = json::object();
    for (std::size_t i = 0; i < r.z_chain_last.size() && i < estimation_set.patients.size(); ++i)
        chain[estimation_set.patients[i].id] = to_json(r.z_chain_last[i]);
    return {{"version", kFormatVersion},
            {"feature_names", estimation_set.feature_names()},
            {"features", features_json(estimation_set.features)},
            {"theta", to_json(r.theta)},
            {"diagnostics",
             {{"n_iter", r.trace.size()},
              {"trace_sigma", trace_sigma},
              {"trace_data_log_likelihood", trace_ll},
              {"z_chain_last", chain}}}};
}

inline StoredModel calibration_from_json(const json& j) {
    detail::check_version(j, "calibration");
    StoredModel m;
    if (j.contains("features")) {
        m.features = features_from_json(j.at("features"));
    } else {
        for (const auto& n : j.at("feature_names")) m.features.push_back({n.get<std::string>(), 1.0, Direction::increasing});
    }
    m.theta = theta_from_json(j.at("theta"));
    if (m.features.size() != m.theta.dim()) throw DataError("calibration: feature list does not match theta");
    const json& diag = j.value("diagnostics", json::object());
    if (diag.contains("z_chain_last")) {
        for (const auto& [id, z] : diag.at("z_chain_last").items()) {
            m.patient_ids.push_back(id);
            m.z_chain_last.push_back(effects_from_json(z));
        }
    }
    if (diag.contains("trace_sigma")) {
        const auto s = diag.at("trace_sigma").get<std::vector<double>>();
        const auto l = diag.at("trace_data_log_likelihood").get<std::vector<double>>();
        for (std::size_t i = 0; i < s.size() && i < l.size(); ++i) m.trace.push_back({s[i], l[i]});
    }
    return m;
}

inline json personalization_to_json(const BatchPersonalization& b) {
    json effects = json::object();
    for (const auto& [id, z] : b.effects) effects[id] = to_json(z);
    return {{"version", kFormatVersion}, {"effects", effects}, {"warnings", b.warnings}};
}

inline BatchPersonalization personalization_from_json(const json& j) {
    detail::check_version(j, "personalization");
    BatchPersonalization b;
    for (const auto& [id, z] : j.at("effects").items()) b.effects.emplace(id, effects_from_json(z));
    b.warnings = j.value("warnings", std::vector<std::string>{});
    return b;
}

inline json split_manifest_json(const SplitResult& s, double delta_t, double tolerance, const std::string& feature) {
    json pairs = json::array();
    for (const auto& p : s.pairs)
        pairs.push_back({{"patient_id", p.patient_id},
                         {"last_input_index", p.last_input_index},
                         {"target_index", p.target_index},
                         {"target_age", p.target_age},
                         {"target_value", p.target_value}});
    return {{"version", kFormatVersion},
            {"delta_t", delta_t},
            {"tolerance", tolerance},
            {"target_feature", feature},
            {"pairs", pairs},
            {"discarded_ids", s.discarded_ids}};
}

inline json checkpoint_json(const LstmParams& p, const std::vector<std::string>& feature_names,
                            const std::string& target_feature) {
    return {{"version", kFormatVersion},
            {"input_dim", p.input_dim()},
            {"hidden_dim", p.hidden_dim()},
            {"gate_order", "input,forget,cell,output"},
            {"feature_names", feature_names},
            {"target_feature", target_feature},
            {"W", detail::matrix_json(p.W())},
            {"U", detail::matrix_json(p.U())},
            {"b", detail::vector_json(p.b())},
            {"head_w", detail::vector_json(p.head_w())},
            {"head_b", p.head_b()}};
}

struct StoredPredictor {
    LstmParams params;
    std::vector<std::string> feature_names;
    std::string target_feature;
};

inline StoredPredictor checkpoint_from_json(const json& j) {
    detail::check_version(j, "checkpoint");
    const auto in = j.at("input_dim").get<Eigen::Index>();
    const auto h = j.at("hidden_dim").get<Eigen::Index>();
    StoredPredictor out{LstmParams(static_cast<std::size_t>(in), static_cast<std::size_t>(h)),
                        j.value("feature_names", std::vector<std::string>{}), j.value("target_feature", std::string())};
    out.params.W() = detail::matrix_from(j.at("W"), 4 * h, in);
    out.params.U() = detail::matrix_from(j.at("U"), 4 * h, h);
    out.params.b() = detail::vector_from(j.at("b"));
    out.params.head_w() = detail::vector_from(j.at("head_w"));
    out.params.head_b() = j.at("head_b").get<double>();
    return out;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,train_mse,val_mse\n";
    for (const auto& e : history) out << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
    return out.str();
}

inline json distribution_json(const std::vector<FeatureDistribution>& report) {
    json arr = json::array();
    for (const auto& f : report) {
        json e = {{"feature", f.name}, {"present", f.present}, {"n_real", f.n_real}, {"n_simulated", f.n_simulated}};
        if (f.present) {
            e["ks"] = f.ks;
            e["bins"] = kReportBins;
            e["real_hist"] = f.real_hist;
            e["simulated_hist"] = f.simulated_hist;
            e["real_cdf"] = f.real_cdf;
            e["simulated_cdf"] = f.simulated_cdf;
        }
        arr.push_back(std::move(e));
    }
    return {{"version", kFormatVersion}, {"features", arr}};
}

// ---- configuration ---------------------------------------------------------

inline void read_into(const json& j, SaemConfig& c) {
    c.n_iter = j.value("n_iter", c.n_iter);
    c.n_burn_in = j.value("n_burn_in", c.n_burn_in);
    c.step_exponent = j.value("step_exponent", c.step_exponent);
    c.mh_sweeps = j.value("mh_sweeps", c.mh_sweeps);
    c.n_sources = j.value("n_sources", c.n_sources);
    if (j.contains("proposal_stds")) {
        const json& p = j.at("proposal_stds");
        c.proposal_stds.xi = p.value("xi", c.proposal_stds.xi);
        c.proposal_stds.tau = p.value("tau", c.proposal_stds.tau);
        c.proposal_stds.s = p.value("s", c.proposal_stds.s);
    }
}

inline void read_into(const json& j, PersonalizeConfig& c) {
    c.max_evals = j.value("max_evals", c.max_evals);
    c.grad_tol = j.value("grad_tol", c.grad_tol);
    c.n_restarts = j.value("n_restarts", c.n_restarts);
    if (j.contains("bounds")) {
        const json& b = j.at("bounds");
        auto pair = [&](const char* key, double& lo, double& hi) {
            if (!b.contains(key)) return;
            const auto v = b.at(key).get<std::vector<double>>();
            if (v.size() != 2) throw ConfigError(std::string("personalize.bounds.") + key + " must be [lo, hi]");
            lo = v[0];
            hi = v[1];
        };
        pair("xi", c.bounds.xi_lo, c.bounds.xi_hi);
        pair("tau", c.bounds.tau_lo, c.bounds.tau_hi);
        pair("s", c.bounds.s_lo, c.bounds.s_hi);
    }
}

inline void read_into(const json& j, TrainConfig& c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
}

inline void read_into(const json& j, ExperimentConfig& c) {
    if (j.contains("mode")) {
        const auto m = j.at("mode").get<std::string>();
        if (m == "standard")
            c.mode = ExperimentMode::standard;
        else if (m == "augmented")
            c.mode = ExperimentMode::augmented;
        else
            throw ConfigError("experiment.mode must be standard or augmented");
    }
    c.delta_t = j.value("delta_t", c.delta_t);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.target_feature = j.value("target_feature", c.target_feature);
    c.feature_set = j.value("feature_set", c.feature_set);
    c.n_simulated_patients = j.value("n_simulated_patients", c.n_simulated_patients);
    c.simulated_sweep = j.value("simulated_sweep", c.simulated_sweep);
    c.n_runs = j.value("n_runs", c.n_runs);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.strict_guard = j.value("strict_guard", c.strict_guard);
    c.simulated_min_visits = j.value("simulated_min_visits", c.simulated_min_visits);
    c.simulated_max_visits = j.value("simulated_max_visits", c.simulated_max_visits);
    c.visit_spacing = j.value("visit_spacing", c.visit_spacing);
    c.simulate_noise = j.value("simulate_noise", c.simulate_noise);
    c.noise_raw_std_lo = j.value("noise_raw_std_lo", c.noise_raw_std_lo);
    c.noise_raw_std_hi = j.value("noise_raw_std_hi", c.noise_raw_std_hi);
    c.flat_tolerance = j.value("flat_tolerance", c.flat_tolerance);
}

inline json to_json(const ExperimentConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"delta_t", c.delta_t},
            {"tolerance", c.tolerance},
            {"target_feature", c.target_feature},
            {"feature_set", c.feature_set},
            {"n_simulated_patients", c.n_simulated_patients},
            {"simulated_sweep", c.simulated_sweep},
            {"n_runs", c.n_runs},
            {"seed", c.seed},
            {"test_fraction", c.test_fraction},
            {"validation_fraction", c.validation_fraction},
            {"strict_guard", c.strict_guard},
            {"simulated_min_visits", c.simulated_min_visits},
            {"simulated_max_visits", c.simulated_max_visits},
            {"visit_spacing", c.visit_spacing},
            {"simulate_noise", c.simulate_noise},
            {"noise_raw_std_lo", c.noise_raw_std_lo},
            {"noise_raw_std_hi", c.noise_raw_std_hi},
            {"flat_tolerance", c.flat_tolerance},
            {"saem",
             {{"n_iter", c.saem.n_iter},
              {"n_burn_in", c.saem.n_burn_in},
              {"step_exponent", c.saem.step_exponent},
              {"mh_sweeps", c.saem.mh_sweeps},
              {"n_sources", c.saem.n_sources},
              {"proposal_stds", {{"xi", c.saem.proposal_stds.xi}, {"tau", c.saem.proposal_stds.tau}, {"s", c.saem.proposal_stds.s}}}}},
            {"personalize",
             {{"max_evals", c.personalize.max_evals},
              {"grad_tol", c.personalize.grad_tol},
              {"n_restarts", c.personalize.n_restarts},
              {"bounds",
               {{"xi", {c.personalize.bounds.xi_lo, c.personalize.bounds.xi_hi}},
                {"tau", {c.personalize.bounds.tau_lo, c.personalize.bounds.tau_hi}},
                {"s", {c.personalize.bounds.s_lo, c.personalize.bounds.s_hi}}}}}},
            {"train",
             {{"learning_rate", c.train.learning_rate},
              {"weight_decay", c.train.weight_decay},
              {"batch_size", c.train.batch_size},
              {"max_epochs", c.train.max_epochs},
              {"patience", c.train.patience},
              {"hidden_dim", c.train.hidden_dim}}}};
}

// Wall-clock time is left out when `include_timing` is false so that reports
// from identical seeds compare byte for byte.
inline json report_json(const ExperimentReport& r, bool include_timing = true) {
    json runs = json::array();
    for (const auto& x : r.runs)
        runs.push_back({{"run", x.run},
                        {"n_simulated", x.n_simulated},
                        {"mae", x.mae},
                        {"baseline_mae", x.baseline_mae},
                        {"n_train", x.n_train},
                        {"n_test", x.n_test},
                        {"n_validation", x.n_validation},
                        {"n_estimation", x.n_estimation},
                        {"n_baseline_excluded", x.n_baseline_excluded},
                        {"epochs", x.epochs},
                        {"guard_checked", x.guard_checked},
                        {"guard_passed", x.guard_passed},
                        {"real_ids_in_training", x.real_ids_in_training}});
    json sweep = json::array();
    for (const auto& s : r.sweep)
        sweep.push_back({{"n_simulated", s.n_simulated},
                         {"runs", s.runs},
                         {"mae", s.mae},
                         {"mean", s.mean},
                         {"std", s.std},
                         {"paired_step_mean", s.step_mean},
                         {"paired_step_se", s.step_se}});
    json failures = json::array();
    for (const auto& f : r.failures) failures.push_back({{"run", f.run}, {"stage", f.stage}, {"message", f.message}});
    json j = {{"version", kFormatVersion},
              {"config", to_json(r.config)},
              {"target_feature", r.target_feature},
              {"feature_set", r.feature_set},
              {"per_run_mae", r.per_run_mae},
              {"mean_mae", r.mean_mae},
              {"std_mae", r.std_mae},
              {"min_mae", r.min_mae},
              {"max_mae", r.max_mae},
              {"constant_baseline_mae", r.baseline_mean_mae},
              {"noise_band", {r.noise_lo, r.noise_hi}},
              {"set_sizes", {{"train", r.mean_n_train}, {"test", r.mean_n_test}}},
              {"sweep", sweep},
              {"sweep_trend", r.sweep_trend},
              {"runs", runs},
              {"failures", failures},
              {"partial", r.partial}};
    if (include_timing) j["wall_clock_seconds"] = r.wall_clock_seconds;
    return j;
}

// One row per (run, cohort size) evaluation.
inline std::string report_tidy_csv(const ExperimentReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "mode,delta_t,target_feature,n_simulated,run,mae,baseline_mae,noise_lo,noise_hi,n_train,n_test\n";
    for (const auto& x : r.runs)
        out << to_string(r.config.mode) << ',' << r.config.delta_t << ',' << r.target_feature << ',' << x.n_simulated << ','
            << x.run << ',' << x.mae << ',' << x.baseline_mae << ',' << r.noise_lo << ',' << r.noise_hi << ',' << x.n_train
            << ',' << x.n_test << '\n';
    return out.str();
}

}  // namespace vcohort
