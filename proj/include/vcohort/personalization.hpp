#pragma once

// Maximum-a-posteriori random effects for one patient under fixed theta.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "lbfgsb.hpp"
#include "model.hpp"
#include "util.hpp"

namespace vcohort {

struct EffectBounds {
    double xi_lo = -3.0, xi_hi = 3.0;
    double tau_lo = -15.0, tau_hi = 15.0;
    double s_lo = -5.0, s_hi = 5.0;

    Eigen::VectorXd lower(std::size_t ns) const {
        Eigen::VectorXd v = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(2 + ns), s_lo);
        v[0] = xi_lo;
        v[1] = tau_lo;
        return v;
    }
    Eigen::VectorXd upper(std::size_t ns) const {
        Eigen::VectorXd v = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(2 + ns), s_hi);
        v[0] = xi_hi;
        v[1] = tau_hi;
        return v;
    }
};

struct PersonalizeConfig {
    int max_evals = 500;
    double grad_tol = 1e-6;
    EffectBounds bounds;
    int n_restarts = 3;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        if (max_evals <= 0) throw ConfigError("personalize.max_evals must be positive");
        if (!(grad_tol > 0.0)) throw ConfigError("personalize.grad_tol must be positive");
        if (n_restarts < 1) throw ConfigError("personalize.n_restarts must be >= 1");
        if (!(bounds.xi_lo < bounds.xi_hi && bounds.tau_lo < bounds.tau_hi && bounds.s_lo < bounds.s_hi))
            throw ConfigError("personalize.bounds must satisfy lo < hi");
    }
};

struct PersonalizeResult {
    RandomEffects z;
    double objective = 0.0;  // individual log-likelihood at z
    bool warning = false;    // every restart failed its line search
};

// FNV-1a; restart draws are keyed on the patient id so that batch and
// single-patient calls agree.
inline std::uint64_t id_hash(const std::string& id) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline PersonalizeResult personalize(const PatientSeries& y, const FixedEffects& theta, const PersonalizeConfig& cfg) {
    cfg.validate();
    if (n_observed_values(y) == 0) throw DataError("personalize: patient '" + y.id + "' has no observed value");
    const std::size_t ns = theta.n_sources();
    const Eigen::VectorXd lo = cfg.bounds.lower(ns);
    const Eigen::VectorXd hi = cfg.bounds.upper(ns);

    auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const RandomEffects z = RandomEffects::from_vector(x);
        g = -gradient_log_likelihood(y, z, theta).to_vector();
        return -individual_log_likelihood(y, z, theta);
    };

    LbfgsbOptions opt;
    opt.max_evals = cfg.max_evals;
    opt.grad_tol = cfg.grad_tol;

    const Eigen::VectorXd mode = project_box(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 + ns)), lo, hi);
    Eigen::VectorXd dummy;
    const double mode_value = objective(mode, dummy);

    PersonalizeResult best;
    bool any_ok = false;
    double best_f = 0.0;
    for (int r = 0; r < cfg.n_restarts; ++r) {
        Eigen::VectorXd start = mode;
        if (r > 0) {
            Rng rng = make_rng(cfg.seed, id_hash(y.id), static_cast<std::uint64_t>(r));
            start[0] = theta.prior_xi_std * std_normal(rng);
            start[1] = theta.prior_tau_std * std_normal(rng);
            for (std::size_t j = 0; j < ns; ++j) start[static_cast<Eigen::Index>(2 + j)] = theta.prior_s_std * std_normal(rng);
        }
        const LbfgsbResult run = minimize_box(objective, start, lo, hi, opt);
        const bool failed = run.line_search_failed && run.iterations == 0 && !run.converged;
        if (failed || !std::isfinite(run.f)) continue;
        if (!any_ok || run.f < best_f) {
            best_f = run.f;
            best.z = RandomEffects::from_vector(run.x);
            any_ok = true;
        }
    }
    if (!any_ok || mode_value < best_f) {
        best.z = RandomEffects::from_vector(mode);
        best_f = mode_value;
        best.warning = !any_ok;
    }
    best.objective = -best_f;
    return best;
}

struct BatchPersonalization {
    std::map<std::string, RandomEffects> effects;
    std::vector<std::string> warnings;  // ids whose fit fell back to the prior mode
};

inline BatchPersonalization batch_personalize(const Dataset& ds, const FixedEffects& theta,
                                              const PersonalizeConfig& cfg) {
    std::vector<PersonalizeResult> fits(ds.patients.size());
    parallel_for(ds.patients.size(), cfg.threads,
                 [&](std::size_t i) { fits[i] = personalize(ds.patients[i], theta, cfg); });
    BatchPersonalization out;
    for (std::size_t i = 0; i < fits.size(); ++i) {
        out.effects.emplace(ds.patients[i].id, fits[i].z);
        if (fits[i].warning) out.warnings.push_back(ds.patients[i].id);
    }
    return out;
}

// Fitted effects in dataset order.
inline std::vector<RandomEffects> ordered_effects(const Dataset& ds, const BatchPersonalization& fits) {
    std::vector<RandomEffects> zs;
    zs.reserve(ds.patients.size());
    for (const auto& p : ds.patients) zs.push_back(fits.effects.at(p.id));
    return zs;
}

}  // namespace vcohort
