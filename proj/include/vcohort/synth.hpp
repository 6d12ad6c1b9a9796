#pragma once

// Ground-truth cohort generator for benchmarks and tests.

#include <cstdint>
#include <algorithm>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "simulation.hpp"
#include "util.hpp"

namespace vcohort {

// Four features, two sources; rates and offsets chosen so trajectories cross
// the [0.1, 0.9] band within a typical 60-90 year age window.
inline FixedEffects ground_truth_theta() {
    FixedEffects t;
    t.t0 = 72.0;
    t.rho = Eigen::Vector4d(0.25, 0.20, 0.30, 0.15);
    t.delta = Eigen::Vector4d(72.0, 74.0, 76.0, 70.0);
    t.A.resize(4, 2);
    t.A << 0.40, 0.00,
          -0.20, 0.30,
           0.00, -0.40,
           0.25, 0.20;
    t.sigma = 0.03;
    t.prior_xi_std = 0.35;
    t.prior_tau_std = 4.0;
    t.prior_s_std = 1.0;
    return t;
}

struct VisitPlan {
    double baseline_age_lo = 62.0;
    double baseline_age_hi = 80.0;
    int min_visits = 6;
    int max_visits = 6;
    double spacing = 1.0;
    double jitter = 0.0;  // uniform ± jitter on every visit after the first

    void validate() const {
        if (!(baseline_age_lo <= baseline_age_hi)) throw ConfigError("visit plan: baseline age range inverted");
        if (min_visits < 1 || max_visits < min_visits) throw ConfigError("visit plan: invalid visit count range");
        if (!(spacing > 0.0) || !(jitter >= 0.0) || jitter >= 0.5 * spacing)
            throw ConfigError("visit plan: need spacing > 0 and 0 <= jitter < spacing / 2");
    }
};

struct SynthCohort {
    Dataset dataset;
    std::vector<RandomEffects> truth;  // per patient, dataset order
};

inline SynthCohort synth_cohort(const FixedEffects& theta_star, int n_patients, const VisitPlan& plan,
                                double missing_rate, std::uint64_t seed, const std::string& id_prefix = "p") {
    theta_star.validate();
    plan.validate();
    if (n_patients < 0) throw ConfigError("synth: n_patients must be >= 0");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("synth: missing rate must lie in [0, 1)");
    const std::size_t d = theta_star.dim();
    const std::size_t ns = theta_star.n_sources();
    SynthCohort out;
    out.dataset.features = generic_features(d);
    const int width = std::max<int>(4, static_cast<int>(std::to_string(n_patients).size()));
    for (int i = 0; i < n_patients; ++i) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
        RandomEffects z = RandomEffects::zero(ns);
        z.xi = theta_star.prior_xi_std * std_normal(rng);
        z.tau = theta_star.prior_tau_std * std_normal(rng);
        for (std::size_t j = 0; j < ns; ++j) z.s[static_cast<Eigen::Index>(j)] = theta_star.prior_s_std * std_normal(rng);

        const double first = plan.baseline_age_lo + (plan.baseline_age_hi - plan.baseline_age_lo) * uniform01(rng);
        const int n_visits = std::uniform_int_distribution<int>{plan.min_visits, plan.max_visits}(rng);
        PatientSeries p;
        const std::string number = std::to_string(i + 1);
        p.id = id_prefix + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(width, number.size()), '0') + number;
        for (int j = 0; j < n_visits; ++j) {
            Visit v;
            v.age = first + j * plan.spacing;
            if (j > 0 && plan.jitter > 0.0) v.age += plan.jitter * (2.0 * uniform01(rng) - 1.0);
            v.values = eval_trajectory(theta_star, z, v.age);
            for (Eigen::Index k = 0; k < v.values.size(); ++k)
                v.values[k] = std::clamp(v.values[k] + theta_star.sigma * std_normal(rng), 0.0, 1.0);
            v.mask.assign(d, true);
            if (missing_rate > 0.0) {
                for (std::size_t k = 0; k < d; ++k) v.mask[k] = uniform01(rng) >= missing_rate;
                if (v.n_observed() == 0) v.mask[uniform_index(rng, d)] = true;
            }
            p.visits.push_back(std::move(v));
        }
        out.dataset.patients.push_back(std::move(p));
        out.truth.push_back(std::move(z));
    }
    return out;
}

// Benchmark cohort with few long-follow-up subjects: `n_long` patients with
// 6-8 annual visits and `n_short` patients with 2-3 visits, visit ages
// jittered by ±0.1 years. Ids are unique across both groups.
inline SynthCohort benchmark_cohort(const FixedEffects& theta_star, int n_long, int n_short, std::uint64_t seed) {
    VisitPlan long_plan;
    long_plan.min_visits = 6;
    long_plan.max_visits = 8;
    long_plan.jitter = 0.1;
    VisitPlan short_plan = long_plan;
    short_plan.min_visits = 2;
    short_plan.max_visits = 3;
    SynthCohort out = synth_cohort(theta_star, n_long, long_plan, 0.0, derive_seed(seed, 1), "L");
    SynthCohort extra = synth_cohort(theta_star, n_short, short_plan, 0.0, derive_seed(seed, 2), "S");
    for (auto& p : extra.dataset.patients) out.dataset.patients.push_back(std::move(p));
    for (auto& z : extra.truth) out.truth.push_back(std::move(z));
    return out;
}

}  // namespace vcohort
