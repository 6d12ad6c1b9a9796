#pragma once

#include <initializer_list>
#include <string>
#include <vector>

#include "vcohort/model.hpp"
#include "vcohort/simulation.hpp"
#include "vcohort/util.hpp"

namespace fixture {

inline vcohort::Visit visit(double age, std::initializer_list<double> values) {
    vcohort::Visit v;
    v.age = age;
    v.values = Eigen::VectorXd(static_cast<Eigen::Index>(values.size()));
    Eigen::Index k = 0;
    for (double x : values) v.values[k++] = x;
    v.mask.assign(values.size(), true);
    return v;
}

// One-feature patient with a visit at each age.
inline vcohort::PatientSeries patient(const std::string& id, const std::vector<double>& ages, double value = 0.5) {
    vcohort::PatientSeries p{id, {}};
    for (double a : ages) p.visits.push_back(visit(a, {value}));
    return p;
}

inline vcohort::Dataset one_feature(std::vector<vcohort::PatientSeries> patients) {
    vcohort::Dataset ds;
    ds.features = vcohort::generic_features(1);
    ds.patients = std::move(patients);
    return ds;
}

inline vcohort::RandomEffects random_effects(vcohort::Rng& rng, std::size_t ns, double scale = 1.0) {
    vcohort::RandomEffects z = vcohort::RandomEffects::zero(ns);
    z.xi = 0.3 * scale * vcohort::std_normal(rng);
    z.tau = 3.0 * scale * vcohort::std_normal(rng);
    for (Eigen::Index j = 0; j < z.s.size(); ++j) z.s[j] = scale * vcohort::std_normal(rng);
    return z;
}

// Noiseless series on the trajectory of z at the given ages.
inline vcohort::PatientSeries on_trajectory(const vcohort::FixedEffects& theta, const vcohort::RandomEffects& z,
                                            const std::vector<double>& ages, const std::string& id = "p") {
    vcohort::PatientSeries p{id, {}};
    for (double a : ages) {
        vcohort::Visit v;
        v.age = a;
        v.values = vcohort::eval_trajectory(theta, z, a);
        v.mask.assign(theta.dim(), true);
        p.visits.push_back(std::move(v));
    }
    return p;
}

// Irregular cohort with 1-7 visits per patient and about 30% of the first
// feature missing; every visit keeps at least one observation.
inline vcohort::Dataset random_cohort(vcohort::Rng& rng, int n, std::size_t d = 2) {
    using namespace vcohort;
    Dataset ds;
    ds.features = generic_features(d);
    for (int i = 0; i < n; ++i) {
        PatientSeries p{"p" + std::to_string(i), {}};
        double age = 60.0 + 10.0 * uniform01(rng);
        const auto visits = 1 + uniform_index(rng, 7);
        for (std::size_t j = 0; j < visits; ++j) {
            Visit v;
            v.age = age;
            v.values = Eigen::VectorXd(static_cast<Eigen::Index>(d));
            for (std::size_t k = 0; k < d; ++k) v.values[static_cast<Eigen::Index>(k)] = uniform01(rng);
            v.mask.assign(d, true);
            if (uniform01(rng) < 0.3) v.mask[0] = false;
            if (v.n_observed() == 0) v.mask[d - 1] = true;
            p.visits.push_back(std::move(v));
            age += 0.5 + 1.5 * uniform01(rng);
        }
        ds.patients.push_back(std::move(p));
    }
    return ds;
}

}  // namespace fixture
