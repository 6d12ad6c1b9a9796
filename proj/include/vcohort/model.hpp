#pragma once

// Generative spatiotemporal mixed-effects model.
//
// Each feature k follows a logistic curve in "latent time":
//
//   psi_i(t) = exp(xi_i) * (t - t0 - tau_i) + t0
//   f_k(t)   = logistic(rho_k * (psi_i(t) - delta_k) + (A s_i)_k)
//
// xi_i sets the pace of progression, tau_i the delay relative to the group
// average and s_i the space shifts that move features relative to each other.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "util.hpp"

namespace vcohort {

enum class Direction { increasing, decreasing };

struct FeatureSpec {
    std::string name;
    double raw_max = 1.0;
    Direction direction = Direction::increasing;
};

struct Visit {
    double age = 0.0;
    Eigen::VectorXd values;  // normalized to [0, 1]
    std::vector<bool> mask;  // true = observed

    std::size_t n_observed() const {
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    }
};

struct PatientSeries {
    std::string id;
    std::vector<Visit> visits;  // strictly increasing age
};

struct Dataset {
    std::vector<PatientSeries> patients;
    std::vector<FeatureSpec> features;

    std::size_t dim() const { return features.size(); }

    std::vector<std::string> feature_names() const {
        std::vector<std::string> names;
        for (const auto& f : features) names.push_back(f.name);
        return names;
    }
};

// Throws DataError describing the first violated invariant.
inline void validate(const Dataset& ds) {
    const std::size_t d = ds.dim();
    if (d == 0) throw DataError("dataset has no features");
    std::set<std::string> ids;
    for (const auto& p : ds.patients) {
        if (!ids.insert(p.id).second) throw DataError("duplicate patient id '" + p.id + "'");
        if (p.visits.empty()) throw DataError("patient '" + p.id + "' has no visits");
        for (std::size_t j = 0; j < p.visits.size(); ++j) {
            const Visit& v = p.visits[j];
            if (!std::isfinite(v.age)) throw DataError("patient '" + p.id + "': non-finite age");
            if (j > 0 && !(v.age > p.visits[j - 1].age))
                throw DataError("patient '" + p.id + "': visit ages not strictly increasing");
            if (static_cast<std::size_t>(v.values.size()) != d || v.mask.size() != d)
                throw DataError("patient '" + p.id + "': visit dimension mismatch");
            if (v.n_observed() == 0) throw DataError("patient '" + p.id + "': visit with no observed value");
            for (std::size_t k = 0; k < d; ++k) {
                if (v.mask[k] && !(v.values[k] >= 0.0 && v.values[k] <= 1.0))
                    throw DataError("patient '" + p.id + "': observed value outside [0,1]");
            }
        }
    }
}

struct FixedEffects {
    double t0 = 0.0;
    Eigen::VectorXd rho;    // per-feature rate, > 0
    Eigen::VectorXd delta;  // per-feature inflection age in latent time
    Eigen::MatrixXd A;      // d x n_sources mixing matrix
    double sigma = 0.1;
    double prior_xi_std = 0.5;
    double prior_tau_std = 5.0;
    double prior_s_std = 1.0;

    std::size_t dim() const { return static_cast<std::size_t>(rho.size()); }
    std::size_t n_sources() const { return static_cast<std::size_t>(A.cols()); }

    void validate() const {
        const auto d = rho.size();
        if (d == 0) throw ContractError("FixedEffects: empty rho");
        if (delta.size() != d || A.rows() != d) throw ContractError("FixedEffects: dimension mismatch");
        if (A.cols() > d) throw ContractError("FixedEffects: more sources than features");
        if ((rho.array() <= 0.0).any()) throw ContractError("FixedEffects: rho must be positive");
        if (!(sigma > 0.0)) throw ContractError("FixedEffects: sigma must be positive");
        if (!(prior_xi_std > 0.0 && prior_tau_std > 0.0 && prior_s_std > 0.0))
            throw ContractError("FixedEffects: prior stds must be positive");
        if (!std::isfinite(t0) || !rho.allFinite() || !delta.allFinite() || !A.allFinite())
            throw ContractError("FixedEffects: non-finite parameter");
    }
};

// Default number of space-shift sources for d features.
inline std::size_t default_n_sources(std::size_t d) {
    return d <= 1 ? 0 : std::min<std::size_t>(d - 1, 2);
}

struct RandomEffects {
    double xi = 0.0;   // log pace, alpha = exp(xi)
    double tau = 0.0;  // time shift in years
    Eigen::VectorXd s;

    static RandomEffects zero(std::size_t n_sources) {
        RandomEffects z;
        z.s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_sources));
        return z;
    }

    double alpha() const { return std::exp(xi); }

    std::size_t size() const { return 2 + static_cast<std::size_t>(s.size()); }

    // Flat layout [xi, tau, s...] used by optimizers and the joint Gaussian.
    Eigen::VectorXd to_vector() const {
        Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
        v[0] = xi;
        v[1] = tau;
        v.tail(s.size()) = s;
        return v;
    }

    static RandomEffects from_vector(const Eigen::VectorXd& v) {
        RandomEffects z;
        z.xi = v[0];
        z.tau = v[1];
        z.s = v.tail(v.size() - 2);
        return z;
    }

    bool operator==(const RandomEffects& o) const {
        return xi == o.xi && tau == o.tau && s.size() == o.s.size() && s == o.s;
    }
};

// Gradient has the same layout as RandomEffects.
using EffectsGradient = RandomEffects;

struct NoiseModel {
    double sigma = 0.0;
};

inline double reparametrize_time(const RandomEffects& z, double t, double t0) {
    return std::exp(z.xi) * (t - t0 - z.tau) + t0;
}

namespace detail {

inline Eigen::VectorXd space_shift(const FixedEffects& theta, const RandomEffects& z) {
    if (static_cast<std::size_t>(z.s.size()) != theta.n_sources())
        throw ContractError("space shift dimension " + std::to_string(z.s.size()) +
                            " does not match mixing matrix with " +
                            std::to_string(theta.n_sources()) + " sources");
    if (theta.n_sources() == 0) return Eigen::VectorXd::Zero(theta.A.rows());
    return theta.A * z.s;
}

}  // namespace detail

inline Eigen::VectorXd eval_trajectory(const FixedEffects& theta, const RandomEffects& z, double t) {
    const Eigen::VectorXd w = detail::space_shift(theta, z);
    const double psi = reparametrize_time(z, t, theta.t0);
    Eigen::VectorXd f(theta.rho.size());
    for (Eigen::Index k = 0; k < f.size(); ++k)
        f[k] = logistic(theta.rho[k] * (psi - theta.delta[k]) + w[k]);
    return f;
}

inline double prior_log_density(const RandomEffects& z, const FixedEffects& theta) {
    double lp = normal_log_density(z.xi, 0.0, theta.prior_xi_std) +
                normal_log_density(z.tau, 0.0, theta.prior_tau_std);
    for (Eigen::Index j = 0; j < z.s.size(); ++j) lp += normal_log_density(z.s[j], 0.0, theta.prior_s_std);
    return lp;
}

// log p(y_i | z; theta), masked-out coordinates excluded.
inline double data_log_likelihood(const PatientSeries& y, const RandomEffects& z, const FixedEffects& theta) {
    const Eigen::VectorXd w = detail::space_shift(theta, z);
    const double alpha = std::exp(z.xi);
    const double log_norm = std::log(theta.sigma) + 0.5 * kLog2Pi;
    const double inv_sigma = 1.0 / theta.sigma;
    double ll = 0.0;
    for (const Visit& v : y.visits) {
        const double psi = alpha * (v.age - theta.t0 - z.tau) + theta.t0;
        for (Eigen::Index k = 0; k < v.values.size(); ++k) {
            if (!v.mask[static_cast<std::size_t>(k)]) continue;
            const double f = logistic(theta.rho[k] * (psi - theta.delta[k]) + w[k]);
            const double r = (v.values[k] - f) * inv_sigma;
            ll += -0.5 * r * r - log_norm;
        }
    }
    return ll;
}

inline double individual_log_likelihood(const PatientSeries& y, const RandomEffects& z,
                                        const FixedEffects& theta) {
    return data_log_likelihood(y, z, theta) + prior_log_density(z, theta);
}

// Gradient of the data term only.
inline EffectsGradient gradient_data_log_likelihood(const PatientSeries& y, const RandomEffects& z,
                                                    const FixedEffects& theta) {
    const Eigen::VectorXd w = detail::space_shift(theta, z);
    const double alpha = std::exp(z.xi);
    const double inv_var = 1.0 / (theta.sigma * theta.sigma);
    const auto d = theta.rho.size();
    EffectsGradient g = RandomEffects::zero(theta.n_sources());
    // dL/dw_k accumulated over visits; the s-gradient is A^T times this.
    Eigen::VectorXd dw = Eigen::VectorXd::Zero(d);
    for (const Visit& v : y.visits) {
        const double elapsed = v.age - theta.t0 - z.tau;
        const double psi = alpha * elapsed + theta.t0;
        for (Eigen::Index k = 0; k < d; ++k) {
            if (!v.mask[static_cast<std::size_t>(k)]) continue;
            const double f = logistic(theta.rho[k] * (psi - theta.delta[k]) + w[k]);
            const double chain = (v.values[k] - f) * inv_var * f * (1.0 - f);
            g.xi += chain * theta.rho[k] * alpha * elapsed;
            g.tau -= chain * theta.rho[k] * alpha;
            dw[k] += chain;
        }
    }
    if (theta.n_sources() > 0) g.s = theta.A.transpose() * dw;
    return g;
}

inline EffectsGradient gradient_log_likelihood(const PatientSeries& y, const RandomEffects& z,
                                               const FixedEffects& theta) {
    EffectsGradient g = gradient_data_log_likelihood(y, z, theta);
    g.xi -= z.xi / (theta.prior_xi_std * theta.prior_xi_std);
    g.tau -= z.tau / (theta.prior_tau_std * theta.prior_tau_std);
    g.s -= z.s / (theta.prior_s_std * theta.prior_s_std);
    return g;
}

inline std::size_t n_observed_values(const PatientSeries& y) {
    std::size_t m = 0;
    for (const auto& v : y.visits) m += v.n_observed();
    return m;
}

}  // namespace vcohort
