#pragma once

// MCMC-SAEM estimation of the fixed effects.
//
// Each iteration runs one Metropolis-within-Gibbs sweep per patient, computes
// fresh sufficient statistics at the new latent state, blends them into the
// running statistics with a Robbins-Monro step and maximizes the smoothed
// complete log-likelihood:
//   - sigma and the xi/tau prior stds in closed form,
//   - (rho, delta, A) by one damped Gauss-Newton ascent step on a quadratic
//     surrogate built from smoothed J^T r and J^T J statistics.
// The reference age t0 stays at the mean observed age: with zero-mean priors
// on tau it only enters the likelihood through (1 - alpha) and drifts freely.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "model.hpp"
#include "util.hpp"

namespace vcohort {

struct ProposalStds {
    double xi = 0.1;
    double tau = 1.0;
    double s = 0.1;
};

struct SaemConfig {
    int n_iter = 800;
    int n_burn_in = 300;
    double step_exponent = 0.65;
    ProposalStds proposal_stds;
    int mh_sweeps = 1;
    int n_sources = -1;  // -1 selects default_n_sources(d)
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        if (n_iter <= 0) throw ConfigError("saem.n_iter must be positive");
        if (n_burn_in < 0 || n_burn_in >= n_iter) throw ConfigError("saem.n_burn_in must lie in [0, n_iter)");
        if (!(step_exponent > 0.5 && step_exponent <= 1.0))
            throw ConfigError("saem.step_exponent must lie in (0.5, 1]");
        if (!(proposal_stds.xi >= 0.0 && proposal_stds.tau >= 0.0 && proposal_stds.s >= 0.0))
            throw ConfigError("saem.proposal_stds must be non-negative");
        if (mh_sweeps < 1) throw ConfigError("saem.mh_sweeps must be >= 1");
    }
};

struct TraceEntry {
    double sigma = 0.0;
    double data_log_likelihood = 0.0;
};

struct CalibrationResult {
    FixedEffects theta;
    std::vector<RandomEffects> z_chain_last;
    std::vector<TraceEntry> trace;
};

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kRhoFloor = 1e-4;
inline constexpr double kPriorStdFloor = 1e-3;

inline double step_size(int k, const SaemConfig& cfg) {
    if (k <= cfg.n_burn_in) return 1.0;
    return std::pow(static_cast<double>(k - cfg.n_burn_in), -cfg.step_exponent);
}

enum class Block { xi, tau, s };

inline std::pair<RandomEffects, bool> mh_block_step(const PatientSeries& y, const RandomEffects& z,
                                                    const FixedEffects& theta, Block block,
                                                    double proposal_std, Rng& rng) {
    RandomEffects proposal = z;
    switch (block) {
        case Block::xi: proposal.xi += proposal_std * std_normal(rng); break;
        case Block::tau: proposal.tau += proposal_std * std_normal(rng); break;
        case Block::s:
            for (Eigen::Index j = 0; j < proposal.s.size(); ++j) proposal.s[j] += proposal_std * std_normal(rng);
            break;
    }
    const double delta = individual_log_likelihood(y, proposal, theta) - individual_log_likelihood(y, z, theta);
    const double u = uniform01(rng);
    if (std::log(u) < delta) return {std::move(proposal), true};
    return {z, false};
}

// Population parameter vector: [rho(d), delta(d), A(d x Ns) row-major].
inline Eigen::VectorXd pack_population(const FixedEffects& theta) {
    const auto d = theta.rho.size();
    const auto ns = theta.A.cols();
    Eigen::VectorXd p(2 * d + d * ns);
    p.segment(0, d) = theta.rho;
    p.segment(d, d) = theta.delta;
    for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index l = 0; l < ns; ++l) p[2 * d + k * ns + l] = theta.A(k, l);
    return p;
}

inline void unpack_population(const Eigen::VectorXd& p, FixedEffects& theta) {
    const auto d = theta.rho.size();
    const auto ns = theta.A.cols();
    theta.rho = p.segment(0, d);
    theta.delta = p.segment(d, d);
    for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index l = 0; l < ns; ++l) theta.A(k, l) = p[2 * d + k * ns + l];
}

struct SufficientStats {
    double rss = 0.0;       // sum of squared residuals over observed values
    double n_obs = 0.0;
    double sum_xi2 = 0.0;
    double sum_tau2 = 0.0;
    double n_patients = 0.0;
    Eigen::VectorXd jtr;     // sum J^T r
    Eigen::MatrixXd jtj;     // sum J^T J
    Eigen::VectorXd anchor;  // sum J^T J p_eval, p_eval the parameters J was taken at

    // S <- S + step * (fresh - S)
    void blend(const SufficientStats& fresh, double step) {
        auto mix = [step](auto& s, const auto& f) { s = s + step * (f - s); };
        mix(rss, fresh.rss);
        mix(n_obs, fresh.n_obs);
        mix(sum_xi2, fresh.sum_xi2);
        mix(sum_tau2, fresh.sum_tau2);
        mix(n_patients, fresh.n_patients);
        if (jtr.size() != fresh.jtr.size()) {
            jtr = fresh.jtr;
            jtj = fresh.jtj;
            anchor = fresh.anchor;
        } else {
            jtr += step * (fresh.jtr - jtr);
            jtj += step * (fresh.jtj - jtj);
            anchor += step * (fresh.anchor - anchor);
        }
    }
};

// Fresh statistics and the data log-likelihood at (theta, zs).
inline std::pair<SufficientStats, double> compute_stats(const Dataset& ds, const std::vector<RandomEffects>& zs,
                                                        const FixedEffects& theta) {
    const auto d = theta.rho.size();
    const auto ns = theta.A.cols();
    const Eigen::Index np = 2 * d + d * ns;
    SufficientStats st;
    st.jtr = Eigen::VectorXd::Zero(np);
    st.jtj = Eigen::MatrixXd::Zero(np, np);
    double ll = 0.0;
    const double log_norm = std::log(theta.sigma) + 0.5 * kLog2Pi;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(2 + ns));
    std::vector<double> jac(idx.size());
    for (std::size_t i = 0; i < ds.patients.size(); ++i) {
        const RandomEffects& z = zs[i];
        const double alpha = std::exp(z.xi);
        const Eigen::VectorXd w = ns > 0 ? Eigen::VectorXd(theta.A * z.s) : Eigen::VectorXd::Zero(d);
        st.sum_xi2 += z.xi * z.xi;
        st.sum_tau2 += z.tau * z.tau;
        st.n_patients += 1.0;
        for (const Visit& v : ds.patients[i].visits) {
            const double psi = alpha * (v.age - theta.t0 - z.tau) + theta.t0;
            for (Eigen::Index k = 0; k < d; ++k) {
                if (!v.mask[static_cast<std::size_t>(k)]) continue;
                const double f = logistic(theta.rho[k] * (psi - theta.delta[k]) + w[k]);
                const double r = v.values[k] - f;
                const double slope = f * (1.0 - f);
                st.rss += r * r;
                st.n_obs += 1.0;
                ll += -0.5 * r * r / (theta.sigma * theta.sigma) - log_norm;
                idx[0] = k;
                jac[0] = slope * (psi - theta.delta[k]);
                idx[1] = d + k;
                jac[1] = -slope * theta.rho[k];
                for (Eigen::Index l = 0; l < ns; ++l) {
                    idx[static_cast<std::size_t>(2 + l)] = 2 * d + k * ns + l;
                    jac[static_cast<std::size_t>(2 + l)] = slope * z.s[l];
                }
                for (std::size_t a = 0; a < idx.size(); ++a) {
                    st.jtr[idx[a]] += jac[a] * r;
                    for (std::size_t b = 0; b < idx.size(); ++b) st.jtj(idx[a], idx[b]) += jac[a] * jac[b];
                }
            }
        }
    }
    st.anchor = st.jtj * pack_population(theta);
    return {std::move(st), ll};
}

// Largest change allowed per component in one update.
struct UpdateBounds {
    double max_age_step = 2.0;       // delta, years
    double max_rho_rel_step = 0.5;   // fraction of current rho
    double max_mixing_step = 0.2;    // entries of A
    double damping = 1e-3;           // Marquardt damping on diag(J^T J)
};

// Blends `fresh` into `smoothed` and returns the maximizing parameters.
inline FixedEffects update_theta(SufficientStats& smoothed, const SufficientStats& fresh,
                                 const FixedEffects& theta, double step, const UpdateBounds& bounds = {}) {
    smoothed.blend(fresh, step);
    FixedEffects next = theta;

    const double mean_sq = smoothed.n_obs > 0.0 ? smoothed.rss / smoothed.n_obs : 0.0;
    next.sigma = std::max(kSigmaFloor, std::sqrt(std::max(0.0, mean_sq)));
    if (smoothed.n_patients > 0.0) {
        next.prior_xi_std = std::max(kPriorStdFloor, std::sqrt(smoothed.sum_xi2 / smoothed.n_patients));
        next.prior_tau_std = std::max(kPriorStdFloor, std::sqrt(smoothed.sum_tau2 / smoothed.n_patients));
    }

    if (smoothed.jtr.size() == 0) return next;
    const Eigen::VectorXd p = pack_population(theta);
    // Gradient of the smoothed quadratic surrogate at p.
    const Eigen::VectorXd grad = smoothed.jtr - smoothed.jtj * p + smoothed.anchor;
    Eigen::MatrixXd lhs = smoothed.jtj;
    const double scale = std::max(1e-12, smoothed.jtj.diagonal().maxCoeff());
    for (Eigen::Index a = 0; a < lhs.rows(); ++a)
        lhs(a, a) += bounds.damping * lhs(a, a) + 1e-10 * scale;
    Eigen::VectorXd dp = lhs.ldlt().solve(grad);
    if (!dp.allFinite()) dp = Eigen::VectorXd::Zero(p.size());

    const auto d = theta.rho.size();
    auto clip = [](double x, double lim) { return std::clamp(x, -lim, lim); };
    for (Eigen::Index k = 0; k < d; ++k) {
        dp[k] = clip(dp[k], bounds.max_rho_rel_step * theta.rho[k]);
        dp[d + k] = clip(dp[d + k], bounds.max_age_step);
    }
    for (Eigen::Index a = 2 * d; a < dp.size(); ++a) dp[a] = clip(dp[a], bounds.max_mixing_step);

    unpack_population(p + dp, next);
    next.rho = next.rho.cwiseMax(kRhoFloor);
    return next;
}

inline FixedEffects initial_theta(const Dataset& ds, std::size_t n_sources) {
    const auto d = static_cast<Eigen::Index>(ds.dim());
    double sum_age = 0.0;
    std::size_t n = 0;
    for (const auto& p : ds.patients)
        for (const auto& v : p.visits) {
            sum_age += v.age;
            ++n;
        }
    FixedEffects theta;
    theta.t0 = n > 0 ? sum_age / static_cast<double>(n) : 0.0;
    theta.rho = Eigen::VectorXd::Ones(d);
    theta.delta = Eigen::VectorXd::Constant(d, theta.t0);
    theta.A = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(n_sources));
    theta.sigma = 0.1;
    return theta;
}

inline CalibrationResult calibrate(const Dataset& estimation_set, const SaemConfig& cfg) {
    cfg.validate();
    if (estimation_set.patients.empty()) throw DataError("calibration: empty estimation set");
    validate(estimation_set);

    const std::size_t ns = cfg.n_sources >= 0 ? static_cast<std::size_t>(cfg.n_sources)
                                              : default_n_sources(estimation_set.dim());
    if (ns > estimation_set.dim()) throw ConfigError("saem.n_sources exceeds feature dimension");

    CalibrationResult result;
    result.theta = initial_theta(estimation_set, ns);
    const std::size_t n = estimation_set.patients.size();
    std::vector<RandomEffects> zs(n, RandomEffects::zero(ns));
    SufficientStats smoothed;
    result.trace.reserve(static_cast<std::size_t>(cfg.n_iter));

    for (int it = 1; it <= cfg.n_iter; ++it) {
        const FixedEffects& theta = result.theta;
        parallel_for(n, cfg.threads, [&](std::size_t i) {
            Rng rng = make_rng(cfg.seed, i, static_cast<std::uint64_t>(it));
            const PatientSeries& y = estimation_set.patients[i];
            RandomEffects z = zs[i];
            for (int sweep = 0; sweep < cfg.mh_sweeps; ++sweep) {
                z = mh_block_step(y, z, theta, Block::xi, cfg.proposal_stds.xi, rng).first;
                z = mh_block_step(y, z, theta, Block::tau, cfg.proposal_stds.tau, rng).first;
                if (ns > 0) z = mh_block_step(y, z, theta, Block::s, cfg.proposal_stds.s, rng).first;
            }
            if (!std::isfinite(individual_log_likelihood(y, z, theta)))
                throw NumericalError("calibration: non-finite likelihood for patient '" + y.id +
                                     "' at iteration " + std::to_string(it));
            zs[i] = std::move(z);
        });

        auto [fresh, data_ll] = compute_stats(estimation_set, zs, theta);
        if (!std::isfinite(data_ll))
            throw NumericalError("calibration: non-finite data log-likelihood at iteration " + std::to_string(it));
        result.theta = update_theta(smoothed, fresh, theta, step_size(it, cfg));
        result.trace.push_back({result.theta.sigma, data_ll});
    }
    result.z_chain_last = std::move(zs);
    return result;
}

}  // namespace vcohort
