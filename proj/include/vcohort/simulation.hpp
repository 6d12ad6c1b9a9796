#pragma once

// Virtual cohort simulation.
//
// A new individual draws its temporal effects (xi, tau) from a Gaussian KDE
// over the fitted temporal effects, then its space shifts from the Gaussian
// over all fitted effects conditioned on the drawn (xi, tau).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "model.hpp"
#include "util.hpp"

namespace vcohort {

inline constexpr double kBandwidthFloor = 1e-6;

struct KdeModel {
    std::vector<Eigen::Vector2d> support_points;  // (xi, tau)
    Eigen::Matrix2d bandwidth_matrix;             // kernel covariance
    bool floored = false;                         // bandwidth floor was applied
};

inline KdeModel fit_kde(const std::vector<Eigen::Vector2d>& points) {
    if (points.size() < 2) throw ContractError("fit_kde: need at least two points");
    const double n = static_cast<double>(points.size());
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : points) mean += p;
    mean /= n;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : points) cov += (p - mean) * (p - mean).transpose();
    cov /= (n - 1.0);

    // Scott's rule in two dimensions: factor n^(-1/6) on the Cholesky factor.
    const double factor = std::pow(n, -1.0 / 6.0);
    Eigen::Matrix2d h = factor * factor * cov;

    KdeModel kde;
    kde.support_points = points;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(h);
    Eigen::Vector2d lambda = eig.eigenvalues();
    const double floor_var = kBandwidthFloor * kBandwidthFloor;
    for (int i = 0; i < 2; ++i) {
        if (!(lambda[i] >= floor_var)) {
            lambda[i] = floor_var;
            kde.floored = true;
        }
    }
    kde.bandwidth_matrix = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    kde.bandwidth_matrix = 0.5 * (kde.bandwidth_matrix + kde.bandwidth_matrix.transpose()).eval();
    return kde;
}

inline double kde_density(const KdeModel& kde, const Eigen::Vector2d& x) {
    const Eigen::Matrix2d inv = kde.bandwidth_matrix.inverse();
    const double norm = 1.0 / (2.0 * kPi * std::sqrt(kde.bandwidth_matrix.determinant()));
    double sum = 0.0;
    for (const auto& p : kde.support_points) {
        const Eigen::Vector2d r = x - p;
        sum += std::exp(-0.5 * r.dot(inv * r));
    }
    return norm * sum / static_cast<double>(kde.support_points.size());
}

inline Eigen::Vector2d kde_mean(const KdeModel& kde) {
    Eigen::Vector2d m = Eigen::Vector2d::Zero();
    for (const auto& p : kde.support_points) m += p;
    return m / static_cast<double>(kde.support_points.size());
}

// Mixture covariance: spread of the support points plus the kernel.
inline Eigen::Matrix2d kde_covariance(const KdeModel& kde) {
    const Eigen::Vector2d m = kde_mean(kde);
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    for (const auto& p : kde.support_points) c += (p - m) * (p - m).transpose();
    return c / static_cast<double>(kde.support_points.size()) + kde.bandwidth_matrix;
}

inline Eigen::Vector2d sample_kde(const KdeModel& kde, Rng& rng) {
    const Eigen::Vector2d& centre = kde.support_points[uniform_index(rng, kde.support_points.size())];
    const Eigen::Matrix2d l = kde.bandwidth_matrix.llt().matrixL();
    const Eigen::Vector2d e(std_normal(rng), std_normal(rng));
    return centre + l * e;
}

struct JointGaussian {
    Eigen::VectorXd mu;     // layout [xi, tau, s...]
    Eigen::MatrixXd Sigma;
};

inline JointGaussian fit_joint_gaussian(const std::vector<RandomEffects>& zs) {
    if (zs.empty()) throw ContractError("fit_joint_gaussian: no random effects");
    const auto dim = static_cast<Eigen::Index>(zs.front().size());
    JointGaussian g;
    g.mu = Eigen::VectorXd::Zero(dim);
    for (const auto& z : zs) g.mu += z.to_vector();
    g.mu /= static_cast<double>(zs.size());
    g.Sigma = Eigen::MatrixXd::Zero(dim, dim);
    if (zs.size() > 1) {
        for (const auto& z : zs) {
            const Eigen::VectorXd r = z.to_vector() - g.mu;
            g.Sigma += r * r.transpose();
        }
        g.Sigma /= static_cast<double>(zs.size() - 1);
    }
    return g;
}

struct ConditionalGaussian {
    Eigen::VectorXd mu;
    Eigen::MatrixXd Sigma;
};

inline constexpr double kTemporalRegularization = 1e-9;

// Distribution of the space shifts given (xi, tau) = observed, via the Schur
// complement of the temporal block.
inline ConditionalGaussian conditional_gaussian(const JointGaussian& joint, const Eigen::Vector2d& observed) {
    const Eigen::Index n = joint.mu.size();
    if (n < 2 || joint.Sigma.rows() != n || joint.Sigma.cols() != n)
        throw ContractError("conditional_gaussian: malformed joint Gaussian");
    const Eigen::Index ns = n - 2;
    Eigen::Matrix2d stt = joint.Sigma.topLeftCorner(2, 2);
    stt.diagonal().array() += kTemporalRegularization;
    const Eigen::MatrixXd sst = joint.Sigma.bottomLeftCorner(ns, 2);
    const Eigen::MatrixXd sss = joint.Sigma.bottomRightCorner(ns, ns);

    Eigen::LLT<Eigen::Matrix2d> llt(stt);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all())
        throw NumericalError("conditional_gaussian: temporal (xi, tau) covariance block is singular");

    ConditionalGaussian c;
    c.mu = joint.mu.tail(ns) + sst * llt.solve(observed - joint.mu.head(2));
    c.Sigma = sss - sst * llt.solve(sst.transpose());
    c.Sigma = 0.5 * (c.Sigma + c.Sigma.transpose()).eval();
    return c;
}

inline Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, Rng& rng) {
    if (mu.size() == 0) return mu;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
    const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::VectorXd e(mu.size());
    for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = std_normal(rng);
    return mu + eig.eigenvectors() * root.cwiseProduct(e);
}

struct SimulationConfig {
    int n_patients = 100;
    int min_visits = 6;
    int max_visits = 6;  // visits per patient drawn uniformly from [min, max]
    double visit_spacing = 1.0;
    std::vector<double> baseline_ages;  // first-visit ages are resampled from these
    bool add_noise = true;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string id_prefix = "sim-";

    void validate() const {
        if (n_patients < 1) throw ConfigError("simulation.n_patients must be >= 1");
        if (min_visits < 1 || max_visits < min_visits) throw ConfigError("simulation visit range invalid");
        if (!(visit_spacing > 0.0)) throw ConfigError("simulation.visit_spacing must be positive");
        if (baseline_ages.empty()) throw ConfigError("simulation needs at least one baseline age");
    }
};

inline std::vector<double> baseline_ages(const Dataset& ds) {
    std::vector<double> ages;
    for (const auto& p : ds.patients)
        if (!p.visits.empty()) ages.push_back(p.visits.front().age);
    return ages;
}

inline std::vector<FeatureSpec> generic_features(std::size_t d) {
    std::vector<FeatureSpec> f;
    for (std::size_t k = 0; k < d; ++k) f.push_back({"f" + std::to_string(k + 1), 1.0, Direction::increasing});
    return f;
}

inline Dataset simulate_cohort(const FixedEffects& theta, const std::vector<RandomEffects>& fitted_z,
                               const SimulationConfig& cfg, std::vector<FeatureSpec> features = {}) {
    cfg.validate();
    theta.validate();
    if (fitted_z.empty()) throw ContractError("simulate_cohort: no fitted random effects");
    const std::size_t d = theta.dim();
    if (features.empty()) features = generic_features(d);
    if (features.size() != d) throw ContractError("simulate_cohort: feature list does not match theta");

    std::vector<Eigen::Vector2d> temporal;
    for (const auto& z : fitted_z) temporal.emplace_back(z.xi, z.tau);
    if (temporal.size() == 1) temporal.push_back(temporal.front());
    const KdeModel kde = fit_kde(temporal);
    const JointGaussian joint = fit_joint_gaussian(fitted_z);

    Dataset out;
    out.features = std::move(features);
    out.patients.resize(static_cast<std::size_t>(cfg.n_patients));
    const int width = static_cast<int>(std::to_string(cfg.n_patients).size());
    parallel_for(out.patients.size(), cfg.threads, [&](std::size_t p) {
        Rng rng = make_rng(cfg.seed, p);
        RandomEffects z;
        const Eigen::Vector2d t = sample_kde(kde, rng);
        z.xi = t[0];
        z.tau = t[1];
        const ConditionalGaussian cond = conditional_gaussian(joint, t);
        z.s = sample_gaussian(cond.mu, cond.Sigma, rng);

        const double first = cfg.baseline_ages[uniform_index(rng, cfg.baseline_ages.size())];
        const int n_visits =
            std::uniform_int_distribution<int>{cfg.min_visits, cfg.max_visits}(rng);

        PatientSeries& series = out.patients[p];
        char buf[32];
        std::snprintf(buf, sizeof buf, "%0*zu", width, p + 1);
        series.id = cfg.id_prefix + buf;
        for (int j = 0; j < n_visits; ++j) {
            Visit v;
            v.age = first + j * cfg.visit_spacing;
            v.values = eval_trajectory(theta, z, v.age);
            if (cfg.add_noise) {
                for (Eigen::Index k = 0; k < v.values.size(); ++k)
                    v.values[k] = std::clamp(v.values[k] + theta.sigma * std_normal(rng), 0.0, 1.0);
            }
            v.mask.assign(d, true);
            series.visits.push_back(std::move(v));
        }
    });
    return out;
}

}  // namespace vcohort
