#pragma once

// Single-layer LSTM regressor with a linear head squashed into (0, 1),
// trained on MSE with Adam (decoupled weight decay) and early stopping.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cohort.hpp"
#include "errors.hpp"
#include "util.hpp"

namespace vcohort {

using Sequence = std::vector<Eigen::VectorXd>;

// All parameters live in one flat vector; the accessors are views into it.
// Layout: W (4H x I), U (4H x H), b (4H), head_w (H), head_b. Gate rows are
// ordered input, forget, cell, output. Matrices are column-major.
class LstmParams {
public:
    LstmParams() = default;
    LstmParams(std::size_t input_dim, std::size_t hidden_dim)
        : input_(static_cast<Eigen::Index>(input_dim)),
          hidden_(static_cast<Eigen::Index>(hidden_dim)),
          flat_(Eigen::VectorXd::Zero(size_for(input_, hidden_))) {}

    static LstmParams initialized(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
        LstmParams p(input_dim, hidden_dim);
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < p.flat_.size(); ++i) p.flat_[i] = u(rng);
        return p;
    }

    Eigen::Index input_dim() const { return input_; }
    Eigen::Index hidden_dim() const { return hidden_; }

    Eigen::Map<Eigen::MatrixXd> W() { return {flat_.data(), 4 * hidden_, input_}; }
    Eigen::Map<const Eigen::MatrixXd> W() const { return {flat_.data(), 4 * hidden_, input_}; }
    Eigen::Map<Eigen::MatrixXd> U() { return {flat_.data() + offset_u(), 4 * hidden_, hidden_}; }
    Eigen::Map<const Eigen::MatrixXd> U() const { return {flat_.data() + offset_u(), 4 * hidden_, hidden_}; }
    Eigen::Map<Eigen::VectorXd> b() { return {flat_.data() + offset_b(), 4 * hidden_}; }
    Eigen::Map<const Eigen::VectorXd> b() const { return {flat_.data() + offset_b(), 4 * hidden_}; }
    Eigen::Map<Eigen::VectorXd> head_w() { return {flat_.data() + offset_head(), hidden_}; }
    Eigen::Map<const Eigen::VectorXd> head_w() const { return {flat_.data() + offset_head(), hidden_}; }
    double& head_b() { return flat_[flat_.size() - 1]; }
    double head_b() const { return flat_[flat_.size() - 1]; }

    Eigen::VectorXd& flat() { return flat_; }
    const Eigen::VectorXd& flat() const { return flat_; }

private:
    static Eigen::Index size_for(Eigen::Index i, Eigen::Index h) { return 4 * h * i + 4 * h * h + 4 * h + h + 1; }
    Eigen::Index offset_u() const { return 4 * hidden_ * input_; }
    Eigen::Index offset_b() const { return offset_u() + 4 * hidden_ * hidden_; }
    Eigen::Index offset_head() const { return offset_b() + 4 * hidden_; }

    Eigen::Index input_ = 0;
    Eigen::Index hidden_ = 0;
    Eigen::VectorXd flat_;
};

inline std::size_t encoded_input_dim(std::size_t d) { return d + 2; }

// One vector per input visit: [values (missing -> 0), fraction observed,
// years to target / 10].
inline Sequence encode_pair(const PredictionPair& pair, std::size_t d) {
    Sequence seq;
    seq.reserve(pair.input_visits.size());
    for (const Visit& v : pair.input_visits) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d + 2));
        for (std::size_t k = 0; k < d; ++k)
            if (v.mask[k]) x[static_cast<Eigen::Index>(k)] = v.values[static_cast<Eigen::Index>(k)];
        x[static_cast<Eigen::Index>(d)] = static_cast<double>(v.n_observed()) / static_cast<double>(d);
        x[static_cast<Eigen::Index>(d + 1)] = (pair.target_age - v.age) / 10.0;
        seq.push_back(std::move(x));
    }
    return seq;
}

namespace detail {

inline double sigmoid(double x) { return logistic(x); }

struct StepCache {
    Eigen::VectorXd i, f, g, o, c, h, tanh_c;
};

inline double run_forward(const LstmParams& p, const Sequence& seq, std::vector<StepCache>* cache) {
    if (seq.empty()) throw ContractError("forward: empty sequence");
    const Eigen::Index h = p.hidden_dim();
    Eigen::VectorXd hidden = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd cell = Eigen::VectorXd::Zero(h);
    if (cache) cache->resize(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
        if (seq[t].size() != p.input_dim()) throw ContractError("forward: input dimension mismatch");
        const Eigen::VectorXd z = p.W() * seq[t] + p.U() * hidden + p.b();
        Eigen::VectorXd ig = z.segment(0, h).unaryExpr(&sigmoid);
        Eigen::VectorXd fg = z.segment(h, h).unaryExpr(&sigmoid);
        Eigen::VectorXd gg = z.segment(2 * h, h).array().tanh();
        Eigen::VectorXd og = z.segment(3 * h, h).unaryExpr(&sigmoid);
        cell = fg.cwiseProduct(cell) + ig.cwiseProduct(gg);
        Eigen::VectorXd tc = cell.array().tanh();
        hidden = og.cwiseProduct(tc);
        if (cache) {
            StepCache& s = (*cache)[t];
            s.i = std::move(ig);
            s.f = std::move(fg);
            s.g = std::move(gg);
            s.o = std::move(og);
            s.c = cell;
            s.h = hidden;
            s.tanh_c = std::move(tc);
        }
    }
    return logistic(p.head_w().dot(hidden) + p.head_b());
}

}  // namespace detail

inline double forward(const LstmParams& params, const Sequence& seq) {
    return detail::run_forward(params, seq, nullptr);
}

struct Sample {
    Sequence sequence;
    double target = 0.0;
};

struct LossAndGradients {
    double loss = 0.0;
    LstmParams gradients;
};

// Mean squared error over the batch with gradients by backpropagation through time.
inline LossAndGradients loss_and_gradients(const LstmParams& params, std::span<const Sample> batch) {
    if (batch.empty()) throw ContractError("loss_and_gradients: empty batch");
    const Eigen::Index h = params.hidden_dim();
    LossAndGradients out{0.0, LstmParams(static_cast<std::size_t>(params.input_dim()), static_cast<std::size_t>(h))};
    LstmParams& grad = out.gradients;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    std::vector<detail::StepCache> cache;
    Eigen::VectorXd dz(4 * h);
    for (const Sample& sample : batch) {
        const double pred = detail::run_forward(params, sample.sequence, &cache);
        const double err = pred - sample.target;
        out.loss += err * err * inv_n;
        const double da = 2.0 * err * inv_n * pred * (1.0 - pred);

        grad.head_w() += da * cache.back().h;
        grad.head_b() += da;
        Eigen::VectorXd dh = da * params.head_w();
        Eigen::VectorXd dc = Eigen::VectorXd::Zero(h);
        for (std::size_t t = cache.size(); t-- > 0;) {
            const detail::StepCache& s = cache[t];
            const Eigen::VectorXd zero = Eigen::VectorXd::Zero(h);
            const Eigen::VectorXd& c_prev = t > 0 ? cache[t - 1].c : zero;
            const Eigen::VectorXd& h_prev = t > 0 ? cache[t - 1].h : zero;

            const Eigen::VectorXd d_o = dh.cwiseProduct(s.tanh_c);
            dc += dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix());
            const Eigen::VectorXd d_i = dc.cwiseProduct(s.g);
            const Eigen::VectorXd d_g = dc.cwiseProduct(s.i);
            const Eigen::VectorXd d_f = dc.cwiseProduct(c_prev);

            dz.segment(0, h) = d_i.array() * s.i.array() * (1.0 - s.i.array());
            dz.segment(h, h) = d_f.array() * s.f.array() * (1.0 - s.f.array());
            dz.segment(2 * h, h) = d_g.array() * (1.0 - s.g.array().square());
            dz.segment(3 * h, h) = d_o.array() * s.o.array() * (1.0 - s.o.array());

            grad.W().noalias() += dz * sample.sequence[t].transpose();
            grad.U().noalias() += dz * h_prev.transpose();
            grad.b() += dz;
            dh = params.U().transpose() * dz;
            dc = dc.cwiseProduct(s.f).eval();
        }
    }
    return out;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 32;
    int max_epochs = 1000;
    int patience = 20;
    std::size_t hidden_dim = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
        if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
        if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
        if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
        if (patience < 0) throw ConfigError("train.patience must be >= 0");
        if (hidden_dim == 0) throw ConfigError("train.hidden_dim must be positive");
    }
};

// Adam with decoupled weight decay: p <- p - lr*wd*p, then the Adam step.
class AdamOptimizer {
public:
    explicit AdamOptimizer(const TrainConfig& cfg, Eigen::Index n)
        : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
        ++t_;
        params *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
        m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
        v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        params.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
    }

private:
    TrainConfig cfg_;
    Eigen::VectorXd m_, v_;
    long t_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct TrainResult {
    LstmParams params;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
};

inline std::vector<Sample> make_samples(const std::vector<PredictionPair>& pairs, std::size_t d) {
    std::vector<Sample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({encode_pair(p, d), p.target_value});
    return out;
}

inline double mean_squared_error(const LstmParams& params, const std::vector<Sample>& samples) {
    double s = 0.0;
    for (const auto& x : samples) {
        const double e = forward(params, x.sequence) - x.target;
        s += e * e;
    }
    return s / static_cast<double>(samples.size());
}

inline TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& validation_set,
                         std::size_t input_dim, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty() || validation_set.empty())
        throw DataError("train: training and validation sets must be non-empty");
    Rng rng = make_rng(cfg.seed, 0x11);
    TrainResult result;
    LstmParams params = LstmParams::initialized(input_dim, cfg.hidden_dim, rng);
    AdamOptimizer adam(cfg, params.flat().size());
    result.params = params;
    double best = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Sample> batch;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        double train_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t j = start; j < stop; ++j) batch.push_back(train_set[order[j]]);
            LossAndGradients lg = loss_and_gradients(params, batch);
            if (!std::isfinite(lg.loss) || !lg.gradients.flat().allFinite())
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
            train_sum += lg.loss * static_cast<double>(stop - start);
            adam.step(params.flat(), lg.gradients.flat());
        }
        const double val = mean_squared_error(params, validation_set);
        if (!std::isfinite(val)) throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch));
        result.history.push_back({epoch, train_sum / static_cast<double>(order.size()), val});
        if (val < best) {
            best = val;
            result.best_epoch = epoch;
            result.params = params;
        }
        if (epoch - result.best_epoch >= cfg.patience) break;
    }
    return result;
}

inline TrainResult train(const std::vector<PredictionPair>& train_pairs, const std::vector<PredictionPair>& validation_pairs,
                         std::size_t d, const TrainConfig& cfg) {
    return train(make_samples(train_pairs, d), make_samples(validation_pairs, d), encoded_input_dim(d), cfg);
}

inline std::vector<double> predict(const LstmParams& params, const std::vector<PredictionPair>& pairs, std::size_t d) {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(forward(params, encode_pair(p, d)));
    return out;
}

}  // namespace vcohort
