#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vcohort/lstm.hpp"

using namespace vcohort;

namespace {

PredictionPair pair_from(const std::vector<Visit>& inputs, double target_age, double target_value) {
    PredictionPair p;
    p.patient_id = "p";
    p.input_visits = inputs;
    p.target_age = target_age;
    p.target_value = target_value;
    p.target_feature_index = 0;
    p.delta_t = target_age - inputs.back().age;
    p.last_input_index = inputs.size() - 1;
    p.target_index = inputs.size();
    return p;
}

Sample random_sample(Rng& rng, Eigen::Index input_dim, std::size_t steps) {
    Sample s;
    for (std::size_t t = 0; t < steps; ++t) {
        Eigen::VectorXd x(input_dim);
        for (Eigen::Index k = 0; k < input_dim; ++k) x[k] = std_normal(rng);
        s.sequence.push_back(x);
    }
    s.target = uniform01(rng);
    return s;
}

// Single-step task whose target is affine in the first input.
std::vector<Sample> affine_task(Rng& rng, int n) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
        const double v = uniform01(rng);
        out.push_back({{Eigen::Vector3d(v, 1.0, 0.3)}, 0.2 + 0.6 * v});
    }
    return out;
}

}  // namespace

TEST(EncodePair, ObservedVisit) {
    const auto pair = pair_from({fixture::visit(70.0, {0.4})}, 72.0, 0.5);
    const Sequence seq = encode_pair(pair, 1);
    ASSERT_EQ(seq.size(), 1u);
    EXPECT_NEAR((seq[0] - Eigen::Vector3d(0.4, 1.0, 0.2)).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(EncodePair, HalfObservedVisit) {
    Visit v = fixture::visit(70.0, {0.3, 0.9});
    v.mask[1] = false;
    const Sequence seq = encode_pair(pair_from({v, fixture::visit(71.0, {0.4, 0.5})}, 73.0, 0.5), 2);
    ASSERT_EQ(seq.size(), 2u);
    EXPECT_EQ(seq[0][1], 0.0);
    EXPECT_EQ(seq[0][2], 0.5);
    EXPECT_NEAR(seq[0][3], 0.3, 1e-15);
    EXPECT_EQ(seq[1][2], 1.0);
    EXPECT_NEAR(seq[1][3], 0.2, 1e-15);
    EXPECT_EQ(encoded_input_dim(2), 4u);
}

TEST(Forward, ZeroParametersGiveOneHalf) {
    const LstmParams p(3, 10);
    Rng rng(1);
    EXPECT_EQ(forward(p, random_sample(rng, 3, 4).sequence), 0.5);
}

TEST(Forward, MatchesScalarOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        oracle::ScalarLstm o{};
        for (double* w : {&o.wi, &o.wf, &o.wg, &o.wo, &o.bi, &o.bf, &o.bg, &o.bo, &o.head_w, &o.head_b}) *w = std_normal(rng);
        LstmParams p(1, 1);
        p.W() << o.wi, o.wf, o.wg, o.wo;
        p.b() << o.bi, o.bf, o.bg, o.bo;
        p.U().setConstant(std_normal(rng));  // irrelevant from a zero hidden state
        p.head_w()[0] = o.head_w;
        p.head_b() = o.head_b;
        const double x = std_normal(rng);
        EXPECT_NEAR(forward(p, {Eigen::VectorXd::Constant(1, x)}), o.predict(x), 1e-14);
    }
}

TEST(Forward, DependsOnVisitOrder) {
    Rng rng(3);
    const LstmParams p = LstmParams::initialized(4, 10, rng);
    Sample s = random_sample(rng, 4, 3);
    const double a = forward(p, s.sequence);
    std::swap(s.sequence[0], s.sequence[2]);
    EXPECT_NE(a, forward(p, s.sequence));
}

TEST(Forward, OutputInUnitIntervalAndRejectsBadInput) {
    Rng rng(4);
    const LstmParams p = LstmParams::initialized(3, 10, rng);
    for (int i = 0; i < 100; ++i) {
        const double y = forward(p, random_sample(rng, 3, 1 + uniform_index(rng, 6)).sequence);
        EXPECT_GT(y, 0.0);
        EXPECT_LT(y, 1.0);
    }
    EXPECT_THROW(forward(p, {}), ContractError);
    EXPECT_THROW(forward(p, {Eigen::VectorXd::Zero(2)}), ContractError);
}

TEST(LossAndGradients, ZeroAtPerfectTarget) {
    Rng rng(5);
    const LstmParams p = LstmParams::initialized(3, 5, rng);
    Sample s = random_sample(rng, 3, 3);
    s.target = forward(p, s.sequence);
    const auto lg = loss_and_gradients(p, std::span<const Sample>(&s, 1));
    EXPECT_EQ(lg.loss, 0.0);
    EXPECT_EQ(lg.gradients.flat().cwiseAbs().maxCoeff(), 0.0);
}

TEST(LossAndGradients, MatchesCentralDifferencesOnEveryParameter) {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        LstmParams p = LstmParams::initialized(4, 3, rng);
        p.flat() *= 3.0;  // move gates off their linear regime
        std::vector<Sample> batch;
        for (int i = 0; i < 3; ++i) batch.push_back(random_sample(rng, 4, 1 + uniform_index(rng, 4)));
        const auto lg = loss_and_gradients(p, batch);
        const Eigen::VectorXd fd = oracle::central_difference(
            [&](const Eigen::VectorXd& x) {
                LstmParams q = p;
                q.flat() = x;
                double s = 0.0;
                for (const auto& b : batch) s += std::pow(forward(q, b.sequence) - b.target, 2);
                return s / static_cast<double>(batch.size());
            },
            p.flat(), 1e-5);
        EXPECT_LT(oracle::max_relative_error(lg.gradients.flat(), fd, 1e-3), 1e-4) << "trial " << trial;
    }
}

TEST(LossAndGradients, BatchLossIsMeanOfSampleLosses) {
    Rng rng(7);
    const LstmParams p = LstmParams::initialized(3, 10, rng);
    std::vector<Sample> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(random_sample(rng, 3, 2));
    const auto all = loss_and_gradients(p, batch);
    double loss = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p.flat().size());
    for (const auto& s : batch) {
        const auto one = loss_and_gradients(p, std::span<const Sample>(&s, 1));
        loss += one.loss / 8.0;
        grad += one.gradients.flat() / 8.0;
    }
    EXPECT_NEAR(all.loss, loss, 1e-14);
    EXPECT_LT((all.gradients.flat() - grad).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Adam, DecoupledDecayShrinksWithZeroGradient) {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.5;
    AdamOptimizer adam(cfg, 3);
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 3.0;
    const Eigen::VectorXd before = x;
    adam.step(x, Eigen::VectorXd::Zero(3));
    EXPECT_LT((x - 0.95 * before).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.0;
    AdamOptimizer adam(cfg, 2);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
    adam.step(x, Eigen::Vector2d(3.0, -0.2));
    EXPECT_NEAR(x[0], -0.01, 1e-9);
    EXPECT_NEAR(x[1], 0.01, 1e-9);
}

TEST(Train, ZeroPatienceRunsExactlyOneEpoch) {
    Rng rng(8);
    const auto data = affine_task(rng, 20);
    TrainConfig cfg;
    cfg.patience = 0;
    const auto r = train(data, data, 3, cfg);
    EXPECT_EQ(r.history.size(), 1u);
    EXPECT_EQ(r.best_epoch, 1);
}

TEST(Train, SeedDeterministic) {
    Rng rng(9);
    const auto data = affine_task(rng, 40);
    TrainConfig cfg;
    cfg.max_epochs = 15;
    cfg.seed = 12;
    const auto a = train(data, data, 3, cfg);
    const auto b = train(data, data, 3, cfg);
    EXPECT_EQ(a.params.flat(), b.params.flat());
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].val_mse, b.history[i].val_mse);
}

TEST(Train, LearnsAffineTarget) {
    Rng rng(10);
    const auto train_set = affine_task(rng, 256);
    const auto val_set = affine_task(rng, 64);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.max_epochs = 200;
    const auto r = train(train_set, val_set, 3, cfg);
    EXPECT_LT(mean_squared_error(r.params, val_set), 1e-3);
}

TEST(Train, ReturnsBestValidationParameters) {
    Rng rng(11);
    const auto train_set = affine_task(rng, 64);
    const auto val_set = affine_task(rng, 16);
    TrainConfig cfg;
    cfg.learning_rate = 5e-2;
    cfg.max_epochs = 60;
    cfg.patience = 10;
    const auto r = train(train_set, val_set, 3, cfg);
    double best = 1e300;
    for (const auto& h : r.history) best = std::min(best, h.val_mse);
    EXPECT_EQ(r.history[static_cast<std::size_t>(r.best_epoch - 1)].val_mse, best);
    EXPECT_NEAR(mean_squared_error(r.params, val_set), best, 1e-15);
    EXPECT_LE(r.history.size(), static_cast<std::size_t>(r.best_epoch + cfg.patience));
}

TEST(Train, RejectsEmptySetsAndBadConfig) {
    Rng rng(12);
    const auto data = affine_task(rng, 4);
    EXPECT_THROW(train(std::vector<Sample>{}, data, 3, TrainConfig{}), DataError);
    TrainConfig bad;
    bad.learning_rate = 0.0;
    EXPECT_THROW(train(data, data, 3, bad), ConfigError);
}
