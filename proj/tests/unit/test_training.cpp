#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cftclip/encoders.hpp"
#include "cftclip/training.hpp"

using namespace cftclip;
using namespace cftclip::training;

namespace {

// Scalar double-loop evaluation of the objective, independent of the
// vectorized implementation.
double loss_oracle(const Eigen::MatrixXd& u, const Eigen::MatrixXd& t, const Eigen::MatrixXd& c,
                   double tau) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        double denom = 0.0;
        for (Eigen::Index j = 0; j < t.rows(); ++j) {
            double sim = 0.0;
            for (Eigen::Index k = 0; k < u.cols(); ++k) sim += u(i, k) * t(j, k);
            denom += std::exp(sim / tau);
        }
        for (Eigen::Index j = 0; j < c.rows(); ++j) {
            double sim = 0.0;
            for (Eigen::Index k = 0; k < u.cols(); ++k) sim += u(i, k) * c(j, k);
            denom += std::exp(sim / tau);
        }
        double pos = 0.0;
        for (Eigen::Index k = 0; k < u.cols(); ++k) pos += u(i, k) * t(i, k);
        total += -std::log(std::exp(pos / tau) / denom);
    }
    return total / static_cast<double>(u.rows());
}

Eigen::MatrixXd random_unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) m(i, k) = rng.normal();
        m.row(i).normalize();
    }
    return m;
}

std::vector<TrainExample> random_examples(int n, int image_dim, int text_dim, std::uint64_t seed,
                                          bool with_cf) {
    Rng rng(seed);
    std::vector<TrainExample> out(n);
    for (auto& e : out) {
        e.image_features = Eigen::VectorXd(image_dim);
        e.text_features = Eigen::VectorXd(text_dim);
        for (Eigen::Index i = 0; i < image_dim; ++i) e.image_features[i] = rng.normal();
        for (Eigen::Index i = 0; i < text_dim; ++i) e.text_features[i] = rng.normal();
        if (with_cf) {
            Eigen::VectorXd cf(text_dim);
            for (Eigen::Index i = 0; i < text_dim; ++i) cf[i] = rng.normal();
            e.cf_text_features = cf;
        }
    }
    return out;
}

encoders::ToyEncoderConfig tiny_encoder_config(std::uint64_t seed = 0) {
    encoders::ToyEncoderConfig c;
    c.dimension = 8;
    c.hidden_dim = 6;
    c.text_feature_dim = 12;
    c.image_grid = 2; // image feature dim 8
    c.seed = seed;
    return c;
}

} // namespace

TEST_CASE("equal positive and counterfactual similarities give ln 2") {
    // one anchor; text and counterfactual at the same angle from the image
    Eigen::MatrixXd u(1, 2), t(1, 2), c(1, 2);
    u << 1.0, 0.0;
    t << 0.6, 0.8;
    c << 0.6, -0.8;
    for (double tau : {0.05, 0.5, 1.0, 3.0})
        CHECK(std::abs(contrastive_loss(u, t, c, tau) - std::log(2.0)) < 1e-9);
}

TEST_CASE("a batch without counterfactuals and N=1 gives zero loss") {
    Eigen::MatrixXd u(1, 4), t(1, 4);
    Rng rng(4);
    for (Eigen::Index k = 0; k < 4; ++k) {
        u(0, k) = rng.normal();
        t(0, k) = rng.normal();
    }
    u.row(0).normalize();
    t.row(0).normalize();
    Eigen::MatrixXd empty(0, 4);
    CHECK(contrastive_loss(u, t, empty, 0.05) == 0.0);
}

TEST_CASE("N=2 hand-set embeddings match the double-loop oracle") {
    Eigen::MatrixXd u(2, 2), t(2, 2), c(2, 2);
    u << 1.0, 0.0, 0.0, 1.0;
    t << 0.8, 0.6, 0.6, 0.8;
    c << -0.6, 0.8, 1.0, 0.0;
    double vectorized = contrastive_loss(u, t, c, 1.0);
    double oracle = loss_oracle(u, t, c, 1.0);
    CHECK(std::abs(vectorized - oracle) < 1e-6);
}

TEST_CASE("loss equals the oracle on random batches") {
    Rng rng(99);
    for (int rep = 0; rep < 25; ++rep) {
        Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_index(8));
        Eigen::Index m = static_cast<Eigen::Index>(rng.uniform_index(n + 1));
        Eigen::Index d = rng.uniform() < 0.5 ? 2 : 16;
        auto u = random_unit_rows(n, d, rng);
        auto t = random_unit_rows(n, d, rng);
        auto c = random_unit_rows(m, d, rng);
        double tau = 0.05 + rng.uniform();
        CHECK(std::abs(contrastive_loss(u, t, c, tau) - loss_oracle(u, t, c, tau)) < 1e-6);
    }
}

TEST_CASE("adding a counterfactual term strictly increases the loss") {
    Rng rng(12);
    auto u = random_unit_rows(4, 8, rng);
    auto t = random_unit_rows(4, 8, rng);
    auto c3 = random_unit_rows(3, 8, rng);
    Eigen::MatrixXd c4(4, 8);
    c4.topRows(3) = c3;
    c4.row(3) = random_unit_rows(1, 8, rng);
    double without = contrastive_loss(u, t, c3, 0.1);
    double with = contrastive_loss(u, t, c4, 0.1);
    CHECK(with > without);
    Eigen::MatrixXd none(0, 8);
    CHECK(contrastive_loss(u, t, c3, 0.1) > contrastive_loss(u, t, none, 0.1));
}

TEST_CASE("raising the positive similarity lowers the loss, all else fixed") {
    // u1 is orthogonal to t0's moving coordinate, so only sim(I0, T0) changes.
    Eigen::MatrixXd u(2, 3), t(2, 3), c(0, 3);
    u << 1.0, 0.0, 0.0,
         0.0, 1.0, 0.0;
    t << 0.3, 0.0, 0.4,
         0.0, 0.5, 0.1;
    double before = contrastive_loss(u, t, c, 0.5);
    t(0, 0) = 0.6;
    double after = contrastive_loss(u, t, c, 0.5);
    CHECK(after < before);
}

TEST_CASE("loss is invariant to the ordering of counterfactual negatives") {
    Rng rng(8);
    auto u = random_unit_rows(3, 4, rng);
    auto t = random_unit_rows(3, 4, rng);
    auto c = random_unit_rows(3, 4, rng);
    Eigen::MatrixXd permuted(3, 4);
    permuted.row(0) = c.row(2);
    permuted.row(1) = c.row(0);
    permuted.row(2) = c.row(1);
    CHECK(std::abs(contrastive_loss(u, t, c, 0.07) - contrastive_loss(u, t, permuted, 0.07)) <
          1e-12);
}

TEST_CASE("scaling similarities and temperature together leaves the loss unchanged") {
    Rng rng(21);
    auto u = random_unit_rows(3, 4, rng);
    auto t = random_unit_rows(3, 4, rng);
    auto c = random_unit_rows(2, 4, rng);
    double base = contrastive_loss(u, t, c, 0.05);
    double scaled = contrastive_loss(3.0 * u, t, c, 3.0 * 0.05);
    CHECK(std::abs(base - scaled) < 1e-9);
}

TEST_CASE("loss input validation") {
    Eigen::MatrixXd u(1, 2), t(1, 2), c(0, 2);
    u << 1, 0;
    t << 0, 1;
    CHECK_THROWS_AS(contrastive_loss(u, t, c, 0.0), Error);
    Eigen::MatrixXd t3(1, 3);
    t3 << 0, 1, 0;
    CHECK_THROWS_AS(contrastive_loss(u, t3, c, 0.1), Error);
}

TEST_CASE("analytic loss gradients match finite differences through the encoder") {
    encoders::ToyBiEncoder enc(tiny_encoder_config(2));
    auto batch = random_examples(2, enc.config().image_feature_dim(),
                                 enc.config().text_feature_dim, 31, true);
    auto report = gradient_check(enc, batch, 0.2, 1e-4);
    CHECK(report.max_rel_error < 1e-3);
    CHECK(report.max_frozen_grad == 0.0);
}

TEST_CASE("frozen parameters receive exactly zero gradient") {
    encoders::ToyBiEncoder enc(tiny_encoder_config(4));
    encoders::FreezePlan plan;
    plan.text_layers_frozen = 1;
    plan.vision_layers_frozen = 1;
    plan.pooler_trainable = true;
    encoders::apply_freeze_plan(enc, plan);
    auto batch = random_examples(2, enc.config().image_feature_dim(),
                                 enc.config().text_feature_dim, 5, true);
    auto report = gradient_check(enc, batch, 0.1, 1e-4);
    CHECK(report.max_frozen_grad == 0.0);
    CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("early stopper fires after exactly `patience` non-improving checks") {
    EarlyStopper stopper(5, 1.0);
    // strictly increasing validation losses: none improves on the baseline
    for (int check = 1; check <= 4; ++check) CHECK_FALSE(stopper.check(1.0 + 0.1 * check));
    CHECK(stopper.check(1.5)); // the fifth consecutive failure fires
}

TEST_CASE("an improvement resets the early stopper") {
    EarlyStopper stopper(3, 1.0);
    CHECK_FALSE(stopper.check(1.2));
    CHECK_FALSE(stopper.check(1.3));
    CHECK_FALSE(stopper.check(0.9)); // improvement, counter resets
    CHECK(stopper.consecutive_failures() == 0);
    CHECK_FALSE(stopper.check(1.4));
    CHECK_FALSE(stopper.check(1.5));
    CHECK(stopper.check(1.6));
}

TEST_CASE("equal validation loss counts as non-improving") {
    EarlyStopper stopper(2, 1.0);
    CHECK_FALSE(stopper.check(1.0));
    CHECK(stopper.check(1.0));
}

TEST_CASE("train stops after exactly patience checks on a rising stub sequence") {
    encoders::ToyBiEncoder enc(tiny_encoder_config(6));
    auto examples = random_examples(150, enc.config().image_feature_dim(),
                                    enc.config().text_feature_dim, 7, false);
    TrainConfig config;
    config.batch_size = 1;
    config.max_epochs = 1;
    config.val_check_every = 20;
    config.early_stop_patience = 5;
    config.seed = 0;

    int calls = 0;
    TrainHooks hooks;
    hooks.validation_loss_override = [&calls](int) { return 1.0 + 0.01 * calls++; };

    auto result = train(enc, examples, {}, config, hooks);
    CHECK(result.early_stopped);
    // baseline at step 0, then checks at steps 20..100: five non-improving
    CHECK(result.steps_run == 100);
    CHECK(calls == 6);
}

TEST_CASE("training reduces the loss on a learnable toy problem") {
    encoders::ToyBiEncoder enc(tiny_encoder_config(0));
    auto examples = random_examples(64, enc.config().image_feature_dim(),
                                    enc.config().text_feature_dim, 3, false);
    // make pairs learnable: tie text features to image features
    for (auto& e : examples) e.text_features = e.image_features.head(12);
    TrainConfig config;
    config.batch_size = 16;
    config.max_epochs = 30;
    config.initial_lr = 3e-3;
    config.val_check_every = 1000; // no early stopping in this run
    config.seed = 0;

    auto result = train(enc, examples, {}, config);
    REQUIRE(result.log.size() > 10);
    double first = result.log.front().train_loss;
    double last = result.log.back().train_loss;
    CHECK(last < first);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto run_once = [&]() {
        encoders::ToyBiEncoder enc(tiny_encoder_config(1));
        auto examples = random_examples(32, enc.config().image_feature_dim(),
                                        enc.config().text_feature_dim, 13, true);
        auto val = random_examples(8, enc.config().image_feature_dim(),
                                   enc.config().text_feature_dim, 14, true);
        TrainConfig config;
        config.batch_size = 8;
        config.max_epochs = 3;
        config.seed = 42;
        train(enc, examples, val, config);
        std::vector<double> weights;
        for (const auto& p : enc.params())
            weights.insert(weights.end(), p.values, p.values + p.size);
        return weights;
    };
    CHECK(run_once() == run_once());
}

TEST_CASE("training without trainable parameters raises NothingTrainable") {
    encoders::ToyBiEncoder enc(tiny_encoder_config(2));
    encoders::FreezePlan plan;
    plan.text_layers_frozen = 1;
    plan.vision_layers_frozen = 1;
    plan.pooler_trainable = false;
    encoders::apply_freeze_plan(enc, plan); // a valid plan; only the trainer objects
    auto examples = random_examples(4, enc.config().image_feature_dim(),
                                    enc.config().text_feature_dim, 1, false);
    try {
        train(enc, examples, {}, TrainConfig{});
        FAIL("expected NothingTrainable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NothingTrainable);
    }
}

TEST_CASE("training on an empty corpus raises DataExhausted") {
    encoders::ToyBiEncoder enc(tiny_encoder_config(2));
    try {
        train(enc, {}, {}, TrainConfig{});
        FAIL("expected DataExhausted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DataExhausted);
    }
}

TEST_CASE("cosine annealing decays from the initial rate to zero") {
    CHECK(cosine_annealed_lr(1e-4, 0, 100) == Catch::Approx(1e-4));
    CHECK(cosine_annealed_lr(1e-4, 50, 100) == Catch::Approx(5e-5));
    CHECK(cosine_annealed_lr(1e-4, 100, 100) == Catch::Approx(0.0).margin(1e-18));
    CHECK(cosine_annealed_lr(1e-4, 150, 100) == Catch::Approx(0.0).margin(1e-18));
}
