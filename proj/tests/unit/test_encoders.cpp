#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "cftclip/encoders.hpp"
#include "cftclip/training.hpp"

using namespace cftclip;
using namespace cftclip::encoders;

namespace {

ToyEncoderConfig small_config(std::uint64_t seed = 0) {
    ToyEncoderConfig c;
    c.dimension = 8;
    c.hidden_dim = 6;
    c.text_feature_dim = 16;
    c.max_text_tokens = 77;
    c.image_grid = 2;
    c.seed = seed;
    return c;
}

Raster noise_image(int size, std::uint64_t seed) {
    Raster img = make_raster(size, size);
    Rng rng(seed);
    for (double& p : img.pixels) p = 0.5 + 0.2 * rng.normal();
    return img;
}

} // namespace

TEST_CASE("encoding is deterministic in inference mode") {
    ToyBiEncoder enc(small_config());
    Raster img = noise_image(8, 1);
    auto a = enc.encode_image(img);
    auto b = enc.encode_image(img);
    CHECK(a.values == b.values);
    auto t1 = enc.encode_text("a b c");
    auto t2 = enc.encode_text("a b c");
    CHECK(t1.values == t2.values);
}

TEST_CASE("all-zero image maps to the epsilon-direction unit embedding") {
    ToyBiEncoder enc(small_config());
    Raster zero = make_raster(8, 8, 1, 0.0);
    auto e = enc.encode_image(zero);
    CHECK(e.normalized);
    CHECK(std::abs(e.values.norm() - 1.0) < 1e-5);
    // features are all zero, biases are zero-initialized: the guard direction
    CHECK(e.values[0] == Catch::Approx(1.0));
}

TEST_CASE("embeddings are unit norm") {
    ToyBiEncoder enc(small_config(3));
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto e = enc.encode_image(noise_image(8, s));
        // oracle: scalar norm accumulation
        double norm_sq = 0.0;
        for (Eigen::Index i = 0; i < e.values.size(); ++i) norm_sq += e.values[i] * e.values[i];
        CHECK(std::abs(std::sqrt(norm_sq) - 1.0) < 1e-5);
    }
}

TEST_CASE("text features are position sensitive") {
    ToyBiEncoder enc(small_config());
    auto ab = enc.encode_text("a b");
    auto ba = enc.encode_text("b a");
    CHECK((ab.values - ba.values).norm() > 1e-8);
}

TEST_CASE("long texts are truncated and flagged") {
    ToyEncoderConfig cfg = small_config();
    cfg.max_text_tokens = 4;
    ToyBiEncoder enc(cfg);
    auto full = enc.encode_text("one two three four five six");
    CHECK(full.truncated);
    auto prefix = enc.encode_text("one two three four");
    CHECK_FALSE(prefix.truncated);
    CHECK((full.values - prefix.values).norm() < 1e-12);
}

TEST_CASE("empty-after-tokenization text is rejected") {
    ToyBiEncoder enc(small_config());
    CHECK_THROWS_AS(enc.encode_text(""), Error);
    CHECK_THROWS_AS(enc.encode_text("   \t "), Error);
}

TEST_CASE("images smaller than the grid are rejected") {
    ToyEncoderConfig cfg = small_config();
    cfg.image_grid = 8;
    ToyBiEncoder enc(cfg);
    try {
        enc.encode_image(noise_image(4, 0));
        FAIL("expected PreprocessError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PreprocessError);
    }
}

TEST_CASE("freeze plans outside tower bounds are rejected") {
    ToyBiEncoder enc(small_config());
    FreezePlan plan;
    plan.text_layers_frozen = 2; // toy towers have one layer below the pooler
    CHECK_THROWS_AS(apply_freeze_plan(enc, plan), Error);
    plan.text_layers_frozen = -1;
    CHECK_THROWS_AS(apply_freeze_plan(enc, plan), Error);
}

TEST_CASE("an optimizer step leaves frozen parameters bit-identical") {
    ToyBiEncoder enc(small_config(5));
    FreezePlan plan;
    plan.text_layers_frozen = 1; // text feature layer frozen, poolers train
    plan.vision_layers_frozen = 0;
    plan.pooler_trainable = true;
    apply_freeze_plan(enc, plan);

    Eigen::MatrixXd frozen_before = enc.text_tower().w1;
    Eigen::MatrixXd trainable_before = enc.text_tower().w2;

    std::vector<training::TrainExample> batch(2);
    Rng rng(9);
    for (auto& e : batch) {
        e.image_features = Eigen::VectorXd(enc.config().image_feature_dim());
        e.text_features = Eigen::VectorXd(enc.config().text_feature_dim);
        for (Eigen::Index i = 0; i < e.image_features.size(); ++i)
            e.image_features[i] = rng.normal();
        for (Eigen::Index i = 0; i < e.text_features.size(); ++i)
            e.text_features[i] = rng.normal();
    }
    training::TrainConfig config;
    config.batch_size = 2;
    config.max_epochs = 1;
    config.val_check_every = 100;
    config.initial_lr = 1e-2;
    training::train(enc, batch, {}, config);

    CHECK(std::memcmp(frozen_before.data(), enc.text_tower().w1.data(),
                      sizeof(double) * frozen_before.size()) == 0);
    CHECK(std::memcmp(trainable_before.data(), enc.text_tower().w2.data(),
                      sizeof(double) * trainable_before.size()) != 0);
}

TEST_CASE("init modes behave as documented") {
    SECTION("toy mode is reproducible for a fixed seed") {
        ToyBiEncoder a(small_config(7)), b(small_config(7));
        CHECK(a.text_tower().w1 == b.text_tower().w1);
        CHECK(a.vision_tower().w2 == b.vision_tower().w2);
    }
    SECTION("random_init with different seeds differs") {
        auto a = init_encoder(InitMode::RandomInit, small_config(1));
        auto b = init_encoder(InitMode::RandomInit, small_config(2));
        CHECK(a->text_tower().w1 != b->text_tower().w1);
    }
    SECTION("pretrained mode without a checkpoint raises CheckpointLoadError") {
        try {
            init_encoder(InitMode::PretrainedCheckpoint, small_config());
            FAIL("expected CheckpointLoadError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::CheckpointLoadError);
        }
    }
}

TEST_CASE("checkpoints round-trip weights and freeze plan") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "cftclip_ckpt_test";
    fs::remove_all(dir);

    ToyBiEncoder enc(small_config(11));
    FreezePlan plan;
    plan.text_layers_frozen = 1;
    plan.pooler_trainable = true;
    apply_freeze_plan(enc, plan);
    save_checkpoint(enc, dir);

    auto loaded = load_checkpoint(dir);
    CHECK(loaded->freeze_plan().text_layers_frozen == 1);
    CHECK(loaded->dimension() == enc.dimension());
    auto before = enc.encode_text("checkpoint round trip");
    auto after = loaded->encode_text("checkpoint round trip");
    CHECK((before.values - after.values).norm() == 0.0);

    Raster img = noise_image(8, 2);
    CHECK((enc.encode_image(img).values - loaded->encode_image(img).values).norm() == 0.0);
    fs::remove_all(dir);
}

TEST_CASE("tower backward matches finite differences of a pooled projection") {
    // d(u . g)/d(theta) via backward against central differences.
    ToyEncoderConfig cfg = small_config(13);
    ToyBiEncoder enc(cfg);
    Rng rng(17);
    Eigen::MatrixXd x(1, cfg.text_feature_dim);
    for (Eigen::Index i = 0; i < x.cols(); ++i) x(0, i) = rng.normal();
    Eigen::MatrixXd g(1, cfg.dimension);
    for (Eigen::Index i = 0; i < g.cols(); ++i) g(0, i) = rng.normal();

    ToyTower& tower = enc.text_tower();
    ToyTower::Cache cache;
    tower.forward(x, &cache);
    tower.zero_grad();
    tower.backward(cache, g);

    auto objective = [&]() { return (tower.forward(x).array() * g.array()).sum(); };
    double max_rel = 0.0;
    const double eps = 1e-5;
    for (auto& p : tower.params("text")) {
        for (std::size_t k = 0; k < p.size; ++k) {
            double saved = p.values[k];
            p.values[k] = saved + eps;
            double plus = objective();
            p.values[k] = saved - eps;
            double minus = objective();
            p.values[k] = saved;
            double numeric = (plus - minus) / (2 * eps);
            double rel = std::abs(p.grads[k] - numeric) /
                         std::max(std::abs(p.grads[k]) + std::abs(numeric), 1e-6);
            max_rel = std::max(max_rel, rel);
        }
    }
    CHECK(max_rel < 1e-4);
}
