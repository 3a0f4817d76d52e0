#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cftclip/image.hpp"
#include "cftclip/io.hpp"
#include "cftclip/rng.hpp"
#include "cftclip/tokenize.hpp"
#include "cftclip/types.hpp"

namespace cftclip::encoders {

// Layers are frozen from the bottom of each tower.
struct FreezePlan {
    int text_layers_frozen = 0;
    int vision_layers_frozen = 0;
    bool pooler_trainable = true;
};

enum class InitMode { PretrainedCheckpoint, RandomInit, Toy };

inline std::optional<InitMode> parse_init_mode(const std::string& s) {
    if (s == "pretrained_checkpoint" || s == "pretrained") return InitMode::PretrainedCheckpoint;
    if (s == "random_init") return InitMode::RandomInit;
    if (s == "toy") return InitMode::Toy;
    return std::nullopt;
}

struct ToyEncoderConfig {
    int dimension = 64;
    int hidden_dim = 64;
    int text_feature_dim = 256;
    int max_text_tokens = 77;
    int image_grid = 8; // image features are per-patch mean and std on a grid x grid partition
    std::uint64_t seed = 0;

    int image_feature_dim() const { return 2 * image_grid * image_grid; }
};

struct BiEncoder {
    virtual ~BiEncoder() = default;
    virtual Eigen::Index dimension() const = 0;
    virtual EmbeddingVector encode_image(const Raster& image) const = 0;
    virtual EmbeddingVector encode_text(const std::string& text) const = 0;
};

// Flat view over one parameter block, shared by the optimizer and the
// gradient checker.
struct ParamRef {
    std::string name;
    double* values = nullptr;
    double* grads = nullptr;
    std::size_t size = 0;
    bool trainable = true;
};

namespace detail {

inline void fill_gaussian(Eigen::MatrixXd& m, double stddev, Rng& rng) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = stddev * rng.normal();
}

} // namespace detail

// One tower: fixed feature map, then linear -> tanh -> pooler linear ->
// L2 normalization with an epsilon-direction guard for zero vectors.
class ToyTower {
public:
    ToyTower() = default;

    ToyTower(int feature_dim, int hidden_dim, int out_dim, Rng& rng) {
        w1 = Eigen::MatrixXd(hidden_dim, feature_dim);
        b1 = Eigen::VectorXd::Zero(hidden_dim);
        w2 = Eigen::MatrixXd(out_dim, hidden_dim);
        b2 = Eigen::VectorXd::Zero(out_dim);
        detail::fill_gaussian(w1, 1.0 / std::sqrt(static_cast<double>(feature_dim)), rng);
        detail::fill_gaussian(w2, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
        zero_grad();
    }

    static constexpr int kLayerCount = 1; // layers below the pooler

    struct Cache {
        Eigen::MatrixXd x;     // N x F
        Eigen::MatrixXd h;     // N x H, post-activation
        Eigen::MatrixXd y;     // N x d, post zero-guard
        Eigen::VectorXd norms; // N
        Eigen::MatrixXd u;     // N x d, unit rows
    };

    // Rows of `x` are feature vectors; returns unit-norm embeddings as rows.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const {
        Eigen::MatrixXd h = ((x * w1.transpose()).rowwise() + b1.transpose()).array().tanh();
        Eigen::MatrixXd y = (h * w2.transpose()).rowwise() + b2.transpose();
        Eigen::VectorXd norms(y.rows());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            if (y.row(i).norm() < 1e-12) y(i, 0) += 1e-8; // fixed epsilon direction
            norms(i) = y.row(i).norm();
        }
        Eigen::MatrixXd u = norms.cwiseInverse().asDiagonal() * y;
        if (cache) {
            cache->x = x;
            cache->h = h;
            cache->y = y;
            cache->norms = norms;
            cache->u = u;
        }
        return u;
    }

    // Accumulates parameter gradients for upstream du = dLoss/du. Frozen
    // blocks receive no gradient at all.
    void backward(const Cache& cache, const Eigen::MatrixXd& du) {
        const Eigen::Index n = du.rows();
        Eigen::MatrixXd dy(n, w2.rows());
        for (Eigen::Index i = 0; i < n; ++i) {
            double proj = du.row(i).dot(cache.u.row(i));
            dy.row(i) = (du.row(i) - proj * cache.u.row(i)) / cache.norms(i);
        }
        if (pooler_trainable) {
            g_w2 += dy.transpose() * cache.h;
            g_b2 += dy.colwise().sum().transpose();
        }
        if (layer_trainable) {
            Eigen::MatrixXd dh = dy * w2;
            Eigen::MatrixXd dpre = dh.array() * (1.0 - cache.h.array().square());
            g_w1 += dpre.transpose() * cache.x;
            g_b1 += dpre.colwise().sum().transpose();
        }
    }

    void zero_grad() {
        g_w1 = Eigen::MatrixXd::Zero(w1.rows(), w1.cols());
        g_b1 = Eigen::VectorXd::Zero(b1.size());
        g_w2 = Eigen::MatrixXd::Zero(w2.rows(), w2.cols());
        g_b2 = Eigen::VectorXd::Zero(b2.size());
    }

    std::vector<ParamRef> params(const std::string& prefix) {
        return {
            {prefix + ".w1", w1.data(), g_w1.data(), static_cast<std::size_t>(w1.size()), layer_trainable},
            {prefix + ".b1", b1.data(), g_b1.data(), static_cast<std::size_t>(b1.size()), layer_trainable},
            {prefix + ".w2", w2.data(), g_w2.data(), static_cast<std::size_t>(w2.size()), pooler_trainable},
            {prefix + ".b2", b2.data(), g_b2.data(), static_cast<std::size_t>(b2.size()), pooler_trainable},
        };
    }

    Eigen::MatrixXd w1, w2;
    Eigen::VectorXd b1, b2;
    Eigen::MatrixXd g_w1, g_w2;
    Eigen::VectorXd g_b1, g_b2;
    bool layer_trainable = true;
    bool pooler_trainable = true;
};

struct TextFeatures {
    Eigen::VectorXd values;
    bool truncated = false;
};

class ToyBiEncoder : public BiEncoder {
public:
    explicit ToyBiEncoder(const ToyEncoderConfig& config) : config_(config) {
        Rng text_rng(mix_seed(config.seed, fnv1a64("text-tower")));
        Rng vision_rng(mix_seed(config.seed, fnv1a64("vision-tower")));
        text_tower_ = ToyTower(config.text_feature_dim, config.hidden_dim, config.dimension, text_rng);
        vision_tower_ =
            ToyTower(config.image_feature_dim(), config.hidden_dim, config.dimension, vision_rng);
    }

    const ToyEncoderConfig& config() const { return config_; }
    Eigen::Index dimension() const override { return config_.dimension; }
    const FreezePlan& freeze_plan() const { return plan_; }

    // ----- feature maps (weight-free, usable for precomputation) -----

    TextFeatures text_features(const std::string& text) const {
        std::vector<Token> tokens = tokenize(text);
        if (tokens.empty())
            raise(ErrorCode::EmptyAfterTokenization, "no tokens in text input");
        TextFeatures out;
        out.truncated = tokens.size() > static_cast<std::size_t>(config_.max_text_tokens);
        if (out.truncated) tokens.resize(static_cast<std::size_t>(config_.max_text_tokens));
        const std::size_t f = static_cast<std::size_t>(config_.text_feature_dim);
        out.values = Eigen::VectorXd::Zero(config_.text_feature_dim);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            std::uint64_t h = fnv1a64(tokens[i].surface);
            out.values[static_cast<Eigen::Index>(h % f)] += 1.0;
            out.values[static_cast<Eigen::Index>(mix_seed(h, i + 1) % f)] += 0.5;
        }
        out.values /= static_cast<double>(tokens.size());
        return out;
    }

    Eigen::VectorXd image_features(const Raster& image) const {
        if (image.empty()) raise(ErrorCode::DecodeError, "empty raster");
        const int g = config_.image_grid;
        if (image.width < g || image.height < g)
            raise(ErrorCode::PreprocessError,
                  "image smaller than the " + std::to_string(g) + "x" + std::to_string(g) +
                      " feature grid");
        Eigen::VectorXd out = Eigen::VectorXd::Zero(config_.image_feature_dim());
        for (int gy = 0; gy < g; ++gy) {
            for (int gx = 0; gx < g; ++gx) {
                int y0 = gy * image.height / g, y1 = (gy + 1) * image.height / g;
                int x0 = gx * image.width / g, x1 = (gx + 1) * image.width / g;
                double sum = 0.0, sum_sq = 0.0;
                int count = 0;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        double gray = 0.0;
                        for (int c = 0; c < image.channels; ++c) gray += image.at(y, x, c);
                        gray /= image.channels;
                        sum += gray;
                        sum_sq += gray * gray;
                        ++count;
                    }
                }
                double mean = sum / count;
                double var = std::max(0.0, sum_sq / count - mean * mean);
                out[gy * g + gx] = mean;
                out[g * g + gy * g + gx] = std::sqrt(var);
            }
        }
        return out;
    }

    // ----- encoding -----

    EmbeddingVector encode_text(const std::string& text) const override {
        TextFeatures f = text_features(text);
        EmbeddingVector e = embed(text_tower_, f.values);
        e.truncated = f.truncated;
        return e;
    }

    EmbeddingVector encode_image(const Raster& image) const override {
        return embed(vision_tower_, image_features(image));
    }

    // ----- training access -----

    ToyTower& text_tower() { return text_tower_; }
    ToyTower& vision_tower() { return vision_tower_; }
    const ToyTower& text_tower() const { return text_tower_; }
    const ToyTower& vision_tower() const { return vision_tower_; }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out = text_tower_.params("text");
        std::vector<ParamRef> vision = vision_tower_.params("vision");
        out.insert(out.end(), vision.begin(), vision.end());
        return out;
    }

    std::size_t trainable_parameter_count() {
        std::size_t n = 0;
        for (const ParamRef& p : params())
            if (p.trainable) n += p.size;
        return n;
    }

    void zero_grad() {
        text_tower_.zero_grad();
        vision_tower_.zero_grad();
    }

    void set_freeze_plan(const FreezePlan& plan) {
        plan_ = plan;
        text_tower_.layer_trainable = plan.text_layers_frozen < ToyTower::kLayerCount;
        vision_tower_.layer_trainable = plan.vision_layers_frozen < ToyTower::kLayerCount;
        text_tower_.pooler_trainable = plan.pooler_trainable;
        vision_tower_.pooler_trainable = plan.pooler_trainable;
    }

private:
    EmbeddingVector embed(const ToyTower& tower, const Eigen::VectorXd& features) const {
        Eigen::MatrixXd u = tower.forward(features.transpose());
        EmbeddingVector e;
        e.values = u.row(0).transpose();
        e.normalized = true;
        return e;
    }

    ToyEncoderConfig config_;
    FreezePlan plan_;
    ToyTower text_tower_;
    ToyTower vision_tower_;
};

// Marks exactly the designated parameter blocks non-trainable.
inline void apply_freeze_plan(ToyBiEncoder& encoder, const FreezePlan& plan) {
    if (plan.text_layers_frozen < 0 || plan.text_layers_frozen > ToyTower::kLayerCount ||
        plan.vision_layers_frozen < 0 || plan.vision_layers_frozen > ToyTower::kLayerCount)
        raise(ErrorCode::PlanOutOfRange,
              "freeze counts must lie within [0, " + std::to_string(ToyTower::kLayerCount) + "]");
    encoder.set_freeze_plan(plan);
}

// ---------------------------------------------------------------------------
// Checkpoint format: directory with manifest.json + weights.bin (doubles,
// little endian, Eigen column-major, in params() order).

inline void save_checkpoint(ToyBiEncoder& encoder, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const ToyEncoderConfig& c = encoder.config();
    json manifest{
        {"format", "cftclip-checkpoint"},
        {"version", 1},
        {"dimension", c.dimension},
        {"hidden_dim", c.hidden_dim},
        {"text_feature_dim", c.text_feature_dim},
        {"max_text_tokens", c.max_text_tokens},
        {"image_grid", c.image_grid},
        {"text_layers", ToyTower::kLayerCount},
        {"vision_layers", ToyTower::kLayerCount},
        {"normalized", true},
        {"seed", c.seed},
        {"freeze_plan",
         {{"text_layers_frozen", encoder.freeze_plan().text_layers_frozen},
          {"vision_layers_frozen", encoder.freeze_plan().vision_layers_frozen},
          {"pooler_trainable", encoder.freeze_plan().pooler_trainable}}},
    };
    atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    std::string blob;
    for (const ParamRef& p : encoder.params())
        blob.append(reinterpret_cast<const char*>(p.values), p.size * sizeof(double));
    atomic_write_file(dir / "weights.bin", blob);
}

inline std::unique_ptr<ToyBiEncoder> load_checkpoint(const std::filesystem::path& dir) {
    std::filesystem::path manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        raise(ErrorCode::CheckpointLoadError, "no manifest at " + manifest_path.string());
    json manifest = json::parse(read_file(manifest_path), nullptr, false);
    if (manifest.is_discarded() || manifest.value("format", "") != "cftclip-checkpoint")
        raise(ErrorCode::CheckpointLoadError, "unrecognized manifest at " + manifest_path.string());

    ToyEncoderConfig c;
    c.dimension = manifest.at("dimension").get<int>();
    c.hidden_dim = manifest.at("hidden_dim").get<int>();
    c.text_feature_dim = manifest.at("text_feature_dim").get<int>();
    c.max_text_tokens = manifest.at("max_text_tokens").get<int>();
    c.image_grid = manifest.at("image_grid").get<int>();
    c.seed = manifest.at("seed").get<std::uint64_t>();
    auto encoder = std::make_unique<ToyBiEncoder>(c);

    std::string blob = read_file(dir / "weights.bin");
    std::size_t expected = 0;
    for (const ParamRef& p : encoder->params()) expected += p.size * sizeof(double);
    if (blob.size() != expected)
        raise(ErrorCode::CheckpointLoadError,
              "weights.bin holds " + std::to_string(blob.size()) + " bytes, expected " +
                  std::to_string(expected));
    std::size_t offset = 0;
    for (const ParamRef& p : encoder->params()) {
        std::memcpy(p.values, blob.data() + offset, p.size * sizeof(double));
        offset += p.size * sizeof(double);
    }

    FreezePlan plan;
    const json& fp = manifest.at("freeze_plan");
    plan.text_layers_frozen = fp.at("text_layers_frozen").get<int>();
    plan.vision_layers_frozen = fp.at("vision_layers_frozen").get<int>();
    plan.pooler_trainable = fp.at("pooler_trainable").get<bool>();
    apply_freeze_plan(*encoder, plan);
    return encoder;
}

// Builds an encoder for the requested mode. Toy and random_init are both
// seed-initialized toy backends (the desk-scale stand-in for a transformer);
// pretrained mode adapts a previously saved checkpoint.
inline std::unique_ptr<ToyBiEncoder> init_encoder(InitMode mode,
                                                  const ToyEncoderConfig& config,
                                                  const std::string& checkpoint_path = "") {
    switch (mode) {
        case InitMode::Toy:
        case InitMode::RandomInit:
            return std::make_unique<ToyBiEncoder>(config);
        case InitMode::PretrainedCheckpoint:
            if (checkpoint_path.empty())
                raise(ErrorCode::CheckpointLoadError, "pretrained mode needs a checkpoint path");
            return load_checkpoint(checkpoint_path);
    }
    raise(ErrorCode::RuntimeFailure, "unreachable init mode");
}

} // namespace cftclip::encoders
