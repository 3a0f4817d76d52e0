#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "cftclip/encoders.hpp"
#include "cftclip/errors.hpp"
#include "cftclip/rng.hpp"

namespace cftclip::training {

struct TrainConfig {
    int batch_size = 128;
    double loss_temperature = 0.05;
    double initial_lr = 1e-4;
    double weight_decay = 0.01;
    int early_stop_patience = 5;
    int val_check_every = 20;
    int max_epochs = 10;
    std::uint64_t seed = 0;
    // Cosine annealing horizon in steps; defaults to the full training length.
    std::optional<int> schedule_horizon_steps;

    void validate() const {
        if (batch_size < 1) raise(ErrorCode::ConfigError, "batch_size must be >= 1");
        if (!(loss_temperature > 0.0))
            raise(ErrorCode::NonPositiveTemperature, "loss temperature must be positive");
        if (early_stop_patience < 1) raise(ErrorCode::ConfigError, "patience must be >= 1");
        if (val_check_every < 1) raise(ErrorCode::ConfigError, "val_check_every must be >= 1");
        if (max_epochs < 1) raise(ErrorCode::ConfigError, "max_epochs must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Contrastive objective with counterfactual hard negatives.
//
// Per image anchor i the loss is
//   -log e^{s(I_i,T_i)/tau} / sum_j { e^{s(I_i,T_j)/tau} + e^{s(I_i,~T_j)/tau} }
// where the counterfactual sum runs over the M available counterfactuals.
// Reduction over the batch is the mean. Rows of the inputs are embeddings.

namespace detail {

inline void check_loss_inputs(const Eigen::MatrixXd& image_embs,
                              const Eigen::MatrixXd& text_embs,
                              const Eigen::MatrixXd& cf_text_embs,
                              double temperature) {
    if (!(temperature > 0.0))
        raise(ErrorCode::NonPositiveTemperature, "loss temperature must be positive");
    if (image_embs.rows() != text_embs.rows())
        raise(ErrorCode::DimensionMismatch, "image/text batch sizes differ");
    if (image_embs.cols() != text_embs.cols())
        raise(ErrorCode::DimensionMismatch, "image/text embedding dimensions differ");
    if (cf_text_embs.rows() > 0 && cf_text_embs.cols() != image_embs.cols())
        raise(ErrorCode::DimensionMismatch, "counterfactual embedding dimension differs");
    if (cf_text_embs.rows() > image_embs.rows())
        raise(ErrorCode::DimensionMismatch, "more counterfactuals than batch items");
}

} // namespace detail

inline double contrastive_loss(const Eigen::MatrixXd& image_embs,
                               const Eigen::MatrixXd& text_embs,
                               const Eigen::MatrixXd& cf_text_embs,
                               double temperature) {
    detail::check_loss_inputs(image_embs, text_embs, cf_text_embs, temperature);
    const Eigen::Index n = image_embs.rows();
    const Eigen::Index m = cf_text_embs.rows();

    Eigen::MatrixXd logits(n, n + m);
    logits.leftCols(n) = image_embs * text_embs.transpose() / temperature;
    if (m > 0) logits.rightCols(m) = image_embs * cf_text_embs.transpose() / temperature;

    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double row_max = logits.row(i).maxCoeff();
        double lse = row_max + std::log((logits.row(i).array() - row_max).exp().sum());
        total += lse - logits(i, i);
    }
    return total / static_cast<double>(n);
}

struct LossGradients {
    double loss = 0.0;
    Eigen::MatrixXd d_image;
    Eigen::MatrixXd d_text;
    Eigen::MatrixXd d_cf;
};

inline LossGradients contrastive_loss_with_gradients(const Eigen::MatrixXd& image_embs,
                                                     const Eigen::MatrixXd& text_embs,
                                                     const Eigen::MatrixXd& cf_text_embs,
                                                     double temperature) {
    detail::check_loss_inputs(image_embs, text_embs, cf_text_embs, temperature);
    const Eigen::Index n = image_embs.rows();
    const Eigen::Index m = cf_text_embs.rows();

    Eigen::MatrixXd logits(n, n + m);
    logits.leftCols(n) = image_embs * text_embs.transpose() / temperature;
    if (m > 0) logits.rightCols(m) = image_embs * cf_text_embs.transpose() / temperature;

    LossGradients out;
    Eigen::MatrixXd probs(n, n + m);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double row_max = logits.row(i).maxCoeff();
        Eigen::ArrayXd shifted = (logits.row(i).array() - row_max).exp();
        double denom = shifted.sum();
        probs.row(i) = (shifted / denom).matrix();
        total += row_max + std::log(denom) - logits(i, i);
    }
    out.loss = total / static_cast<double>(n);

    // dL/dlogits = (probs - onehot(positive)) / N; logits = sims / tau.
    Eigen::MatrixXd dlogits = probs / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) dlogits(i, i) -= 1.0 / static_cast<double>(n);
    Eigen::MatrixXd ds_text = dlogits.leftCols(n) / temperature;
    out.d_image = ds_text * text_embs;
    out.d_text = ds_text.transpose() * image_embs;
    if (m > 0) {
        Eigen::MatrixXd ds_cf = dlogits.rightCols(m) / temperature;
        out.d_image += ds_cf * cf_text_embs;
        out.d_cf = ds_cf.transpose() * image_embs;
    } else {
        out.d_cf = Eigen::MatrixXd::Zero(0, image_embs.cols());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

// Adam with decoupled weight decay. State is kept per parameter block in the
// order the blocks were registered.
class AdamW {
public:
    explicit AdamW(const std::vector<encoders::ParamRef>& params, double weight_decay = 0.01,
                   double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params) {
            m_.emplace_back(p.size, 0.0);
            v_.emplace_back(p.size, 0.0);
        }
    }

    void step(const std::vector<encoders::ParamRef>& params, double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t b = 0; b < params.size(); ++b) {
            const auto& p = params[b];
            if (!p.trainable) continue;
            for (std::size_t k = 0; k < p.size; ++k) {
                double g = p.grads[k];
                m_[b][k] = beta1_ * m_[b][k] + (1.0 - beta1_) * g;
                v_[b][k] = beta2_ * v_[b][k] + (1.0 - beta2_) * g * g;
                double mhat = m_[b][k] / bc1;
                double vhat = v_[b][k] / bc2;
                p.values[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.values[k]);
            }
        }
    }

private:
    double weight_decay_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

inline double cosine_annealed_lr(double initial_lr, int step, int horizon_steps) {
    if (horizon_steps <= 0) return initial_lr;
    double progress = std::min(1.0, static_cast<double>(step) / horizon_steps);
    return initial_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// Fires after exactly `patience` consecutive checks with no strict decrease
// below the best value seen (including the baseline).
class EarlyStopper {
public:
    EarlyStopper(int patience, double baseline) : patience_(patience), best_(baseline) {}

    bool check(double val_loss) {
        if (val_loss < best_) {
            best_ = val_loss;
            consecutive_ = 0;
            improved_ = true;
        } else {
            ++consecutive_;
            improved_ = false;
        }
        return consecutive_ >= patience_;
    }

    bool improved_last_check() const { return improved_; }
    double best() const { return best_; }
    int consecutive_failures() const { return consecutive_; }

private:
    int patience_;
    double best_;
    int consecutive_ = 0;
    bool improved_ = false;
};

// ---------------------------------------------------------------------------
// Training loop

// One sample with precomputed (weight-independent) feature vectors. A missing
// counterfactual means the sample contributes only in-batch negative terms.
struct TrainExample {
    Eigen::VectorXd image_features;
    Eigen::VectorXd text_features;
    std::optional<Eigen::VectorXd> cf_text_features;
};

struct TrainLogEntry {
    int step = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    double best_val_loss = std::numeric_limits<double>::quiet_NaN();
    int best_step = 0;
    int steps_run = 0;
    bool early_stopped = false;
};

struct TrainHooks {
    // Test hook: replaces the measured validation loss (called once per check,
    // in check order, step 0 baseline first).
    std::function<double(int step)> validation_loss_override;
};

namespace detail {

struct BatchMatrices {
    Eigen::MatrixXd image_features;
    Eigen::MatrixXd text_features;
    Eigen::MatrixXd cf_features;          // M rows
    std::vector<Eigen::Index> cf_rows;    // batch rows owning each cf row
};

inline BatchMatrices gather_batch(const std::vector<TrainExample>& examples,
                                  const std::vector<std::size_t>& indices) {
    BatchMatrices b;
    const Eigen::Index n = static_cast<Eigen::Index>(indices.size());
    b.image_features.resize(n, examples[indices[0]].image_features.size());
    b.text_features.resize(n, examples[indices[0]].text_features.size());
    Eigen::Index m = 0;
    for (std::size_t idx : indices)
        if (examples[idx].cf_text_features) ++m;
    b.cf_features.resize(m, examples[indices[0]].text_features.size());
    Eigen::Index row = 0, cf_row = 0;
    for (std::size_t idx : indices) {
        const TrainExample& e = examples[idx];
        b.image_features.row(row) = e.image_features.transpose();
        b.text_features.row(row) = e.text_features.transpose();
        if (e.cf_text_features) {
            b.cf_features.row(cf_row) = e.cf_text_features->transpose();
            b.cf_rows.push_back(row);
            ++cf_row;
        }
        ++row;
    }
    return b;
}

inline double batch_loss(encoders::ToyBiEncoder& encoder, const BatchMatrices& batch,
                         double temperature) {
    Eigen::MatrixXd u = encoder.vision_tower().forward(batch.image_features);
    Eigen::MatrixXd t = encoder.text_tower().forward(batch.text_features);
    Eigen::MatrixXd c = batch.cf_features.rows() > 0
                            ? encoder.text_tower().forward(batch.cf_features)
                            : Eigen::MatrixXd(0, u.cols());
    return contrastive_loss(u, t, c, temperature);
}

inline double dataset_loss(encoders::ToyBiEncoder& encoder,
                           const std::vector<TrainExample>& examples, int batch_size,
                           double temperature) {
    double total = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
        std::vector<std::size_t> indices;
        for (std::size_t i = begin; i < std::min(examples.size(), begin + batch_size); ++i)
            indices.push_back(i);
        total += batch_loss(encoder, gather_batch(examples, indices), temperature);
        ++batches;
    }
    return total / std::max(1, batches);
}

inline std::vector<double> snapshot_params(encoders::ToyBiEncoder& encoder) {
    std::vector<double> snap;
    for (const auto& p : encoder.params()) snap.insert(snap.end(), p.values, p.values + p.size);
    return snap;
}

inline void restore_params(encoders::ToyBiEncoder& encoder, const std::vector<double>& snap) {
    std::size_t offset = 0;
    for (const auto& p : encoder.params()) {
        std::copy(snap.begin() + offset, snap.begin() + offset + p.size, p.values);
        offset += p.size;
    }
}

} // namespace detail

// Minibatch AdamW training with cosine-annealed learning rate and early
// stopping on the validation loss. Returns with the best-validation weights
// restored into the encoder.
inline TrainResult train(encoders::ToyBiEncoder& encoder,
                         const std::vector<TrainExample>& train_set,
                         const std::vector<TrainExample>& val_set,
                         const TrainConfig& config,
                         const TrainHooks& hooks = {}) {
    config.validate();
    if (train_set.empty()) raise(ErrorCode::DataExhausted, "empty training set");
    if (encoder.trainable_parameter_count() == 0)
        raise(ErrorCode::NothingTrainable, "freeze plan leaves no trainable parameters");

    const int steps_per_epoch =
        static_cast<int>((train_set.size() + config.batch_size - 1) / config.batch_size);
    const int max_steps = steps_per_epoch * config.max_epochs;
    const int horizon = config.schedule_horizon_steps.value_or(max_steps);

    auto params = encoder.params();
    AdamW optimizer(params, config.weight_decay);

    auto measure_val = [&](int step) -> std::optional<double> {
        if (hooks.validation_loss_override) return hooks.validation_loss_override(step);
        if (val_set.empty()) return std::nullopt;
        return detail::dataset_loss(encoder, val_set, config.batch_size, config.loss_temperature);
    };

    TrainResult result;
    std::optional<double> baseline = measure_val(0);
    EarlyStopper stopper(config.early_stop_patience,
                         baseline.value_or(std::numeric_limits<double>::infinity()));
    bool have_val = baseline.has_value();
    std::vector<double> best_snapshot = detail::snapshot_params(encoder);
    if (baseline) {
        result.best_val_loss = *baseline;
        result.best_step = 0;
    }

    int step = 0;
    for (int epoch = 0; epoch < config.max_epochs && !result.early_stopped; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch) + 1));
        shuffle_rng.shuffle(order);

        for (std::size_t begin = 0; begin < order.size() && !result.early_stopped;
             begin += config.batch_size) {
            std::vector<std::size_t> indices(
                order.begin() + begin,
                order.begin() + std::min(order.size(), begin + config.batch_size));
            auto batch = detail::gather_batch(train_set, indices);

            encoders::ToyTower::Cache img_cache, txt_cache, cf_cache;
            Eigen::MatrixXd u = encoder.vision_tower().forward(batch.image_features, &img_cache);
            Eigen::MatrixXd t = encoder.text_tower().forward(batch.text_features, &txt_cache);
            Eigen::MatrixXd c = batch.cf_features.rows() > 0
                                    ? encoder.text_tower().forward(batch.cf_features, &cf_cache)
                                    : Eigen::MatrixXd(0, u.cols());

            LossGradients grads =
                contrastive_loss_with_gradients(u, t, c, config.loss_temperature);

            encoder.zero_grad();
            encoder.vision_tower().backward(img_cache, grads.d_image);
            encoder.text_tower().backward(txt_cache, grads.d_text);
            if (c.rows() > 0) encoder.text_tower().backward(cf_cache, grads.d_cf);

            double lr = cosine_annealed_lr(config.initial_lr, step, horizon);
            optimizer.step(params, lr);
            ++step;

            TrainLogEntry entry;
            entry.step = step;
            entry.train_loss = grads.loss;
            entry.lr = lr;

            bool at_check = step % config.val_check_every == 0;
            bool at_end = static_cast<std::size_t>(step) ==
                          static_cast<std::size_t>(max_steps); // final state also considered
            if (at_check || (at_end && !result.early_stopped)) {
                std::optional<double> val = measure_val(step);
                if (val) {
                    have_val = true;
                    entry.val_loss = val;
                    bool stop = at_check && stopper.check(*val);
                    bool improved = at_check ? stopper.improved_last_check()
                                             : *val < stopper.best();
                    if (improved) {
                        best_snapshot = detail::snapshot_params(encoder);
                        result.best_val_loss = *val;
                        result.best_step = step;
                    }
                    if (stop) result.early_stopped = true;
                }
            }
            result.log.push_back(std::move(entry));
        }
    }

    result.steps_run = step;
    // Without any validation signal the final weights stand as-is.
    if (have_val) detail::restore_params(encoder, best_snapshot);
    return result;
}

// ---------------------------------------------------------------------------
// Gradient verification harness

struct GradientCheckReport {
    double max_rel_error = 0.0;
    double max_frozen_grad = 0.0; // absolute analytic gradient over frozen blocks
};

// Central finite differences of the loss through the toy encoder against the
// analytic gradients, over every parameter scalar.
inline GradientCheckReport gradient_check(encoders::ToyBiEncoder& encoder,
                                          const std::vector<TrainExample>& batch_examples,
                                          double temperature,
                                          double epsilon = 1e-5) {
    std::vector<std::size_t> indices(batch_examples.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    auto batch = detail::gather_batch(batch_examples, indices);

    auto loss_at = [&]() {
        return detail::batch_loss(encoder, batch, temperature);
    };

    encoders::ToyTower::Cache img_cache, txt_cache, cf_cache;
    Eigen::MatrixXd u = encoder.vision_tower().forward(batch.image_features, &img_cache);
    Eigen::MatrixXd t = encoder.text_tower().forward(batch.text_features, &txt_cache);
    Eigen::MatrixXd c = batch.cf_features.rows() > 0
                            ? encoder.text_tower().forward(batch.cf_features, &cf_cache)
                            : Eigen::MatrixXd(0, u.cols());
    LossGradients grads = contrastive_loss_with_gradients(u, t, c, temperature);
    encoder.zero_grad();
    encoder.vision_tower().backward(img_cache, grads.d_image);
    encoder.text_tower().backward(txt_cache, grads.d_text);
    if (c.rows() > 0) encoder.text_tower().backward(cf_cache, grads.d_cf);

    GradientCheckReport report;
    for (const auto& p : encoder.params()) {
        for (std::size_t k = 0; k < p.size; ++k) {
            if (!p.trainable) {
                report.max_frozen_grad = std::max(report.max_frozen_grad, std::abs(p.grads[k]));
                continue;
            }
            double saved = p.values[k];
            p.values[k] = saved + epsilon;
            double plus = loss_at();
            p.values[k] = saved - epsilon;
            double minus = loss_at();
            p.values[k] = saved;
            double numeric = (plus - minus) / (2.0 * epsilon);
            double analytic = p.grads[k];
            double rel = std::abs(analytic - numeric) /
                         std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
            report.max_rel_error = std::max(report.max_rel_error, rel);
        }
    }
    return report;
}

} // namespace cftclip::training
