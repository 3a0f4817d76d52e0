#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "cftclip/assess.hpp"
#include "cftclip/synth.hpp"

using namespace cftclip;
using namespace cftclip::assess;

TEST_CASE("median calibration, odd and even counts") {
    CHECK(calibrate_threshold({0.1, 0.2, 0.3}).tau == Catch::Approx(0.2));
    CHECK(calibrate_threshold({0.1, 0.3}).tau == Catch::Approx(0.2));
    CHECK(calibrate_threshold({0.3, 0.1}).tau == Catch::Approx(0.2)); // order-free
    CHECK(calibrate_threshold({0.7}).tau == Catch::Approx(0.7));
}

TEST_CASE("median calibration matches the sort oracle on 1001 draws") {
    Rng rng(2024);
    std::vector<double> sims;
    for (int i = 0; i < 1001; ++i) sims.push_back(2.0 * rng.uniform() - 1.0);
    double tau = calibrate_threshold(sims).tau;
    // oracle: full sort, middle element
    std::vector<double> sorted = sims;
    std::sort(sorted.begin(), sorted.end());
    CHECK(tau == sorted[500]);
}

TEST_CASE("calibration rejects empty and non-finite input") {
    CHECK_THROWS_AS(calibrate_threshold({}), Error);
    CHECK_THROWS_AS(calibrate_threshold({0.1, std::nan("")}), Error);
}

TEST_CASE("classification threshold is strict") {
    CHECK(predict_label(0.5, 0.4) == 1);
    CHECK(predict_label(0.4, 0.4) == 0); // boundary: strictly greater only
    CHECK(predict_label(0.39, 0.4) == 0);
}

TEST_CASE("identical normalized embeddings score similarity one") {
    EmbeddingVector e;
    e.values = Eigen::Vector3d(0.3, -0.4, 0.5).normalized();
    e.normalized = true;
    double sim = cosine_similarity(e, e);
    CHECK(std::abs(sim - 1.0) < 1e-5);
    CHECK(predict_label(sim, 0.999) == 1);
}

TEST_CASE("f1 on the worked examples") {
    CHECK(f1({1, 0, 1}, {1, 0, 1}) == Catch::Approx(1.0));
    CHECK(f1({0, 0, 0}, {0, 1, 0}) == Catch::Approx(0.0));
    // P = 2/3, R = 1 -> F1 = 0.8
    CHECK(f1({1, 1, 0, 1}, {1, 0, 0, 1}) == Catch::Approx(0.8));
}

TEST_CASE("f1 input validation") {
    CHECK_THROWS_AS(f1({1}, {1, 0}), Error);
    CHECK_THROWS_AS(f1({}, {}), Error);
}

namespace {

// Independent oracle: explicit average ranks then textbook Pearson.
double spearman_oracle(const std::vector<double>& scores, const std::vector<double>& golds) {
    auto ranks = [](const std::vector<double>& xs) {
        std::vector<double> r(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            double less = 0, equal = 0;
            for (std::size_t j = 0; j < xs.size(); ++j) {
                if (xs[j] < xs[i]) ++less;
                if (xs[j] == xs[i]) ++equal;
            }
            r[i] = less + 0.5 * (equal - 1) + 1.0;
        }
        return r;
    };
    auto rx = ranks(scores), ry = ranks(golds);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= rx.size();
    my /= ry.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

TEST_CASE("spearman matches the explicit-rank oracle on binary golds") {
    std::vector<double> scores{1, 2, 3, 4};
    std::vector<double> golds{0, 0, 1, 1};
    double expected = spearman_oracle(scores, golds);
    CHECK(expected > 0.0);
    CHECK(spearman(scores, golds) == Catch::Approx(expected).epsilon(1e-12));

    std::vector<double> reversed{4, 3, 2, 1};
    CHECK(spearman(reversed, golds) == Catch::Approx(-expected).epsilon(1e-12));
}

TEST_CASE("spearman is undefined for constant golds") {
    try {
        spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 1});
        FAIL("expected UndefinedCorrelation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UndefinedCorrelation);
    }
}

TEST_CASE("spearman is invariant under monotone transforms of scores") {
    Rng rng(5);
    std::vector<double> scores, golds;
    for (int i = 0; i < 40; ++i) {
        scores.push_back(rng.normal());
        golds.push_back(rng.uniform() < 0.4 ? 1.0 : 0.0);
    }
    std::vector<double> transformed;
    for (double s : scores) transformed.push_back(std::exp(2.0 * s) + 3.0);
    CHECK(spearman(scores, golds) ==
          Catch::Approx(spearman(transformed, golds)).epsilon(1e-12));
}

TEST_CASE("rescaling similarities and recalibrating leaves labels unchanged") {
    Rng rng(31);
    std::vector<double> sims;
    for (int i = 0; i < 101; ++i) sims.push_back(rng.normal() * 0.3);
    double tau = calibrate_threshold(sims).tau;
    std::vector<double> scaled;
    for (double s : sims) scaled.push_back(2.5 * s);
    double scaled_tau = calibrate_threshold(scaled).tau;
    for (std::size_t i = 0; i < sims.size(); ++i)
        CHECK(predict_label(sims[i], tau) == predict_label(scaled[i], scaled_tau));
}

TEST_CASE("even tie-free calibration sets realize the parity prior") {
    Rng rng(77);
    std::vector<double> sims;
    for (int i = 0; i < 1000; ++i) sims.push_back(rng.uniform());
    double tau = calibrate_threshold(sims).tau;
    int positives = 0;
    for (double s : sims) positives += predict_label(s, tau);
    CHECK(positives * 2 == static_cast<int>(sims.size()));
}

TEST_CASE("per-seed aggregation matches scalar arithmetic") {
    EvalReport report;
    std::vector<double> f1s{0.8, 0.82, 0.81, 0.79, 0.83};
    for (std::size_t i = 0; i < f1s.size(); ++i)
        report.per_seed.push_back({i, f1s[i], 0.4 + 0.01 * static_cast<double>(i)});
    aggregate(report);
    // oracle: scalar mean and sample-std / sqrt(5)
    double mean = 0.0;
    for (double v : f1s) mean += v;
    mean /= 5.0;
    double ss = 0.0;
    for (double v : f1s) ss += (v - mean) * (v - mean);
    double stderr_expected = std::sqrt(ss / 4.0) / std::sqrt(5.0);
    CHECK(report.f1_mean == Catch::Approx(0.81).epsilon(1e-12));
    CHECK(report.f1_stderr == Catch::Approx(stderr_expected).epsilon(1e-12));
}

TEST_CASE("pure inference evaluation repeats rows across seeds with zero stderr") {
    encoders::ToyEncoderConfig cfg;
    cfg.dimension = 8;
    cfg.hidden_dim = 8;
    cfg.text_feature_dim = 32;
    cfg.image_grid = 4;
    cfg.seed = 3;
    encoders::ToyBiEncoder enc(cfg);

    synth::SynthConfig scfg;
    scfg.n_records = 24;
    scfg.labeled = true;
    scfg.mismatch_fraction = 0.5;
    scfg.seed = 9;
    auto corpus = synth::make_corpus(scfg);

    std::vector<LabeledPair> pairs;
    for (const auto& rec : corpus.records)
        pairs.push_back({rec.record.id, rec.image, rec.record.title, *rec.record.label});

    CalibratedThreshold threshold;
    threshold.tau = 0.0;
    auto report = evaluate(pairs, enc, threshold);
    REQUIRE(report.per_seed.size() == 5);
    for (const auto& row : report.per_seed) {
        CHECK(row.f1 == report.per_seed[0].f1);
        CHECK(row.spearman == report.per_seed[0].spearman);
    }
    CHECK(report.f1_stderr == 0.0);
    CHECK(report.spearman_stderr == 0.0);
}

TEST_CASE("evaluate refuses unlabeled input") {
    CHECK_THROWS_AS(evaluate({}, [](std::uint64_t, const std::vector<LabeledPair>&) {
                        return std::vector<Prediction>{};
                    }),
                    Error);
}

TEST_CASE("paired t-test on hand-computed diffs") {
    std::vector<double> a{0.80, 0.82, 0.81, 0.79, 0.83};
    std::vector<double> b{0.76, 0.77, 0.78, 0.75, 0.79};
    auto r = paired_ttest(a, b);
    // oracle: diffs 0.04 0.05 0.03 0.04 0.04; mean 0.04, sd 1/sqrt(2)*0.01... computed below
    std::vector<double> d{0.04, 0.05, 0.03, 0.04, 0.04};
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= 5.0;
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    double t = mean / std::sqrt(ss / 4.0 / 5.0);
    CHECK(r.statistic == Catch::Approx(t).epsilon(1e-9));
    CHECK(r.p_value < 0.01);
    CHECK(r.paired);

    auto same = paired_ttest(a, a);
    CHECK(same.p_value == 1.0);
}

TEST_CASE("welch t-test separates clearly different groups") {
    std::vector<double> a{0.9, 0.91, 0.89, 0.92};
    std::vector<double> b{0.5, 0.52, 0.48};
    auto r = welch_ttest(a, b);
    CHECK_FALSE(r.paired);
    CHECK(r.statistic > 0.0);
    CHECK(r.p_value < 0.001);
}

TEST_CASE("significance attaches as paired for matching seed lists") {
    EvalReport ours, baseline;
    for (std::uint64_t s = 0; s < 5; ++s) {
        ours.per_seed.push_back({s, 0.8 + 0.01 * s, 0.4});
        baseline.per_seed.push_back({s, 0.7 + 0.01 * s, 0.35});
    }
    aggregate(ours);
    aggregate(baseline);
    attach_significance(ours, baseline, "baseline-model");
    REQUIRE(ours.significance.has_value());
    CHECK(ours.significance->paired);
    CHECK(ours.significance->baseline_name == "baseline-model");
    CHECK(ours.significance->p_value < 0.05);
}

TEST_CASE("report fixtures with published-scale magnitudes round-trip") {
    // Representative magnitudes: strong model 0.815 +/- 0.003 F1 and
    // 0.491 +/- 0.005 Spearman against a 0.763 / 0.409 baseline.
    EvalReport report;
    report.per_seed = {{0, 0.815, 0.491}, {1, 0.812, 0.486}, {2, 0.818, 0.496},
                       {3, 0.811, 0.489}, {4, 0.819, 0.493}};
    aggregate(report);
    CHECK(report.f1_mean == Catch::Approx(0.815).margin(5e-4));
    CHECK(report.f1_stderr == Catch::Approx(0.003).margin(2e-3));
    CHECK(report.spearman_mean == Catch::Approx(0.491).margin(5e-4));

    SignificanceResult sig;
    sig.statistic = 12.3;
    sig.p_value = 0.0008;
    sig.baseline_name = "clip-zero-shot";
    report.significance = sig;

    json serialized = report_to_json(report);
    EvalReport parsed = report_from_json(serialized);
    CHECK(parsed.per_seed.size() == 5);
    CHECK(parsed.f1_mean == report.f1_mean);
    CHECK(parsed.significance->baseline_name == "clip-zero-shot");

    std::string table = render_report(report);
    CHECK(table.find("0.8150") != std::string::npos);
    CHECK(table.find("clip-zero-shot") != std::string::npos);
}
