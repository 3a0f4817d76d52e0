#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cftclip/encoders.hpp"
#include "cftclip/errors.hpp"
#include "cftclip/io.hpp"
#include "cftclip/types.hpp"

namespace cftclip::assess {

// ---------------------------------------------------------------------------
// Threshold calibration (median of validation similarities, parity prior)

struct CalibratedThreshold {
    double tau = 0.0;
    std::size_t source_split_size = 0;
    std::int64_t computed_at = 0; // epoch seconds; see artifact_timestamp()
};

inline CalibratedThreshold calibrate_threshold(const std::vector<double>& similarities) {
    if (similarities.empty()) raise(ErrorCode::EmptyInput, "no similarities to calibrate on");
    for (double s : similarities)
        if (!std::isfinite(s)) raise(ErrorCode::NonFiniteValue, "non-finite similarity");
    std::vector<double> sorted = similarities;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    CalibratedThreshold out;
    out.tau = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    out.source_split_size = n;
    out.computed_at = artifact_timestamp();
    return out;
}

// ---------------------------------------------------------------------------
// Zero-shot thresholding classifier

struct Prediction {
    std::string id;
    double similarity = 0.0;
    int label_pred = 0;
};

// Label 1 iff similarity strictly exceeds tau.
inline int predict_label(double similarity, double tau) { return similarity > tau ? 1 : 0; }

inline Prediction classify(const Raster& image, const std::string& text,
                           const encoders::BiEncoder& encoder,
                           const CalibratedThreshold& threshold, const std::string& id = "") {
    Prediction p;
    p.id = id;
    p.similarity = cosine_similarity(encoder.encode_image(image), encoder.encode_text(text));
    p.label_pred = predict_label(p.similarity, threshold.tau);
    return p;
}

// ---------------------------------------------------------------------------
// Metrics

// F1 of the positive class; 0 when precision + recall is 0.
inline double f1(const std::vector<int>& preds, const std::vector<int>& golds) {
    if (preds.size() != golds.size())
        raise(ErrorCode::LengthMismatch, "preds and golds differ in length");
    if (preds.empty()) raise(ErrorCode::EmptyInput, "empty prediction list");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == 1 && golds[i] == 1) ++tp;
        else if (preds[i] == 1 && golds[i] == 0) ++fp;
        else if (preds[i] == 0 && golds[i] == 1) ++fn;
    }
    if (2 * tp + fp + fn == 0) return 0.0;
    return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

namespace detail {

// Average ranks (1-based), ties receive the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        raise(ErrorCode::UndefinedCorrelation, "zero variance in a rank vector");
    return sxy / std::sqrt(sxx * syy);
}

inline double sample_mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_variance(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double m = sample_mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

} // namespace detail

// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& scores, const std::vector<double>& golds) {
    if (scores.size() != golds.size())
        raise(ErrorCode::LengthMismatch, "scores and golds differ in length");
    if (scores.size() < 2) raise(ErrorCode::EmptyInput, "need at least two pairs");
    return detail::pearson(detail::average_ranks(scores), detail::average_ranks(golds));
}

inline double spearman(const std::vector<double>& scores, const std::vector<int>& golds) {
    std::vector<double> g(golds.begin(), golds.end());
    return spearman(scores, g);
}

// ---------------------------------------------------------------------------
// Significance testing

struct SignificanceResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::string baseline_name;
    bool paired = true;
};

namespace detail {

inline double two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

} // namespace detail

// Two-sided paired t-test over per-seed metric pairs.
inline SignificanceResult paired_ttest(const std::vector<double>& a,
                                       const std::vector<double>& b) {
    if (a.size() != b.size()) raise(ErrorCode::LengthMismatch, "paired samples differ in length");
    if (a.size() < 2) raise(ErrorCode::EmptyInput, "need at least two pairs");
    std::vector<double> diffs(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];
    double mean = detail::sample_mean(diffs);
    double var = detail::sample_variance(diffs);
    SignificanceResult r;
    r.paired = true;
    if (var == 0.0) {
        r.statistic = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        r.p_value = mean == 0.0 ? 1.0 : 0.0;
        return r;
    }
    double n = static_cast<double>(diffs.size());
    r.statistic = mean / std::sqrt(var / n);
    r.p_value = detail::two_sided_p(r.statistic, n - 1.0);
    return r;
}

// Two-sided Welch t-test for runs on different seed sets.
inline SignificanceResult welch_ttest(const std::vector<double>& a,
                                      const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) raise(ErrorCode::EmptyInput, "need at least two per group");
    double ma = detail::sample_mean(a), mb = detail::sample_mean(b);
    double va = detail::sample_variance(a), vb = detail::sample_variance(b);
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    SignificanceResult r;
    r.paired = false;
    double se2 = va / na + vb / nb;
    if (se2 == 0.0) {
        r.statistic = ma == mb ? 0.0 : std::numeric_limits<double>::infinity();
        r.p_value = ma == mb ? 1.0 : 0.0;
        return r;
    }
    r.statistic = (ma - mb) / std::sqrt(se2);
    double df = se2 * se2 /
                (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
    r.p_value = detail::two_sided_p(r.statistic, df);
    return r;
}

// ---------------------------------------------------------------------------
// Multi-seed evaluation

struct LabeledPair {
    std::string id;
    Raster image;
    std::string text;
    int gold = 0;
};

struct SeedMetrics {
    std::uint64_t seed = 0;
    double f1 = 0.0;
    double spearman = 0.0;
};

struct EvalReport {
    std::vector<SeedMetrics> per_seed;
    double f1_mean = 0.0;
    double f1_stderr = 0.0;
    double spearman_mean = 0.0;
    double spearman_stderr = 0.0;
    std::optional<SignificanceResult> significance;
};

inline const std::vector<std::uint64_t>& default_seeds() {
    static const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    return seeds;
}

// Scores one seed's model over the labeled pairs. Stochastic components of a
// run (e.g. training) key off the seed; pure inference ignores it.
using SeedScorer =
    std::function<std::vector<Prediction>(std::uint64_t seed, const std::vector<LabeledPair>&)>;

inline void aggregate(EvalReport& report) {
    std::vector<double> f1s, spearmans;
    for (const auto& row : report.per_seed) {
        f1s.push_back(row.f1);
        spearmans.push_back(row.spearman);
    }
    double n = static_cast<double>(report.per_seed.size());
    report.f1_mean = detail::sample_mean(f1s);
    report.spearman_mean = detail::sample_mean(spearmans);
    report.f1_stderr = std::sqrt(detail::sample_variance(f1s) / n);
    report.spearman_stderr = std::sqrt(detail::sample_variance(spearmans) / n);
}

inline EvalReport evaluate(const std::vector<LabeledPair>& pairs, const SeedScorer& scorer,
                           const std::vector<std::uint64_t>& seeds = default_seeds()) {
    if (pairs.empty()) raise(ErrorCode::NoLabels, "no labeled pairs");
    std::vector<int> golds;
    for (const auto& p : pairs) golds.push_back(p.gold);

    EvalReport report;
    for (std::uint64_t seed : seeds) {
        std::vector<Prediction> preds = scorer(seed, pairs);
        std::vector<int> labels;
        std::vector<double> scores;
        for (const auto& p : preds) {
            labels.push_back(p.label_pred);
            scores.push_back(p.similarity);
        }
        SeedMetrics row;
        row.seed = seed;
        row.f1 = f1(labels, golds);
        row.spearman = spearman(scores, golds);
        report.per_seed.push_back(row);
    }
    aggregate(report);
    return report;
}

// Pure-inference evaluation: the seed has no effect and every row repeats.
inline EvalReport evaluate(const std::vector<LabeledPair>& pairs,
                           const encoders::BiEncoder& encoder,
                           const CalibratedThreshold& threshold,
                           const std::vector<std::uint64_t>& seeds = default_seeds()) {
    return evaluate(
        pairs,
        [&](std::uint64_t, const std::vector<LabeledPair>& batch) {
            std::vector<Prediction> out;
            out.reserve(batch.size());
            for (const auto& pair : batch)
                out.push_back(classify(pair.image, pair.text, encoder, threshold, pair.id));
            return out;
        },
        seeds);
}

// Attaches a significance test against a baseline's per-seed F1s: paired when
// the seed lists match, Welch's unpaired form otherwise.
inline void attach_significance(EvalReport& report, const EvalReport& baseline,
                                const std::string& baseline_name) {
    std::vector<double> ours, theirs;
    for (const auto& row : report.per_seed) ours.push_back(row.f1);
    for (const auto& row : baseline.per_seed) theirs.push_back(row.f1);
    bool same_seeds = report.per_seed.size() == baseline.per_seed.size();
    if (same_seeds)
        for (std::size_t i = 0; i < report.per_seed.size(); ++i)
            same_seeds = same_seeds && report.per_seed[i].seed == baseline.per_seed[i].seed;
    SignificanceResult r = same_seeds ? paired_ttest(ours, theirs) : welch_ttest(ours, theirs);
    r.baseline_name = baseline_name;
    report.significance = r;
}

// ---------------------------------------------------------------------------
// Serialization and rendering

inline json report_to_json(const EvalReport& report) {
    json per_seed = json::array();
    for (const auto& row : report.per_seed)
        per_seed.push_back({{"seed", row.seed}, {"f1", row.f1}, {"spearman", row.spearman}});
    json j{{"per_seed", per_seed},
           {"f1_mean", report.f1_mean},
           {"f1_stderr", report.f1_stderr},
           {"spearman_mean", report.spearman_mean},
           {"spearman_stderr", report.spearman_stderr},
           {"significance", nullptr}};
    if (report.significance) {
        j["significance"] = {{"statistic", report.significance->statistic},
                             {"p_value", report.significance->p_value},
                             {"baseline_name", report.significance->baseline_name},
                             {"paired", report.significance->paired}};
    }
    return j;
}

inline EvalReport report_from_json(const json& j) {
    EvalReport report;
    for (const auto& row : j.at("per_seed")) {
        SeedMetrics m;
        m.seed = row.at("seed").get<std::uint64_t>();
        m.f1 = row.at("f1").get<double>();
        m.spearman = row.at("spearman").get<double>();
        report.per_seed.push_back(m);
    }
    report.f1_mean = j.at("f1_mean").get<double>();
    report.f1_stderr = j.at("f1_stderr").get<double>();
    report.spearman_mean = j.at("spearman_mean").get<double>();
    report.spearman_stderr = j.at("spearman_stderr").get<double>();
    if (j.contains("significance") && !j.at("significance").is_null()) {
        SignificanceResult s;
        s.statistic = j.at("significance").at("statistic").get<double>();
        s.p_value = j.at("significance").at("p_value").get<double>();
        s.baseline_name = j.at("significance").at("baseline_name").get<std::string>();
        s.paired = j.at("significance").at("paired").get<bool>();
        report.significance = s;
    }
    return report;
}

// Plain-text table for terminals.
inline std::string render_report(const EvalReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "seed      f1  spearman\n";
    out << "----  ------  --------\n";
    for (const auto& row : report.per_seed)
        out << std::setw(4) << row.seed << "  " << std::setw(6) << row.f1 << "  " << std::setw(8)
            << row.spearman << "\n";
    out << "----  ------  --------\n";
    out << "mean  " << std::setw(6) << report.f1_mean << "  " << std::setw(8)
        << report.spearman_mean << "\n";
    out << "sem   " << std::setw(6) << report.f1_stderr << "  " << std::setw(8)
        << report.spearman_stderr << "\n";
    if (report.significance) {
        out << "t-test vs " << report.significance->baseline_name << " ("
            << (report.significance->paired ? "paired" : "welch")
            << "): t=" << report.significance->statistic << " p=" << std::setprecision(6)
            << report.significance->p_value << "\n";
    }
    return out.str();
}

} // namespace cftclip::assess
