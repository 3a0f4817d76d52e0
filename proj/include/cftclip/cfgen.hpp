#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cftclip/errors.hpp"
#include "cftclip/rng.hpp"
#include "cftclip/text_models.hpp"
#include "cftclip/tokenize.hpp"

namespace cftclip::cfgen {

enum class Strategy { Person, Org, Gpe, AllEntities, Random15, Random30 };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Person: return "person";
        case Strategy::Org: return "org";
        case Strategy::Gpe: return "gpe";
        case Strategy::AllEntities: return "all_entities";
        case Strategy::Random15: return "random_15";
        case Strategy::Random30: return "random_30";
    }
    return "person";
}

inline std::optional<Strategy> parse_strategy(const std::string& s) {
    if (s == "person") return Strategy::Person;
    if (s == "org") return Strategy::Org;
    if (s == "gpe") return Strategy::Gpe;
    if (s == "all_entities" || s == "all") return Strategy::AllEntities;
    if (s == "random_15") return Strategy::Random15;
    if (s == "random_30") return Strategy::Random30;
    return std::nullopt;
}

inline bool is_random_strategy(Strategy s) {
    return s == Strategy::Random15 || s == Strategy::Random30;
}

struct CfgenConfig {
    Strategy strategy = Strategy::Person;
    double mask_cap_fraction = 0.30;
    double mlm_temperature = 2.0;
    int retry_cap = 20;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(mask_cap_fraction > 0.0 && mask_cap_fraction <= 1.0))
            raise(ErrorCode::ConfigError, "mask_cap_fraction must be in (0, 1]");
        if (!(mlm_temperature > 0.0))
            raise(ErrorCode::ConfigError, "mlm_temperature must be positive");
        if (retry_cap < 1) raise(ErrorCode::ConfigError, "retry_cap must be >= 1");
    }
};

// Candidate span in generator-token coordinates; [start, end) token indices.
struct TokenSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string surface;
    EntityCategory category = EntityCategory::Other;
};

struct MaskPlan {
    std::vector<Token> tokens;                     // generator tokenization of the source
    std::vector<std::size_t> masked_positions;     // sorted ascending
    std::map<std::size_t, std::string> originals;  // position -> original surface
};

enum class CfStatus { Ok, NoCandidates, RetryCapFallback };

inline const char* cf_status_name(CfStatus s) {
    switch (s) {
        case CfStatus::Ok: return "OK";
        case CfStatus::NoCandidates: return "NO_CANDIDATES";
        case CfStatus::RetryCapFallback: return "RETRY_CAP_FALLBACK";
    }
    return "OK";
}

struct Replacement {
    std::size_t position = 0;
    std::string original;
    std::string replacement;
};

struct CounterfactualResult {
    std::string text;
    std::vector<Replacement> replacements;
    CfStatus status = CfStatus::Ok;
};

// ---------------------------------------------------------------------------
// Step 1: candidate token set construction

inline bool category_selected(EntityCategory c, Strategy s) {
    switch (s) {
        case Strategy::Person: return c == EntityCategory::Person;
        case Strategy::Org: return c == EntityCategory::Org;
        case Strategy::Gpe: return c == EntityCategory::Gpe;
        case Strategy::AllEntities:
            return c == EntityCategory::Person || c == EntityCategory::Org ||
                   c == EntityCategory::Gpe;
        default: return false;
    }
}

// Entity mentions matching the strategy, converted to generator-token spans.
// A character span that does not land on token boundaries is expanded to the
// smallest covering token range and a warning is recorded.
inline std::vector<TokenSpan> build_candidate_set(const std::string& text,
                                                  const Ner& ner,
                                                  Strategy strategy,
                                                  std::vector<std::string>* warnings = nullptr) {
    if (is_random_strategy(strategy)) return {}; // positions are drawn in step 2
    std::vector<Token> tokens = tokenize(text);
    std::vector<TokenSpan> spans;
    for (const EntityMention& mention : ner.recognize(text)) {
        if (!category_selected(mention.category, strategy)) continue;
        std::size_t first = tokens.size();
        std::size_t last = 0;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            if (tokens[t].end <= mention.char_begin) continue;
            if (tokens[t].begin >= mention.char_end) break;
            first = std::min(first, t);
            last = t + 1;
        }
        if (first >= last) continue; // span covers no token (e.g. whitespace-only)
        bool exact = tokens[first].begin == mention.char_begin &&
                     tokens[last - 1].end == mention.char_end;
        if (!exact && warnings)
            warnings->push_back("entity span [" + std::to_string(mention.char_begin) + "," +
                                std::to_string(mention.char_end) +
                                ") expanded to whole tokens [" + std::to_string(first) + "," +
                                std::to_string(last) + ")");
        TokenSpan span;
        span.start = first;
        span.end = last;
        span.category = mention.category;
        for (std::size_t t = first; t < last; ++t) {
            if (t > first) span.surface += " ";
            span.surface += tokens[t].surface;
        }
        spans.push_back(std::move(span));
    }
    // Keep spans non-overlapping: first span in token order wins.
    std::sort(spans.begin(), spans.end(),
              [](const TokenSpan& a, const TokenSpan& b) { return a.start < b.start; });
    std::vector<TokenSpan> disjoint;
    for (auto& span : spans) {
        if (!disjoint.empty() && span.start < disjoint.back().end) continue;
        disjoint.push_back(std::move(span));
    }
    return disjoint;
}

// ---------------------------------------------------------------------------
// Step 2: token selection and masking under the cap

inline std::size_t mask_cap(std::size_t token_count, double fraction) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(token_count)));
}

// Entity strategies mask every candidate token, or a uniformly random
// maximal subset when the candidates exceed the cap. Random strategies mask
// floor(15%/30% x tokens) positions drawn uniformly.
inline MaskPlan select_and_mask(const std::string& text,
                                const std::vector<TokenSpan>& candidates,
                                const CfgenConfig& config,
                                Rng& rng) {
    MaskPlan plan;
    plan.tokens = tokenize(text);
    const std::size_t cap = mask_cap(plan.tokens.size(), config.mask_cap_fraction);

    std::vector<std::size_t> selected;
    if (is_random_strategy(config.strategy)) {
        double fraction = config.strategy == Strategy::Random15 ? 0.15 : 0.30;
        std::size_t want = std::min(mask_cap(plan.tokens.size(), fraction), cap);
        selected = rng.sample_without_replacement(plan.tokens.size(), want);
    } else {
        if (candidates.empty())
            raise(ErrorCode::NoCandidates, "no entity candidates for strategy " +
                                               std::string(strategy_name(config.strategy)));
        std::vector<std::size_t> positions;
        for (const TokenSpan& span : candidates)
            for (std::size_t t = span.start; t < span.end; ++t) positions.push_back(t);
        std::sort(positions.begin(), positions.end());
        positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
        if (positions.size() <= cap) {
            selected = positions;
        } else {
            for (std::size_t idx : rng.sample_without_replacement(positions.size(), cap))
                selected.push_back(positions[idx]);
        }
    }
    std::sort(selected.begin(), selected.end());
    plan.masked_positions = std::move(selected);
    for (std::size_t p : plan.masked_positions) plan.originals[p] = plan.tokens[p].surface;
    return plan;
}

// ---------------------------------------------------------------------------
// Step 3: masked token prediction with temperature-adjusted rejection sampling

namespace detail {

inline std::vector<double> temperature_softmax(const std::vector<double>& logits,
                                               double temperature) {
    std::vector<double> probs(logits.size());
    double max_scaled = -std::numeric_limits<double>::infinity();
    for (double l : logits) max_scaled = std::max(max_scaled, l / temperature);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] / temperature - max_scaled);
        denom += probs[i];
    }
    for (double& p : probs) p /= denom;
    return probs;
}

} // namespace detail

// Fills masked positions left to right, each draw conditioned on previously
// filled tokens. Draws repeat until the token differs from the original; after
// retry_cap identical draws the highest-probability non-original token is
// taken and the result is flagged RETRY_CAP_FALLBACK.
inline CounterfactualResult infill(const MaskPlan& plan,
                                   const Mlm& mlm,
                                   const CfgenConfig& config,
                                   Rng& rng,
                                   const std::string& original_text) {
    CounterfactualResult result;
    result.status = CfStatus::Ok;
    const std::vector<std::string>& vocab = mlm.vocabulary();

    std::vector<std::string> working;
    working.reserve(plan.tokens.size());
    for (const Token& tok : plan.tokens) working.push_back(tok.surface);
    for (std::size_t p : plan.masked_positions) working[p] = kMaskToken;

    std::vector<std::string> new_surfaces;
    for (std::size_t p : plan.masked_positions) {
        const std::string& original = plan.originals.at(p);
        bool any_different = false;
        for (const std::string& w : vocab)
            if (w != original) { any_different = true; break; }
        if (!any_different)
            raise(ErrorCode::VocabularyExhausted,
                  "vocabulary holds only the original token '" + original + "'");

        std::vector<double> probs =
            detail::temperature_softmax(mlm.logits(working, p), config.mlm_temperature);

        std::string chosen;
        bool accepted = false;
        for (int attempt = 0; attempt < config.retry_cap; ++attempt) {
            std::size_t draw = rng.sample_discrete(probs);
            if (vocab[draw] != original) {
                chosen = vocab[draw];
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // Deterministic fallback: highest-probability non-original token.
            std::size_t best = vocab.size();
            for (std::size_t w = 0; w < vocab.size(); ++w) {
                if (vocab[w] == original) continue;
                if (best == vocab.size() || probs[w] > probs[best]) best = w;
            }
            chosen = vocab[best];
            result.status = CfStatus::RetryCapFallback;
        }
        working[p] = chosen;
        result.replacements.push_back({p, original, chosen});
        new_surfaces.push_back(chosen);
    }

    result.text = splice_tokens(original_text, plan.tokens, plan.masked_positions, new_surfaces);
    return result;
}

// ---------------------------------------------------------------------------
// Full generation: candidate set -> mask plan -> infill.

inline CounterfactualResult generate_counterfactual(const std::string& text,
                                                    const Ner& ner,
                                                    const Mlm& mlm,
                                                    const CfgenConfig& config,
                                                    std::vector<std::string>* warnings = nullptr) {
    config.validate();
    Rng rng(config.rng_seed);
    CounterfactualResult result;
    std::vector<TokenSpan> candidates = build_candidate_set(text, ner, config.strategy, warnings);
    if (!is_random_strategy(config.strategy) && candidates.empty()) {
        result.text = text;
        result.status = CfStatus::NoCandidates;
        return result;
    }
    MaskPlan plan = select_and_mask(text, candidates, config, rng);
    if (plan.masked_positions.empty()) {
        // Nothing maskable under the cap; an unchanged text is no negative.
        result.text = text;
        result.status = CfStatus::NoCandidates;
        return result;
    }
    return infill(plan, mlm, config, rng, text);
}

} // namespace cftclip::cfgen
