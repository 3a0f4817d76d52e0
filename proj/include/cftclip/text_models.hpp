#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cftclip/errors.hpp"
#include "cftclip/tokenize.hpp"

namespace cftclip::cfgen {

enum class EntityCategory { Person, Org, Gpe, Other };

inline const char* entity_category_name(EntityCategory c) {
    switch (c) {
        case EntityCategory::Person: return "PERSON";
        case EntityCategory::Org: return "ORG";
        case EntityCategory::Gpe: return "GPE";
        case EntityCategory::Other: return "OTHER";
    }
    return "OTHER";
}

// Character-level entity span, as produced by a recognizer.
struct EntityMention {
    std::size_t char_begin = 0;
    std::size_t char_end = 0;
    EntityCategory category = EntityCategory::Other;
};

// Named-entity recognizer interface: character spans with categories.
class Ner {
public:
    virtual ~Ner() = default;
    virtual std::vector<EntityMention> recognize(const std::string& text) const = 0;
};

// Masked-language-model interface. `tokens` is the generator token sequence
// with kMaskToken sentinels at still-masked positions; the model returns one
// logit per vocabulary entry for the requested position.
class Mlm {
public:
    virtual ~Mlm() = default;
    virtual const std::vector<std::string>& vocabulary() const = 0;
    virtual std::vector<double> logits(const std::vector<std::string>& tokens,
                                       std::size_t position) const = 0;
};

inline constexpr const char* kMaskToken = "[MASK]";

// ---------------------------------------------------------------------------
// Lexicon-backed recognizer. Matches known surface phrases (longest match
// first) at word boundaries of the generator tokenization.
class LexiconNer : public Ner {
public:
    LexiconNer() = default;

    void add(const std::string& phrase, EntityCategory category) {
        entries_.push_back({tokenize(phrase), category});
        std::stable_sort(entries_.begin(), entries_.end(),
                         [](const Entry& a, const Entry& b) {
                             return a.tokens.size() > b.tokens.size();
                         });
    }

    std::vector<EntityMention> recognize(const std::string& text) const override {
        std::vector<Token> tokens = tokenize(text);
        std::vector<EntityMention> mentions;
        std::size_t i = 0;
        while (i < tokens.size()) {
            bool matched = false;
            for (const Entry& entry : entries_) {
                const std::size_t m = entry.tokens.size();
                if (m == 0 || i + m > tokens.size()) continue;
                bool equal = true;
                for (std::size_t k = 0; k < m; ++k) {
                    if (tokens[i + k].surface != entry.tokens[k].surface) {
                        equal = false;
                        break;
                    }
                }
                if (equal) {
                    mentions.push_back({tokens[i].begin, tokens[i + m - 1].end, entry.category});
                    i += m;
                    matched = true;
                    break;
                }
            }
            if (!matched) ++i;
        }
        return mentions;
    }

private:
    struct Entry {
        std::vector<Token> tokens;
        EntityCategory category;
    };
    std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Corpus-fit bigram model serving as the desk-scale masked LM. The logit for
// vocabulary entry w at position p is log(count(prev, w) + k) where prev is
// the token left of p ([BOS] at position 0). Already-infilled tokens condition
// later positions through the updated token sequence.
class BigramMlm : public Mlm {
public:
    explicit BigramMlm(double smoothing = 0.01) : smoothing_(smoothing) {}

    void fit(const std::vector<std::string>& texts) {
        std::map<std::string, std::size_t> vocab_index; // ordered: deterministic vocab
        std::vector<std::pair<std::string, std::string>> transitions;
        for (const std::string& text : texts) {
            std::vector<Token> tokens = tokenize(text);
            std::string prev = kBos;
            for (const Token& tok : tokens) {
                vocab_index.emplace(tok.surface, 0);
                transitions.emplace_back(prev, tok.surface);
                prev = tok.surface;
            }
        }
        vocab_.clear();
        vocab_.reserve(vocab_index.size());
        for (auto& [word, index] : vocab_index) {
            index = vocab_.size();
            vocab_.push_back(word);
        }
        counts_.clear();
        for (const auto& [prev, word] : transitions) {
            auto it = vocab_index.find(word);
            counts_[prev].resize(vocab_.size(), 0.0);
            counts_[prev][it->second] += 1.0;
        }
    }

    const std::vector<std::string>& vocabulary() const override { return vocab_; }

    std::vector<double> logits(const std::vector<std::string>& tokens,
                               std::size_t position) const override {
        if (vocab_.empty()) raise(ErrorCode::RuntimeFailure, "BigramMlm used before fit()");
        std::string prev = kBos;
        if (position > 0) prev = tokens[position - 1];
        if (prev == kMaskToken) prev = kBos; // left neighbour still masked
        std::vector<double> out(vocab_.size(), std::log(smoothing_));
        auto it = counts_.find(prev);
        if (it != counts_.end()) {
            for (std::size_t w = 0; w < it->second.size(); ++w)
                if (it->second[w] > 0.0) out[w] = std::log(it->second[w] + smoothing_);
        }
        return out;
    }

private:
    static constexpr const char* kBos = "[BOS]";
    double smoothing_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, std::vector<double>> counts_;
};

// Fixed-table MLM for tests: explicit vocabulary and position-independent logits.
class StubMlm : public Mlm {
public:
    StubMlm(std::vector<std::string> vocab, std::vector<double> fixed_logits)
        : vocab_(std::move(vocab)), logits_(std::move(fixed_logits)) {}

    const std::vector<std::string>& vocabulary() const override { return vocab_; }

    std::vector<double> logits(const std::vector<std::string>&, std::size_t) const override {
        return logits_;
    }

private:
    std::vector<std::string> vocab_;
    std::vector<double> logits_;
};

} // namespace cftclip::cfgen
