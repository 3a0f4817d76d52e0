#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cftclip/io.hpp"
#include "cftclip/rng.hpp"
#include "cftclip/types.hpp"

namespace cftclip::corpus {

enum class TrustRating { High, Mixed, Low, Unknown };

inline const char* trust_rating_name(TrustRating r) {
    switch (r) {
        case TrustRating::High: return "high";
        case TrustRating::Mixed: return "mixed";
        case TrustRating::Low: return "low";
        case TrustRating::Unknown: return "unknown";
    }
    return "unknown";
}

inline std::optional<TrustRating> parse_trust_rating(const std::string& s) {
    if (s == "high") return TrustRating::High;
    if (s == "mixed") return TrustRating::Mixed;
    if (s == "low") return TrustRating::Low;
    if (s == "unknown") return TrustRating::Unknown;
    return std::nullopt;
}

// One news article: identifiers, reference texts, thumbnail reference, source
// metadata, and an optional gold representativeness label.
struct NewsRecord {
    std::string id;
    std::string source;
    std::string title;
    std::optional<std::string> summary;
    std::string image_ref;
    TrustRating trust_rating = TrustRating::Unknown;
    std::optional<int> label; // 0 or 1 when present

    // Reference text used for embedding: the requested field, falling back to
    // the other one when the requested field is absent or empty.
    const std::string& reference_text(bool prefer_summary) const {
        if (prefer_summary) {
            if (summary && !summary->empty()) return *summary;
            return title;
        }
        if (!title.empty()) return title;
        if (summary) return *summary;
        return title;
    }
};

struct CorpusSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

// ---------------------------------------------------------------------------
// og:image extraction

namespace detail {

inline std::string ascii_lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

struct MetaAttr {
    std::string name;  // lowercased
    std::string value; // verbatim
};

// Tolerant attribute scan inside one tag body. Accepts double-quoted,
// single-quoted, and bare values; ignores anything it cannot parse.
inline std::vector<MetaAttr> parse_attributes(std::string_view tag_body) {
    std::vector<MetaAttr> attrs;
    std::size_t i = 0;
    const std::size_t n = tag_body.size();
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (i < n) {
        while (i < n && (is_space(tag_body[i]) || tag_body[i] == '/')) ++i;
        if (i >= n) break;
        std::size_t name_begin = i;
        while (i < n && !is_space(tag_body[i]) && tag_body[i] != '=' && tag_body[i] != '/') ++i;
        if (i == name_begin) { ++i; continue; }
        std::string name = ascii_lower(std::string(tag_body.substr(name_begin, i - name_begin)));
        while (i < n && is_space(tag_body[i])) ++i;
        std::string value;
        if (i < n && tag_body[i] == '=') {
            ++i;
            while (i < n && is_space(tag_body[i])) ++i;
            if (i < n && (tag_body[i] == '"' || tag_body[i] == '\'')) {
                char quote = tag_body[i++];
                std::size_t value_begin = i;
                while (i < n && tag_body[i] != quote) ++i;
                value = std::string(tag_body.substr(value_begin, i - value_begin));
                if (i < n) ++i;
            } else {
                std::size_t value_begin = i;
                while (i < n && !is_space(tag_body[i])) ++i;
                value = std::string(tag_body.substr(value_begin, i - value_begin));
            }
        }
        attrs.push_back({std::move(name), std::move(value)});
    }
    return attrs;
}

} // namespace detail

// Returns the content attribute of the first meta element (document order)
// whose property or name equals "og:image". Parsing is tolerant: malformed
// markup is skipped, comments are not scanned.
inline std::string extract_thumbnail_url(std::string_view html) {
    const std::string lowered = detail::ascii_lower(std::string(html));
    std::size_t pos = 0;
    bool found_empty = false;
    while (pos < lowered.size()) {
        std::size_t comment = lowered.find("<!--", pos);
        std::size_t meta = lowered.find("<meta", pos);
        if (comment != std::string::npos && (meta == std::string::npos || comment < meta)) {
            std::size_t close = lowered.find("-->", comment + 4);
            pos = (close == std::string::npos) ? lowered.size() : close + 3;
            continue;
        }
        if (meta == std::string::npos) break;
        std::size_t end = lowered.find('>', meta);
        if (end == std::string::npos) end = lowered.size(); // unterminated tag: take the rest
        std::string_view body(html.data() + meta + 5, end - (meta + 5));
        auto attrs = detail::parse_attributes(body);
        bool is_og_image = false;
        std::string content;
        bool has_content = false;
        for (const auto& attr : attrs) {
            if ((attr.name == "property" || attr.name == "name") &&
                detail::ascii_lower(attr.value) == "og:image")
                is_og_image = true;
            if (attr.name == "content") {
                content = attr.value;
                has_content = true;
            }
        }
        if (is_og_image) {
            if (has_content && !content.empty()) return content;
            found_empty = true; // the first og:image decides; later tags are ignored
            break;
        }
        pos = end + 1;
    }
    if (found_empty) raise(ErrorCode::EmptyContent, "og:image meta has empty content");
    raise(ErrorCode::NotFound, "no og:image meta element");
}

// ---------------------------------------------------------------------------
// JSONL corpus

inline NewsRecord record_from_json(int lineno, const json& j) {
    if (!j.is_object()) throw SchemaError(lineno, "<line>", "expected a JSON object");
    auto require_string = [&](const char* field) -> std::string {
        if (!j.contains(field)) throw SchemaError(lineno, field, "missing");
        if (!j.at(field).is_string()) throw SchemaError(lineno, field, "expected string");
        return j.at(field).get<std::string>();
    };
    NewsRecord r;
    r.id = require_string("id");
    if (r.id.empty()) throw SchemaError(lineno, "id", "must be non-empty");
    r.source = require_string("source");
    r.title = require_string("title");
    r.image_ref = require_string("image_ref");
    if (j.contains("summary") && !j.at("summary").is_null()) {
        if (!j.at("summary").is_string()) throw SchemaError(lineno, "summary", "expected string or null");
        r.summary = j.at("summary").get<std::string>();
    }
    if (j.contains("trust_rating") && !j.at("trust_rating").is_null()) {
        if (!j.at("trust_rating").is_string())
            throw SchemaError(lineno, "trust_rating", "expected string");
        auto parsed = parse_trust_rating(j.at("trust_rating").get<std::string>());
        if (!parsed) throw SchemaError(lineno, "trust_rating", "expected high|mixed|low|unknown");
        r.trust_rating = *parsed;
    }
    if (j.contains("label") && !j.at("label").is_null()) {
        if (!j.at("label").is_number_integer())
            throw SchemaError(lineno, "label", "expected 0, 1, or null");
        int label = j.at("label").get<int>();
        if (label != 0 && label != 1) throw SchemaError(lineno, "label", "expected 0 or 1");
        r.label = label;
    }
    bool has_text = !r.title.empty() || (r.summary && !r.summary->empty());
    if (!has_text) throw SchemaError(lineno, "title", "title and summary are both empty");
    return r;
}

inline json record_to_json(const NewsRecord& r) {
    json j;
    j["id"] = r.id;
    j["source"] = r.source;
    j["title"] = r.title;
    j["summary"] = r.summary ? json(*r.summary) : json(nullptr);
    j["image_ref"] = r.image_ref;
    j["trust_rating"] = trust_rating_name(r.trust_rating);
    j["label"] = r.label ? json(*r.label) : json(nullptr);
    return j;
}

// Loads a JSONL corpus. Any schema violation rejects the whole file.
inline std::vector<NewsRecord> load_corpus(const std::filesystem::path& path) {
    std::vector<NewsRecord> records;
    std::unordered_set<std::string> seen_ids;
    for_each_jsonl_line(path, [&](int lineno, const json& j) {
        NewsRecord r = record_from_json(lineno, j);
        if (!seen_ids.insert(r.id).second)
            throw SchemaError(lineno, "id", "duplicate id '" + r.id + "'");
        records.push_back(std::move(r));
    });
    return records;
}

inline void save_corpus(const std::filesystem::path& path, const std::vector<NewsRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(record_to_json(r));
    atomic_write_file(path, to_jsonl(rows));
}

// ---------------------------------------------------------------------------
// Sanitization

// Keeps exactly the records whose image/text cosine similarity is >= threshold
// (inclusive comparator), preserving input order.
inline std::vector<NewsRecord> sanitize(
    const std::vector<NewsRecord>& records,
    const std::unordered_map<std::string, EmbeddingVector>& image_embs,
    const std::unordered_map<std::string, EmbeddingVector>& text_embs,
    double threshold = 0.28) {
    std::vector<NewsRecord> kept;
    for (const auto& r : records) {
        auto img = image_embs.find(r.id);
        if (img == image_embs.end())
            raise(ErrorCode::MissingEmbedding, "no image embedding for id '" + r.id + "'");
        auto txt = text_embs.find(r.id);
        if (txt == text_embs.end())
            raise(ErrorCode::MissingEmbedding, "no text embedding for id '" + r.id + "'");
        if (cosine_similarity(img->second, txt->second) >= threshold) kept.push_back(r);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Stratified split

struct SplitFractions {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

namespace detail {

// Largest-remainder allocation of n items over the three buckets.
inline std::array<std::size_t, 3> largest_remainder(std::size_t n, const SplitFractions& f) {
    const double fracs[3] = {f.train, f.validation, f.test};
    std::array<std::size_t, 3> counts{};
    double remainders[3];
    std::size_t assigned = 0;
    for (int b = 0; b < 3; ++b) {
        double exact = fracs[b] * static_cast<double>(n);
        counts[b] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainders[b] = exact - static_cast<double>(counts[b]);
        assigned += counts[b];
    }
    // Ties break toward the earlier bucket (train, then validation, then test).
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < n; ++k) {
        counts[order[k % 3]] += 1;
        ++assigned;
    }
    return counts;
}

} // namespace detail

// Per-source proportional allocation (largest-remainder rounding), records
// shuffled within each source. Deterministic for a given seed.
inline CorpusSplit stratified_split(const std::vector<NewsRecord>& records,
                                    const SplitFractions& fractions,
                                    std::uint64_t rng_seed) {
    if (records.empty()) raise(ErrorCode::EmptyCorpus, "cannot split an empty corpus");
    if (fractions.train <= 0.0 || fractions.validation <= 0.0 || fractions.test <= 0.0)
        raise(ErrorCode::InvalidFractions, "split fractions must be positive");
    double total = fractions.train + fractions.validation + fractions.test;
    if (std::abs(total - 1.0) > 1e-9)
        raise(ErrorCode::InvalidFractions, "split fractions must sum to 1");

    // Deterministic iteration: sources in lexicographic order.
    std::map<std::string, std::vector<std::string>> by_source;
    for (const auto& r : records) by_source[r.source].push_back(r.id);

    CorpusSplit split;
    for (auto& [source, ids] : by_source) {
        Rng rng(mix_seed(rng_seed, fnv1a64(source)));
        rng.shuffle(ids);
        auto counts = detail::largest_remainder(ids.size(), fractions);
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < counts[0]; ++k) split.train.push_back(ids[cursor++]);
        for (std::size_t k = 0; k < counts[1]; ++k) split.validation.push_back(ids[cursor++]);
        for (std::size_t k = 0; k < counts[2]; ++k) split.test.push_back(ids[cursor++]);
    }
    return split;
}

inline json split_to_json(const CorpusSplit& split) {
    return json{{"train", split.train}, {"validation", split.validation}, {"test", split.test}};
}

inline CorpusSplit split_from_json(const json& j) {
    CorpusSplit split;
    for (const char* key : {"train", "validation", "test"}) {
        if (!j.contains(key) || !j.at(key).is_array())
            raise(ErrorCode::SchemaError, std::string("split file missing list '") + key + "'");
    }
    split.train = j.at("train").get<std::vector<std::string>>();
    split.validation = j.at("validation").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
    return split;
}

} // namespace cftclip::corpus
