#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cftclip/corpus.hpp"
#include "cftclip/image.hpp"
#include "cftclip/rng.hpp"
#include "cftclip/text_models.hpp"

namespace cftclip::synth {

// Synthetic news-like corpus for desk-scale experiments: each record pairs a
// raster carrying an injected person-identity pattern (plus a topic pattern
// and pixel noise) with a templated sentence naming one of the identities.
// Labeled records mismatch image and text identity for gold label 0.

struct SynthConfig {
    int n_records = 2000;
    int n_identities = 20;
    int image_size = 32;
    int grid = 8;              // pattern cells; matches the toy encoder grid
    double identity_gain = 0.35;
    double topic_gain = 0.25;
    double noise_sigma = 0.12;
    double mismatch_fraction = 0.0; // fraction of records with a wrong-person image
    bool labeled = false;           // attach gold labels (1 = identity match)
    std::uint64_t seed = 0;
    std::string id_prefix = "rec";
};

inline const std::vector<std::string>& identity_names() {
    static const std::vector<std::string> names{
        "Alice Stone",   "Brian Cole",   "Clara Voss",    "Derek Hale",  "Elena Marsh",
        "Felix Grant",   "Gina Portman", "Harold Finch",  "Irene Adler", "Jonas Reed",
        "Kara Ellison",  "Liam Novak",   "Mona Castell",  "Nathan Byrd", "Olga Petrov",
        "Peter Quill",   "Quinn Harper", "Rosa Delgado",  "Samuel Teague", "Tessa Wynn"};
    return names;
}

inline const std::vector<std::string>& verbs() {
    static const std::vector<std::string> v{"visits",  "addresses", "criticizes", "praises",
                                            "inspects", "defends",   "questions",  "opens"};
    return v;
}

inline const std::vector<std::string>& places() {
    static const std::vector<std::string> v{"harbor", "parliament", "stadium", "museum",
                                            "refinery", "courthouse", "observatory", "academy"};
    return v;
}

inline const std::vector<std::string>& events() {
    static const std::vector<std::string> v{"summit", "inquiry", "ceremony", "strike",
                                            "audit",  "festival", "hearing",  "expansion"};
    return v;
}

struct SynthRecord {
    corpus::NewsRecord record;
    Raster image;
    int image_identity = 0;
    int text_identity = 0;
    int topic = 0; // composite (verb, place, event) index; shared by image and text
};

struct SynthCorpus {
    std::vector<SynthRecord> records;
    cfgen::LexiconNer ner; // all identity names, category PERSON
};

namespace detail {

// Six grid cells per identity drawn from the top half of the pattern grid;
// topics use the bottom half. Cell choices are fixed functions of the index.
inline std::vector<int> pattern_cells(std::uint64_t tag, int index, int half_cells, int count) {
    Rng rng(mix_seed(tag, static_cast<std::uint64_t>(index) + 1));
    std::vector<int> cells;
    for (std::size_t pick : rng.sample_without_replacement(half_cells, count))
        cells.push_back(static_cast<int>(pick));
    return cells;
}

inline void add_cell_pattern(Raster& image, int grid, int cell, double gain) {
    int g2 = grid * grid;
    int row = (cell % g2) / grid;
    int col = (cell % g2) % grid;
    int y0 = row * image.height / grid, y1 = (row + 1) * image.height / grid;
    int x0 = col * image.width / grid, x1 = (col + 1) * image.width / grid;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) image.at(y, x) += gain;
}

} // namespace detail

inline Raster render_image(const SynthConfig& cfg, int identity, int topic, Rng& rng) {
    Raster image = make_raster(cfg.image_size, cfg.image_size, 1, 0.45);
    for (double& p : image.pixels) p += cfg.noise_sigma * rng.normal();
    const int half = cfg.grid * cfg.grid / 2;
    for (int cell : detail::pattern_cells(fnv1a64("identity"), identity, half, 6))
        detail::add_cell_pattern(image, cfg.grid, cell, cfg.identity_gain);
    for (int cell : detail::pattern_cells(fnv1a64("topic"), topic, half, 6))
        detail::add_cell_pattern(image, cfg.grid, cell + half, cfg.topic_gain);
    return image;
}

inline int compose_topic(std::size_t verb, std::size_t place, std::size_t event) {
    return static_cast<int>((verb * places().size() + place) * events().size() + event);
}

inline std::string render_text(int identity, int topic) {
    const auto& v = verbs();
    const auto& p = places();
    const auto& e = events();
    std::size_t event = static_cast<std::size_t>(topic) % e.size();
    std::size_t place = (static_cast<std::size_t>(topic) / e.size()) % p.size();
    std::size_t verb = static_cast<std::size_t>(topic) / (e.size() * p.size());
    return identity_names()[static_cast<std::size_t>(identity)] + " " + v[verb] + " the " +
           p[place] + " " + e[event];
}

inline SynthCorpus make_corpus(const SynthConfig& cfg) {
    SynthCorpus out;
    for (const std::string& name : identity_names())
        out.ner.add(name, cfgen::EntityCategory::Person);

    const std::vector<std::string> sources{"alpha-news", "beta-daily", "gamma-post"};
    const std::vector<corpus::TrustRating> ratings{corpus::TrustRating::High,
                                                   corpus::TrustRating::Mixed,
                                                   corpus::TrustRating::Low};
    Rng rng(mix_seed(cfg.seed, fnv1a64("synth-corpus")));
    for (int i = 0; i < cfg.n_records; ++i) {
        SynthRecord rec;
        rec.text_identity = static_cast<int>(rng.uniform_index(cfg.n_identities));
        rec.topic = compose_topic(rng.uniform_index(verbs().size()),
                                  rng.uniform_index(places().size()),
                                  rng.uniform_index(events().size()));
        bool mismatch = rng.uniform() < cfg.mismatch_fraction;
        rec.image_identity = rec.text_identity;
        if (mismatch) {
            rec.image_identity =
                static_cast<int>((rec.text_identity + 1 + rng.uniform_index(cfg.n_identities - 1)) %
                                 cfg.n_identities);
        }
        rec.image = render_image(cfg, rec.image_identity, rec.topic, rng);

        corpus::NewsRecord& r = rec.record;
        r.id = cfg.id_prefix + "-" + std::to_string(i);
        r.source = sources[i % sources.size()];
        r.trust_rating = ratings[i % ratings.size()];
        r.title = render_text(rec.text_identity, rec.topic);
        r.summary = r.title + " amid wide public attention";
        r.image_ref = r.id + ".pgm";
        if (cfg.labeled) r.label = rec.image_identity == rec.text_identity ? 1 : 0;
        out.records.push_back(std::move(rec));
    }
    return out;
}

// Writes corpus.jsonl, images/<id>.pgm, and lexicon.json under `dir`.
inline void write_corpus(const SynthCorpus& synthetic, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    std::vector<corpus::NewsRecord> records;
    for (const SynthRecord& rec : synthetic.records) {
        corpus::NewsRecord r = rec.record;
        save_pnm(rec.image, (dir / "images" / r.image_ref).string());
        r.image_ref = "images/" + r.image_ref;
        records.push_back(std::move(r));
    }
    corpus::save_corpus(dir / "corpus.jsonl", records);

    json lexicon = json::object();
    for (const std::string& name : identity_names()) lexicon[name] = "PERSON";
    atomic_write_file(dir / "lexicon.json", lexicon.dump(2) + "\n");
}

} // namespace cftclip::synth
