#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cftclip/assess.hpp"
#include "cftclip/cfgen.hpp"
#include "cftclip/corpus.hpp"
#include "cftclip/encoders.hpp"
#include "cftclip/io.hpp"
#include "cftclip/synth.hpp"
#include "cftclip/training.hpp"

namespace cftclip::pipeline {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCacheEnvVar = "CFTCLIP_CACHE_DIR";

// ---------------------------------------------------------------------------
// Flat key=value configuration with CLI > file > defaults precedence.

struct ConfigKey {
    const char* name;
    const char* default_value; // nullptr: no default, may stay unset
    const char* doc;
};

inline const std::vector<ConfigKey>& known_config_keys() {
    static const std::vector<ConfigKey> keys{
        {"corpus", nullptr, "input corpus JSONL (required by ingest)"},
        {"image_dir", nullptr, "base directory for relative image refs; default: corpus parent"},
        {"output_dir", "runs/out", "directory receiving all artifacts"},
        {"split_train", "0.8", "train fraction for the stratified split"},
        {"split_val", "0.1", "validation fraction"},
        {"split_test", "0.1", "test fraction"},
        {"sanitize_threshold", "0.28", "cosine similarity cutoff (inclusive)"},
        {"sanitize_input", "corpus.jsonl", "sanitize input, relative to output_dir"},
        {"cf_input", "corpus.jsonl", "generate-cf input, relative to output_dir"},
        {"cf_strategy", "person", "person|org|gpe|all_entities|random_15|random_30"},
        {"cf_mask_cap", "0.30", "mask cap fraction of generator tokens"},
        {"cf_mlm_temperature", "2.0", "temperature dividing MLM logits"},
        {"cf_retry_cap", "20", "rejection-sampling draws before the fallback"},
        {"ner_lexicon", nullptr, "JSON file {surface: category} for the lexicon recognizer"},
        {"encoder_mode", "toy", "toy|random_init|pretrained_checkpoint"},
        {"encoder_checkpoint", nullptr, "checkpoint dir for pretrained mode and inference"},
        {"encoder_dim", "64", "embedding dimension d"},
        {"encoder_hidden", "64", "toy tower hidden width"},
        {"encoder_text_features", "256", "hashed text feature buckets"},
        {"encoder_max_tokens", "77", "text context ceiling"},
        {"encoder_grid", "8", "image patch grid"},
        {"batch_size", "128", "training minibatch size"},
        {"loss_temperature", "0.05", "contrastive loss temperature"},
        {"initial_lr", "1e-4", "initial learning rate (cosine annealed)"},
        {"weight_decay", "0.01", "AdamW decoupled weight decay"},
        {"early_stop_patience", "5", "consecutive non-improving checks before stopping"},
        {"val_check_every", "20", "iterations between validation checks"},
        {"max_epochs", "10", "epoch cap"},
        {"freeze_text_layers", "0", "text tower layers frozen from the bottom"},
        {"freeze_vision_layers", "0", "vision tower layers frozen from the bottom"},
        {"pooler_trainable", "true", "whether the poolers train"},
        {"reference_text", "summary", "title|summary used for text embeddings"},
        {"seeds", "0,1,2,3,4", "seed list for evaluate"},
        {"seed", "0", "run seed"},
        {"baseline_report", nullptr, "eval report JSON to test significance against"},
    };
    return keys;
}

class Config {
public:
    static Config defaults() {
        Config c;
        for (const auto& key : known_config_keys())
            if (key.default_value) c.values_[key.name] = key.default_value;
        return c;
    }

    static Config from_file(const std::filesystem::path& path) {
        Config c = defaults();
        std::ifstream in(path);
        if (!in) raise(ErrorCode::MissingInput, "cannot open config file " + path.string());
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                raise(ErrorCode::ConfigError,
                      path.string() + ":" + std::to_string(lineno) + ": expected key = value");
            c.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
        return c;
    }

    void set(const std::string& key, const std::string& value) {
        bool known = false;
        for (const auto& k : known_config_keys())
            if (key == k.name) known = true;
        if (!known) raise(ErrorCode::ConfigError, "unknown config key '" + key + "'");
        values_[key] = value;
    }

    void apply_overrides(const std::vector<std::string>& overrides) {
        for (const std::string& kv : overrides) {
            std::size_t eq = kv.find('=');
            if (eq == std::string::npos)
                raise(ErrorCode::ConfigError, "override '" + kv + "' is not key=value");
            set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end())
            raise(ErrorCode::ConfigError, "config key '" + key + "' is not set");
        return it->second;
    }

    double get_double(const std::string& key) const {
        try {
            return std::stod(get_string(key));
        } catch (const std::logic_error&) {
            raise(ErrorCode::ConfigError, "config key '" + key + "' is not a number");
        }
    }

    int get_int(const std::string& key) const {
        try {
            return std::stoi(get_string(key));
        } catch (const std::logic_error&) {
            raise(ErrorCode::ConfigError, "config key '" + key + "' is not an integer");
        }
    }

    std::uint64_t get_seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

    bool get_bool(const std::string& key) const {
        std::string v = get_string(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        raise(ErrorCode::ConfigError, "config key '" + key + "' is not a boolean");
    }

    std::vector<std::uint64_t> get_seed_list(const std::string& key) const {
        std::vector<std::uint64_t> out;
        std::string v = get_string(key);
        std::size_t begin = 0;
        while (begin <= v.size()) {
            std::size_t comma = v.find(',', begin);
            std::string item = trim(v.substr(begin, comma - begin));
            if (!item.empty()) {
                try {
                    out.push_back(static_cast<std::uint64_t>(std::stoll(item)));
                } catch (const std::logic_error&) {
                    raise(ErrorCode::ConfigError, "bad seed '" + item + "' in '" + key + "'");
                }
            }
            if (comma == std::string::npos) break;
            begin = comma + 1;
        }
        if (out.empty()) raise(ErrorCode::ConfigError, "empty seed list in '" + key + "'");
        return out;
    }

    const std::map<std::string, std::string>& snapshot() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        std::size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Commands

enum class Command { Ingest, Sanitize, GenerateCf, Train, Calibrate, Evaluate, Score };

inline std::optional<Command> parse_command(const std::string& s) {
    if (s == "ingest") return Command::Ingest;
    if (s == "sanitize") return Command::Sanitize;
    if (s == "generate-cf") return Command::GenerateCf;
    if (s == "train") return Command::Train;
    if (s == "calibrate") return Command::Calibrate;
    if (s == "evaluate") return Command::Evaluate;
    if (s == "score") return Command::Score;
    return std::nullopt;
}

inline const char* command_name(Command c) {
    switch (c) {
        case Command::Ingest: return "ingest";
        case Command::Sanitize: return "sanitize";
        case Command::GenerateCf: return "generate-cf";
        case Command::Train: return "train";
        case Command::Calibrate: return "calibrate";
        case Command::Evaluate: return "evaluate";
        case Command::Score: return "score";
    }
    return "?";
}

namespace detail {

inline void require_file(const std::filesystem::path& path, const std::string& what) {
    if (!std::filesystem::exists(path))
        raise(ErrorCode::MissingInput, what + " not found: " + path.string());
}

inline std::filesystem::path image_dir(const Config& config) {
    if (config.has("image_dir")) return config.get_string("image_dir");
    if (config.has("corpus"))
        return std::filesystem::path(config.get_string("corpus")).parent_path();
    return ".";
}

inline std::filesystem::path resolve_image_ref(const Config& config, const std::string& ref) {
    std::filesystem::path p(ref);
    if (p.is_absolute()) return p;
    return image_dir(config) / p;
}

inline std::filesystem::path out_path(const Config& config, const std::string& name) {
    return std::filesystem::path(config.get_string("output_dir")) / name;
}

// Run manifest: effective config, seed, versions, input digests. Deterministic
// for identical config and inputs.
inline void write_manifest(const Config& config, Command command,
                           const std::vector<std::filesystem::path>& inputs) {
    json digests = json::object();
    for (const auto& path : inputs)
        if (std::filesystem::exists(path) && std::filesystem::is_regular_file(path))
            digests[path.string()] = file_digest(path);
    json manifest{
        {"command", command_name(command)},
        {"config", config.snapshot()},
        {"seed", config.get_int("seed")},
        {"versions", {{"cftclip", kVersion}, {"manifest_format", 1}}},
        {"inputs", digests},
    };
    std::string name = std::string("manifest_") + command_name(command) + ".json";
    std::replace(name.begin(), name.end(), '-', '_');
    atomic_write_file(out_path(config, name), manifest.dump(2) + "\n");
}

inline corpus::SplitFractions split_fractions(const Config& config) {
    corpus::SplitFractions f;
    f.train = config.get_double("split_train");
    f.validation = config.get_double("split_val");
    f.test = config.get_double("split_test");
    return f;
}

inline encoders::ToyEncoderConfig encoder_config(const Config& config) {
    encoders::ToyEncoderConfig c;
    c.dimension = config.get_int("encoder_dim");
    c.hidden_dim = config.get_int("encoder_hidden");
    c.text_feature_dim = config.get_int("encoder_text_features");
    c.max_text_tokens = config.get_int("encoder_max_tokens");
    c.image_grid = config.get_int("encoder_grid");
    c.seed = config.get_seed();
    return c;
}

inline std::filesystem::path resolve_checkpoint_path(const std::string& given) {
    namespace fs = std::filesystem;
    fs::path p(given);
    if (fs::exists(p)) return p;
    if (const char* cache = std::getenv(kCacheEnvVar)) {
        fs::path cached = fs::path(cache) / p;
        if (fs::exists(cached)) return cached;
    }
    return p; // caller reports the miss
}

// Encoder for inference commands: explicit checkpoint, else the train
// artifact in output_dir, else a fresh seed-initialized backend.
inline std::unique_ptr<encoders::ToyBiEncoder> inference_encoder(const Config& config) {
    namespace fs = std::filesystem;
    if (config.has("encoder_checkpoint")) {
        fs::path p = resolve_checkpoint_path(config.get_string("encoder_checkpoint"));
        require_file(p / "manifest.json", "encoder checkpoint");
        return encoders::load_checkpoint(p);
    }
    fs::path trained = out_path(config, "checkpoint");
    if (fs::exists(trained / "manifest.json")) return encoders::load_checkpoint(trained);

    auto mode = encoders::parse_init_mode(config.get_string("encoder_mode"));
    if (!mode) raise(ErrorCode::ConfigError, "bad encoder_mode");
    if (*mode == encoders::InitMode::PretrainedCheckpoint)
        raise(ErrorCode::MissingInput, "encoder_mode=pretrained_checkpoint needs encoder_checkpoint");
    return encoders::init_encoder(*mode, encoder_config(config));
}

inline bool prefer_summary(const Config& config) {
    std::string ref = config.get_string("reference_text");
    if (ref == "summary") return true;
    if (ref == "title") return false;
    raise(ErrorCode::ConfigError, "reference_text must be title or summary");
}

inline std::vector<corpus::NewsRecord> load_corpus_artifact(const Config& config,
                                                            const std::string& key) {
    std::filesystem::path path = out_path(config, config.get_string(key));
    require_file(path, key);
    return corpus::load_corpus(path);
}

inline corpus::CorpusSplit load_split_artifact(const Config& config) {
    std::filesystem::path path = out_path(config, "splits.json");
    require_file(path, "split file");
    return corpus::split_from_json(json::parse(read_file(path)));
}

inline cfgen::LexiconNer load_lexicon(const Config& config) {
    cfgen::LexiconNer ner;
    if (!config.has("ner_lexicon")) return ner;
    std::filesystem::path path = config.get_string("ner_lexicon");
    require_file(path, "ner_lexicon");
    json lex = json::parse(read_file(path));
    for (const auto& [surface, category] : lex.items()) {
        std::string cat = category.get<std::string>();
        cfgen::EntityCategory parsed = cfgen::EntityCategory::Other;
        if (cat == "PERSON") parsed = cfgen::EntityCategory::Person;
        else if (cat == "ORG") parsed = cfgen::EntityCategory::Org;
        else if (cat == "GPE") parsed = cfgen::EntityCategory::Gpe;
        ner.add(surface, parsed);
    }
    return ner;
}

struct CfLookup {
    std::unordered_map<std::string, std::string> text_by_id; // OK / fallback statuses only
};

inline CfLookup load_cf_artifact(const Config& config) {
    std::filesystem::path path = out_path(config, "counterfactuals.jsonl");
    require_file(path, "counterfactual file");
    CfLookup lookup;
    for_each_jsonl_line(path, [&](int lineno, const json& row) {
        if (!row.contains("id") || !row.contains("cf_text") || !row.contains("status"))
            throw SchemaError(lineno, "id", "counterfactual rows need id, cf_text, status");
        std::string status = row.at("status").get<std::string>();
        if (status == "NO_CANDIDATES") return; // excluded from counterfactual pairs
        lookup.text_by_id[row.at("id").get<std::string>()] = row.at("cf_text").get<std::string>();
    });
    return lookup;
}

inline training::TrainConfig train_config(const Config& config) {
    training::TrainConfig t;
    t.batch_size = config.get_int("batch_size");
    t.loss_temperature = config.get_double("loss_temperature");
    t.initial_lr = config.get_double("initial_lr");
    t.weight_decay = config.get_double("weight_decay");
    t.early_stop_patience = config.get_int("early_stop_patience");
    t.val_check_every = config.get_int("val_check_every");
    t.max_epochs = config.get_int("max_epochs");
    t.seed = config.get_seed();
    return t;
}

inline training::TrainExample make_example(const encoders::ToyBiEncoder& encoder,
                                           const Config& config,
                                           const corpus::NewsRecord& record,
                                           const CfLookup* cf) {
    training::TrainExample e;
    Raster image = load_pnm(resolve_image_ref(config, record.image_ref).string());
    e.image_features = encoder.image_features(image);
    e.text_features = encoder.text_features(record.reference_text(prefer_summary(config))).values;
    if (cf) {
        auto it = cf->text_by_id.find(record.id);
        if (it != cf->text_by_id.end())
            e.cf_text_features = encoder.text_features(it->second).values;
    }
    return e;
}

} // namespace detail

// ----- ingest ---------------------------------------------------------------

inline void run_ingest(const Config& config) {
    namespace fs = std::filesystem;
    if (!config.has("corpus")) raise(ErrorCode::ConfigError, "ingest needs the 'corpus' key");
    fs::path input = config.get_string("corpus");
    detail::require_file(input, "corpus");

    std::vector<corpus::NewsRecord> records = corpus::load_corpus(input);
    std::vector<corpus::NewsRecord> kept;
    std::size_t dropped = 0;
    for (corpus::NewsRecord r : records) {
        // HTML refs resolve through og:image extraction first.
        std::string ref = r.image_ref;
        try {
            if (ref.size() > 5 && (ref.ends_with(".html") || ref.ends_with(".htm"))) {
                fs::path html_path = detail::resolve_image_ref(config, ref);
                detail::require_file(html_path, "html document");
                ref = corpus::extract_thumbnail_url(read_file(html_path));
                r.image_ref = ref;
            }
            if (ref.starts_with("http://") || ref.starts_with("https://"))
                raise(ErrorCode::NotFound, "remote image fetch is not supported");
            load_pnm(detail::resolve_image_ref(config, ref).string()); // decodability check
            kept.push_back(std::move(r));
        } catch (const Error& e) {
            // Best effort: the record is logged and dropped before sanitization.
            std::cerr << "ingest: dropping record '" << r.id << "': " << e.what() << "\n";
            ++dropped;
        }
    }

    corpus::CorpusSplit split =
        corpus::stratified_split(kept, detail::split_fractions(config), config.get_seed());

    corpus::save_corpus(detail::out_path(config, "corpus.jsonl"), kept);
    atomic_write_file(detail::out_path(config, "splits.json"),
                      corpus::split_to_json(split).dump(2) + "\n");
    detail::write_manifest(config, Command::Ingest, {input});
    std::cerr << "ingest: kept " << kept.size() << " records, dropped " << dropped << "\n";
}

// ----- sanitize -------------------------------------------------------------

inline void run_sanitize(const Config& config) {
    std::vector<corpus::NewsRecord> records =
        detail::load_corpus_artifact(config, "sanitize_input");
    auto encoder = detail::inference_encoder(config);
    bool summary = detail::prefer_summary(config);

    std::unordered_map<std::string, EmbeddingVector> image_embs, text_embs;
    for (const auto& r : records) {
        Raster image = load_pnm(detail::resolve_image_ref(config, r.image_ref).string());
        image_embs[r.id] = encoder->encode_image(image);
        text_embs[r.id] = encoder->encode_text(r.reference_text(summary));
    }
    std::vector<corpus::NewsRecord> kept = corpus::sanitize(
        records, image_embs, text_embs, config.get_double("sanitize_threshold"));

    corpus::save_corpus(detail::out_path(config, "sanitized.jsonl"), kept);
    detail::write_manifest(config, Command::Sanitize,
                           {detail::out_path(config, config.get_string("sanitize_input"))});
    std::cerr << "sanitize: kept " << kept.size() << " of " << records.size() << " records\n";
}

// ----- generate-cf ----------------------------------------------------------

inline void run_generate_cf(const Config& config) {
    std::vector<corpus::NewsRecord> records = detail::load_corpus_artifact(config, "cf_input");

    cfgen::CfgenConfig cf_config;
    auto strategy = cfgen::parse_strategy(config.get_string("cf_strategy"));
    if (!strategy) raise(ErrorCode::ConfigError, "bad cf_strategy");
    cf_config.strategy = *strategy;
    cf_config.mask_cap_fraction = config.get_double("cf_mask_cap");
    cf_config.mlm_temperature = config.get_double("cf_mlm_temperature");
    cf_config.retry_cap = config.get_int("cf_retry_cap");
    cf_config.validate();

    cfgen::LexiconNer ner = detail::load_lexicon(config);
    if (!cfgen::is_random_strategy(cf_config.strategy) && !config.has("ner_lexicon"))
        raise(ErrorCode::ConfigError, "entity strategies need ner_lexicon");

    bool summary = detail::prefer_summary(config);
    cfgen::BigramMlm mlm;
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (const auto& r : records) texts.push_back(r.reference_text(summary));
    mlm.fit(texts);

    std::vector<json> rows;
    rows.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        cfgen::CfgenConfig per_record = cf_config;
        per_record.rng_seed = mix_seed(config.get_seed(), fnv1a64(records[i].id));
        cfgen::CounterfactualResult result =
            cfgen::generate_counterfactual(texts[i], ner, mlm, per_record);
        json replacements = json::array();
        for (const auto& rep : result.replacements)
            replacements.push_back({rep.position, rep.original, rep.replacement});
        rows.push_back({{"id", records[i].id},
                        {"cf_text", result.text},
                        {"replacements", replacements},
                        {"status", cfgen::cf_status_name(result.status)},
                        {"strategy", cfgen::strategy_name(per_record.strategy)},
                        {"seed", per_record.rng_seed}});
    }
    atomic_write_file(detail::out_path(config, "counterfactuals.jsonl"), to_jsonl(rows));
    detail::write_manifest(config, Command::GenerateCf,
                           {detail::out_path(config, config.get_string("cf_input"))});
    std::cerr << "generate-cf: wrote " << rows.size() << " rows\n";
}

// ----- train ----------------------------------------------------------------

inline void run_train(const Config& config) {
    std::vector<corpus::NewsRecord> pool = detail::load_corpus_artifact(config, "sanitize_input");
    std::vector<corpus::NewsRecord> sanitized;
    std::filesystem::path sanitized_path = detail::out_path(config, "sanitized.jsonl");
    if (std::filesystem::exists(sanitized_path)) sanitized = corpus::load_corpus(sanitized_path);
    else sanitized = pool;
    corpus::CorpusSplit split = detail::load_split_artifact(config);
    detail::CfLookup cf = detail::load_cf_artifact(config);

    auto mode = encoders::parse_init_mode(config.get_string("encoder_mode"));
    if (!mode) raise(ErrorCode::ConfigError, "bad encoder_mode");
    std::string checkpoint_in;
    if (*mode == encoders::InitMode::PretrainedCheckpoint) {
        if (!config.has("encoder_checkpoint"))
            raise(ErrorCode::MissingInput, "pretrained mode needs encoder_checkpoint");
        checkpoint_in = detail::resolve_checkpoint_path(config.get_string("encoder_checkpoint")).string();
    }
    auto encoder = encoders::init_encoder(*mode, detail::encoder_config(config), checkpoint_in);

    encoders::FreezePlan plan;
    plan.text_layers_frozen = config.get_int("freeze_text_layers");
    plan.vision_layers_frozen = config.get_int("freeze_vision_layers");
    plan.pooler_trainable = config.get_bool("pooler_trainable");
    encoders::apply_freeze_plan(*encoder, plan);

    std::set<std::string> train_ids(split.train.begin(), split.train.end());
    std::set<std::string> val_ids(split.validation.begin(), split.validation.end());
    std::vector<training::TrainExample> train_set, val_set;
    for (const auto& r : sanitized)
        if (train_ids.count(r.id))
            train_set.push_back(detail::make_example(*encoder, config, r, &cf));
    for (const auto& r : pool)
        if (val_ids.count(r.id))
            val_set.push_back(detail::make_example(*encoder, config, r, &cf));

    training::TrainResult result =
        training::train(*encoder, train_set, val_set, detail::train_config(config));

    encoders::save_checkpoint(*encoder, detail::out_path(config, "checkpoint"));
    std::vector<json> log_rows;
    for (const auto& entry : result.log)
        log_rows.push_back({{"step", entry.step},
                            {"train_loss", entry.train_loss},
                            {"val_loss", entry.val_loss ? json(*entry.val_loss) : json(nullptr)},
                            {"lr", entry.lr}});
    atomic_write_file(detail::out_path(config, "trainlog.jsonl"), to_jsonl(log_rows));
    detail::write_manifest(config, Command::Train,
                           {detail::out_path(config, config.get_string("sanitize_input")),
                            sanitized_path, detail::out_path(config, "splits.json"),
                            detail::out_path(config, "counterfactuals.jsonl")});
    std::cerr << "train: " << result.steps_run << " steps, best val loss " << result.best_val_loss
              << " at step " << result.best_step
              << (result.early_stopped ? " (early stopped)" : "") << "\n";
}

// ----- calibrate ------------------------------------------------------------

inline void run_calibrate(const Config& config) {
    std::vector<corpus::NewsRecord> pool = detail::load_corpus_artifact(config, "sanitize_input");
    corpus::CorpusSplit split = detail::load_split_artifact(config);
    auto encoder = detail::inference_encoder(config);
    bool summary = detail::prefer_summary(config);

    std::set<std::string> val_ids(split.validation.begin(), split.validation.end());
    std::vector<double> similarities;
    for (const auto& r : pool) {
        if (!val_ids.count(r.id)) continue;
        Raster image = load_pnm(detail::resolve_image_ref(config, r.image_ref).string());
        similarities.push_back(cosine_similarity(encoder->encode_image(image),
                                                 encoder->encode_text(r.reference_text(summary))));
    }
    assess::CalibratedThreshold threshold = assess::calibrate_threshold(similarities);

    json out{{"tau", threshold.tau},
             {"source_split_size", threshold.source_split_size},
             {"computed_at", threshold.computed_at}};
    atomic_write_file(detail::out_path(config, "threshold.json"), out.dump(2) + "\n");
    detail::write_manifest(config, Command::Calibrate,
                           {detail::out_path(config, config.get_string("sanitize_input")),
                            detail::out_path(config, "splits.json")});
    std::cerr << "calibrate: tau = " << threshold.tau << " over " << similarities.size()
              << " validation pairs\n";
}

namespace detail {

inline assess::CalibratedThreshold load_threshold_artifact(const Config& config) {
    std::filesystem::path path = out_path(config, "threshold.json");
    require_file(path, "calibrated threshold file");
    json j = json::parse(read_file(path));
    assess::CalibratedThreshold t;
    t.tau = j.at("tau").get<double>();
    t.source_split_size = j.at("source_split_size").get<std::size_t>();
    t.computed_at = j.at("computed_at").get<std::int64_t>();
    return t;
}

} // namespace detail

// ----- evaluate -------------------------------------------------------------

inline void run_evaluate(const Config& config) {
    std::vector<corpus::NewsRecord> pool = detail::load_corpus_artifact(config, "sanitize_input");
    corpus::CorpusSplit split = detail::load_split_artifact(config);
    assess::CalibratedThreshold threshold = detail::load_threshold_artifact(config);
    auto encoder = detail::inference_encoder(config);
    bool summary = detail::prefer_summary(config);

    std::set<std::string> test_ids(split.test.begin(), split.test.end());
    std::vector<assess::LabeledPair> pairs;
    for (const auto& r : pool) {
        if (!test_ids.count(r.id) || !r.label) continue;
        assess::LabeledPair pair;
        pair.id = r.id;
        pair.image = load_pnm(detail::resolve_image_ref(config, r.image_ref).string());
        pair.text = r.reference_text(summary);
        pair.gold = *r.label;
        pairs.push_back(std::move(pair));
    }
    if (pairs.empty()) raise(ErrorCode::NoLabels, "no labeled records in the test split");

    assess::EvalReport report =
        assess::evaluate(pairs, *encoder, threshold, config.get_seed_list("seeds"));
    if (config.has("baseline_report")) {
        std::filesystem::path baseline_path = config.get_string("baseline_report");
        detail::require_file(baseline_path, "baseline report");
        assess::EvalReport baseline = assess::report_from_json(json::parse(read_file(baseline_path)));
        assess::attach_significance(report, baseline, baseline_path.string());
    }

    std::vector<json> pred_rows;
    for (const auto& pair : pairs) {
        assess::Prediction p = assess::classify(pair.image, pair.text, *encoder, threshold, pair.id);
        pred_rows.push_back({{"id", p.id}, {"similarity", p.similarity}, {"pred", p.label_pred}});
    }
    atomic_write_file(detail::out_path(config, "predictions.jsonl"), to_jsonl(pred_rows));
    atomic_write_file(detail::out_path(config, "eval_report.json"),
                      assess::report_to_json(report).dump(2) + "\n");
    detail::write_manifest(config, Command::Evaluate,
                           {detail::out_path(config, config.get_string("sanitize_input")),
                            detail::out_path(config, "splits.json"),
                            detail::out_path(config, "threshold.json")});
    std::cout << assess::render_report(report);
}

// ----- score ----------------------------------------------------------------

inline void run_score(const Config& config) {
    std::vector<corpus::NewsRecord> pool = detail::load_corpus_artifact(config, "sanitize_input");
    assess::CalibratedThreshold threshold = detail::load_threshold_artifact(config);
    auto encoder = detail::inference_encoder(config);
    bool summary = detail::prefer_summary(config);

    std::vector<json> rows;
    for (const auto& r : pool) {
        Raster image = load_pnm(detail::resolve_image_ref(config, r.image_ref).string());
        assess::Prediction p =
            assess::classify(image, r.reference_text(summary), *encoder, threshold, r.id);
        rows.push_back({{"id", p.id}, {"similarity", p.similarity}, {"pred", p.label_pred}});
    }
    atomic_write_file(detail::out_path(config, "scores.jsonl"), to_jsonl(rows));
    detail::write_manifest(config, Command::Score,
                           {detail::out_path(config, config.get_string("sanitize_input")),
                            detail::out_path(config, "threshold.json")});
    std::cerr << "score: wrote " << rows.size() << " rows\n";
}

// ---------------------------------------------------------------------------
// Entry point shared by the CLI binary and tests. Returns a process exit code.

inline int run(Command command, const Config& config) noexcept {
    try {
        switch (command) {
            case Command::Ingest: run_ingest(config); break;
            case Command::Sanitize: run_sanitize(config); break;
            case Command::GenerateCf: run_generate_cf(config); break;
            case Command::Train: run_train(config); break;
            case Command::Calibrate: run_calibrate(config); break;
            case Command::Evaluate: run_evaluate(config); break;
            case Command::Score: run_score(config); break;
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "cftclip " << command_name(command) << ": " << e.what() << "\n";
        if (e.code() == ErrorCode::ConfigError) return 2;
        if (e.code() == ErrorCode::MissingInput) return 3;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "cftclip " << command_name(command) << ": " << e.what() << "\n";
        return 1;
    }
}

} // namespace cftclip::pipeline
