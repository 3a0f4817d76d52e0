// cftclip: counterfactual-text contrastive pipeline CLI.
//
//   cftclip <command> --config PATH [--set key=value ...] [--seed N]
//
// Commands: ingest, sanitize, generate-cf, train, calibrate, evaluate, score.

#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cftclip/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    int seed = -1;
    bool seed_set = false;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "flat key=value config file");
    sub->add_option("--set", args.overrides, "config override, key=value (repeatable)");
    sub->add_option("--seed", args.seed, "run seed override")->each([&args](const std::string&) {
        args.seed_set = true;
    });
}

int dispatch(cftclip::pipeline::Command command, const CommonArgs& args) {
    using cftclip::pipeline::Config;
    try {
        Config config =
            args.config_path.empty() ? Config::defaults() : Config::from_file(args.config_path);
        config.apply_overrides(args.overrides);
        if (args.seed_set) config.set("seed", std::to_string(args.seed));
        return cftclip::pipeline::run(command, config);
    } catch (const cftclip::Error& e) {
        std::cerr << "cftclip: " << e.what() << "\n";
        if (e.code() == cftclip::ErrorCode::ConfigError) return 2;
        if (e.code() == cftclip::ErrorCode::MissingInput) return 3;
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CFT-CLIP: counterfactual-text contrastive training and "
                 "zero-shot thumbnail representativeness assessment"};
    app.require_subcommand(1);

    struct Entry {
        const char* name;
        const char* doc;
        cftclip::pipeline::Command command;
    };
    const std::vector<Entry> entries{
        {"ingest", "validate records, resolve thumbnails, write corpus + splits",
         cftclip::pipeline::Command::Ingest},
        {"sanitize", "filter pairs by cross-modal cosine similarity",
         cftclip::pipeline::Command::Sanitize},
        {"generate-cf", "generate counterfactual texts for hard negatives",
         cftclip::pipeline::Command::GenerateCf},
        {"train", "contrastive training with counterfactual negatives",
         cftclip::pipeline::Command::Train},
        {"calibrate", "set the classification threshold to the validation median",
         cftclip::pipeline::Command::Calibrate},
        {"evaluate", "multi-seed F1/Spearman evaluation on the labeled test split",
         cftclip::pipeline::Command::Evaluate},
        {"score", "write similarity scores and predictions for a corpus",
         cftclip::pipeline::Command::Score},
    };

    std::vector<CommonArgs> args(entries.size());
    std::vector<std::pair<CLI::App*, std::size_t>> subs;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        CLI::App* sub = app.add_subcommand(entries[i].name, entries[i].doc);
        add_common(sub, args[i]);
        subs.emplace_back(sub, i);
    }

    CLI11_PARSE(app, argc, argv);

    for (const auto& [sub, i] : subs)
        if (sub->parsed()) return dispatch(entries[i].command, args[i]);
    return 2;
}
