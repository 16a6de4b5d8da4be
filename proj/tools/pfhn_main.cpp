#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pfhn/runner.hpp"

namespace {
struct CommonOpts {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::string checkpoint;
    long long seed = -1;
};

void attach(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("-c,--config", o.config, "Config file (key = value lines)");
    cmd->add_option("--set", o.sets, "Override, key=value (repeatable)")->take_all();
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seed", o.seed, "Global seed override");
    cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file to load");
}

int run(const CommonOpts& o, const std::string& action) {
    std::vector<std::string> overrides = o.sets;
    if (o.seed >= 0) overrides.push_back("seed=" + std::to_string(o.seed));
    if (!o.out.empty()) overrides.push_back("out_dir=" + o.out);
    if (!o.checkpoint.empty()) overrides.push_back("checkpoint=" + o.checkpoint);
    return pfhn::dispatch(pfhn::parse_config(o.config, overrides), action);
}
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Personalized federated learning simulator"};
    app.require_subcommand(1);

    CommonOpts opts;
    attach(&app, opts);  // options may appear before or after the subcommand
    const char* names[] = {"train", "adapt", "eval", "swap", "linlab", "export-embeddings"};
    const char* descs[] = {"Run the training engine selected by the config mode",
                           "Train, then adapt a held-out novel client with the server frozen",
                           "Evaluate a saved checkpoint on the validation and test splits",
                           "Personal-classifier swap matrix from a saved checkpoint",
                           "Linear hypernetwork equivalence study",
                           "Write client embeddings from a saved checkpoint to CSV"};
    for (int i = 0; i < 6; ++i) attach(app.add_subcommand(names[i], descs[i]), opts);

    CLI11_PARSE(app, argc, argv);
    for (const char* name : names)
        if (app.get_subcommand(name)->parsed()) return run(opts, name);
    return 2;
}
