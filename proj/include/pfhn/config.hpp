#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfhn/mlp.hpp"

namespace pfhn {

enum class Mode { pfedhn, pfedhn_pc, fedavg, local, novel_adapt, linlab };

std::string mode_name(Mode m);

struct ExperimentConfig {
    Mode mode = Mode::pfedhn;
    std::uint64_t seed = 1;
    std::string out_dir;

    // dataset
    std::string dataset = "synthetic";  // synthetic | idx
    std::string idx_images;
    std::string idx_labels;
    int synth_classes = 10;
    std::size_t synth_dim = 20;
    std::size_t synth_per_class = 100;
    double synth_spread = 0.5;

    // partition
    std::size_t n_clients = 10;
    std::string partition = "hetero";  // hetero | dirichlet
    std::size_t classes_per_client = 2;
    double dirichlet_alpha = 0.1;
    double val_frac = 0.15;
    double test_frac = 0.15;

    // architectures; group -> hidden widths of its target network
    std::vector<std::string> groups = {"default"};
    std::map<std::string, std::vector<std::size_t>> target_hidden;

    std::vector<std::size_t> trunk_hidden = {100};
    std::size_t embed_dim = 0;  // 0 -> floor(1 + n/4)
    bool linear_mode = false;
    bool spectral_norm = false;
    std::size_t power_iters = 1;
    bool fixed_embeddings = false;  // embeddings set to class proportions, not trained

    TrainConfig train;
    double lr_head = -1.0;  // < 0 -> lr_client

    std::size_t fedavg_clients_per_round = 5;
    bool fedavg_weighted = true;
    std::size_t local_steps_budget = 2000;

    std::size_t snapshot_every = 50;
    bool early_stopping = true;

    std::size_t adapt_steps = 50;
    std::string checkpoint;  // input checkpoint for eval/swap/export subcommands

    // linlab
    std::size_t linlab_n = 8, linlab_d = 5, linlab_m = 12, linlab_k = 2, linlab_seeds = 5;
    double linlab_noise = 0.1;

    double effective_lr_head() const { return lr_head < 0 ? train.lr_client : lr_head; }
    std::size_t effective_embed_dim(int class_count) const;
    std::string group_of_client(std::size_t client_id) const;
};

struct ParseResult {
    std::optional<ExperimentConfig> config;
    std::vector<std::string> errors;  // all validation failures, aggregated
};

// Flat key = value text file; '#' starts a comment. `overrides` are
// "key=value" strings that take precedence over file entries.
ParseResult parse_config(const std::string& path, const std::vector<std::string>& overrides);

// Parse from pre-split key/value pairs (used by tests and by the CLI when no
// file is given).
ParseResult parse_config_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace pfhn
