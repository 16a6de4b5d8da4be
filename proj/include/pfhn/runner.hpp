#pragma once

#include <string>
#include <vector>

#include "pfhn/config.hpp"
#include "pfhn/federation.hpp"

namespace pfhn {

// One global seed fans out into named substreams so that, e.g., changing the
// evaluation cadence cannot perturb training randomness.
Dataset build_dataset(const ExperimentConfig& cfg);
PartitionSpec build_partition(const ExperimentConfig& cfg, const Dataset& ds);
ServerState build_server(const ExperimentConfig& cfg, const Dataset& ds,
                         const PartitionSpec& part);

struct ExperimentResult {
    ServerState server;                 // hypernetwork modes
    FlatParams global_model;            // fedavg
    std::vector<FlatParams> local_models;
    std::vector<RoundMetrics> history;
    double final_val_acc = 0.0;
    double final_test_acc = 0.0;
    double best_val_acc = 0.0;
    std::size_t best_round = 0;
    std::vector<double> per_client_test_acc;
    // novel_adapt extras
    std::vector<double> novel_accuracy_trace;
    double novel_tv_distance = 0.0;
    std::size_t novel_nearest_client = 0;
};

// Runs the engine selected by the config for cfg.train.rounds rounds with
// periodic federated-accuracy snapshots and best-validation restore.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& ds,
                                const PartitionSpec& part);

std::string metrics_csv(const std::vector<RoundMetrics>& history);
std::string export_embeddings(const ServerState& s);

void save_server_checkpoint(const std::string& path, const ServerState& s);
void load_server_checkpoint(const std::string& path, ServerState& s);

// Full front-end: validates, creates the output directory, runs, writes
// metrics.csv / summary.json / checkpoint.bin / embeddings.csv. Returns the
// process exit status (0 success, 1 run failure, 2 invalid config). `action`
// is the CLI subcommand: train, adapt, eval, swap, export-embeddings, linlab.
int dispatch(const ParseResult& parsed, const std::string& action = "train");

// 17-significant-digit decimal rendering used for all CSV output.
std::string fmt_g17(double v);

}  // namespace pfhn
