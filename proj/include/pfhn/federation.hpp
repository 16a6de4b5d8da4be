#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfhn/data.hpp"
#include "pfhn/hypernet.hpp"
#include "pfhn/mlp.hpp"

namespace pfhn {

struct ClientState {
    std::size_t id = 0;
    Embedding embedding;
    std::optional<FlatParams> personal_head;  // present iff PC mode
    std::string group = "default";
};

struct ServerState {
    FlatParams phi;
    HyperNetSpec hn_spec;
    std::map<std::string, TargetSpec> target_specs;  // per size group
    bool pc_mode = false;
    bool spectral_norm = false;
    std::size_t power_iters = 1;
    SpectralState spectral;
    std::vector<ClientState> clients;
    std::size_t round = 0;
};

struct RoundMetrics {
    std::size_t round = 0;
    long client_id = -1;
    double loss_pre = 0.0;
    double loss_post = 0.0;
    double delta_norm = 0.0;
    std::optional<double> fed_acc;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
};

struct LocalTrainResult {
    FlatParams theta_tilde;
    std::optional<FlatParams> omega_tilde;
    FlatParams delta;  // theta_tilde - theta
    std::vector<double> loss_trace;
    double loss_pre = 0.0;
    double loss_post = 0.0;
};

// K steps of minibatch SGD (uniform with replacement). When omega is present
// the model is feature extractor (theta) followed by the personal head, both
// receive gradients, and the head trains at lr_head.
LocalTrainResult local_train(const FlatParams& theta, const std::optional<FlatParams>& omega,
                             const Dataset& ds, const std::vector<std::size_t>& train_idx,
                             const TargetSpec& spec, const TrainConfig& cfg, double lr_head,
                             Rng rng);

enum class Split { train, val, test };

const std::vector<std::size_t>& split_indices(const ClientSplit& c, Split split);

// Accuracy of one model on a set of sample indices.
double eval_accuracy(const FlatParams& params, const TargetSpec& spec, const Dataset& ds,
                     const std::vector<std::size_t>& indices);

// Full target-network parameters for one client (hypernetwork output plus the
// personal head in PC mode).
FlatParams client_model(ServerState& s, std::size_t client_id);

// Unweighted mean over clients of per-client accuracy.
double federated_accuracy(ServerState& s, const Dataset& ds, const PartitionSpec& part,
                          Split split);
double federated_accuracy(const std::vector<FlatParams>& models, const TargetSpec& spec,
                          const Dataset& ds, const PartitionSpec& part, Split split);

// One round of the hypernetwork engine: sample a client, emit its weights,
// train locally, push the update back through the hypernetwork Jacobian.
RoundMetrics pfedhn_round(ServerState& s, const Dataset& ds, const PartitionSpec& part,
                          const TrainConfig& cfg, double lr_head);

// PC variant; requires pc_mode (the hypernetwork emits the feature extractor
// only, the personal head trains and stays on the client).
RoundMetrics pfedhn_pc_round(ServerState& s, const Dataset& ds, const PartitionSpec& part,
                             const TrainConfig& cfg, double lr_head);

// Classic federated averaging over `clients_per_round` sampled clients.
RoundMetrics fedavg_round(FlatParams& global_theta, const TargetSpec& spec, const Dataset& ds,
                          const PartitionSpec& part, std::size_t clients_per_round,
                          bool sample_weighted, const TrainConfig& cfg, std::size_t round);

// Independent per-client training for a fixed step budget; the returned
// theta_tilde of each entry is the client's final model.
std::vector<LocalTrainResult> local_baseline(const TargetSpec& spec, const Dataset& ds,
                                             const PartitionSpec& part, std::size_t steps,
                                             const TrainConfig& cfg);

struct AdaptResult {
    Embedding v_new;
    std::optional<FlatParams> omega_new;
    std::vector<double> accuracy_trace;  // test accuracy before each round + final
};

// Novel-client adaptation: phi is frozen, only the embedding (and the head in
// PC mode) is optimized.
AdaptResult adapt_novel_client(const ServerState& trained, const Dataset& ds,
                               const ClientSplit& novel, const std::string& group,
                               std::size_t steps, const TrainConfig& cfg, double lr_head);

struct SwapMatrixResult {
    Matrix normalized;  // n x n, min-max normalized per row
    Matrix raw;         // raw accuracies
    std::vector<bool> degenerate_rows;  // constant rows, mapped to zeros
};

// Row i keeps client i's personal head and eval data; column j supplies the
// feature extractor generated for client j.
SwapMatrixResult swap_matrix(ServerState& s, const Dataset& ds, const PartitionSpec& part);

}  // namespace pfhn
