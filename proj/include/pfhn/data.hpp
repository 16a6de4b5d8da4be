#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfhn/matrix.hpp"
#include "pfhn/rng.hpp"

namespace pfhn {

struct Dataset {
    Matrix features;          // m x d, values in [0,1] for image data
    std::vector<int> labels;  // class indices < class_count
    int class_count = 0;

    std::size_t size() const { return labels.size(); }
    void validate() const;
};

// Per-client sample indices plus the empirical class proportions of the
// train split.
struct ClientSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    std::vector<double> class_props;  // length class_count, sums to 1
};

struct PartitionSpec {
    std::vector<ClientSplit> clients;
    // Column-normalized allocation fractions (n_clients x class_count); filled
    // by partition_dirichlet, empty for the heterogeneous protocol.
    Matrix alloc_fractions;
};

// IDX binary pair (big-endian dims, magic 0x803 / 0x801); pixels scaled 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Isotropic Gaussians at seeded random class means.
Dataset synth_gaussian_mixture(int classes, std::size_t dim, std::size_t per_class, double spread,
                               Rng rng);

// Each client picks `classes_per_client` classes; per class the mass is split
// among selecting clients proportional to alpha ~ U(.4,.6) draws, remainders
// by largest-remainder rounding. val/test carved per client from its share.
PartitionSpec partition_hetero(const Dataset& ds, std::size_t n_clients,
                               std::size_t classes_per_client, double val_frac, double test_frac,
                               Rng rng);

// Per-client class proportions drawn Dir(alpha * 1_C) and column-normalized
// so each class's mass is fully allocated.
PartitionSpec partition_dirichlet(const Dataset& ds, std::size_t n_clients, double alpha,
                                  double val_frac, double test_frac, Rng rng);

// 0.5 * sum |p - q|; inputs must be normalized to 1 +- 1e-6.
double total_variation(const std::vector<double>& p, const std::vector<double>& q);

// Minimum TV over training clients; ties broken by lowest client id.
std::pair<double, std::size_t> nearest_train_tv(const std::vector<double>& novel_props,
                                                const PartitionSpec& training);

// Audit export: client id -> index arrays + proportion vector.
std::string partition_to_json(const PartitionSpec& spec);

}  // namespace pfhn
