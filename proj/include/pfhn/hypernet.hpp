#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pfhn/flat_params.hpp"
#include "pfhn/mlp.hpp"
#include "pfhn/rng.hpp"

namespace pfhn {

struct TensorShape {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
};

// Hypernetwork architecture: a shared ReLU trunk on the client embedding and
// one linear head per target tensor per size group. linear_mode drops the
// trunk and all biases so the map is exactly theta = W v per tensor.
struct HyperNetSpec {
    std::size_t embed_dim = 0;
    std::vector<std::size_t> trunk_hidden_dims;
    bool linear_mode = false;
    // group name -> ordered (tensor name, shape)
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, TensorShape>>>> groups;

    std::size_t trunk_out_dim() const {
        return trunk_hidden_dims.empty() ? embed_dim : trunk_hidden_dims.back();
    }
    const std::vector<std::pair<std::string, TensorShape>>& group_layout(
        const std::string& group) const;
    bool has_group(const std::string& group) const;
    void validate() const;
    std::size_t param_count() const;

    // Head layout for a fully connected target; in PC mode the final layer is
    // excluded (it lives on the client as the personal classifier).
    static std::vector<std::pair<std::string, TensorShape>> heads_for_target(
        const TargetSpec& target, bool exclude_final_layer);
};

struct Embedding {
    std::vector<double> v;
    bool trainable = true;
};

FlatParams init_hypernet(const HyperNetSpec& spec, std::uint64_t seed);

// theta = h(v; phi) for one size group.
FlatParams hn_forward(const FlatParams& phi, const HyperNetSpec& spec,
                      const std::vector<double>& v, const std::string& group);

struct HnVjpResult {
    FlatParams g_phi;           // (d theta / d phi)^T delta
    std::vector<double> g_v;    // (d theta / d v)^T delta
};

// One reverse pass; heads of groups other than `group` receive exact zeros.
HnVjpResult hn_vjp(const FlatParams& phi, const HyperNetSpec& spec, const std::vector<double>& v,
                   const FlatParams& delta_theta, const std::string& group);

// Power-iteration vectors persisted across calls for warm starts.
struct SpectralState {
    std::map<std::string, std::vector<double>> u;
};

struct SpectralResult {
    FlatParams phi_hat;
    std::vector<std::pair<std::string, double>> sigmas;
    bool had_zero_matrix = false;  // a zero matrix is passed through with sigma = 1
};

// Divides every weight matrix of phi by its estimated top singular value.
SpectralResult spectral_norm_apply(const FlatParams& phi, std::size_t n_power_iters,
                                   SpectralState& state);

// Paper default: floor(1 + n/4).
std::size_t default_embed_dim(std::size_t n_clients);

}  // namespace pfhn
