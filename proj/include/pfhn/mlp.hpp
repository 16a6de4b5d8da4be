#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pfhn/flat_params.hpp"
#include "pfhn/rng.hpp"

namespace pfhn {

// Fully connected ReLU network architecture. Layer l maps with
// "layer<l>.weight" (in x out) and "layer<l>.bias" (1 x out).
struct TargetSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t output_dim = 0;

    std::size_t layer_count() const { return hidden_dims.size() + 1; }
    void validate() const;
};

struct Batch {
    Matrix features;          // batch x input_dim
    std::vector<int> labels;  // class indices
};

struct TrainConfig {
    double lr_client = 5e-3;
    double lr_server = 1e-2;
    std::size_t local_steps = 50;
    std::size_t rounds = 1000;
    std::size_t batch_size = 64;
    double momentum = 0.0;
    std::uint64_t seed = 1;
};

// (name, rows, cols) triples in layer order.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> mlp_layout(
    const TargetSpec& spec);

std::size_t mlp_param_count(const TargetSpec& spec);

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
FlatParams init_mlp(const TargetSpec& spec, Rng rng);

// Pre- and post-activation record from a forward pass.
struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre;   // pre-activation of each layer
    std::vector<Matrix> post;  // post-activation (post.back() == logits)
};

Matrix mlp_forward(const FlatParams& params, const TargetSpec& spec, const Matrix& features,
                   ForwardCache* cache = nullptr);

// Mean negative log softmax likelihood and its logits gradient
// (softmax - onehot) / batch_size.
std::pair<double, Matrix> cross_entropy(const Matrix& logits, const std::vector<int>& labels);

FlatParams mlp_backward(const ForwardCache& cache, const Matrix& grad_logits,
                        const FlatParams& params, const TargetSpec& spec);

// In-place SGD step; momentum_state is required (and updated) when momentum > 0.
void sgd_step(FlatParams& params, const FlatParams& grads, double lr, double momentum = 0.0,
              FlatParams* momentum_state = nullptr);

// Per-row argmax, ties broken by lowest class index.
std::vector<int> predict(const Matrix& logits);

}  // namespace pfhn
