#include "pfhn/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "pfhn/errors.hpp"

namespace pfhn {

void TargetSpec::validate() const {
    if (input_dim < 1 || output_dim < 1) throw ValidationError("TargetSpec: dims must be >= 1");
    for (std::size_t h : hidden_dims)
        if (h < 1) throw ValidationError("TargetSpec: hidden dims must be >= 1");
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> mlp_layout(
    const TargetSpec& spec) {
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
    std::size_t in = spec.input_dim;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t width = l < spec.hidden_dims.size() ? spec.hidden_dims[l] : spec.output_dim;
        const std::string base = "layer" + std::to_string(l);
        out.emplace_back(base + ".weight", std::make_pair(in, width));
        out.emplace_back(base + ".bias", std::make_pair(std::size_t{1}, width));
        in = width;
    }
    return out;
}

std::size_t mlp_param_count(const TargetSpec& spec) {
    std::size_t n = 0;
    for (const auto& [name, shape] : mlp_layout(spec)) n += shape.first * shape.second;
    return n;
}

FlatParams init_mlp(const TargetSpec& spec, Rng rng) {
    spec.validate();
    FlatParams p;
    for (const auto& [name, shape] : mlp_layout(spec)) {
        Matrix m(shape.first, shape.second);
        if (name.ends_with(".weight")) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(shape.first));
            for (double& v : m.data) v = rng.uniform(-bound, bound);
        }
        p.entries.emplace_back(name, std::move(m));
    }
    return p;
}

namespace {
void add_bias_rows(Matrix& z, const Matrix& bias) {
    for (std::size_t i = 0; i < z.rows; ++i)
        for (std::size_t j = 0; j < z.cols; ++j) z.at(i, j) += bias.at(0, j);
}
}  // namespace

Matrix mlp_forward(const FlatParams& params, const TargetSpec& spec, const Matrix& features,
                   ForwardCache* cache) {
    if (features.cols != spec.input_dim)
        throw ShapeError("mlp_forward: feature dim " + std::to_string(features.cols) +
                         " != input_dim " + std::to_string(spec.input_dim));
    if (cache) {
        cache->input = features;
        cache->pre.clear();
        cache->post.clear();
    }
    Matrix a = features;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::string base = "layer" + std::to_string(l);
        const Matrix* w = params.find(base + ".weight");
        const Matrix* b = params.find(base + ".bias");
        if (!w || !b) throw ShapeError("mlp_forward: missing tensor " + base);
        Matrix z = matmul(a, *w);
        add_bias_rows(z, *b);
        const bool is_last = l + 1 == spec.layer_count();
        if (cache) cache->pre.push_back(z);
        if (!is_last) {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;  // ReLU, subgradient 0 at 0
        }
        if (cache) cache->post.push_back(z);
        a = std::move(z);
    }
    check_all_finite(a, "mlp_forward logits");
    return a;
}

std::pair<double, Matrix> cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows != labels.size()) throw ShapeError("cross_entropy: batch size mismatch");
    const std::size_t n = logits.rows, c = logits.cols;
    Matrix grad(n, c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                                  " out of range [0," + std::to_string(c) + ")");
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits.at(i, j) - mx);
        const double log_denom = std::log(denom);
        loss += -(logits.at(i, static_cast<std::size_t>(labels[i])) - mx - log_denom);
        for (std::size_t j = 0; j < c; ++j) {
            double p = std::exp(logits.at(i, j) - mx) / denom;
            grad.at(i, j) = (p - (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0)) /
                            static_cast<double>(n);
        }
    }
    return {loss / static_cast<double>(n), grad};
}

FlatParams mlp_backward(const ForwardCache& cache, const Matrix& grad_logits,
                        const FlatParams& params, const TargetSpec& spec) {
    const std::size_t layers = spec.layer_count();
    if (cache.pre.size() != layers)
        throw ShapeError("mlp_backward: cache does not match spec");
    if (!grad_logits.same_shape(cache.pre.back()))
        throw ShapeError("mlp_backward: grad_logits shape mismatch");
    FlatParams grads = FlatParams::zeros_like(params);
    Matrix delta = grad_logits;  // dL/d(pre-activation) of current layer
    for (std::size_t l = layers; l-- > 0;) {
        const std::string base = "layer" + std::to_string(l);
        const Matrix& input = l == 0 ? cache.input : cache.post[l - 1];
        Matrix* gw = grads.find(base + ".weight");
        Matrix* gb = grads.find(base + ".bias");
        *gw = matmul_at_b(input, delta);
        for (std::size_t i = 0; i < delta.rows; ++i)
            for (std::size_t j = 0; j < delta.cols; ++j) gb->at(0, j) += delta.at(i, j);
        if (l > 0) {
            const Matrix* w = params.find(base + ".weight");
            Matrix prev = matmul_a_bt(delta, *w);
            const Matrix& pre = cache.pre[l - 1];
            for (std::size_t i = 0; i < prev.data.size(); ++i)
                if (pre.data[i] <= 0.0) prev.data[i] = 0.0;
            delta = std::move(prev);
        }
    }
    return grads;
}

void sgd_step(FlatParams& params, const FlatParams& grads, double lr, double momentum,
              FlatParams* momentum_state) {
    if (!params.same_layout(grads)) throw ShapeError("sgd_step: layout mismatch");
    if (momentum == 0.0) {
        params.axpy(-lr, grads);
        return;
    }
    if (!momentum_state) throw ValidationError("sgd_step: momentum > 0 requires a buffer");
    if (momentum_state->entries.empty()) *momentum_state = FlatParams::zeros_like(params);
    if (!momentum_state->same_layout(params)) throw ShapeError("sgd_step: buffer layout mismatch");
    // v <- mu v + g; theta <- theta - lr v
    momentum_state->scale(momentum);
    momentum_state->axpy(1.0, grads);
    params.axpy(-lr, *momentum_state);
}

std::vector<int> predict(const Matrix& logits) {
    std::vector<int> out(logits.rows, 0);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

}  // namespace pfhn
