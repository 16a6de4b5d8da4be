#include "pfhn/hypernet.hpp"

#include <cmath>

#include "pfhn/errors.hpp"

namespace pfhn {

const std::vector<std::pair<std::string, TensorShape>>& HyperNetSpec::group_layout(
    const std::string& group) const {
    for (const auto& [name, layout] : groups)
        if (name == group) return layout;
    throw ValidationError("unknown size group: " + group);
}

bool HyperNetSpec::has_group(const std::string& group) const {
    for (const auto& [name, layout] : groups)
        if (name == group) return true;
    return false;
}

void HyperNetSpec::validate() const {
    if (embed_dim < 1) throw ValidationError("HyperNetSpec: embed_dim must be >= 1");
    if (linear_mode && !trunk_hidden_dims.empty())
        throw ValidationError("HyperNetSpec: linear_mode forbids trunk hidden layers");
    for (std::size_t h : trunk_hidden_dims)
        if (h < 1) throw ValidationError("HyperNetSpec: trunk dims must be >= 1");
    if (groups.empty()) throw ValidationError("HyperNetSpec: at least one size group required");
    for (const auto& [g, layout] : groups) {
        if (layout.empty()) throw ValidationError("HyperNetSpec: empty head layout for " + g);
        for (const auto& [name, shape] : layout)
            if (shape.size() == 0) throw ValidationError("HyperNetSpec: empty tensor " + name);
    }
}

std::size_t HyperNetSpec::param_count() const {
    std::size_t total = 0;
    std::size_t in = embed_dim;
    for (std::size_t width : trunk_hidden_dims) {
        total += in * width + width;
        in = width;
    }
    for (const auto& [group, layout] : groups)
        for (const auto& [tensor, shape] : layout)
            total += trunk_out_dim() * shape.size() + (linear_mode ? 0 : shape.size());
    return total;
}

std::vector<std::pair<std::string, TensorShape>> HyperNetSpec::heads_for_target(
    const TargetSpec& target, bool exclude_final_layer) {
    auto layout = mlp_layout(target);
    if (exclude_final_layer) {
        layout.pop_back();  // bias
        layout.pop_back();  // weight
    }
    std::vector<std::pair<std::string, TensorShape>> out;
    out.reserve(layout.size());
    for (const auto& [name, shape] : layout)
        out.emplace_back(name, TensorShape{shape.first, shape.second});
    return out;
}

namespace {
std::string head_name(const std::string& group, const std::string& tensor) {
    return "head." + group + "." + tensor;
}

// (name, rows, cols) of every phi entry, trunk first then heads in group order.
std::vector<std::pair<std::string, TensorShape>> phi_layout(const HyperNetSpec& spec) {
    std::vector<std::pair<std::string, TensorShape>> out;
    std::size_t in = spec.embed_dim;
    for (std::size_t l = 0; l < spec.trunk_hidden_dims.size(); ++l) {
        const std::size_t width = spec.trunk_hidden_dims[l];
        out.emplace_back("trunk" + std::to_string(l) + ".weight", TensorShape{in, width});
        out.emplace_back("trunk" + std::to_string(l) + ".bias", TensorShape{1, width});
        in = width;
    }
    for (const auto& [group, layout] : spec.groups) {
        for (const auto& [tensor, shape] : layout) {
            out.emplace_back(head_name(group, tensor) + ".weight",
                             TensorShape{spec.trunk_out_dim(), shape.size()});
            if (!spec.linear_mode)
                out.emplace_back(head_name(group, tensor) + ".bias", TensorShape{1, shape.size()});
        }
    }
    return out;
}

struct TrunkCache {
    std::vector<Matrix> pre;
    std::vector<Matrix> post;
    Matrix out;  // 1 x trunk_out_dim
};

TrunkCache trunk_forward(const FlatParams& phi, const HyperNetSpec& spec,
                         const std::vector<double>& v) {
    if (v.size() != spec.embed_dim)
        throw ShapeError("hypernet: embedding length " + std::to_string(v.size()) +
                         " != embed_dim " + std::to_string(spec.embed_dim));
    TrunkCache c;
    Matrix a(1, v.size());
    a.data = v;
    for (std::size_t l = 0; l < spec.trunk_hidden_dims.size(); ++l) {
        const std::string base = "trunk" + std::to_string(l);
        const Matrix* w = phi.find(base + ".weight");
        const Matrix* b = phi.find(base + ".bias");
        if (!w || !b) throw ShapeError("hypernet: missing tensor " + base);
        Matrix z = matmul(a, *w);
        for (std::size_t j = 0; j < z.cols; ++j) z.at(0, j) += b->at(0, j);
        c.pre.push_back(z);
        for (double& x : z.data) x = x > 0.0 ? x : 0.0;
        c.post.push_back(z);
        a = std::move(z);
    }
    c.out = std::move(a);
    return c;
}
}  // namespace

FlatParams init_hypernet(const HyperNetSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng = Rng(seed).stream("hypernet_init");
    FlatParams phi;
    for (const auto& [name, shape] : phi_layout(spec)) {
        Matrix m(shape.rows, shape.cols);
        if (name.ends_with(".weight")) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(shape.rows));
            for (double& x : m.data) x = rng.uniform(-bound, bound);
        }
        phi.entries.emplace_back(name, std::move(m));
    }
    return phi;
}

FlatParams hn_forward(const FlatParams& phi, const HyperNetSpec& spec,
                      const std::vector<double>& v, const std::string& group) {
    const auto& layout = spec.group_layout(group);
    const TrunkCache trunk = trunk_forward(phi, spec, v);
    FlatParams theta;
    theta.entries.reserve(layout.size());
    for (const auto& [tensor, shape] : layout) {
        const Matrix* w = phi.find(head_name(group, tensor) + ".weight");
        if (!w) throw ShapeError("hypernet: missing head for " + tensor);
        Matrix flat = matmul(trunk.out, *w);
        if (!spec.linear_mode) {
            const Matrix* b = phi.find(head_name(group, tensor) + ".bias");
            for (std::size_t j = 0; j < flat.cols; ++j) flat.at(0, j) += b->at(0, j);
        }
        Matrix t(shape.rows, shape.cols);
        t.data = std::move(flat.data);
        theta.entries.emplace_back(tensor, std::move(t));
    }
    return theta;
}

HnVjpResult hn_vjp(const FlatParams& phi, const HyperNetSpec& spec, const std::vector<double>& v,
                   const FlatParams& delta_theta, const std::string& group) {
    const auto& layout = spec.group_layout(group);
    if (delta_theta.entries.size() != layout.size())
        throw ShapeError("hn_vjp: delta layout does not match group");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& [tensor, shape] = layout[i];
        const auto& [dname, dmat] = delta_theta.entries[i];
        if (dname != tensor || dmat.rows != shape.rows || dmat.cols != shape.cols)
            throw ShapeError("hn_vjp: delta tensor mismatch at " + tensor);
    }

    const TrunkCache trunk = trunk_forward(phi, spec, v);
    HnVjpResult res;
    res.g_phi = FlatParams::zeros_like(phi);

    // Head stage: accumulate head gradients and the trunk-output cotangent.
    Matrix g_out(1, spec.trunk_out_dim());
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& tensor = layout[i].first;
        const Matrix& delta = delta_theta.entries[i].second;
        Matrix dflat(1, delta.size());
        dflat.data = delta.data;
        const Matrix* w = phi.find(head_name(group, tensor) + ".weight");
        Matrix* gw = res.g_phi.find(head_name(group, tensor) + ".weight");
        *gw = matmul_at_b(trunk.out, dflat);  // outer product t^T delta
        if (!spec.linear_mode) {
            Matrix* gb = res.g_phi.find(head_name(group, tensor) + ".bias");
            gb->data = dflat.data;
        }
        Matrix contrib = matmul_a_bt(dflat, *w);  // delta W^T
        for (std::size_t j = 0; j < g_out.cols; ++j) g_out.at(0, j) += contrib.at(0, j);
    }

    // Trunk stage: reverse through the ReLU layers down to the embedding.
    Matrix delta = std::move(g_out);
    for (std::size_t l = spec.trunk_hidden_dims.size(); l-- > 0;) {
        const Matrix& pre = trunk.pre[l];
        for (std::size_t j = 0; j < delta.data.size(); ++j)
            if (pre.data[j] <= 0.0) delta.data[j] = 0.0;
        const std::string base = "trunk" + std::to_string(l);
        Matrix input(1, l == 0 ? spec.embed_dim : spec.trunk_hidden_dims[l - 1]);
        if (l == 0)
            input.data = v;
        else
            input.data = trunk.post[l - 1].data;
        *res.g_phi.find(base + ".weight") = matmul_at_b(input, delta);
        res.g_phi.find(base + ".bias")->data = delta.data;
        delta = matmul_a_bt(delta, *phi.find(base + ".weight"));
    }
    res.g_v = delta.data;
    return res;
}

SpectralResult spectral_norm_apply(const FlatParams& phi, std::size_t n_power_iters,
                                   SpectralState& state) {
    if (n_power_iters < 1) throw ValidationError("spectral_norm_apply: n_power_iters must be >= 1");
    SpectralResult res;
    res.phi_hat = phi;
    for (auto& [name, m] : res.phi_hat.entries) {
        if (!name.ends_with(".weight")) continue;
        double frob = 0.0;
        for (double x : m.data) frob += x * x;
        if (frob == 0.0) {
            res.had_zero_matrix = true;
            res.sigmas.emplace_back(name, 1.0);
            continue;
        }
        auto& u = state.u[name];
        if (u.size() != m.cols) u.assign(m.cols, 1.0 / std::sqrt(static_cast<double>(m.cols)));
        std::vector<double> wu(m.rows, 0.0);
        double sigma = 0.0;
        for (std::size_t it = 0; it < n_power_iters; ++it) {
            // wu = W u
            for (std::size_t i = 0; i < m.rows; ++i) {
                double s = 0.0;
                const double* row = &m.data[i * m.cols];
                for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * u[j];
                wu[i] = s;
            }
            double nu = 0.0;
            for (double x : wu) nu += x * x;
            nu = std::sqrt(nu);
            if (nu == 0.0) break;
            for (double& x : wu) x /= nu;
            // u = W^T wu
            std::fill(u.begin(), u.end(), 0.0);
            for (std::size_t i = 0; i < m.rows; ++i) {
                const double* row = &m.data[i * m.cols];
                for (std::size_t j = 0; j < m.cols; ++j) u[j] += row[j] * wu[i];
            }
            sigma = 0.0;
            for (double x : u) sigma += x * x;
            sigma = std::sqrt(sigma);
            if (sigma == 0.0) break;
            for (double& x : u) x /= sigma;
        }
        if (sigma <= 0.0) {
            res.had_zero_matrix = true;
            res.sigmas.emplace_back(name, 1.0);
            continue;
        }
        for (double& x : m.data) x /= sigma;
        res.sigmas.emplace_back(name, sigma);
    }
    return res;
}

std::size_t default_embed_dim(std::size_t n_clients) { return 1 + n_clients / 4; }

}  // namespace pfhn
