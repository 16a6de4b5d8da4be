#include "pfhn/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pfhn/errors.hpp"

namespace pfhn {

namespace {
FlatParams combine(const FlatParams& theta, const std::optional<FlatParams>& omega) {
    FlatParams full = theta;
    if (omega)
        for (const auto& e : omega->entries) full.entries.push_back(e);
    return full;
}

Batch gather(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Batch b;
    b.features = Matrix(idx.size(), ds.features.cols);
    b.labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t src = idx[i];
        std::copy(&ds.features.data[src * ds.features.cols],
                  &ds.features.data[(src + 1) * ds.features.cols],
                  &b.features.data[i * b.features.cols]);
        b.labels[i] = ds.labels[src];
    }
    return b;
}

// SGD step where the first n_client_lr entries use lr_client and the rest
// (the personal head) use lr_head; one shared momentum buffer.
void split_lr_step(FlatParams& params, const FlatParams& grads, std::size_t n_client_lr,
                   const TrainConfig& cfg, double lr_head, FlatParams& momentum_state) {
    const FlatParams* g = &grads;
    if (cfg.momentum > 0.0) {
        if (momentum_state.entries.empty()) momentum_state = FlatParams::zeros_like(params);
        momentum_state.scale(cfg.momentum);
        momentum_state.axpy(1.0, grads);
        g = &momentum_state;
    }
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
        const double lr = e < n_client_lr ? cfg.lr_client : lr_head;
        auto& dst = params.entries[e].second.data;
        const auto& src = g->entries[e].second.data;
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] -= lr * src[j];
    }
}

// Returns phi itself when spectral norm is off; otherwise fills `storage`
// with the normalized copy and returns a reference to it.
const FlatParams& effective_phi(const FlatParams& phi, bool spectral_norm,
                                std::size_t power_iters, SpectralState& state,
                                FlatParams& storage) {
    if (!spectral_norm) return phi;
    storage = spectral_norm_apply(phi, power_iters, state).phi_hat;
    return storage;
}
}  // namespace

LocalTrainResult local_train(const FlatParams& theta, const std::optional<FlatParams>& omega,
                             const Dataset& ds, const std::vector<std::size_t>& train_idx,
                             const TargetSpec& spec, const TrainConfig& cfg, double lr_head,
                             Rng rng) {
    if (train_idx.empty()) throw ValidationError("local_train: client has no training data");
    const std::size_t n_theta = theta.entries.size();
    FlatParams params = combine(theta, omega);
    FlatParams momentum_state;
    LocalTrainResult res;

    if (cfg.batch_size < 1) throw ValidationError("local_train: batch_size must be >= 1");
    std::vector<std::size_t> batch_idx(cfg.batch_size);
    auto sample_batch = [&]() {
        for (auto& x : batch_idx) x = train_idx[rng.uniform_int(train_idx.size())];
        return gather(ds, batch_idx);
    };

    Batch batch = sample_batch();
    for (std::size_t k = 0; k < cfg.local_steps; ++k) {
        ForwardCache cache;
        const Matrix logits = mlp_forward(params, spec, batch.features, &cache);
        auto [loss, grad_logits] = cross_entropy(logits, batch.labels);
        res.loss_trace.push_back(loss);
        const FlatParams grads = mlp_backward(cache, grad_logits, params, spec);
        split_lr_step(params, grads, n_theta, cfg, lr_head, momentum_state);
        if (k + 1 < cfg.local_steps) batch = sample_batch();
    }
    {
        const Matrix logits = mlp_forward(params, spec, batch.features, nullptr);
        res.loss_post = cross_entropy(logits, batch.labels).first;
        if (res.loss_trace.empty()) res.loss_trace.push_back(res.loss_post);
    }
    res.loss_pre = res.loss_trace.front();

    res.theta_tilde.entries.assign(params.entries.begin(), params.entries.begin() + n_theta);
    if (omega) {
        FlatParams w;
        w.entries.assign(params.entries.begin() + n_theta, params.entries.end());
        res.omega_tilde = std::move(w);
    }
    res.delta = res.theta_tilde;
    res.delta.axpy(-1.0, theta);
    return res;
}

const std::vector<std::size_t>& split_indices(const ClientSplit& c, Split split) {
    switch (split) {
        case Split::train: return c.train;
        case Split::val: return c.val;
        default: return c.test;
    }
}

double eval_accuracy(const FlatParams& params, const TargetSpec& spec, const Dataset& ds,
                     const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ValidationError("eval_accuracy: empty eval split");
    const Batch b = gather(ds, indices);
    const Matrix logits = mlp_forward(params, spec, b.features, nullptr);
    const auto preds = predict(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == b.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

FlatParams client_model(ServerState& s, std::size_t client_id) {
    const ClientState& cl = s.clients.at(client_id);
    FlatParams storage;
    const FlatParams& phi_eff =
        effective_phi(s.phi, s.spectral_norm, s.power_iters, s.spectral, storage);
    FlatParams theta = hn_forward(phi_eff, s.hn_spec, cl.embedding.v, cl.group);
    return combine(theta, cl.personal_head);
}

double federated_accuracy(ServerState& s, const Dataset& ds, const PartitionSpec& part,
                          Split split) {
    if (s.clients.empty()) throw ValidationError("federated_accuracy: no clients");
    double sum = 0.0;
    for (std::size_t i = 0; i < s.clients.size(); ++i) {
        const FlatParams model = client_model(s, i);
        sum += eval_accuracy(model, s.target_specs.at(s.clients[i].group), ds,
                             split_indices(part.clients.at(i), split));
    }
    return sum / static_cast<double>(s.clients.size());
}

double federated_accuracy(const std::vector<FlatParams>& models, const TargetSpec& spec,
                          const Dataset& ds, const PartitionSpec& part, Split split) {
    if (models.empty()) throw ValidationError("federated_accuracy: no models");
    if (models.size() != part.clients.size())
        throw ValidationError("federated_accuracy: model/client count mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i)
        sum += eval_accuracy(models[i], spec, ds, split_indices(part.clients[i], split));
    return sum / static_cast<double>(models.size());
}

RoundMetrics pfedhn_round(ServerState& s, const Dataset& ds, const PartitionSpec& part,
                          const TrainConfig& cfg, double lr_head) {
    const std::size_t n = s.clients.size();
    if (n == 0) throw ValidationError("pfedhn_round: no clients");
    RoundMetrics m;
    m.round = s.round;
    const std::size_t i =
        Rng(cfg.seed).stream("client_sample").stream(s.round).uniform_int(n);
    m.client_id = static_cast<long>(i);
    ClientState& cl = s.clients[i];
    const TargetSpec& tspec = s.target_specs.at(cl.group);

    FlatParams storage;
    const FlatParams& phi_eff =
        effective_phi(s.phi, s.spectral_norm, s.power_iters, s.spectral, storage);
    const FlatParams theta = hn_forward(phi_eff, s.hn_spec, cl.embedding.v, cl.group);

    LocalTrainResult local =
        local_train(theta, cl.personal_head, ds, part.clients.at(i).train, tspec, cfg, lr_head,
                    Rng(cfg.seed).stream("local").stream(s.round));

    // Descent on the surrogate 0.5||theta_tilde - h(v;phi)||^2: the cotangent
    // fed to the VJP is -(theta_tilde - theta).
    FlatParams cotangent = local.delta;
    cotangent.scale(-1.0);
    const HnVjpResult vjp = hn_vjp(phi_eff, s.hn_spec, cl.embedding.v, cotangent, cl.group);
    s.phi.axpy(-cfg.lr_server, vjp.g_phi);
    if (cl.embedding.trainable)
        for (std::size_t j = 0; j < cl.embedding.v.size(); ++j)
            cl.embedding.v[j] -= cfg.lr_server * vjp.g_v[j];
    if (s.pc_mode) cl.personal_head = local.omega_tilde;

    m.loss_pre = local.loss_pre;
    m.loss_post = local.loss_post;
    m.delta_norm = local.delta.norm();
    m.bytes_down = theta.total_size() * sizeof(double);
    m.bytes_up = m.bytes_down;
    ++s.round;
    return m;
}

RoundMetrics pfedhn_pc_round(ServerState& s, const Dataset& ds, const PartitionSpec& part,
                             const TrainConfig& cfg, double lr_head) {
    if (!s.pc_mode) throw ValidationError("pfedhn_pc_round: server not in PC mode");
    return pfedhn_round(s, ds, part, cfg, lr_head);
}

RoundMetrics fedavg_round(FlatParams& global_theta, const TargetSpec& spec, const Dataset& ds,
                          const PartitionSpec& part, std::size_t clients_per_round,
                          bool sample_weighted, const TrainConfig& cfg, std::size_t round) {
    const std::size_t n = part.clients.size();
    if (clients_per_round < 1 || clients_per_round > n)
        throw ValidationError("fedavg_round: clients_per_round out of range");
    Rng sample_rng = Rng(cfg.seed).stream("fedavg_sample").stream(round);
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t k = 0; k < clients_per_round; ++k)
        std::swap(ids[k], ids[k + sample_rng.uniform_int(n - k)]);
    ids.resize(clients_per_round);
    std::sort(ids.begin(), ids.end());

    RoundMetrics m;
    m.round = round;
    FlatParams avg = FlatParams::zeros_like(global_theta);
    double total_w = 0.0;
    for (std::size_t id : ids) {
        LocalTrainResult local =
            local_train(global_theta, std::nullopt, ds, part.clients[id].train, spec, cfg,
                        cfg.lr_client, Rng(cfg.seed).stream("fedavg_local").stream(round).stream(id));
        const double w =
            sample_weighted ? static_cast<double>(part.clients[id].train.size()) : 1.0;
        avg.axpy(w, local.theta_tilde);
        total_w += w;
        m.loss_pre += local.loss_pre / static_cast<double>(clients_per_round);
        m.loss_post += local.loss_post / static_cast<double>(clients_per_round);
    }
    avg.scale(1.0 / total_w);
    FlatParams diff = avg;
    diff.axpy(-1.0, global_theta);
    m.delta_norm = diff.norm();
    global_theta = std::move(avg);
    m.bytes_down = clients_per_round * global_theta.total_size() * sizeof(double);
    m.bytes_up = m.bytes_down;
    return m;
}

std::vector<LocalTrainResult> local_baseline(const TargetSpec& spec, const Dataset& ds,
                                             const PartitionSpec& part, std::size_t steps,
                                             const TrainConfig& cfg) {
    std::vector<LocalTrainResult> results;
    results.reserve(part.clients.size());
    TrainConfig local_cfg = cfg;
    local_cfg.local_steps = steps;
    for (const auto& client : part.clients) {
        Rng rng = Rng(cfg.seed).stream("local_baseline");
        FlatParams init = init_mlp(spec, rng.stream("init"));
        results.push_back(local_train(init, std::nullopt, ds, client.train, spec, local_cfg,
                                      cfg.lr_client, rng.stream("train")));
    }
    return results;
}

AdaptResult adapt_novel_client(const ServerState& trained, const Dataset& ds,
                               const ClientSplit& novel, const std::string& group,
                               std::size_t steps, const TrainConfig& cfg, double lr_head) {
    const TargetSpec& tspec = trained.target_specs.at(group);
    Rng rng = Rng(cfg.seed).stream("novel_adapt");
    AdaptResult res;
    res.v_new.v.resize(trained.hn_spec.embed_dim);
    Rng embed_rng = rng.stream("embed");
    for (double& x : res.v_new.v) x = 0.1 * embed_rng.normal();
    if (trained.pc_mode) {
        const FlatParams full = init_mlp(tspec, rng.stream("head"));
        const std::size_t n_feat = trained.hn_spec.group_layout(group).size();
        FlatParams head;
        head.entries.assign(full.entries.begin() + n_feat, full.entries.end());
        res.omega_new = std::move(head);
    }

    SpectralState spectral = trained.spectral;  // phi itself is never touched
    for (std::size_t r = 0; r <= steps; ++r) {
        FlatParams storage;
        const FlatParams& phi_eff =
            effective_phi(trained.phi, trained.spectral_norm, trained.power_iters, spectral, storage);
        FlatParams theta = hn_forward(phi_eff, trained.hn_spec, res.v_new.v, group);
        res.accuracy_trace.push_back(
            eval_accuracy(combine(theta, res.omega_new), tspec, ds, novel.test));
        if (r == steps) break;
        LocalTrainResult local = local_train(theta, res.omega_new, ds, novel.train, tspec, cfg,
                                             lr_head, rng.stream("local").stream(r));
        FlatParams cotangent = local.delta;
        cotangent.scale(-1.0);
        const HnVjpResult vjp = hn_vjp(phi_eff, trained.hn_spec, res.v_new.v, cotangent, group);
        for (std::size_t j = 0; j < res.v_new.v.size(); ++j)
            res.v_new.v[j] -= cfg.lr_server * vjp.g_v[j];
        if (trained.pc_mode) res.omega_new = local.omega_tilde;
    }
    return res;
}

SwapMatrixResult swap_matrix(ServerState& s, const Dataset& ds, const PartitionSpec& part) {
    if (!s.pc_mode) throw ValidationError("swap_matrix: requires PC mode");
    const std::size_t n = s.clients.size();
    if (n == 0) throw ValidationError("swap_matrix: no clients");
    const std::string& group0 = s.clients[0].group;
    const auto& layout0 = s.hn_spec.group_layout(group0);
    for (const auto& cl : s.clients) {
        const auto& layout = s.hn_spec.group_layout(cl.group);
        if (layout.size() != layout0.size())
            throw ValidationError("swap_matrix: feature extractor shapes differ across groups");
        for (std::size_t t = 0; t < layout.size(); ++t)
            if (layout[t].second.rows != layout0[t].second.rows ||
                layout[t].second.cols != layout0[t].second.cols)
                throw ValidationError("swap_matrix: feature extractor shapes differ across groups");
    }

    FlatParams storage;
    const FlatParams& phi_eff =
        effective_phi(s.phi, s.spectral_norm, s.power_iters, s.spectral, storage);
    std::vector<FlatParams> features;
    features.reserve(n);
    for (const auto& cl : s.clients)
        features.push_back(hn_forward(phi_eff, s.hn_spec, cl.embedding.v, cl.group));

    SwapMatrixResult res;
    res.raw = Matrix(n, n);
    res.normalized = Matrix(n, n);
    res.degenerate_rows.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const TargetSpec& tspec = s.target_specs.at(s.clients[i].group);
        for (std::size_t j = 0; j < n; ++j) {
            const FlatParams model = combine(features[j], s.clients[i].personal_head);
            res.raw.at(i, j) = eval_accuracy(model, tspec, ds, part.clients[i].test);
        }
        double lo = res.raw.at(i, 0), hi = res.raw.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) {
            lo = std::min(lo, res.raw.at(i, j));
            hi = std::max(hi, res.raw.at(i, j));
        }
        if (hi == lo) {
            res.degenerate_rows[i] = true;  // constant row maps to zeros
        } else {
            for (std::size_t j = 0; j < n; ++j)
                res.normalized.at(i, j) = (res.raw.at(i, j) - lo) / (hi - lo);
        }
    }
    return res;
}

}  // namespace pfhn
