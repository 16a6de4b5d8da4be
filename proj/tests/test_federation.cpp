#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pfhn/errors.hpp"
#include "pfhn/federation.hpp"

using namespace pfhn;

namespace {
struct Fixture {
    Dataset ds;
    PartitionSpec part;
    TargetSpec tspec;
    Fixture(int classes = 4, std::size_t clients = 3, std::uint64_t seed = 1)
        : ds(synth_gaussian_mixture(classes, 6, 40, 0.4, Rng(seed))),
          part(partition_hetero(ds, clients, 2, 0.15, 0.15, Rng(seed + 1))),
          tspec{6, {8}, static_cast<std::size_t>(classes)} {}
};

ServerState make_server(const Fixture& f, bool pc, std::uint64_t seed,
                        std::vector<std::size_t> trunk = {7}) {
    ServerState s;
    s.pc_mode = pc;
    s.target_specs["g"] = f.tspec;
    s.hn_spec.embed_dim = 3;
    s.hn_spec.trunk_hidden_dims = std::move(trunk);
    s.hn_spec.groups.emplace_back("g", HyperNetSpec::heads_for_target(f.tspec, pc));
    s.phi = init_hypernet(s.hn_spec, seed);
    Rng embed = Rng(seed).stream("embeddings");
    Rng heads = Rng(seed).stream("head_init");
    for (std::size_t i = 0; i < f.part.clients.size(); ++i) {
        ClientState cl;
        cl.id = i;
        cl.group = "g";
        cl.embedding.v.resize(3);
        Rng r = embed.stream(i);
        for (double& x : cl.embedding.v) x = 0.1 * r.normal();
        if (pc) {
            const FlatParams full = init_mlp(f.tspec, heads.stream(i));
            const std::size_t n_feat = s.hn_spec.group_layout("g").size();
            FlatParams head;
            head.entries.assign(full.entries.begin() + n_feat, full.entries.end());
            cl.personal_head = std::move(head);
        }
        s.clients.push_back(std::move(cl));
    }
    return s;
}

bool bit_equal(const FlatParams& a, const FlatParams& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t e = 0; e < a.entries.size(); ++e)
        if (a.entries[e].second.data != b.entries[e].second.data) return false;
    return true;
}

TrainConfig quick_cfg() {
    TrainConfig cfg;
    cfg.local_steps = 3;
    cfg.batch_size = 8;
    cfg.lr_client = 0.05;
    cfg.lr_server = 0.02;
    cfg.seed = 11;
    return cfg;
}
}  // namespace

TEST_CASE("local_train: K=0 leaves theta untouched and delta zero") {
    Fixture f;
    const FlatParams theta = init_mlp(f.tspec, Rng(2));
    TrainConfig cfg = quick_cfg();
    cfg.local_steps = 0;
    const auto r = local_train(theta, std::nullopt, f.ds, f.part.clients[0].train, f.tspec, cfg,
                               cfg.lr_client, Rng(3));
    CHECK(bit_equal(r.theta_tilde, theta));
    CHECK(r.delta.norm() == 0.0);
}

TEST_CASE("local_train: zero learning rate gives zero delta regardless of K") {
    Fixture f;
    const FlatParams theta = init_mlp(f.tspec, Rng(4));
    TrainConfig cfg = quick_cfg();
    cfg.lr_client = 0.0;
    cfg.local_steps = 5;
    const auto r =
        local_train(theta, std::nullopt, f.ds, f.part.clients[0].train, f.tspec, cfg, 0.0, Rng(5));
    CHECK(r.delta.norm() == 0.0);
    CHECK(bit_equal(r.theta_tilde, theta));
}

TEST_CASE("local_train: one step equals a hand-composed SGD step on the same batch") {
    Fixture f;
    const FlatParams theta = init_mlp(f.tspec, Rng(6));
    TrainConfig cfg = quick_cfg();
    cfg.local_steps = 1;
    const auto& train_idx = f.part.clients[1].train;
    const auto r =
        local_train(theta, std::nullopt, f.ds, train_idx, f.tspec, cfg, cfg.lr_client, Rng(7));

    // replay the same index draws from an identical generator
    Rng mirror(7);
    Batch b;
    b.features = Matrix(cfg.batch_size, f.ds.features.cols);
    b.labels.resize(cfg.batch_size);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const std::size_t src = train_idx[mirror.uniform_int(train_idx.size())];
        for (std::size_t j = 0; j < f.ds.features.cols; ++j)
            b.features.at(i, j) = f.ds.features.at(src, j);
        b.labels[i] = f.ds.labels[src];
    }
    FlatParams expect = theta;
    ForwardCache cache;
    const Matrix logits = mlp_forward(expect, f.tspec, b.features, &cache);
    const auto [loss, grad_logits] = cross_entropy(logits, b.labels);
    sgd_step(expect, mlp_backward(cache, grad_logits, expect, f.tspec), cfg.lr_client);
    CHECK(bit_equal(r.theta_tilde, expect));
    CHECK(r.loss_pre == loss);
}

TEST_CASE("local_train: empty client is a configuration error") {
    Fixture f;
    const FlatParams theta = init_mlp(f.tspec, Rng(8));
    CHECK_THROWS_AS(local_train(theta, std::nullopt, f.ds, {}, f.tspec, quick_cfg(), 0.01, Rng(9)),
                    ValidationError);
}

TEST_CASE("pfedhn_round: zero local lr leaves phi and embeddings bit-identical") {
    Fixture f;
    ServerState s = make_server(f, false, 20);
    TrainConfig cfg = quick_cfg();
    cfg.lr_client = 0.0;
    const FlatParams phi_before = s.phi;
    const auto v_before = s.clients;
    pfedhn_round(s, f.ds, f.part, cfg, 0.0);
    CHECK(bit_equal(s.phi, phi_before));
    for (std::size_t i = 0; i < s.clients.size(); ++i)
        CHECK(s.clients[i].embedding.v == v_before[i].embedding.v);
}

TEST_CASE("pfedhn_round: equals the hand-composed forward/train/vjp/step sequence") {
    Fixture f;
    ServerState s = make_server(f, false, 21);
    const TrainConfig cfg = quick_cfg();

    // mirror the round's internal derivations before mutating the server
    const std::size_t i =
        Rng(cfg.seed).stream("client_sample").stream(0).uniform_int(s.clients.size());
    const std::vector<double> v = s.clients[i].embedding.v;
    const FlatParams theta = hn_forward(s.phi, s.hn_spec, v, "g");
    const auto local = local_train(theta, std::nullopt, f.ds, f.part.clients[i].train, f.tspec,
                                   cfg, cfg.lr_client, Rng(cfg.seed).stream("local").stream(0));
    FlatParams cot = local.delta;
    cot.scale(-1.0);
    const HnVjpResult vjp = hn_vjp(s.phi, s.hn_spec, v, cot, "g");
    FlatParams phi_expect = s.phi;
    phi_expect.axpy(-cfg.lr_server, vjp.g_phi);
    std::vector<double> v_expect = v;
    for (std::size_t j = 0; j < v.size(); ++j) v_expect[j] -= cfg.lr_server * vjp.g_v[j];

    const RoundMetrics m = pfedhn_round(s, f.ds, f.part, cfg, cfg.lr_client);
    CHECK(m.client_id == static_cast<long>(i));
    CHECK(bit_equal(s.phi, phi_expect));
    CHECK(s.clients[i].embedding.v == v_expect);
    CHECK(m.delta_norm == local.delta.norm());
}

TEST_CASE("pfedhn_round: fixed embeddings are never updated") {
    Fixture f;
    ServerState s = make_server(f, false, 22);
    for (auto& cl : s.clients) cl.embedding.trainable = false;
    const auto before = s.clients;
    pfedhn_round(s, f.ds, f.part, quick_cfg(), 0.05);
    for (std::size_t i = 0; i < s.clients.size(); ++i)
        CHECK(s.clients[i].embedding.v == before[i].embedding.v);
}

TEST_CASE("pfedhn_round: client sampling is near-uniform over 10000 rounds") {
    Fixture f(4, 10, 30);
    ServerState s = make_server(f, false, 23);
    TrainConfig cfg = quick_cfg();
    cfg.local_steps = 0;  // sampling statistics only
    std::vector<std::size_t> counts(10, 0);
    for (std::size_t r = 0; r < 10000; ++r) {
        const RoundMetrics m = pfedhn_round(s, f.ds, f.part, cfg, 0.0);
        ++counts[static_cast<std::size_t>(m.client_id)];
    }
    for (std::size_t c : counts) CHECK(c >= 800);
}

TEST_CASE("pfedhn_pc_round: zero head lr freezes omega while phi still moves") {
    Fixture f;
    ServerState s = make_server(f, true, 24);
    const FlatParams phi_before = s.phi;
    const auto heads_before = s.clients;
    const RoundMetrics m = pfedhn_pc_round(s, f.ds, f.part, quick_cfg(), 0.0);
    CHECK(!bit_equal(s.phi, phi_before));
    const auto idx = static_cast<std::size_t>(m.client_id);
    CHECK(bit_equal(*s.clients[idx].personal_head, *heads_before[idx].personal_head));
}

TEST_CASE("pfedhn_pc: composed model equals a monolithic MLP on concatenated params") {
    Fixture f;
    ServerState s = make_server(f, true, 25);
    const FlatParams theta = hn_forward(s.phi, s.hn_spec, s.clients[0].embedding.v, "g");
    FlatParams full = theta;
    for (const auto& e : s.clients[0].personal_head->entries) full.entries.push_back(e);
    const Matrix x = f.ds.features;
    const Matrix composed = mlp_forward(full, f.tspec, x);
    const FlatParams mono = [&] {
        FlatParams m = init_mlp(f.tspec, Rng(1));
        for (std::size_t e = 0; e < m.entries.size(); ++e)
            m.entries[e].second = full.entries[e].second;
        return m;
    }();
    const Matrix direct = mlp_forward(mono, f.tspec, x);
    CHECK(composed.data == direct.data);
}

TEST_CASE("pfedhn_pc: hypernetwork layout excludes the classifier layer") {
    Fixture f;
    ServerState s = make_server(f, true, 26);
    const std::string last = "layer" + std::to_string(f.tspec.layer_count() - 1);
    for (const auto& [name, m] : s.phi.entries) {
        CHECK(name.find(last + ".weight") == std::string::npos);
        CHECK(name.find(last + ".bias") == std::string::npos);
    }
    const auto& layout = s.hn_spec.group_layout("g");
    CHECK(layout.size() == 2 * (f.tspec.layer_count() - 1));
}

TEST_CASE("fedavg_round: zero lr keeps the global model fixed") {
    Fixture f;
    TrainConfig cfg = quick_cfg();
    cfg.lr_client = 0.0;
    FlatParams global = init_mlp(f.tspec, Rng(27));
    const FlatParams before = global;
    fedavg_round(global, f.tspec, f.ds, f.part, 2, true, cfg, 0);
    // averaging identical models is exact up to the weighted-mean rounding
    for (std::size_t e = 0; e < global.entries.size(); ++e)
        for (std::size_t i = 0; i < global.entries[e].second.data.size(); ++i)
            CHECK(global.entries[e].second.data[i] ==
                  doctest::Approx(before.entries[e].second.data[i]).epsilon(1e-14));
}

TEST_CASE("fedavg_round: weighted average matches a manual recomputation") {
    Fixture f;
    const TrainConfig cfg = quick_cfg();
    FlatParams global = init_mlp(f.tspec, Rng(28));
    const FlatParams init = global;
    fedavg_round(global, f.tspec, f.ds, f.part, 3, true, cfg, 4);

    // replay the sampling (partial shuffle, then sort) and the local runs
    Rng sample = Rng(cfg.seed).stream("fedavg_sample").stream(4);
    std::vector<std::size_t> ids = {0, 1, 2};
    for (std::size_t k = 0; k < 3; ++k) std::swap(ids[k], ids[k + sample.uniform_int(3 - k)]);
    std::sort(ids.begin(), ids.end());
    FlatParams avg = FlatParams::zeros_like(init);
    double total = 0.0;
    for (std::size_t id : ids) {
        const auto local =
            local_train(init, std::nullopt, f.ds, f.part.clients[id].train, f.tspec, cfg,
                        cfg.lr_client, Rng(cfg.seed).stream("fedavg_local").stream(4).stream(id));
        const double w = static_cast<double>(f.part.clients[id].train.size());
        avg.axpy(w, local.theta_tilde);
        total += w;
    }
    avg.scale(1.0 / total);
    for (std::size_t e = 0; e < avg.entries.size(); ++e)
        for (std::size_t i = 0; i < avg.entries[e].second.data.size(); ++i)
            CHECK(global.entries[e].second.data[i] ==
                  doctest::Approx(avg.entries[e].second.data[i]).epsilon(1e-12));
}

TEST_CASE("fedavg_round: clients_per_round out of range is an error") {
    Fixture f;
    FlatParams global = init_mlp(f.tspec, Rng(29));
    CHECK_THROWS_AS(fedavg_round(global, f.tspec, f.ds, f.part, 4, true, quick_cfg(), 0),
                    ValidationError);
}

TEST_CASE("local_baseline: zero steps returns the per-client init") {
    Fixture f;
    const auto results = local_baseline(f.tspec, f.ds, f.part, 0, quick_cfg());
    const FlatParams init =
        init_mlp(f.tspec, Rng(quick_cfg().seed).stream("local_baseline").stream("init"));
    for (const auto& r : results) CHECK(bit_equal(r.theta_tilde, init));
}

TEST_CASE("local_baseline: training reduces loss on separable data") {
    Fixture f;
    TrainConfig cfg = quick_cfg();
    cfg.batch_size = 16;
    const auto results = local_baseline(f.tspec, f.ds, f.part, 300, cfg);
    for (const auto& r : results) CHECK(r.loss_post < r.loss_pre);
}

TEST_CASE("federated_accuracy: clients weigh equally regardless of split size") {
    // one fixed model that always predicts class 0
    TargetSpec spec{2, {}, 2};
    FlatParams model = init_mlp(spec, Rng(30));
    for (auto& [name, m] : model.entries) std::fill(m.data.begin(), m.data.end(), 0.0);
    model.find("layer0.bias")->at(0, 0) = 1.0;

    Dataset ds;
    ds.class_count = 2;
    ds.features = Matrix(1010, 2);
    ds.labels.assign(1010, 1);
    for (int i = 0; i < 10; ++i) ds.labels[i] = 0;

    PartitionSpec part;
    ClientSplit a, b;
    for (std::size_t i = 0; i < 10; ++i) a.test.push_back(i);       // all label 0 -> acc 1
    for (std::size_t i = 10; i < 1010; ++i) b.test.push_back(i);    // all label 1 -> acc 0
    a.train = a.test;
    b.train = b.test;
    part.clients = {a, b};
    const double acc = federated_accuracy({model, model}, spec, ds, part, Split::test);
    CHECK(acc == 0.5);
}

TEST_CASE("federated_accuracy: matches a brute-force recount") {
    Fixture f;
    ServerState s = make_server(f, false, 31);
    const double fed = federated_accuracy(s, f.ds, f.part, Split::test);
    double manual = 0.0;
    for (std::size_t i = 0; i < s.clients.size(); ++i) {
        const FlatParams model = client_model(s, i);
        const auto& idx = f.part.clients[i].test;
        Matrix x(idx.size(), f.ds.features.cols);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < x.cols; ++c) x.at(r, c) = f.ds.features.at(idx[r], c);
        const auto preds = predict(mlp_forward(model, f.tspec, x));
        std::size_t correct = 0;
        for (std::size_t r = 0; r < idx.size(); ++r)
            if (preds[r] == f.ds.labels[idx[r]]) ++correct;
        manual += static_cast<double>(correct) / static_cast<double>(idx.size());
    }
    CHECK(fed == doctest::Approx(manual / 3.0).epsilon(1e-15));
}

TEST_CASE("adapt_novel_client: phi is bitwise frozen; steps=0 keeps the init embedding") {
    Fixture f(4, 4, 40);
    ServerState s = make_server(f, false, 41);
    TrainConfig cfg = quick_cfg();
    for (int r = 0; r < 5; ++r) pfedhn_round(s, f.ds, f.part, cfg, cfg.lr_client);
    const FlatParams phi_before = s.phi;

    const AdaptResult zero =
        adapt_novel_client(s, f.ds, f.part.clients[3], "g", 0, cfg, cfg.lr_client);
    CHECK(zero.accuracy_trace.size() == 1);
    Rng mirror = Rng(cfg.seed).stream("novel_adapt").stream("embed");
    for (double x : zero.v_new.v) CHECK(x == 0.1 * mirror.normal());

    const AdaptResult adapted =
        adapt_novel_client(s, f.ds, f.part.clients[3], "g", 8, cfg, cfg.lr_client);
    CHECK(adapted.accuracy_trace.size() == 9);
    CHECK(bit_equal(s.phi, phi_before));
    CHECK(zero.v_new.v != adapted.v_new.v);
}

TEST_CASE("swap_matrix: non-degenerate rows span [0,1]; raw values match recount") {
    Fixture f(4, 3, 50);
    ServerState s = make_server(f, true, 51);
    TrainConfig cfg = quick_cfg();
    cfg.local_steps = 10;
    for (int r = 0; r < 30; ++r) pfedhn_pc_round(s, f.ds, f.part, cfg, cfg.lr_client);
    const SwapMatrixResult res = swap_matrix(s, f.ds, f.part);
    REQUIRE(res.raw.rows == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        if (res.degenerate_rows[i]) {
            for (std::size_t j = 0; j < 3; ++j) CHECK(res.normalized.at(i, j) == 0.0);
            continue;
        }
        double lo = 2.0, hi = -1.0;
        for (std::size_t j = 0; j < 3; ++j) {
            lo = std::min(lo, res.normalized.at(i, j));
            hi = std::max(hi, res.normalized.at(i, j));
        }
        CHECK(lo == 0.0);
        CHECK(hi == 1.0);
    }
    // recount raw accuracies by direct evaluation
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            FlatParams model = hn_forward(s.phi, s.hn_spec, s.clients[j].embedding.v, "g");
            for (const auto& e : s.clients[i].personal_head->entries) model.entries.push_back(e);
            const double acc = eval_accuracy(model, f.tspec, f.ds, f.part.clients[i].test);
            CHECK(res.raw.at(i, j) == acc);
        }
}

TEST_CASE("swap_matrix: single client yields a flagged degenerate 1x1 row") {
    Fixture f(2, 1, 52);
    ServerState s = make_server(f, true, 53);
    const SwapMatrixResult res = swap_matrix(s, f.ds, f.part);
    CHECK(res.raw.rows == 1);
    CHECK(res.degenerate_rows[0]);
    CHECK(res.normalized.at(0, 0) == 0.0);
}

TEST_CASE("swap_matrix: requires PC mode") {
    Fixture f;
    ServerState s = make_server(f, false, 54);
    CHECK_THROWS_AS(swap_matrix(s, f.ds, f.part), ValidationError);
}

TEST_CASE("communication decoupling: bytes per round ignore trunk width") {
    Fixture f;
    ServerState narrow = make_server(f, false, 60, {8});
    ServerState wide = make_server(f, false, 60, {128});
    CHECK(wide.phi.total_size() > 4 * narrow.phi.total_size());
    const TrainConfig cfg = quick_cfg();
    const RoundMetrics m1 = pfedhn_round(narrow, f.ds, f.part, cfg, cfg.lr_client);
    const RoundMetrics m2 = pfedhn_round(wide, f.ds, f.part, cfg, cfg.lr_client);
    CHECK(m1.bytes_up == m2.bytes_up);
    CHECK(m1.bytes_down == m2.bytes_down);
    CHECK(m1.bytes_up == mlp_param_count(f.tspec) * sizeof(double));
}

TEST_CASE("baseline consistency: identity linear head with alpha=1 reproduces theta_tilde") {
    Fixture f(2, 1, 70);
    const std::size_t n_theta = mlp_param_count(f.tspec);

    ServerState s;
    s.target_specs["g"] = f.tspec;
    s.hn_spec.embed_dim = n_theta;
    s.hn_spec.linear_mode = true;
    s.hn_spec.groups.emplace_back("g", HyperNetSpec::heads_for_target(f.tspec, false));
    s.phi = init_hypernet(s.hn_spec, 71);
    // identity selection: head for tensor t picks out its slice of v
    std::size_t offset = 0;
    for (auto& [name, m] : s.phi.entries) {
        std::fill(m.data.begin(), m.data.end(), 0.0);
        for (std::size_t j = 0; j < m.cols; ++j) m.at(offset + j, j) = 1.0;
        offset += m.cols;
    }
    ClientState cl;
    cl.id = 0;
    cl.group = "g";
    cl.embedding.v = init_mlp(f.tspec, Rng(72)).flatten();
    s.clients.push_back(cl);

    TrainConfig cfg = quick_cfg();
    cfg.lr_server = 1.0;

    // theta equals v through the identity head; train a mirror copy locally
    FlatParams theta = hn_forward(s.phi, s.hn_spec, cl.embedding.v, "g");
    CHECK(theta.flatten() == cl.embedding.v);
    const auto local = local_train(theta, std::nullopt, f.ds, f.part.clients[0].train, f.tspec,
                                   cfg, cfg.lr_client, Rng(cfg.seed).stream("local").stream(0));

    pfedhn_round(s, f.ds, f.part, cfg, cfg.lr_client);
    const std::vector<double> tilde = local.theta_tilde.flatten();
    for (std::size_t j = 0; j < n_theta; ++j)
        CHECK(s.clients[0].embedding.v[j] == doctest::Approx(tilde[j]).epsilon(1e-12));
}

TEST_CASE("engine determinism: two identical runs give identical metrics") {
    Fixture f;
    auto run = [&] {
        ServerState s = make_server(f, false, 80);
        std::vector<RoundMetrics> hist;
        for (int r = 0; r < 10; ++r) hist.push_back(pfedhn_round(s, f.ds, f.part, quick_cfg(), 0.05));
        return std::make_pair(std::move(s), std::move(hist));
    };
    const auto [s1, h1] = run();
    const auto [s2, h2] = run();
    CHECK(bit_equal(s1.phi, s2.phi));
    for (std::size_t r = 0; r < h1.size(); ++r) {
        CHECK(h1[r].client_id == h2[r].client_id);
        CHECK(h1[r].loss_pre == h2[r].loss_pre);
        CHECK(h1[r].loss_post == h2[r].loss_post);
        CHECK(h1[r].delta_norm == h2[r].delta_norm);
    }
}
