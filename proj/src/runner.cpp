#include "pfhn/runner.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "pfhn/errors.hpp"
#include "pfhn/linear_lab.hpp"

namespace pfhn {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset == "idx") return load_idx(cfg.idx_images, cfg.idx_labels);
    return synth_gaussian_mixture(cfg.synth_classes, cfg.synth_dim, cfg.synth_per_class,
                                  cfg.synth_spread, Rng(cfg.seed).stream("dataset"));
}

PartitionSpec build_partition(const ExperimentConfig& cfg, const Dataset& ds) {
    Rng rng = Rng(cfg.seed).stream("partition");
    if (cfg.partition == "dirichlet")
        return partition_dirichlet(ds, cfg.n_clients, cfg.dirichlet_alpha, cfg.val_frac,
                                   cfg.test_frac, rng);
    return partition_hetero(ds, cfg.n_clients, cfg.classes_per_client, cfg.val_frac,
                            cfg.test_frac, rng);
}

ServerState build_server(const ExperimentConfig& cfg, const Dataset& ds,
                         const PartitionSpec& part) {
    ServerState s;
    s.pc_mode = cfg.mode == Mode::pfedhn_pc;
    s.spectral_norm = cfg.spectral_norm;
    s.power_iters = cfg.power_iters;

    s.hn_spec.embed_dim = cfg.effective_embed_dim(ds.class_count);
    s.hn_spec.trunk_hidden_dims = cfg.trunk_hidden;
    s.hn_spec.linear_mode = cfg.linear_mode;
    for (const auto& g : cfg.groups) {
        TargetSpec tspec;
        tspec.input_dim = ds.features.cols;
        tspec.hidden_dims = cfg.target_hidden.at(g);
        tspec.output_dim = static_cast<std::size_t>(ds.class_count);
        tspec.validate();
        if (s.pc_mode && tspec.hidden_dims.empty())
            throw ValidationError("PC mode needs at least one hidden layer for the extractor");
        s.target_specs[g] = tspec;
        s.hn_spec.groups.emplace_back(g, HyperNetSpec::heads_for_target(tspec, s.pc_mode));
    }
    s.phi = init_hypernet(s.hn_spec, cfg.seed);

    Rng embed_rng = Rng(cfg.seed).stream("embeddings");
    Rng head_rng = Rng(cfg.seed).stream("head_init");
    s.clients.resize(cfg.n_clients);
    for (std::size_t i = 0; i < cfg.n_clients; ++i) {
        ClientState& cl = s.clients[i];
        cl.id = i;
        cl.group = cfg.group_of_client(i);
        if (cfg.fixed_embeddings) {
            cl.embedding.v = part.clients.at(i).class_props;
            cl.embedding.trainable = false;
        } else {
            cl.embedding.v.resize(s.hn_spec.embed_dim);
            Rng r = embed_rng.stream(i);
            for (double& x : cl.embedding.v) x = 0.1 * r.normal();
        }
        if (s.pc_mode) {
            const TargetSpec& tspec = s.target_specs.at(cl.group);
            const FlatParams full = init_mlp(tspec, head_rng.stream(i));
            const std::size_t n_feat = s.hn_spec.group_layout(cl.group).size();
            FlatParams head;
            head.entries.assign(full.entries.begin() + n_feat, full.entries.end());
            cl.personal_head = std::move(head);
        }
    }
    return s;
}

namespace {
struct BestSnapshot {
    bool valid = false;
    double val_acc = -1.0;
    std::size_t round = 0;
    FlatParams phi;
    std::vector<ClientState> clients;
};

void run_hypernet_engine(const ExperimentConfig& cfg, const Dataset& ds, const PartitionSpec& part,
                         ExperimentResult& res) {
    ServerState& s = res.server;
    BestSnapshot best;
    for (std::size_t r = 0; r < cfg.train.rounds; ++r) {
        RoundMetrics m = s.pc_mode
                             ? pfedhn_pc_round(s, ds, part, cfg.train, cfg.effective_lr_head())
                             : pfedhn_round(s, ds, part, cfg.train, cfg.effective_lr_head());
        const bool snapshot = (r + 1) % cfg.snapshot_every == 0 || r + 1 == cfg.train.rounds;
        if (snapshot) {
            const double val = federated_accuracy(s, ds, part, Split::val);
            m.fed_acc = federated_accuracy(s, ds, part, Split::test);
            if (val > best.val_acc) {
                best = {true, val, r + 1, s.phi, s.clients};
            }
        }
        res.history.push_back(std::move(m));
    }
    if (cfg.early_stopping && best.valid) {
        s.phi = std::move(best.phi);
        s.clients = std::move(best.clients);
        res.best_val_acc = best.val_acc;
        res.best_round = best.round;
    }
    res.final_val_acc = federated_accuracy(s, ds, part, Split::val);
    res.final_test_acc = federated_accuracy(s, ds, part, Split::test);
    for (std::size_t i = 0; i < s.clients.size(); ++i)
        res.per_client_test_acc.push_back(eval_accuracy(
            client_model(s, i), s.target_specs.at(s.clients[i].group), ds, part.clients[i].test));
}
}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& ds,
                                const PartitionSpec& part) {
    ExperimentResult res;
    switch (cfg.mode) {
        case Mode::pfedhn:
        case Mode::pfedhn_pc: {
            res.server = build_server(cfg, ds, part);
            run_hypernet_engine(cfg, ds, part, res);
            break;
        }
        case Mode::novel_adapt: {
            if (cfg.groups.size() != 1)
                throw ValidationError("novel_adapt supports a single size group");
            // hold out the last client; train the hypernetwork on the rest
            ExperimentConfig train_cfg = cfg;
            train_cfg.mode = Mode::pfedhn;
            train_cfg.n_clients = cfg.n_clients - 1;
            PartitionSpec train_part = part;
            const ClientSplit novel = train_part.clients.back();
            train_part.clients.pop_back();
            res.server = build_server(train_cfg, ds, train_part);
            run_hypernet_engine(train_cfg, ds, train_part, res);
            const AdaptResult adapted =
                adapt_novel_client(res.server, ds, novel, cfg.groups[0], cfg.adapt_steps,
                                   cfg.train, cfg.effective_lr_head());
            res.novel_accuracy_trace = adapted.accuracy_trace;
            const auto [tv, nearest] = nearest_train_tv(novel.class_props, train_part);
            res.novel_tv_distance = tv;
            res.novel_nearest_client = nearest;
            break;
        }
        case Mode::fedavg: {
            if (cfg.groups.size() != 1)
                throw ValidationError("fedavg requires a single shared target architecture");
            TargetSpec spec;
            spec.input_dim = ds.features.cols;
            spec.hidden_dims = cfg.target_hidden.at(cfg.groups[0]);
            spec.output_dim = static_cast<std::size_t>(ds.class_count);
            res.global_model = init_mlp(spec, Rng(cfg.seed).stream("global_init"));
            FlatParams best_model = res.global_model;
            double best_val = -1.0;
            for (std::size_t r = 0; r < cfg.train.rounds; ++r) {
                RoundMetrics m =
                    fedavg_round(res.global_model, spec, ds, part, cfg.fedavg_clients_per_round,
                                 cfg.fedavg_weighted, cfg.train, r);
                const bool snapshot =
                    (r + 1) % cfg.snapshot_every == 0 || r + 1 == cfg.train.rounds;
                if (snapshot) {
                    double val = 0.0, test = 0.0;
                    for (const auto& cl : part.clients) {
                        val += eval_accuracy(res.global_model, spec, ds, cl.val);
                        test += eval_accuracy(res.global_model, spec, ds, cl.test);
                    }
                    val /= static_cast<double>(part.clients.size());
                    test /= static_cast<double>(part.clients.size());
                    m.fed_acc = test;
                    if (val > best_val) {
                        best_val = val;
                        best_model = res.global_model;
                        res.best_round = r + 1;
                    }
                }
                res.history.push_back(std::move(m));
            }
            if (cfg.early_stopping && best_val >= 0.0) {
                res.global_model = best_model;
                res.best_val_acc = best_val;
            }
            double val = 0.0, test = 0.0;
            for (const auto& cl : part.clients) {
                val += eval_accuracy(res.global_model, spec, ds, cl.val);
                const double t = eval_accuracy(res.global_model, spec, ds, cl.test);
                test += t;
                res.per_client_test_acc.push_back(t);
            }
            res.final_val_acc = val / static_cast<double>(part.clients.size());
            res.final_test_acc = test / static_cast<double>(part.clients.size());
            break;
        }
        case Mode::local: {
            if (cfg.groups.size() != 1)
                throw ValidationError("local baseline requires a single target architecture");
            TargetSpec spec;
            spec.input_dim = ds.features.cols;
            spec.hidden_dims = cfg.target_hidden.at(cfg.groups[0]);
            spec.output_dim = static_cast<std::size_t>(ds.class_count);
            auto trained = local_baseline(spec, ds, part, cfg.local_steps_budget, cfg.train);
            double val = 0.0, test = 0.0;
            for (std::size_t i = 0; i < trained.size(); ++i) {
                RoundMetrics m;
                m.round = i;
                m.client_id = static_cast<long>(i);
                m.loss_pre = trained[i].loss_pre;
                m.loss_post = trained[i].loss_post;
                m.delta_norm = trained[i].delta.norm();
                res.history.push_back(m);
                val += eval_accuracy(trained[i].theta_tilde, spec, ds, part.clients[i].val);
                const double t =
                    eval_accuracy(trained[i].theta_tilde, spec, ds, part.clients[i].test);
                test += t;
                res.per_client_test_acc.push_back(t);
                res.local_models.push_back(std::move(trained[i].theta_tilde));
            }
            res.final_val_acc = val / static_cast<double>(trained.size());
            res.final_test_acc = test / static_cast<double>(trained.size());
            if (!res.history.empty()) res.history.back().fed_acc = res.final_test_acc;
            break;
        }
        default:
            throw ValidationError("run_experiment: mode has no training engine");
    }
    return res;
}

std::string metrics_csv(const std::vector<RoundMetrics>& history) {
    std::string out =
        "round,client_id,local_loss_pre,local_loss_post,delta_norm,fed_acc,bytes_up,bytes_down\n";
    for (const auto& m : history) {
        out += std::to_string(m.round) + "," + std::to_string(m.client_id) + "," +
               fmt_g17(m.loss_pre) + "," + fmt_g17(m.loss_post) + "," + fmt_g17(m.delta_norm) +
               "," + (m.fed_acc ? fmt_g17(*m.fed_acc) : std::string{}) + "," +
               std::to_string(m.bytes_up) + "," + std::to_string(m.bytes_down) + "\n";
    }
    return out;
}

std::string export_embeddings(const ServerState& s) {
    std::string out = "client_id,group";
    for (std::size_t j = 0; j < s.hn_spec.embed_dim; ++j) out += ",v" + std::to_string(j);
    out += "\n";
    for (const auto& cl : s.clients) {
        out += std::to_string(cl.id) + "," + cl.group;
        for (double x : cl.embedding.v) out += "," + fmt_g17(x);
        out += "\n";
    }
    return out;
}

void save_server_checkpoint(const std::string& path, const ServerState& s) {
    FlatParams fp;
    Matrix meta(1, 1);
    meta.at(0, 0) = static_cast<double>(s.round);
    fp.entries.emplace_back("meta.round", std::move(meta));
    for (const auto& [name, m] : s.phi.entries) fp.entries.emplace_back("phi." + name, m);
    for (const auto& cl : s.clients) {
        const std::string prefix = "client" + std::to_string(cl.id);
        Matrix e(1, cl.embedding.v.size());
        e.data = cl.embedding.v;
        fp.entries.emplace_back(prefix + ".embedding", std::move(e));
        if (cl.personal_head)
            for (const auto& [name, m] : cl.personal_head->entries)
                fp.entries.emplace_back(prefix + ".head." + name, m);
    }
    save_flat_params(path, fp);
}

void load_server_checkpoint(const std::string& path, ServerState& s) {
    const FlatParams fp = load_flat_params(path);
    const Matrix* meta = fp.find("meta.round");
    if (!meta) throw ParseError("checkpoint missing meta.round: " + path);
    s.round = static_cast<std::size_t>(meta->at(0, 0));
    for (auto& [name, m] : s.phi.entries) {
        const Matrix* src = fp.find("phi." + name);
        if (!src || !src->same_shape(m))
            throw ParseError("checkpoint tensor mismatch at phi." + name + ": " + path);
        m = *src;
    }
    for (auto& cl : s.clients) {
        const std::string prefix = "client" + std::to_string(cl.id);
        const Matrix* e = fp.find(prefix + ".embedding");
        if (!e || e->size() != cl.embedding.v.size())
            throw ParseError("checkpoint embedding mismatch for " + prefix + ": " + path);
        cl.embedding.v = e->data;
        if (cl.personal_head)
            for (auto& [name, m] : cl.personal_head->entries) {
                const Matrix* src = fp.find(prefix + ".head." + name);
                if (!src || !src->same_shape(m))
                    throw ParseError("checkpoint head mismatch for " + prefix + ": " + path);
                m = *src;
            }
    }
}

namespace {
void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw ParseError("cannot write: " + path.string());
}

int dispatch_linlab(const ExperimentConfig& cfg) {
    json reports = json::array();
    bool all_pass = true;
    for (std::size_t i = 0; i < cfg.linlab_seeds; ++i) {
        const std::uint64_t seed = cfg.seed + i;
        const auto inst = make_orthonormal_problem(cfg.linlab_d, cfg.linlab_m, cfg.linlab_n,
                                                   cfg.linlab_noise, Rng(seed));
        const Prop1Report rep = prop1_equivalence_report(inst.problems, cfg.linlab_k, 200, seed);
        all_pass = all_pass && rep.pass;
        reports.push_back(json::parse(prop1_report_json(rep)));
    }
    fs::create_directories(cfg.out_dir);
    json out = {{"pass", all_pass},
                {"k", cfg.linlab_k},
                {"n", cfg.linlab_n},
                {"d", cfg.linlab_d},
                {"m", cfg.linlab_m},
                {"noise", cfg.linlab_noise},
                {"reports", reports}};
    write_file(fs::path(cfg.out_dir) / "linlab_report.json", out.dump(2) + "\n");
    return all_pass ? 0 : 1;
}

json summary_json(const ExperimentConfig& cfg, const ExperimentResult& res) {
    json j = {{"mode", mode_name(cfg.mode)},
              {"seed", cfg.seed},
              {"rounds", cfg.train.rounds},
              {"final_val_accuracy", res.final_val_acc},
              {"final_test_accuracy", res.final_test_acc},
              {"best_val_accuracy", res.best_val_acc},
              {"best_round", res.best_round},
              {"per_client_test_accuracy", res.per_client_test_acc}};
    if (cfg.mode == Mode::novel_adapt) {
        j["novel_accuracy_trace"] = res.novel_accuracy_trace;
        j["novel_tv_distance"] = res.novel_tv_distance;
        j["novel_nearest_client"] = res.novel_nearest_client;
    }
    std::size_t bytes_up = 0, bytes_down = 0;
    for (const auto& m : res.history) {
        bytes_up += m.bytes_up;
        bytes_down += m.bytes_down;
    }
    j["total_bytes_up"] = bytes_up;
    j["total_bytes_down"] = bytes_down;
    return j;
}
}  // namespace

int dispatch(const ParseResult& parsed, const std::string& action) {
    if (!parsed.config) {
        for (const auto& e : parsed.errors) std::cerr << "config error: " << e << "\n";
        return 2;
    }
    ExperimentConfig cfg = *parsed.config;
    if (action == "adapt") cfg.mode = Mode::novel_adapt;
    if (cfg.out_dir.empty()) {
        const char* root = std::getenv("PFHN_OUT_ROOT");
        cfg.out_dir = std::string(root ? root : "out") + "/" + mode_name(cfg.mode);
    }
    if (action == "linlab" || cfg.mode == Mode::linlab) return dispatch_linlab(cfg);

    try {
        const Dataset ds = build_dataset(cfg);
        const PartitionSpec part = build_partition(cfg, ds);
        const fs::path out_dir(cfg.out_dir);
        fs::create_directories(out_dir);
        write_file(out_dir / "partition.json", partition_to_json(part) + "\n");

        if (action == "eval" || action == "swap" || action == "export-embeddings") {
            if (cfg.checkpoint.empty())
                throw ValidationError("action '" + action + "' requires key 'checkpoint'");
            ServerState s = build_server(cfg, ds, part);
            load_server_checkpoint(cfg.checkpoint, s);
            if (action == "eval") {
                json j = {{"val_accuracy", federated_accuracy(s, ds, part, Split::val)},
                          {"test_accuracy", federated_accuracy(s, ds, part, Split::test)}};
                write_file(out_dir / "eval.json", j.dump(2) + "\n");
            } else if (action == "swap") {
                const SwapMatrixResult sm = swap_matrix(s, ds, part);
                json j = {{"degenerate_rows", sm.degenerate_rows}};
                for (std::size_t i = 0; i < sm.raw.rows; ++i) {
                    json raw_row = json::array(), norm_row = json::array();
                    for (std::size_t col = 0; col < sm.raw.cols; ++col) {
                        raw_row.push_back(sm.raw.at(i, col));
                        norm_row.push_back(sm.normalized.at(i, col));
                    }
                    j["raw"].push_back(raw_row);
                    j["normalized"].push_back(norm_row);
                }
                write_file(out_dir / "swap.json", j.dump(2) + "\n");
            } else {
                write_file(out_dir / "embeddings.csv", export_embeddings(s));
            }
            return 0;
        }

        const ExperimentResult res = run_experiment(cfg, ds, part);
        write_file(out_dir / "metrics.csv", metrics_csv(res.history));
        write_file(out_dir / "summary.json", summary_json(cfg, res).dump(2) + "\n");
        if (cfg.mode == Mode::pfedhn || cfg.mode == Mode::pfedhn_pc ||
            cfg.mode == Mode::novel_adapt) {
            save_server_checkpoint((out_dir / "checkpoint.bin").string(), res.server);
            write_file(out_dir / "embeddings.csv", export_embeddings(res.server));
        } else if (cfg.mode == Mode::fedavg) {
            save_flat_params((out_dir / "checkpoint.bin").string(), res.global_model);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace pfhn
