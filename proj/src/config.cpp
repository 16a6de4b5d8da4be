#include "pfhn/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "pfhn/errors.hpp"
#include "pfhn/hypernet.hpp"

namespace pfhn {

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::pfedhn: return "pfedhn";
        case Mode::pfedhn_pc: return "pfedhn_pc";
        case Mode::fedavg: return "fedavg";
        case Mode::local: return "local";
        case Mode::novel_adapt: return "novel_adapt";
        default: return "linlab";
    }
}

std::size_t ExperimentConfig::effective_embed_dim(int class_count) const {
    if (fixed_embeddings) return static_cast<std::size_t>(class_count);
    return embed_dim > 0 ? embed_dim : default_embed_dim(n_clients);
}

std::string ExperimentConfig::group_of_client(std::size_t client_id) const {
    // contiguous near-equal blocks in id order
    return groups[client_id * groups.size() / n_clients];
}

namespace {
std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Typed accessors over the raw key/value map, accumulating errors instead of
// throwing so a single pass reports every problem.
class KeyReader {
public:
    KeyReader(const std::vector<std::pair<std::string, std::string>>& pairs,
              std::vector<std::string>& errors)
        : errors_(errors) {
        for (const auto& [k, v] : pairs) map_[k] = v;  // later entries win
    }

    bool has(const std::string& key) {
        used_.insert(key);
        return map_.count(key) > 0;
    }

    std::string str(const std::string& key, const std::string& def) {
        used_.insert(key);
        auto it = map_.find(key);
        return it == map_.end() ? def : it->second;
    }

    template <typename T>
    T num(const std::string& key, T def) {
        used_.insert(key);
        auto it = map_.find(key);
        if (it == map_.end()) return def;
        std::istringstream ss(it->second);
        T v{};
        ss >> v;
        if (ss.fail() || !(ss >> std::ws).eof()) {
            errors_.push_back("key '" + key + "': cannot parse '" + it->second + "' as a number");
            return def;
        }
        return v;
    }

    bool flag(const std::string& key, bool def) {
        used_.insert(key);
        auto it = map_.find(key);
        if (it == map_.end()) return def;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        errors_.push_back("key '" + key + "': expected a boolean, got '" + v + "'");
        return def;
    }

    std::vector<std::size_t> size_list(const std::string& key, std::vector<std::size_t> def) {
        used_.insert(key);
        auto it = map_.find(key);
        if (it == map_.end()) return def;
        std::vector<std::size_t> out;
        if (trim(it->second).empty()) return out;
        std::istringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            std::istringstream ts(trim(tok));
            std::size_t v = 0;
            ts >> v;
            if (ts.fail() || !(ts >> std::ws).eof()) {
                errors_.push_back("key '" + key + "': bad list entry '" + tok + "'");
                return def;
            }
            out.push_back(v);
        }
        return out;
    }

    std::vector<std::string> str_list(const std::string& key, std::vector<std::string> def) {
        used_.insert(key);
        auto it = map_.find(key);
        if (it == map_.end()) return def;
        std::vector<std::string> out;
        std::istringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (!tok.empty()) out.push_back(tok);
        }
        return out;
    }

    void report_unknown() {
        for (const auto& [k, v] : map_)
            if (!used_.count(k)) errors_.push_back("unknown key '" + k + "'");
    }

private:
    std::map<std::string, std::string> map_;
    std::set<std::string> used_;
    std::vector<std::string>& errors_;
};
}  // namespace

ParseResult parse_config_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
    ParseResult res;
    KeyReader r(pairs, res.errors);
    ExperimentConfig c;

    const std::string mode = r.str("mode", "pfedhn");
    if (mode == "pfedhn")
        c.mode = Mode::pfedhn;
    else if (mode == "pfedhn_pc")
        c.mode = Mode::pfedhn_pc;
    else if (mode == "fedavg")
        c.mode = Mode::fedavg;
    else if (mode == "local")
        c.mode = Mode::local;
    else if (mode == "novel_adapt")
        c.mode = Mode::novel_adapt;
    else if (mode == "linlab")
        c.mode = Mode::linlab;
    else
        res.errors.push_back("key 'mode': unknown mode '" + mode + "'");

    c.seed = r.num<std::uint64_t>("seed", 1);
    // empty -> dispatch derives <PFHN_OUT_ROOT or out>/<mode> once the final
    // mode is known (the adapt subcommand overrides the configured mode)
    c.out_dir = r.str("out_dir", "");

    c.dataset = r.str("dataset", "synthetic");
    if (c.dataset != "synthetic" && c.dataset != "idx")
        res.errors.push_back("key 'dataset': must be 'synthetic' or 'idx'");
    c.idx_images = r.str("idx.images", "");
    c.idx_labels = r.str("idx.labels", "");
    if (c.dataset == "idx" && (c.idx_images.empty() || c.idx_labels.empty()))
        res.errors.push_back("dataset 'idx' requires keys 'idx.images' and 'idx.labels'");
    c.synth_classes = r.num<int>("synthetic.classes", 10);
    c.synth_dim = r.num<std::size_t>("synthetic.dim", 20);
    c.synth_per_class = r.num<std::size_t>("synthetic.per_class", 100);
    c.synth_spread = r.num<double>("synthetic.spread", 0.5);

    c.n_clients = r.num<std::size_t>("clients", 10);
    if (c.n_clients < 1) res.errors.push_back("key 'clients': must be >= 1");
    c.partition = r.str("partition", "hetero");
    if (c.partition != "hetero" && c.partition != "dirichlet")
        res.errors.push_back("key 'partition': must be 'hetero' or 'dirichlet'");
    c.classes_per_client = r.num<std::size_t>("partition.classes_per_client", 2);
    c.dirichlet_alpha = r.num<double>("partition.alpha", 0.1);
    if (c.dirichlet_alpha <= 0) res.errors.push_back("key 'partition.alpha': must be > 0");
    c.val_frac = r.num<double>("partition.val_frac", 0.15);
    c.test_frac = r.num<double>("partition.test_frac", 0.15);
    if (c.val_frac < 0 || c.test_frac < 0 || c.val_frac + c.test_frac >= 1.0)
        res.errors.push_back("partition val_frac + test_frac must lie in [0,1)");

    c.groups = r.str_list("groups", {"default"});
    if (c.groups.empty()) res.errors.push_back("key 'groups': at least one group required");
    for (const auto& g : c.groups) {
        const std::string key = "target." + g + ".hidden";
        std::vector<std::size_t> def = {100};
        if (g == "default" && r.has("target.hidden")) def = r.size_list("target.hidden", def);
        c.target_hidden[g] = r.size_list(key, def);
    }
    r.size_list("target.hidden", {100});  // mark consumed even without groups using it

    c.trunk_hidden = r.size_list("hypernet.trunk_hidden", {100});
    c.embed_dim = r.num<std::size_t>("hypernet.embed_dim", 0);
    c.linear_mode = r.flag("hypernet.linear_mode", false);
    if (c.linear_mode && !c.trunk_hidden.empty()) c.trunk_hidden.clear();
    c.spectral_norm = r.flag("hypernet.spectral_norm", false);
    c.power_iters = r.num<std::size_t>("hypernet.power_iters", 1);
    if (c.spectral_norm && c.power_iters < 1)
        res.errors.push_back("key 'hypernet.power_iters': must be >= 1");
    c.fixed_embeddings = r.flag("hypernet.fixed_embeddings", false);

    c.train.lr_client = r.num<double>("train.lr_client", 5e-3);
    c.train.lr_server = r.num<double>("train.lr_server", 1e-2);
    if (c.train.lr_client < 0 || c.train.lr_server < 0)
        res.errors.push_back("learning rates must be >= 0");
    c.train.local_steps = r.num<std::size_t>("train.local_steps", 50);
    c.train.rounds = r.num<std::size_t>("train.rounds", 1000);
    c.train.batch_size = r.num<std::size_t>("train.batch_size", 64);
    if (c.train.batch_size < 1) res.errors.push_back("key 'train.batch_size': must be >= 1");
    c.train.momentum = r.num<double>("train.momentum", 0.0);
    if (c.train.momentum < 0 || c.train.momentum >= 1)
        res.errors.push_back("key 'train.momentum': must lie in [0,1)");
    c.train.seed = c.seed;
    c.lr_head = r.num<double>("train.lr_head", -1.0);

    c.fedavg_clients_per_round = r.num<std::size_t>("fedavg.clients_per_round", 5);
    if (c.mode == Mode::fedavg && c.fedavg_clients_per_round > c.n_clients)
        res.errors.push_back("key 'fedavg.clients_per_round': exceeds client count");
    c.fedavg_weighted = r.flag("fedavg.weighted", true);
    c.local_steps_budget = r.num<std::size_t>("local.steps", 2000);

    c.snapshot_every = r.num<std::size_t>("snapshot_every", 50);
    if (c.snapshot_every < 1) res.errors.push_back("key 'snapshot_every': must be >= 1");
    c.early_stopping = r.flag("early_stopping", true);
    c.adapt_steps = r.num<std::size_t>("adapt.steps", 50);
    c.checkpoint = r.str("checkpoint", "");

    c.linlab_n = r.num<std::size_t>("linlab.n", 8);
    c.linlab_d = r.num<std::size_t>("linlab.d", 5);
    c.linlab_m = r.num<std::size_t>("linlab.m", 12);
    c.linlab_k = r.num<std::size_t>("linlab.k", 2);
    c.linlab_seeds = r.num<std::size_t>("linlab.seeds", 5);
    c.linlab_noise = r.num<double>("linlab.noise", 0.1);
    if (c.mode == Mode::linlab) {
        if (c.linlab_m < c.linlab_d) res.errors.push_back("linlab requires m >= d");
        if (c.linlab_k < 1 || c.linlab_k > c.linlab_d)
            res.errors.push_back("linlab requires 1 <= k <= d");
    }

    if (c.mode == Mode::novel_adapt && c.n_clients < 2)
        res.errors.push_back("novel_adapt needs at least 2 clients (one is held out)");

    r.report_unknown();
    if (res.errors.empty()) res.config = std::move(c);
    return res;
}

ParseResult parse_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) {
            ParseResult res;
            res.errors.push_back("cannot open config file: " + path);
            return res;
        }
        std::string line;
        std::size_t lineno = 0;
        ParseResult res;
        while (std::getline(in, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                res.errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
                continue;
            }
            pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        if (!res.errors.empty()) return res;
    }
    for (const auto& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos) {
            ParseResult res;
            res.errors.push_back("override '" + ov + "': expected key=value");
            return res;
        }
        pairs.emplace_back(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    }
    return parse_config_pairs(pairs);
}

}  // namespace pfhn
