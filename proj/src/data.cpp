#include "pfhn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pfhn/errors.hpp"

namespace pfhn {

void Dataset::validate() const {
    if (features.rows != labels.size())
        throw ValidationError("Dataset: feature rows != label count");
    for (int l : labels)
        if (l < 0 || l >= class_count)
            throw ValidationError("Dataset: label " + std::to_string(l) + " out of range");
}

namespace {
std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in)
        throw ParseError("truncated IDX file at offset " + std::to_string(offset) + ": " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.uniform_int(i)]);
}

// Integer apportionment that conserves the total exactly: floor each share,
// hand out the remainder by largest fractional part (ties to lowest index).
std::vector<std::size_t> largest_remainder(const std::vector<double>& fracs, std::size_t total) {
    const std::size_t n = fracs.size();
    std::vector<std::size_t> counts(n, 0);
    std::vector<std::pair<double, std::size_t>> rema(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double share = fracs[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(share));
        assigned += counts[i];
        rema[i] = {share - std::floor(share), i};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) counts[rema[r % n].second]++;
    return counts;
}

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.class_count));
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    return by_class;
}

// Shuffle each client's pooled indices and split off val/test tails; the
// empirical class proportions are computed over the remaining train part.
void carve_and_finalize(PartitionSpec& spec, const Dataset& ds, double val_frac, double test_frac,
                        Rng carve_rng) {
    if (val_frac < 0 || test_frac < 0 || val_frac + test_frac >= 1.0)
        throw ValidationError("partition: val_frac + test_frac must be in [0,1)");
    for (std::size_t i = 0; i < spec.clients.size(); ++i) {
        auto& cl = spec.clients[i];
        auto pool = std::move(cl.train);
        if (pool.empty())
            throw ValidationError("partition: client " + std::to_string(i) + " received no samples");
        Rng rng = carve_rng.stream(i);
        fisher_yates(pool, rng);
        const std::size_t m = pool.size();
        const auto n_test = static_cast<std::size_t>(std::llround(test_frac * double(m)));
        const auto n_val = static_cast<std::size_t>(std::llround(val_frac * double(m)));
        if (n_test + n_val >= m)
            throw ValidationError("partition: client " + std::to_string(i) + " train split empty");
        cl.test.assign(pool.begin(), pool.begin() + n_test);
        cl.val.assign(pool.begin() + n_test, pool.begin() + n_test + n_val);
        cl.train.assign(pool.begin() + n_test + n_val, pool.end());
        cl.class_props.assign(static_cast<std::size_t>(ds.class_count), 0.0);
        for (std::size_t idx : cl.train)
            cl.class_props[static_cast<std::size_t>(ds.labels[idx])] += 1.0;
        for (double& p : cl.class_props) p /= static_cast<double>(cl.train.size());
    }
}
}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ParseError("cannot open: " + images_path);
    if (read_be32(img, images_path, 0) != 0x00000803u)
        throw ParseError("bad magic at offset 0 (want 0x00000803): " + images_path);
    const std::uint32_t n = read_be32(img, images_path, 4);
    const std::uint32_t rows = read_be32(img, images_path, 8);
    const std::uint32_t cols = read_be32(img, images_path, 12);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ParseError("cannot open: " + labels_path);
    if (read_be32(lab, labels_path, 0) != 0x00000801u)
        throw ParseError("bad magic at offset 0 (want 0x00000801): " + labels_path);
    const std::uint32_t n_lab = read_be32(lab, labels_path, 4);
    if (n != n_lab)
        throw ParseError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                         std::to_string(n_lab) + " labels");

    Dataset ds;
    const std::size_t dim = std::size_t(rows) * cols;
    ds.features = Matrix(n, dim);
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (!img) throw ParseError("truncated image data: " + images_path);
        for (std::size_t j = 0; j < dim; ++j)
            ds.features.at(i, j) = static_cast<double>(buf[j]) / 255.0;
    }
    ds.labels.resize(n);
    std::vector<unsigned char> lbuf(n);
    lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n));
    if (!lab) throw ParseError("truncated label data: " + labels_path);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<int>(lbuf[i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.class_count = max_label + 1;
    ds.validate();
    return ds;
}

Dataset synth_gaussian_mixture(int classes, std::size_t dim, std::size_t per_class, double spread,
                               Rng rng) {
    if (classes < 1 || dim < 1 || per_class < 1)
        throw ValidationError("synth_gaussian_mixture: counts must be >= 1");
    Rng mean_rng = rng.stream("means");
    Rng sample_rng = rng.stream("samples");
    Dataset ds;
    ds.class_count = classes;
    ds.features = Matrix(static_cast<std::size_t>(classes) * per_class, dim);
    ds.labels.resize(ds.features.rows);
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        std::vector<double> mean(dim);
        for (double& m : mean) m = mean_rng.normal();
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            for (std::size_t j = 0; j < dim; ++j)
                ds.features.at(row, j) = mean[j] + spread * sample_rng.normal();
            ds.labels[row] = c;
        }
    }
    return ds;
}

PartitionSpec partition_hetero(const Dataset& ds, std::size_t n_clients,
                               std::size_t classes_per_client, double val_frac, double test_frac,
                               Rng rng) {
    ds.validate();
    const auto C = static_cast<std::size_t>(ds.class_count);
    if (n_clients < 1) throw ValidationError("partition_hetero: need at least one client");
    if (classes_per_client < 1 || classes_per_client > C)
        throw ValidationError("partition_hetero: classes_per_client out of range");
    if (n_clients * classes_per_client < C)
        throw ValidationError("partition_hetero: too few client-class slots to cover all classes");

    Rng select_rng = rng.stream("class_select");
    std::vector<std::vector<std::size_t>> chosen;
    bool covered = false;
    for (int attempt = 0; attempt < 1000 && !covered; ++attempt) {
        chosen.assign(n_clients, {});
        std::vector<bool> seen(C, false);
        for (std::size_t i = 0; i < n_clients; ++i) {
            std::vector<std::size_t> classes(C);
            std::iota(classes.begin(), classes.end(), 0);
            for (std::size_t k = 0; k < classes_per_client; ++k)
                std::swap(classes[k], classes[k + select_rng.uniform_int(C - k)]);
            classes.resize(classes_per_client);
            std::sort(classes.begin(), classes.end());
            for (std::size_t c : classes) seen[c] = true;
            chosen[i] = std::move(classes);
        }
        covered = std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    }
    if (!covered)
        throw ValidationError("partition_hetero: could not cover every class after 1000 redraws");

    auto by_class = indices_by_class(ds);
    Rng alpha_rng = rng.stream("alpha");
    Rng shuffle_rng = rng.stream("shuffle");
    PartitionSpec spec;
    spec.clients.resize(n_clients);
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<std::size_t> takers;
        for (std::size_t i = 0; i < n_clients; ++i)
            if (std::find(chosen[i].begin(), chosen[i].end(), c) != chosen[i].end())
                takers.push_back(i);
        if (by_class[c].empty())
            throw ValidationError("partition_hetero: class " + std::to_string(c) + " has no samples");
        std::vector<double> alphas(takers.size());
        double sum = 0.0;
        for (double& a : alphas) {
            a = alpha_rng.uniform(0.4, 0.6);
            sum += a;
        }
        for (double& a : alphas) a /= sum;
        Rng class_shuffle = shuffle_rng.stream(c);
        fisher_yates(by_class[c], class_shuffle);
        const auto counts = largest_remainder(alphas, by_class[c].size());
        std::size_t off = 0;
        for (std::size_t t = 0; t < takers.size(); ++t) {
            auto& dst = spec.clients[takers[t]].train;
            dst.insert(dst.end(), by_class[c].begin() + off, by_class[c].begin() + off + counts[t]);
            off += counts[t];
        }
    }
    carve_and_finalize(spec, ds, val_frac, test_frac, rng.stream("carve"));
    return spec;
}

PartitionSpec partition_dirichlet(const Dataset& ds, std::size_t n_clients, double alpha,
                                  double val_frac, double test_frac, Rng rng) {
    ds.validate();
    if (n_clients < 1) throw ValidationError("partition_dirichlet: need at least one client");
    if (alpha <= 0.0) throw ValidationError("partition_dirichlet: alpha must be > 0");
    const auto C = static_cast<std::size_t>(ds.class_count);

    Rng draw_rng = rng.stream("dirichlet");
    Matrix p(n_clients, C);  // per-client Dirichlet draws, rows sum to 1
    for (std::size_t i = 0; i < n_clients; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            p.at(i, j) = draw_rng.gamma(alpha);
            sum += p.at(i, j);
        }
        for (std::size_t j = 0; j < C; ++j) p.at(i, j) /= sum;
    }
    // Column-normalize so each class's mass is fully allocated.
    for (std::size_t j = 0; j < C; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < n_clients; ++i) col += p.at(i, j);
        for (std::size_t i = 0; i < n_clients; ++i) p.at(i, j) /= col;
    }

    auto by_class = indices_by_class(ds);
    Rng shuffle_rng = rng.stream("shuffle");
    PartitionSpec spec;
    spec.clients.resize(n_clients);
    spec.alloc_fractions = p;
    for (std::size_t j = 0; j < C; ++j) {
        std::vector<double> fracs(n_clients);
        for (std::size_t i = 0; i < n_clients; ++i) fracs[i] = p.at(i, j);
        Rng class_shuffle = shuffle_rng.stream(j);
        fisher_yates(by_class[j], class_shuffle);
        const auto counts = largest_remainder(fracs, by_class[j].size());
        std::size_t off = 0;
        for (std::size_t i = 0; i < n_clients; ++i) {
            auto& dst = spec.clients[i].train;
            dst.insert(dst.end(), by_class[j].begin() + off, by_class[j].begin() + off + counts[i]);
            off += counts[i];
        }
    }
    carve_and_finalize(spec, ds, val_frac, test_frac, rng.stream("carve"));
    return spec;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ValidationError("total_variation: length mismatch");
    const double sp = std::accumulate(p.begin(), p.end(), 0.0);
    const double sq = std::accumulate(q.begin(), q.end(), 0.0);
    if (std::fabs(sp - 1.0) > 1e-6 || std::fabs(sq - 1.0) > 1e-6)
        throw ValidationError("total_variation: inputs must sum to 1");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
    return 0.5 * s;
}

std::pair<double, std::size_t> nearest_train_tv(const std::vector<double>& novel_props,
                                                const PartitionSpec& training) {
    if (training.clients.empty()) throw ValidationError("nearest_train_tv: empty training partition");
    double best = 2.0;
    std::size_t best_id = 0;
    for (std::size_t i = 0; i < training.clients.size(); ++i) {
        const double d = total_variation(novel_props, training.clients[i].class_props);
        if (d < best) {
            best = d;
            best_id = i;
        }
    }
    return {best, best_id};
}

std::string partition_to_json(const PartitionSpec& spec) {
    nlohmann::json out = nlohmann::json::object();
    for (std::size_t i = 0; i < spec.clients.size(); ++i) {
        const auto& c = spec.clients[i];
        out[std::to_string(i)] = {{"train", c.train},
                                  {"val", c.val},
                                  {"test", c.test},
                                  {"class_props", c.class_props}};
    }
    return out.dump(2);
}

}  // namespace pfhn
