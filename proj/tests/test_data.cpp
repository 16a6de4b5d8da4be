#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>

#include "pfhn/data.hpp"
#include "pfhn/errors.hpp"
#include "pfhn/mlp.hpp"

using namespace pfhn;

namespace {
void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_pair(const std::string& img, const std::string& lbl,
                    const std::vector<unsigned char>& pixels, const std::vector<unsigned char>& labels,
                    std::uint32_t rows, std::uint32_t cols, std::uint32_t magic_img = 0x803,
                    std::uint32_t label_count_override = 0xffffffff) {
    {
        std::ofstream out(img, std::ios::binary);
        write_be32(out, magic_img);
        write_be32(out, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
        write_be32(out, rows);
        write_be32(out, cols);
        out.write(reinterpret_cast<const char*>(pixels.data()),
                  static_cast<std::streamsize>(pixels.size()));
    }
    {
        std::ofstream out(lbl, std::ios::binary);
        write_be32(out, 0x801);
        write_be32(out, label_count_override == 0xffffffff
                            ? static_cast<std::uint32_t>(labels.size())
                            : label_count_override);
        out.write(reinterpret_cast<const char*>(labels.data()),
                  static_cast<std::streamsize>(labels.size()));
    }
}

// All indices a partition hands out, across every client and split.
std::vector<std::size_t> all_indices(const PartitionSpec& p) {
    std::vector<std::size_t> out;
    for (const auto& c : p.clients) {
        out.insert(out.end(), c.train.begin(), c.train.end());
        out.insert(out.end(), c.val.begin(), c.val.end());
        out.insert(out.end(), c.test.begin(), c.test.end());
    }
    return out;
}

bool same_partition(const PartitionSpec& a, const PartitionSpec& b) {
    if (a.clients.size() != b.clients.size()) return false;
    for (std::size_t i = 0; i < a.clients.size(); ++i) {
        if (a.clients[i].train != b.clients[i].train) return false;
        if (a.clients[i].val != b.clients[i].val) return false;
        if (a.clients[i].test != b.clients[i].test) return false;
        if (a.clients[i].class_props != b.clients[i].class_props) return false;
    }
    return a.alloc_fractions.data == b.alloc_fractions.data;
}

double mean_pairwise_tv(const Matrix& props) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < props.rows; ++i)
        for (std::size_t j = i + 1; j < props.rows; ++j) {
            double tv = 0.0;
            for (std::size_t c = 0; c < props.cols; ++c)
                tv += std::fabs(props.at(i, c) - props.at(j, c));
            total += 0.5 * tv;
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}
}  // namespace

TEST_CASE("load_idx: hand-built two-image pair round-trips exactly") {
    write_idx_pair("t_img.idx", "t_lbl.idx", {0, 51, 102, 153, 204, 255, 0, 255}, {3, 7}, 2, 2);
    const Dataset ds = load_idx("t_img.idx", "t_lbl.idx");
    CHECK(ds.size() == 2);
    CHECK(ds.features.rows == 2);
    CHECK(ds.features.cols == 4);
    CHECK(ds.features.at(0, 0) == 0.0);
    CHECK(ds.features.at(0, 1) == doctest::Approx(51.0 / 255.0).epsilon(1e-15));
    CHECK(ds.features.at(1, 1) == 1.0);
    CHECK(ds.labels == std::vector<int>{3, 7});
    CHECK(ds.class_count == 8);
    std::remove("t_img.idx");
    std::remove("t_lbl.idx");
}

TEST_CASE("load_idx: count mismatch is an error with no partial dataset") {
    write_idx_pair("t_img.idx", "t_lbl.idx", {1, 2, 3, 4}, {0}, 2, 2, 0x803, 2);
    CHECK_THROWS_AS(load_idx("t_img.idx", "t_lbl.idx"), ParseError);
    std::remove("t_img.idx");
    std::remove("t_lbl.idx");
}

TEST_CASE("load_idx: wrong magic produces a parse error naming the offset") {
    write_idx_pair("t_img.idx", "t_lbl.idx", {1, 2, 3, 4}, {0}, 2, 2, 0x1234);
    try {
        load_idx("t_img.idx", "t_lbl.idx");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    std::remove("t_img.idx");
    std::remove("t_lbl.idx");
}

TEST_CASE("load_idx: missing file is a parse error") {
    CHECK_THROWS_AS(load_idx("does_not_exist.idx", "also_missing.idx"), ParseError);
}

TEST_CASE("synth: zero spread collapses each class onto its mean") {
    const Dataset ds = synth_gaussian_mixture(3, 5, 4, 0.0, Rng(1).stream("dataset"));
    for (int c = 0; c < 3; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.labels[i] == c) members.push_back(i);
        REQUIRE(members.size() == 4);
        for (std::size_t i : members)
            for (std::size_t j = 0; j < 5; ++j)
                CHECK(ds.features.at(i, j) == ds.features.at(members[0], j));
    }
}

TEST_CASE("synth: label histogram is exactly per_class for each class") {
    const Dataset ds = synth_gaussian_mixture(4, 3, 25, 0.7, Rng(2));
    std::vector<int> hist(4, 0);
    for (int l : ds.labels) ++hist[l];
    for (int h : hist) CHECK(h == 25);
}

TEST_CASE("synth: linear classifier separates a well-separated instance") {
    const Dataset ds = synth_gaussian_mixture(3, 6, 30, 0.05, Rng(3));
    TargetSpec spec{6, {}, 3};
    FlatParams params = init_mlp(spec, Rng(4));
    Batch b;
    b.features = ds.features;
    b.labels = ds.labels;
    for (int step = 0; step < 400; ++step) {
        ForwardCache cache;
        const Matrix logits = mlp_forward(params, spec, b.features, &cache);
        const auto [loss, grad_logits] = cross_entropy(logits, b.labels);
        sgd_step(params, mlp_backward(cache, grad_logits, params, spec), 0.5);
    }
    const auto preds = predict(mlp_forward(params, spec, b.features));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == b.labels[i]) ++correct;
    CHECK(correct == preds.size());
}

TEST_CASE("partition_hetero: every class fully allocated, indices disjoint") {
    const Dataset ds = synth_gaussian_mixture(10, 4, 60, 0.5, Rng(5));
    const PartitionSpec p = partition_hetero(ds, 10, 2, 0.15, 0.15, Rng(6));
    auto idx = all_indices(p);
    CHECK(idx.size() == ds.size());
    std::set<std::size_t> uniq(idx.begin(), idx.end());
    CHECK(uniq.size() == ds.size());
}

TEST_CASE("partition_hetero: 10 clients, 2 classes each, at most 2 nonzero proportions") {
    const Dataset ds = synth_gaussian_mixture(10, 4, 60, 0.5, Rng(7));
    const PartitionSpec p = partition_hetero(ds, 10, 2, 0.1, 0.1, Rng(8));
    REQUIRE(p.clients.size() == 10);
    for (const auto& c : p.clients) {
        std::size_t nonzero = 0;
        double sum = 0.0;
        for (double x : c.class_props) {
            if (x > 0.0) ++nonzero;
            sum += x;
        }
        CHECK(nonzero <= 2);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("partition_hetero: same seed reproduces the partition bit-for-bit") {
    const Dataset ds = synth_gaussian_mixture(6, 4, 40, 0.5, Rng(9));
    const PartitionSpec a = partition_hetero(ds, 5, 2, 0.15, 0.15, Rng(10));
    const PartitionSpec b = partition_hetero(ds, 5, 2, 0.15, 0.15, Rng(10));
    CHECK(same_partition(a, b));
}

TEST_CASE("partition_dirichlet: allocation fraction columns each sum to 1") {
    const Dataset ds = synth_gaussian_mixture(8, 4, 50, 0.5, Rng(11));
    const PartitionSpec p = partition_dirichlet(ds, 7, 0.3, 0.15, 0.15, Rng(12));
    REQUIRE(p.alloc_fractions.rows == 7);
    REQUIRE(p.alloc_fractions.cols == 8);
    for (std::size_t j = 0; j < 8; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < 7; ++i) col += p.alloc_fractions.at(i, j);
        CHECK(col == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("partition_dirichlet: every sample allocated exactly once") {
    const Dataset ds = synth_gaussian_mixture(5, 4, 33, 0.5, Rng(13));
    const PartitionSpec p = partition_dirichlet(ds, 6, 0.5, 0.15, 0.15, Rng(14));
    auto idx = all_indices(p);
    CHECK(idx.size() == ds.size());
    std::set<std::size_t> uniq(idx.begin(), idx.end());
    CHECK(uniq.size() == ds.size());
}

TEST_CASE("partition_dirichlet: alpha=1 draws concentrate more than alpha=0.1") {
    // Monte Carlo over 1000 draws of the raw Dirichlet proportions.
    const std::size_t n = 5, C = 10, draws = 1000;
    double tv_tight = 0.0, tv_loose = 0.0;
    Rng base(15);
    for (std::size_t t = 0; t < draws; ++t) {
        Rng r1 = base.stream("a1").stream(t);
        Rng r2 = base.stream("a01").stream(t);
        Matrix p1(n, C), p2(n, C);
        for (std::size_t i = 0; i < n; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                p1.at(i, c) = r1.gamma(1.0);
                p2.at(i, c) = r2.gamma(0.1);
                s1 += p1.at(i, c);
                s2 += p2.at(i, c);
            }
            for (std::size_t c = 0; c < C; ++c) {
                p1.at(i, c) /= s1;
                p2.at(i, c) /= s2;
            }
        }
        tv_tight += mean_pairwise_tv(p1);
        tv_loose += mean_pairwise_tv(p2);
    }
    CHECK(tv_tight / draws < tv_loose / draws);
}

TEST_CASE("total_variation: identical, disjoint, and mixed cases") {
    CHECK(total_variation({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    CHECK(total_variation({1.0, 0.0}, {0.0, 1.0}) == 1.0);
    CHECK(total_variation({0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}) == doctest::Approx(0.5));
}

TEST_CASE("total_variation: rejects length mismatch and unnormalized input") {
    CHECK_THROWS_AS(total_variation({0.5, 0.5}, {1.0}), ValidationError);
    CHECK_THROWS_AS(total_variation({0.5, 0.6}, {0.5, 0.5}), ValidationError);
}

TEST_CASE("nearest_train_tv: exact match, single client, exhaustive oracle") {
    const Dataset ds = synth_gaussian_mixture(6, 4, 40, 0.5, Rng(16));
    const PartitionSpec p = partition_dirichlet(ds, 5, 0.4, 0.15, 0.15, Rng(17));

    const auto [d0, id0] = nearest_train_tv(p.clients[3].class_props, p);
    CHECK(d0 == 0.0);
    CHECK(id0 == 3);

    PartitionSpec single;
    single.clients.push_back(p.clients[2]);
    const auto [d1, id1] = nearest_train_tv(p.clients[4].class_props, single);
    CHECK(id1 == 0);

    std::vector<double> novel(6, 0.0);
    novel[1] = 0.25;
    novel[4] = 0.75;
    const auto [dist, id] = nearest_train_tv(novel, p);
    double best = 2.0;
    std::size_t best_id = 0;
    for (std::size_t i = 0; i < p.clients.size(); ++i) {
        const double tv = total_variation(novel, p.clients[i].class_props);
        if (tv < best) {
            best = tv;
            best_id = i;
        }
    }
    CHECK(dist == best);
    CHECK(id == best_id);
}

TEST_CASE("val/test never intersect train within a client") {
    const Dataset ds = synth_gaussian_mixture(8, 4, 50, 0.5, Rng(18));
    for (const PartitionSpec& p : {partition_hetero(ds, 6, 3, 0.2, 0.1, Rng(19)),
                                   partition_dirichlet(ds, 6, 0.5, 0.2, 0.1, Rng(19))}) {
        for (const auto& c : p.clients) {
            std::set<std::size_t> train(c.train.begin(), c.train.end());
            for (std::size_t i : c.val) CHECK(!train.count(i));
            for (std::size_t i : c.test) CHECK(!train.count(i));
        }
    }
}

TEST_CASE("partition_to_json: parses and covers every client") {
    const Dataset ds = synth_gaussian_mixture(4, 3, 20, 0.5, Rng(20));
    const PartitionSpec p = partition_hetero(ds, 3, 2, 0.15, 0.15, Rng(21));
    const std::string json = partition_to_json(p);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(json.find("\"" + std::to_string(i) + "\"") != std::string::npos);
    CHECK(json.find("train") != std::string::npos);
    CHECK(json.find("class_props") != std::string::npos);
}
