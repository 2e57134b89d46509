#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <set>

#include "bogcn/arch_graph.hpp"
#include "bogcn/rng.hpp"
#include "test_util.hpp"

using namespace bogcn;

namespace {

OpVocabulary vocab2() { return OpVocabulary{{"a", "b"}}; }

ArchGraph one_node(int op = 0) {
    return ArchGraph::create(1, {0}, {op});
}

ArchGraph two_node() {
    return ArchGraph::create(2, {0, 1, 0, 0}, {1, 0});
}

std::string write_temp(const std::string& text) {
    static int counter = 0;
    std::string path = "ag_test_" + std::to_string(counter++) + ".jsonl";
    std::ofstream out(path);
    out << text;
    return path;
}

}  // namespace

TEST_CASE("graph validation") {
    CHECK_THROWS_AS(ArchGraph::create(1, {1}, {0}), EncodingError);       // diagonal
    CHECK_THROWS_AS(ArchGraph::create(1, {2}, {0}), EncodingError);       // not 0/1
    CHECK_THROWS_AS(ArchGraph::create(2, {0, 1, 1, 0}, {0, 0}), EncodingError);  // cycle
    CHECK_THROWS_AS(ArchGraph::create(2, {0, 1, 0}, {0, 0}), EncodingError);     // shape
    CHECK(ArchGraph::create(3, {0, 1, 0, 0, 0, 1, 0, 0, 0}, {0, 1, 0}).node_count == 3);
}

TEST_CASE("one_hot_features per the one-hot + global-slot layout") {
    OpVocabulary v3{{"a", "b", "c"}};
    // F = 3 means two named ops + the global slot
    OpVocabulary v{{"x", "y"}};
    CHECK(v.feature_width() == 3);

    Matrix f1 = one_hot_features(one_node(0), v);
    REQUIRE(f1.rows() == 2);
    REQUIRE(f1.cols() == 3);
    CHECK(f1(0, 0) == 1.0);
    CHECK(f1(0, 1) == 0.0);
    CHECK(f1(0, 2) == 0.0);
    CHECK(f1(1, 0) == 0.0);
    CHECK(f1(1, 1) == 0.0);
    CHECK(f1(1, 2) == 1.0);

    Matrix f2 = one_hot_features(two_node(), v);
    CHECK(f2(0, 1) == 1.0);  // node 0 has op 1
    CHECK(f2(1, 0) == 1.0);  // node 1 has op 0
    CHECK(f2(2, 2) == 1.0);  // global slot

    // label outside the vocabulary names the offending node
    ArchGraph bad = ArchGraph::create(1, {0}, {7});
    OpVocabulary v6{{"a", "b", "c", "d", "e", "f"}};
    CHECK_THROWS_WITH_AS(one_hot_features(bad, v6),
                         doctest::Contains("node 0"), EncodingError);

    // every row has exactly one 1
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        ArchGraph g = testutil::random_graph(rng, 1, 7, 2);
        Matrix f = one_hot_features(g, v);
        for (std::size_t i = 0; i < f.rows(); ++i) {
            double s = 0;
            for (std::size_t j = 0; j < f.cols(); ++j) s += f(i, j);
            CHECK(s == 1.0);
        }
    }
}

TEST_CASE("augment_with_global") {
    Matrix a1 = augment_with_global(one_node());
    REQUIRE(a1.rows() == 2);
    CHECK(a1(0, 0) == 0.0);
    CHECK(a1(0, 1) == 1.0);
    CHECK(a1(1, 0) == 0.0);
    CHECK(a1(1, 1) == 0.0);

    Matrix a2 = augment_with_global(two_node());
    CHECK(a2(0, 1) == 1.0);
    CHECK(a2(0, 2) == 1.0);
    CHECK(a2(1, 2) == 1.0);
    CHECK(a2(1, 0) == 0.0);
    CHECK(a2(2, 0) == 0.0);
    CHECK(a2(2, 1) == 0.0);
    CHECK(a2(2, 2) == 0.0);

    // global node has out-degree 0, in-degree N, and the graph stays acyclic
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        ArchGraph g = testutil::random_graph(rng, 1, 7, 3);
        Matrix a = augment_with_global(g);
        const std::size_t n = a.rows() - 1;
        double out_deg = 0, in_deg = 0;
        std::vector<std::uint8_t> bits(a.size());
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 0; j <= n; ++j) {
                bits[i * (n + 1) + j] = a(i, j) != 0.0;
                if (i == n) out_deg += a(i, j);
                if (j == n) in_deg += a(i, j);
            }
        CHECK(out_deg == 0.0);
        CHECK(in_deg == static_cast<double>(n));
        CHECK(is_acyclic(bits, static_cast<int>(n + 1)));
    }
}

TEST_CASE("normalize_adjacency") {
    Matrix single(1, 1);
    Matrix n1 = normalize_adjacency(single);
    CHECK(n1(0, 0) == 1.0);

    Matrix a(2, 2);
    a(0, 1) = 1.0;
    Matrix n2 = normalize_adjacency(a);
    CHECK(n2(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(n2(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(n2(1, 0) == 0.0);
    CHECK(n2(1, 1) == doctest::Approx(1.0).epsilon(1e-15));

    // diagonal entries are 1/deg; entries in [0,1]; sparsity pattern of A+I
    Rng rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        ArchGraph g = testutil::random_graph(rng, 2, 7, 3);
        Matrix aug = augment_with_global(g);
        Matrix norm = normalize_adjacency(aug);
        const std::size_t n = aug.rows();
        for (std::size_t i = 0; i < n; ++i) {
            double deg = 1.0;
            for (std::size_t j = 0; j < n; ++j) deg += (i == j) ? 0.0 : aug(i, j);
            CHECK(norm(i, i) == doctest::Approx(1.0 / deg).epsilon(1e-12));
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(norm(i, j) >= 0.0);
                CHECK(norm(i, j) <= 1.0);
                const bool tilde_set = aug(i, j) != 0.0 || i == j;
                CHECK((norm(i, j) != 0.0) == tilde_set);
            }
        }
    }
}

TEST_CASE("encode/decode round trip on random graphs") {
    OpVocabulary v{{"a", "b", "c"}};
    Rng rng(99);
    for (int rep = 0; rep < 100; ++rep) {
        ArchGraph g = testutil::random_graph(rng, 1, 7, 3);
        EncodedGraph e = encode(g, v);
        CHECK(e.aug_adjacency.rows() == static_cast<std::size_t>(g.node_count) + 1);
        CHECK(e.global_row == static_cast<std::size_t>(g.node_count));
        ArchGraph back = decode(e, v);
        CHECK(back.id == g.id);
        CHECK(back.adjacency == g.adjacency);
        CHECK(back.op_labels == g.op_labels);
        // purity: re-encoding gives bit-identical matrices
        EncodedGraph e2 = encode(g, v);
        CHECK(e2.aug_adjacency == e.aug_adjacency);
        CHECK(e2.features == e.features);
    }
    // one-node shape check
    EncodedGraph e = encode(one_node(), OpVocabulary{{"a"}});
    CHECK(e.aug_adjacency.rows() == 2);
    CHECK(e.aug_adjacency.cols() == 2);
}

TEST_CASE("the global row of an encoding reaches every original node") {
    OpVocabulary v{{"a", "b", "c"}};
    Rng rng(123);
    for (int rep = 0; rep < 20; ++rep) {
        ArchGraph g = testutil::random_graph(rng, 1, 7, 3);
        EncodedGraph e = encode(g, v);
        for (std::size_t u = 0; u < e.global_row; ++u)
            CHECK(e.aug_adjacency(e.global_row, u) > 0.0);
    }
}

TEST_CASE("content hash is stable, permutation-sensitive and collision-free") {
    ArchGraph g1 = two_node();
    ArchGraph g2 = ArchGraph::create(2, {0, 1, 0, 0}, {1, 0});
    CHECK(g1.id == g2.id);
    CHECK(g1.id.size() == 32);

    // swapping node order changes identity
    ArchGraph swapped = ArchGraph::create(2, {0, 0, 1, 0}, {0, 1});
    CHECK(swapped.id != g1.id);

    Rng rng(31337);
    std::set<std::string> seen;
    std::set<std::string> structures;
    int fresh = 0;
    for (int rep = 0; rep < 100000; ++rep) {
        ArchGraph g = testutil::random_graph(rng, 1, 7, 5);
        std::string key = std::to_string(g.node_count) + ":";
        for (auto b : g.adjacency) key += static_cast<char>('0' + b);
        for (auto l : g.op_labels) key += static_cast<char>('a' + l);
        const bool new_structure = structures.insert(key).second;
        const bool new_hash = seen.insert(g.id).second;
        if (new_structure) ++fresh;
        CHECK(new_structure == new_hash);  // collisions or misses would differ
    }
    CHECK(fresh > 50000);  // the generator actually explored
}

TEST_CASE("load_dataset happy path and errors") {
    OpVocabulary v{{"a", "b"}};

    SUBCASE("empty file") {
        auto path = write_temp("");
        Dataset ds = load_dataset(path, v);
        CHECK(ds.records.empty());
        std::remove(path.c_str());
    }

    SUBCASE("one well-formed line") {
        auto path = write_temp(
            R"({"adjacency": [[0,1],[0,0]], "ops": ["a","b"], "metrics": {"accuracy": 0.9, "params": 3.5}})"
            "\n");
        Dataset ds = load_dataset(path, v);
        REQUIRE(ds.records.size() == 1);
        CHECK(ds.metric_names == std::vector<std::string>{"accuracy", "params"});
        CHECK(ds.records[0].objectives[0] == 0.9);
        CHECK(ds.records[0].objectives[1] == 3.5);
        CHECK(ds.records[0].graph.node_count == 2);
        std::remove(path.c_str());
    }

    SUBCASE("cyclic adjacency names the line") {
        auto path = write_temp(
            R"({"adjacency": [[0,1],[1,0]], "ops": ["a","b"], "metrics": {"accuracy": 0.9}})"
            "\n");
        CHECK_THROWS_WITH_AS(load_dataset(path, v), doctest::Contains("line 1"),
                             DatasetError);
        std::remove(path.c_str());
    }

    SUBCASE("parse error names the line") {
        auto path = write_temp(
            R"({"adjacency": [[0]], "ops": ["a"], "metrics": {"accuracy": 0.5}})"
            "\nnot json\n");
        CHECK_THROWS_WITH_AS(load_dataset(path, v), doctest::Contains("line 2"),
                             DatasetError);
        std::remove(path.c_str());
    }

    SUBCASE("duplicate id with conflicting objectives is rejected") {
        auto path = write_temp(
            R"({"adjacency": [[0]], "ops": ["a"], "metrics": {"accuracy": 0.5}})"
            "\n"
            R"({"adjacency": [[0]], "ops": ["a"], "metrics": {"accuracy": 0.6}})"
            "\n");
        CHECK_THROWS_WITH_AS(load_dataset(path, v), doctest::Contains("duplicate"),
                             DatasetError);
        std::remove(path.c_str());
    }

    SUBCASE("exact duplicates are kept, order preserved") {
        auto path = write_temp(
            R"({"adjacency": [[0]], "ops": ["a"], "metrics": {"accuracy": 0.5}})"
            "\n"
            R"({"adjacency": [[0]], "ops": ["b"], "metrics": {"accuracy": 0.7}})"
            "\n"
            R"({"adjacency": [[0]], "ops": ["a"], "metrics": {"accuracy": 0.5}})"
            "\n");
        Dataset ds = load_dataset(path, v);
        REQUIRE(ds.records.size() == 3);
        CHECK(ds.records[0].graph.id == ds.records[2].graph.id);
        CHECK(ds.records[0].objectives[0] == 0.5);
        CHECK(ds.records[1].objectives[0] == 0.7);
        std::remove(path.c_str());
    }

    SUBCASE("accuracy outside (0,1) is rejected") {
        auto path = write_temp(
            R"({"adjacency": [[0]], "ops": ["a"], "metrics": {"accuracy": 1.5}})"
            "\n");
        CHECK_THROWS_AS(load_dataset(path, v), DatasetError);
        std::remove(path.c_str());
    }

    SUBCASE("unknown op name is rejected") {
        auto path = write_temp(
            R"({"adjacency": [[0]], "ops": ["zzz"], "metrics": {"accuracy": 0.5}})"
            "\n");
        CHECK_THROWS_WITH_AS(load_dataset(path, v), doctest::Contains("zzz"),
                             DatasetError);
        std::remove(path.c_str());
    }
}

TEST_CASE("save/load round trip preserves ids and objective bits") {
    OpVocabulary v{{"a", "b", "c"}};
    Rng rng(2024);
    Dataset ds;
    ds.metric_names = {"accuracy", "params"};
    std::set<std::string> used;
    while (ds.records.size() < 50) {
        TrainedRecord rec;
        rec.graph = testutil::random_graph(rng, 2, 6, 3);
        if (!used.insert(rec.graph.id).second) continue;
        rec.objectives = {urand(rng, 0.05, 0.95), urand(rng, 1.0, 9.0)};
        ds.records.push_back(std::move(rec));
    }
    auto path = write_temp("");
    save_dataset(path, ds, v);
    Dataset back = load_dataset(path, v);
    REQUIRE(back.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(back.records[i].graph.id == ds.records[i].graph.id);
        CHECK(back.records[i].objectives == ds.records[i].objectives);
    }
    CHECK(vocabulary_from_dataset(path).names.size() <= 3);
    std::remove(path.c_str());
}
