#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "bogcn/acquisition.hpp"
#include "bogcn/rng.hpp"
#include "test_util.hpp"

using namespace bogcn;

namespace {

ObjectiveSpec max_spec(std::size_t m) {
    ObjectiveSpec s;
    for (std::size_t i = 0; i < m; ++i) {
        s.names.push_back("f" + std::to_string(i));
        s.directions.push_back(Direction::maximize);
        s.costly.push_back(true);
    }
    return s;
}

std::vector<ObjectiveVector> random_points(Rng& rng, std::size_t n, std::size_t m) {
    std::vector<ObjectiveVector> pts(n, ObjectiveVector(m));
    for (auto& p : pts)
        for (auto& x : p) x = urand01(rng);
    return pts;
}

}  // namespace

TEST_CASE("expected improvement: pinned values") {
    CHECK(expected_improvement(3.0, 0.0, 1.0) == 0.0);  // degenerate posterior
    CHECK(expected_improvement(0.7, 1.0, 0.7) ==
          doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-9));
    CHECK(expected_improvement(11.0, 1.0, 1.0) == doctest::Approx(10.0).epsilon(1e-6));
    CHECK_THROWS_AS(expected_improvement(0.0, -1e-9, 0.0), std::invalid_argument);
}

TEST_CASE("expected improvement: nonnegative and monotone") {
    Rng rng(1);
    for (int rep = 0; rep < 2000; ++rep) {
        const double mu = urand(rng, -5, 5);
        const double sigma = urand(rng, 0, 3);
        const double best = urand(rng, -5, 5);
        const double ei = expected_improvement(mu, sigma * sigma, best);
        CHECK(ei >= 0.0);
        // nondecreasing in mu
        const double ei_up = expected_improvement(mu + urand(rng, 0, 2),
                                                  sigma * sigma, best);
        CHECK(ei_up >= ei - 1e-12);
        // nondecreasing in sigma
        const double s2 = sigma + urand(rng, 0, 2);
        const double ei_wide = expected_improvement(mu, s2 * s2, best);
        CHECK(ei_wide >= ei - 1e-12);
    }
}

TEST_CASE("dominates: examples and relational properties") {
    ObjectiveSpec spec;
    spec.names = {"acc", "params"};
    spec.directions = {Direction::maximize, Direction::minimize};
    spec.costly = {true, false};

    CHECK(dominates({0.9, 5e6}, {0.8, 6e6}, spec));
    CHECK(!dominates({0.8, 6e6}, {0.9, 5e6}, spec));
    CHECK(!dominates({0.9, 5e6}, {0.9, 5e6}, spec));  // equal: no strict coordinate
    CHECK(!dominates({0.9, 6e6}, {0.8, 5e6}, spec));  // incomparable
    CHECK(!dominates({0.8, 5e6}, {0.9, 6e6}, spec));
    CHECK_THROWS_AS(dominates({0.9}, {0.8, 5e6}, spec), std::invalid_argument);

    Rng rng(2);
    ObjectiveSpec s3 = max_spec(3);
    s3.directions[1] = Direction::minimize;
    for (int rep = 0; rep < 500; ++rep) {
        auto pts = random_points(rng, 3, 3);
        const auto &a = pts[0], &b = pts[1], &c = pts[2];
        CHECK(!dominates(a, a, s3));                              // irreflexive
        CHECK(!(dominates(a, b, s3) && dominates(b, a, s3)));     // antisymmetric
        if (dominates(a, b, s3) && dominates(b, c, s3)) CHECK(dominates(a, c, s3));
    }
}

TEST_CASE("pareto_front: examples") {
    ObjectiveSpec s2 = max_spec(2);
    CHECK(pareto_front({{1, 1}, {2, 2}}, s2) == std::vector<std::size_t>{1});

    // m = 1 reduces to the argmax set
    ObjectiveSpec s1 = max_spec(1);
    CHECK(pareto_front({{0.3}, {0.9}, {0.9}, {0.1}}, s1) ==
          std::vector<std::size_t>{1, 2});

    // duplicates of a front point are all kept
    CHECK(pareto_front({{1, 2}, {2, 1}, {1, 2}}, s2) ==
          std::vector<std::size_t>{0, 1, 2});

    CHECK_THROWS_AS(pareto_front({}, s2), std::invalid_argument);
}

TEST_CASE("pareto_front equals the all-pairs brute force") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(100 + seed);
        for (std::size_t m : {1u, 2u, 3u}) {
            ObjectiveSpec spec = max_spec(m);
            if (m >= 2) spec.directions[m - 1] = Direction::minimize;
            auto pts = random_points(rng, 400, m);
            const auto fast = pareto_front(pts, spec);
            const auto slow = testutil::brute_force_front(pts, spec);
            CHECK(fast == slow);

            // structural invariants
            std::set<std::size_t> members(fast.begin(), fast.end());
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (members.count(i)) {
                    for (std::size_t j = 0; j < pts.size(); ++j)
                        CHECK(!dominates(pts[j], pts[i], spec));
                } else {
                    bool dominated = false;
                    for (std::size_t f : fast)
                        if (dominates(pts[f], pts[i], spec)) {
                            dominated = true;
                            break;
                        }
                    CHECK(dominated);
                }
            }
        }
    }
}

namespace {

struct ScoringFixture {
    OpVocabulary vocab{{"a", "b", "c"}};
    std::vector<ArchGraph> graphs;
    std::vector<const ArchGraph*> pool;
    BlrPosterior posterior;
    AcquisitionContext ctx;
    ObjectiveSpec spec = ObjectiveSpec::single("accuracy");

    explicit ScoringFixture(std::size_t n) {
        Rng rng(55);
        std::set<std::string> seen;
        while (graphs.size() < n) {
            ArchGraph g = testutil::random_graph(rng, 2, 6, 3);
            if (seen.insert(g.id).second) graphs.push_back(std::move(g));
        }
        for (const auto& g : graphs) pool.push_back(&g);
        Matrix phi = testutil::random_matrix(rng, 12, 4, -1, 1);
        Vector acc(12);
        for (auto& a : acc) a = urand(rng, 0.2, 0.9);
        posterior = blr_fit(phi, acc, 1.0, 50.0);
        ctx.posteriors = {&posterior};
        ctx.incumbent = {*std::max_element(posterior.targets.begin(),
                                           posterior.targets.end())};
    }

    EmbedFn embed = [](const ArchGraph& g) {
        // deterministic pseudo-embedding derived from the id
        Vector v(4);
        for (std::size_t i = 0; i < 4; ++i)
            v[i] = static_cast<double>((mix64(std::hash<std::string>{}(g.id) + i) >> 11) &
                                       0xffff) /
                       65536.0 -
                   0.5;
        return v;
    };
    ExactObjectiveFn exact = [](const ArchGraph&, std::size_t) { return 0.0; };
};

}  // namespace

TEST_CASE("score_candidates: per-candidate EI, purity, error attribution") {
    ScoringFixture fx(20);
    auto scores = score_candidates(fx.pool, fx.ctx, fx.embed, fx.exact, fx.spec);
    REQUIRE(scores.size() == fx.pool.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        REQUIRE(scores[i].size() == 1);
        auto [mu, var] = blr_predict(fx.posterior, fx.embed(*fx.pool[i]));
        CHECK(scores[i][0] ==
              doctest::Approx(expected_improvement(mu, var, fx.ctx.incumbent[0]))
                  .epsilon(1e-14));
    }

    // permuting the pool permutes the output identically
    std::vector<const ArchGraph*> reversed(fx.pool.rbegin(), fx.pool.rend());
    auto rscores = score_candidates(reversed, fx.ctx, fx.embed, fx.exact, fx.spec);
    for (std::size_t i = 0; i < fx.pool.size(); ++i)
        CHECK(rscores[fx.pool.size() - 1 - i] == scores[i]);

    // a candidate with (mu, var) pinned at the incumbent with tiny variance
    // scores essentially zero
    EmbedFn zero_embed = [](const ArchGraph&) { return Vector(4, 0.0); };
    BlrPosterior sharp = fx.posterior;
    sharp.beta = 1e12;  // variance floor 1/beta ~ 1e-12
    sharp.mean.assign(4, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) sharp.chol(i, j) = (i == j) ? 1e6 : 0.0;
    AcquisitionContext c2;
    c2.posteriors = {&sharp};
    c2.incumbent = {0.0};  // mu of the zero embedding is exactly the incumbent
    auto s2 = score_candidates({fx.pool[0]}, c2, zero_embed, fx.exact, fx.spec);
    CHECK(s2[0][0] < 1e-5);

    // errors carry the offending candidate id
    EmbedFn broken = [&](const ArchGraph& g) -> Vector {
        if (g.id == fx.graphs[3].id) throw std::runtime_error("boom");
        return fx.embed(g);
    };
    try {
        score_candidates(fx.pool, c2, broken, fx.exact, fx.spec);
        FAIL("expected an exception");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find(fx.graphs[3].id) != std::string::npos);
    }
}

TEST_CASE("score_candidates: exact objectives bypass the surrogate") {
    ScoringFixture fx(10);
    ObjectiveSpec spec;
    spec.names = {"accuracy", "params"};
    spec.directions = {Direction::maximize, Direction::minimize};
    spec.costly = {true, false};
    AcquisitionContext ctx;
    ctx.posteriors = {&fx.posterior, nullptr};
    ctx.incumbent = {fx.ctx.incumbent[0], 0.0};
    ExactObjectiveFn exact = [](const ArchGraph& g, std::size_t) {
        return static_cast<double>(g.node_count);
    };
    auto scores = score_candidates(fx.pool, ctx, fx.embed, exact, spec);
    for (std::size_t i = 0; i < scores.size(); ++i)
        CHECK(scores[i][1] == -static_cast<double>(fx.pool[i]->node_count));
}

TEST_CASE("select_batch: top-l, exclusion, fill across fronts, rank invariance") {
    ScoringFixture fx(30);
    Rng rng(77);

    // m = 1: selection equals top-l by score with ascending-id ties
    std::vector<ObjectiveVector> scores(fx.pool.size());
    for (auto& s : scores) s = {urand(rng, 0, 1)};
    scores[4][0] = scores[9][0];  // force one tie
    auto picked = select_batch(fx.pool, scores, 5, {});
    std::vector<std::size_t> order(fx.pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a][0] != scores[b][0]) return scores[a][0] > scores[b][0];
        return fx.pool[a]->id < fx.pool[b]->id;
    });
    REQUIRE(picked.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(picked[i] == order[i]);

    // l larger than the pool returns everything
    CHECK(select_batch(fx.pool, scores, 1000, {}).size() == fx.pool.size());

    // excluded ids never appear
    std::unordered_set<std::string> exclude{fx.graphs[order[0]].id,
                                            fx.graphs[order[1]].id};
    for (std::size_t idx : select_batch(fx.pool, scores, 10, exclude)) {
        CHECK(!exclude.count(fx.pool[idx]->id));
    }
    // empty post-exclusion pool gives an empty batch
    std::unordered_set<std::string> all;
    for (const auto& g : fx.graphs) all.insert(g.id);
    CHECK(select_batch(fx.pool, scores, 3, all).empty());

    // strictly increasing transform of a single-objective score leaves the
    // chosen id set unchanged
    std::vector<ObjectiveVector> mapped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        mapped[i] = {std::pow(scores[i][0], 3.0) + 2.0 * scores[i][0]};
    auto picked2 = select_batch(fx.pool, mapped, 5, {});
    std::set<std::string> ids1, ids2;
    for (auto i : picked) ids1.insert(fx.pool[i]->id);
    for (auto i : picked2) ids2.insert(fx.pool[i]->id);
    CHECK(ids1 == ids2);

    // multi-objective: fills from successive fronts when front 1 is small
    std::vector<ObjectiveVector> mo = {{1.0, 0.0}, {0.0, 1.0}, {0.9, 0.9},
                                       {0.1, 0.1}, {0.2, 0.05}};
    std::vector<const ArchGraph*> pool5(fx.pool.begin(), fx.pool.begin() + 5);
    auto sel = select_batch(pool5, mo, 4, {});
    REQUIRE(sel.size() == 4);
    // front 1 = {0,1,2}; the fourth pick must come from front 2 = {3,4}
    std::set<std::size_t> first3(sel.begin(), sel.begin() + 3);
    CHECK(first3 == std::set<std::size_t>{0, 1, 2});
    CHECK((sel[3] == 3 || sel[3] == 4));
}
