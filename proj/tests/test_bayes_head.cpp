#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bogcn/bayes_head.hpp"
#include "bogcn/gcn.hpp"
#include "bogcn/rng.hpp"
#include "test_util.hpp"

using namespace bogcn;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double normal_sample(Rng& rng) {
    const double u1 = std::max(urand01(rng), 1e-300);
    const double u2 = urand01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Dense reference: S = (aI + b Phi^T Phi)^{-1} by explicit inverse,
/// m = b S Phi^T z.
struct DenseBlr {
    Matrix s;
    Vector m;
    double beta;

    static DenseBlr fit(const Matrix& phi, const Vector& z, double alpha, double beta) {
        const std::size_t d = phi.cols();
        Matrix prec = matmul_ta(phi, phi);
        for (std::size_t i = 0; i < prec.size(); ++i) prec.data()[i] *= beta;
        for (std::size_t i = 0; i < d; ++i) prec(i, i) += alpha;
        DenseBlr out;
        out.s = testutil::gauss_jordan_inverse(prec);
        Vector rhs = matvec_t(phi, z);
        for (auto& x : rhs) x *= beta;
        out.m = matvec(out.s, rhs);
        out.beta = beta;
        return out;
    }
    std::pair<double, double> predict(const Vector& q) const {
        double quad = 0.0;
        const Vector sq = matvec(s, q);
        for (std::size_t i = 0; i < q.size(); ++i) quad += q[i] * sq[i];
        return {dot(m, q), 1.0 / beta + quad};
    }
};

Vector logits_of(const Vector& acc) {
    Vector z(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) z[i] = logit(acc[i]);
    return z;
}

}  // namespace

TEST_CASE("logit basics") {
    CHECK(logit(0.5) == 0.0);
    CHECK(logit(0.9) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
    CHECK(std::isfinite(logit(1.0)));
    CHECK(logit(1.0) == doctest::Approx(logit(1.0 - 1e-6)));
    CHECK(std::isfinite(logit(0.0)));
    CHECK_THROWS_AS(logit(1.5), std::invalid_argument);
    CHECK_THROWS_AS(logit(-0.1), std::invalid_argument);

    // strictly increasing, inverse of sigmoid away from the clamp
    for (double t = 0.01; t < 0.99; t += 0.01)
        CHECK(sigmoid(logit(t)) == doctest::Approx(t).epsilon(1e-12));
}

TEST_CASE("blr_fit 1x1 hand example") {
    Matrix phi(1, 1);
    phi(0, 0) = 1.0;
    const double t = sigmoid(1.0);  // z = 1
    BlrPosterior p = blr_fit(phi, {t}, 1.0, 1.0);
    CHECK(p.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p.mean[0] == doctest::Approx(0.5).epsilon(1e-9));

    auto [mu, var] = blr_predict(p, {1.0});
    CHECK(mu == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.5).epsilon(1e-9));

    auto [mu0, var0] = blr_predict(p, {0.0});
    CHECK(mu0 == 0.0);
    CHECK(var0 == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(blr_predict(p, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("large alpha drives the posterior mean to zero") {
    Rng rng(4);
    Matrix phi = testutil::random_matrix(rng, 20, 4, -1, 1);
    Vector acc(20);
    for (auto& a : acc) a = urand(rng, 0.2, 0.9);
    BlrPosterior p = blr_fit(phi, acc, 1e9, 1.0);
    for (double m : p.mean) CHECK(std::fabs(m) < 1e-6);
}

TEST_CASE("posterior matches the dense explicit-inverse reference") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 1 + rand_index(rng, 100);
        const std::size_t d = 1 + rand_index(rng, 16);
        Matrix phi = testutil::random_matrix(rng, n, d, -2, 2);
        Vector acc(n);
        for (auto& a : acc) a = urand(rng, 0.05, 0.95);
        const double alpha = std::pow(10.0, urand(rng, -2, 2));
        const double beta = std::pow(10.0, urand(rng, -2, 2));

        BlrPosterior p = blr_fit(phi, acc, alpha, beta);
        DenseBlr ref = DenseBlr::fit(phi, logits_of(acc), alpha, beta);

        for (std::size_t i = 0; i < d; ++i) {
            CHECK(p.mean[i] == doctest::Approx(ref.m[i]).epsilon(1e-8));
            for (std::size_t j = 0; j < d; ++j)
                CHECK(p.covariance(i, j) == doctest::Approx(ref.s(i, j)).epsilon(1e-8));
        }

        // identities: S_N * (aI + b Phi^T Phi) = I, symmetry
        Matrix prec = matmul_ta(phi, phi);
        for (std::size_t i = 0; i < prec.size(); ++i) prec.data()[i] *= beta;
        for (std::size_t i = 0; i < d; ++i) prec(i, i) += alpha;
        Matrix ident = matmul(p.covariance, prec);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                CHECK(ident(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-8));
                CHECK(p.covariance(i, j) ==
                      doctest::Approx(p.covariance(j, i)).epsilon(1e-10));
            }

        Vector q(d);
        for (auto& x : q) x = urand(rng, -2, 2);
        auto [mu, var] = blr_predict(p, q);
        auto [rmu, rvar] = ref.predict(q);
        CHECK(mu == doctest::Approx(rmu).epsilon(1e-8));
        CHECK(var == doctest::Approx(rvar).epsilon(1e-8));
        CHECK(var >= 1.0 / beta);
    }
}

TEST_CASE("adding a record never increases predictive variance") {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rand_index(rng, 40);
        const std::size_t d = 1 + rand_index(rng, 8);
        Matrix phi = testutil::random_matrix(rng, n, d, -1.5, 1.5);
        Vector acc(n);
        for (auto& a : acc) a = urand(rng, 0.1, 0.9);
        Matrix phi_small(n - 1, d);
        Vector acc_small(acc.begin(), acc.end() - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) phi_small.set_row(i, phi.row_copy(i));

        const double alpha = 0.7, beta = 55.0;
        BlrPosterior small = blr_fit(phi_small, acc_small, alpha, beta);
        BlrPosterior full = blr_fit(phi, acc, alpha, beta);
        for (int probe = 0; probe < 10; ++probe) {
            Vector q(d);
            for (auto& x : q) x = urand(rng, -2, 2);
            CHECK(blr_predict(full, q).second <=
                  blr_predict(small, q).second + 1e-12);
        }
    }
}

TEST_CASE("log marginal likelihood: scalar pin and the Gaussian-marginal identity") {
    Matrix phi(1, 1);
    phi(0, 0) = 1.0;
    const double expect = -0.25 - 0.5 * std::log(2.0) - 0.5 * std::log(2.0 * M_PI);
    CHECK(log_marginal_likelihood(phi, {sigmoid(1.0)}, 1.0, 1.0) ==
          doctest::Approx(expect).epsilon(1e-9));

    // direct evidence route: C = I/b + Phi Phi^T / a
    Rng rng(12);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 1 + rand_index(rng, 30);
        const std::size_t d = 1 + rand_index(rng, 8);
        Matrix ph = testutil::random_matrix(rng, n, d, -1.5, 1.5);
        Vector acc(n);
        for (auto& a : acc) a = urand(rng, 0.1, 0.9);
        const double alpha = std::pow(10.0, urand(rng, -1.5, 1.5));
        const double beta = std::pow(10.0, urand(rng, -1.5, 1.5));

        const Vector z = logits_of(acc);
        Matrix c = matmul_tb(ph, ph);
        for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] /= alpha;
        for (std::size_t i = 0; i < n; ++i) c(i, i) += 1.0 / beta;
        Matrix cinv = testutil::gauss_jordan_inverse(c);
        double quad = 0.0;
        const Vector cz = matvec(cinv, z);
        for (std::size_t i = 0; i < n; ++i) quad += z[i] * cz[i];
        const double direct = -0.5 * quad - 0.5 * testutil::gauss_jordan_logdet(c) -
                              0.5 * static_cast<double>(n) * kLog2Pi;

        CHECK(log_marginal_likelihood(ph, acc, alpha, beta) ==
              doctest::Approx(direct).epsilon(1e-6));
    }
}

TEST_CASE("log marginal likelihood is finite across the hyperparameter sweep") {
    Rng rng(13);
    Matrix phi = testutil::random_matrix(rng, 25, 6, -1, 1);
    Vector acc(25);
    for (auto& a : acc) a = urand(rng, 0.2, 0.8);
    for (double la = -6; la <= 6; la += 2)
        for (double lb = -6; lb <= 6; lb += 2)
            CHECK(std::isfinite(log_marginal_likelihood(
                phi, acc, std::pow(10.0, la), std::pow(10.0, lb))));
}

TEST_CASE("optimize_hyperparams: deterministic, never below the grid seeds") {
    Rng rng(14);
    Matrix phi = testutil::random_matrix(rng, 40, 6, -1, 1);
    Vector acc(40);
    for (auto& a : acc) a = urand(rng, 0.2, 0.8);

    HyperparamResult h1 = optimize_hyperparams(phi, acc);
    HyperparamResult h2 = optimize_hyperparams(phi, acc);
    CHECK(h1.alpha == h2.alpha);
    CHECK(h1.beta == h2.beta);
    CHECK(!h1.degenerate);

    const double found = log_marginal_likelihood(phi, acc, h1.alpha, h1.beta);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            const double a = std::pow(10.0, -4.0 + 8.0 * i / 6.0);
            const double b = std::pow(10.0, -4.0 + 8.0 * j / 6.0);
            CHECK(found >= log_marginal_likelihood(phi, acc, a, b) - 1e-12);
        }
}

TEST_CASE("optimize_hyperparams flags degenerate targets") {
    Matrix phi(3, 2);
    phi(0, 0) = 1;
    phi(1, 1) = 1;
    phi(2, 0) = 0.5;
    HyperparamResult h = optimize_hyperparams(phi, {0.5, 0.5, 0.5});
    CHECK(h.degenerate);
    CHECK(h.alpha == 1.0);
    CHECK(h.beta == 100.0);
}

TEST_CASE("optimize_hyperparams recovers the noise precision within 2x") {
    // synthetic linear-Gaussian data with known generative precisions
    Rng rng(15);
    const std::size_t n = 500, d = 8;
    const double alpha_true = 2.0, beta_true = 400.0;
    Vector w(d);
    for (auto& x : w) x = normal_sample(rng) / std::sqrt(alpha_true);
    Matrix phi = testutil::random_matrix(rng, n, d, -1, 1);
    Vector acc(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double z =
            dot(w, phi.row_copy(i)) + normal_sample(rng) / std::sqrt(beta_true);
        acc[i] = sigmoid(z);
    }
    HyperparamResult h = optimize_hyperparams(phi, acc);
    CHECK(h.beta >= beta_true / 2.0);
    CHECK(h.beta <= beta_true * 2.0);
}

TEST_CASE("ranking by mu matches ranking by sigmoid(mu)") {
    Rng rng(16);
    Matrix phi = testutil::random_matrix(rng, 30, 5, -1, 1);
    Vector acc(30);
    for (auto& a : acc) a = urand(rng, 0.1, 0.9);
    BlrPosterior p = blr_fit(phi, acc, 0.5, 50.0);

    std::vector<double> mus;
    for (int i = 0; i < 40; ++i) {
        Vector q(5);
        for (auto& x : q) x = urand(rng, -2, 2);
        mus.push_back(blr_predict(p, q).first);
    }
    std::vector<std::size_t> by_mu(mus.size()), by_sig(mus.size());
    std::iota(by_mu.begin(), by_mu.end(), 0);
    by_sig = by_mu;
    std::sort(by_mu.begin(), by_mu.end(),
              [&](std::size_t a, std::size_t b) { return mus[a] < mus[b]; });
    std::sort(by_sig.begin(), by_sig.end(), [&](std::size_t a, std::size_t b) {
        return sigmoid(mus[a]) < sigmoid(mus[b]);
    });
    CHECK(by_mu == by_sig);
}

TEST_CASE("weak-prior BLR reproduces a least-squares head refit in logit space") {
    // embeddings from an actual trained GCN
    Rng rng(17);
    OpVocabulary vocab{{"a", "b", "c", "d", "e"}};
    std::vector<EncodedGraph> inputs;
    Vector targets;
    for (int i = 0; i < 120; ++i) {
        inputs.push_back(encode(testutil::random_graph(rng, 3, 7, 5), vocab));
        targets.push_back(urand(rng, 0.2, 0.9));
    }
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.max_epochs = 40;
    cfg.patience = 40;
    GcnParams p = train_gcn(GcnParams::init(vocab.feature_width(), 8, 2, 21), inputs,
                            targets, cfg, LossKind::mse);
    std::vector<const EncodedGraph*> ptrs;
    for (const auto& e : inputs) ptrs.push_back(&e);
    Matrix phi = embed_batch(p, ptrs);

    const Vector z = logits_of(targets);
    // least-squares refit of the head (no bias) via the dense oracle
    Matrix gram = matmul_ta(phi, phi);
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += 1e-10;
    const Vector wls = matvec(testutil::gauss_jordan_inverse(gram), matvec_t(phi, z));

    BlrPosterior post = blr_fit(phi, targets, 1e-8, 1e6);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Vector row = phi.row_copy(i);
        CHECK(std::fabs(dot(wls, row) - blr_predict(post, row).first) < 1e-3);
    }
}
