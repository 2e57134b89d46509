#include "bogcn/bayes_head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bogcn {

double logit(double t, const LogitTransform& tr) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("logit: value outside [0,1]");
    const double c = std::clamp(t, tr.epsilon, 1.0 - tr.epsilon);
    return std::log(c / (1.0 - c));
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_inputs(const Matrix& embeddings, const Vector& accuracies, double alpha,
                  double beta) {
    if (embeddings.rows() == 0 || embeddings.cols() == 0)
        throw std::invalid_argument("blr: empty design matrix");
    if (embeddings.rows() != accuracies.size())
        throw std::invalid_argument("blr: row/target count mismatch");
    if (!(alpha > 0.0) || !(beta > 0.0))
        throw std::invalid_argument("blr: precisions must be positive");
    for (std::size_t i = 0; i < embeddings.size(); ++i)
        if (!std::isfinite(embeddings.data()[i]))
            throw std::invalid_argument("blr: non-finite embedding entry");
}

}  // namespace

BlrPosterior blr_fit(const Matrix& embeddings, const Vector& accuracies,
                     double alpha, double beta, const LogitTransform& tr) {
    check_inputs(embeddings, accuracies, alpha, beta);
    const std::size_t n = embeddings.rows(), d = embeddings.cols();

    BlrPosterior p;
    p.alpha = alpha;
    p.beta = beta;
    p.design = embeddings;
    p.feature_dim = d;
    p.sample_count = n;
    p.targets.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.targets[i] = logit(accuracies[i], tr);

    Matrix precision = matmul_ta(embeddings, embeddings);
    for (std::size_t i = 0; i < precision.size(); ++i) precision.data()[i] *= beta;
    for (std::size_t i = 0; i < d; ++i) precision(i, i) += alpha;

    p.chol = cholesky(precision);
    p.covariance = cholesky_inverse(p.chol);

    Vector rhs = matvec_t(embeddings, p.targets);
    for (auto& x : rhs) x *= beta;
    p.mean = cholesky_solve(p.chol, rhs);
    return p;
}

std::pair<double, double> blr_predict(const BlrPosterior& p, const Vector& phi) {
    if (phi.size() != p.feature_dim)
        throw std::invalid_argument("blr_predict: embedding length mismatch");
    const double mu = dot(p.mean, phi);
    const Vector u = solve_lower(p.chol, phi);  // phi^T S_N phi = |L^{-1} phi|^2
    const double var = 1.0 / p.beta + norm_sq(u);
    return {mu, var};
}

void blr_predict_batch_serial(const BlrPosterior& p, const Matrix& embeddings,
                              Vector& mean_out, Vector& var_out) {
    const std::size_t n = embeddings.rows();
    mean_out.resize(n);
    var_out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto [mu, var] = blr_predict(p, embeddings.row_copy(i));
        mean_out[i] = mu;
        var_out[i] = var;
    }
}

void blr_predict_batch(const BlrPosterior& p, const Matrix& embeddings,
                       Vector& mean_out, Vector& var_out) {
    const std::size_t n = embeddings.rows();
    mean_out.resize(n);
    var_out.resize(n);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        auto [mu, var] = blr_predict(p, embeddings.row_copy(i));
        mean_out[i] = mu;
        var_out[i] = var;
    }
}

double log_marginal_likelihood(const Matrix& embeddings, const Vector& accuracies,
                               double alpha, double beta, const LogitTransform& tr) {
    const BlrPosterior p = blr_fit(embeddings, accuracies, alpha, beta, tr);
    const std::size_t n = p.sample_count, d = p.feature_dim;
    const Vector fit = matvec(p.design, p.mean);
    double resid = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = p.targets[i] - fit[i];
        resid += r * r;
    }
    return 0.5 * static_cast<double>(d) * std::log(alpha) +
           0.5 * static_cast<double>(n) * std::log(beta) - 0.5 * beta * resid -
           0.5 * alpha * norm_sq(p.mean) - 0.5 * cholesky_logdet(p.chol) -
           0.5 * static_cast<double>(n) * kLog2Pi;
}

HyperparamResult optimize_hyperparams(const Matrix& embeddings,
                                      const Vector& accuracies,
                                      const LogitTransform& tr) {
    if (embeddings.rows() < 2)
        throw std::invalid_argument("optimize_hyperparams: need n >= 2");
    check_inputs(embeddings, accuracies, 1.0, 1.0);

    bool all_equal = true;
    for (std::size_t i = 1; i < accuracies.size(); ++i)
        if (logit(accuracies[i], tr) != logit(accuracies[0], tr)) {
            all_equal = false;
            break;
        }
    if (all_equal) return HyperparamResult{1.0, 100.0, true};

    auto evidence = [&](double la, double lb) {
        return log_marginal_likelihood(embeddings, accuracies, std::pow(10.0, la),
                                       std::pow(10.0, lb), tr);
    };

    // best of the 7x7 log10 grid over [1e-4, 1e4]
    double best_la = 0.0, best_lb = 0.0;
    double best = -HUGE_VAL;
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
            const double la = -4.0 + 8.0 * i / 6.0;
            const double lb = -4.0 + 8.0 * j / 6.0;
            const double v = evidence(la, lb);
            if (v > best) {
                best = v;
                best_la = la;
                best_lb = lb;
            }
        }
    }

    double step = 8.0 / 6.0;
    for (int round = 0; round < 3; ++round) {
        step *= 0.5;
        bool moved = true;
        while (moved) {
            moved = false;
            const double cand[4][2] = {{best_la + step, best_lb},
                                       {best_la - step, best_lb},
                                       {best_la, best_lb + step},
                                       {best_la, best_lb - step}};
            for (const auto& c : cand) {
                const double v = evidence(c[0], c[1]);
                if (v > best) {
                    best = v;
                    best_la = c[0];
                    best_lb = c[1];
                    moved = true;
                }
            }
        }
    }
    return HyperparamResult{std::pow(10.0, best_la), std::pow(10.0, best_lb), false};
}

}  // namespace bogcn
