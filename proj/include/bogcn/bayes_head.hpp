#pragma once

#include <cstdint>
#include <utility>

#include "bogcn/linalg.hpp"

namespace bogcn {

/// Clamped logit; maps (0,1) accuracies onto the pre-sigmoid scale so the
/// Bayesian head stays linear. Exact 0/1 inputs land on the clamp margin.
struct LogitTransform {
    double epsilon = 1e-6;
};

double logit(double t, const LogitTransform& tr = {});

/// Closed-form Bayesian linear regression state over frozen embeddings.
/// Precision matrix is alpha*I + beta*Phi^T*Phi; `covariance` is its
/// inverse, `chol` its lower Cholesky factor.
struct BlrPosterior {
    double alpha = 1.0;
    double beta = 100.0;
    Matrix design;      // n x d
    Vector targets;     // logit-space, length n
    Vector mean;        // m_N, length d
    Matrix covariance;  // S_N, d x d
    Matrix chol;        // lower factor of S_N^{-1}
    std::size_t feature_dim = 0;
    std::size_t sample_count = 0;
};

/// Fits the posterior: z = logit(t), S_N^{-1} = alpha*I + beta*Phi^T*Phi,
/// m_N = beta * S_N * Phi^T * z, solved through the Cholesky factor.
BlrPosterior blr_fit(const Matrix& embeddings, const Vector& accuracies,
                     double alpha, double beta, const LogitTransform& tr = {});

/// Predictive mean m_N . phi and variance 1/beta + phi^T S_N phi.
std::pair<double, double> blr_predict(const BlrPosterior& p, const Vector& phi);

/// Means and variances for every row of `embeddings`.
void blr_predict_batch(const BlrPosterior& p, const Matrix& embeddings,
                       Vector& mean_out, Vector& var_out);
void blr_predict_batch_serial(const BlrPosterior& p, const Matrix& embeddings,
                              Vector& mean_out, Vector& var_out);

/// Evidence of the targets under the (alpha, beta) prior:
/// (d/2)ln a + (n/2)ln b - (b/2)||z - Phi m||^2 - (a/2)m.m
/// - (1/2)ln|S_N^{-1}| - (n/2)ln 2pi.
double log_marginal_likelihood(const Matrix& embeddings, const Vector& accuracies,
                               double alpha, double beta,
                               const LogitTransform& tr = {});

struct HyperparamResult {
    double alpha = 1.0;
    double beta = 100.0;
    bool degenerate = false;  // all targets equal; defaults returned
};

/// Maximizes the evidence by coordinate ascent from a 7x7 log grid over
/// [1e-4, 1e4], three refinement rounds halving the log step. Deterministic;
/// the returned point is never worse than any grid seed.
HyperparamResult optimize_hyperparams(const Matrix& embeddings,
                                      const Vector& accuracies,
                                      const LogitTransform& tr = {});

}  // namespace bogcn
