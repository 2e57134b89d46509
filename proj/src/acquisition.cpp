#include "bogcn/acquisition.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bogcn {

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double standard_normal_pdf(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779399461;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

double expected_improvement(double mu, double var, double f_best) {
    if (var < 0.0) throw std::invalid_argument("expected_improvement: negative variance");
    if (var == 0.0) return 0.0;
    const double sigma = std::sqrt(var);
    const double gamma = (mu - f_best) / sigma;
    const double ei = sigma * (gamma * standard_normal_cdf(gamma) + standard_normal_pdf(gamma));
    return ei > 0.0 ? ei : 0.0;
}

bool dominates(const ObjectiveVector& a, const ObjectiveVector& b,
               const ObjectiveSpec& spec) {
    if (a.size() != b.size() || a.size() != spec.m())
        throw std::invalid_argument("dominates: objective count mismatch");
    bool strictly_better = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = spec.directions[i] == Direction::maximize ? a[i] : -a[i];
        const double y = spec.directions[i] == Direction::maximize ? b[i] : -b[i];
        if (x < y) return false;
        if (x > y) strictly_better = true;
    }
    return strictly_better;
}

std::vector<std::size_t> pareto_front(const std::vector<ObjectiveVector>& points,
                                      const ObjectiveSpec& spec) {
    if (points.empty()) throw std::invalid_argument("pareto_front: empty input");
    const std::size_t n = points.size();

    // direction-adjusted copies so every coordinate is maximize
    std::vector<ObjectiveVector> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
        adj[i] = points[i];
        for (std::size_t k = 0; k < spec.m(); ++k)
            if (spec.directions[k] == Direction::minimize) adj[i][k] = -adj[i][k];
    }

    // simple cull: sweep in lexicographically decreasing order; each point
    // only needs to be checked against the current front
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (adj[a] != adj[b]) return adj[a] > adj[b];
        return a < b;
    });

    auto adj_dominates = [&](const ObjectiveVector& a, const ObjectiveVector& b) {
        bool strict = false;
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (a[k] < b[k]) return false;
            if (a[k] > b[k]) strict = true;
        }
        return strict;
    };

    std::vector<std::size_t> front;
    for (std::size_t idx : order) {
        bool dominated = false;
        for (std::size_t f : front)
            if (adj_dominates(adj[f], adj[idx])) {
                dominated = true;
                break;
            }
        if (!dominated) front.push_back(idx);
    }
    std::sort(front.begin(), front.end());
    return front;
}

std::vector<ObjectiveVector> score_candidates(
    const std::vector<const ArchGraph*>& pool, const AcquisitionContext& ctx,
    const EmbedFn& embed, const ExactObjectiveFn& exact, const ObjectiveSpec& spec) {
    if (pool.empty()) throw std::invalid_argument("score_candidates: empty pool");
    const std::size_t m = spec.m();
    if (ctx.posteriors.size() != m || ctx.incumbent.size() != m)
        throw std::invalid_argument("score_candidates: context size mismatch");

    std::vector<ObjectiveVector> scores(pool.size(), ObjectiveVector(m, 0.0));
    std::exception_ptr error;
    std::atomic<bool> failed{false};
#pragma omp parallel for schedule(dynamic, 64)
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (failed.load(std::memory_order_relaxed)) continue;
        try {
            const ArchGraph& g = *pool[i];
            Vector phi;
            bool have_phi = false;
            for (std::size_t k = 0; k < m; ++k) {
                if (spec.costly[k]) {
                    if (!have_phi) {
                        phi = embed(g);
                        have_phi = true;
                    }
                    auto [mu, var] = blr_predict(*ctx.posteriors[k], phi);
                    scores[i][k] = expected_improvement(mu, var, ctx.incumbent[k]);
                } else {
                    const double v = exact(g, k);
                    scores[i][k] =
                        spec.directions[k] == Direction::minimize ? -v : v;
                }
            }
        } catch (...) {
#pragma omp critical
            {
                if (!failed.exchange(true)) {
                    try {
                        std::throw_with_nested(std::runtime_error(
                            "score_candidates: candidate " + pool[i]->id));
                    } catch (...) {
                        error = std::current_exception();
                    }
                }
            }
        }
    }
    if (error) std::rethrow_exception(error);
    return scores;
}

namespace {

/// Sum of per-component competition ranks, normalized to [0,1] over the
/// given candidate positions. Invariant under strictly increasing maps of
/// any component.
Vector rank_scalarization(const std::vector<ObjectiveVector>& scores,
                          const std::vector<std::size_t>& candidates) {
    const std::size_t n = candidates.size();
    const std::size_t m = n == 0 ? 0 : scores[candidates[0]].size();
    Vector total(n, 0.0);
    if (n <= 1) return total;
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < m; ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores[candidates[a]][k] < scores[candidates[b]][k];
        });
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n &&
                   scores[candidates[order[j + 1]]][k] == scores[candidates[order[i]]][k])
                ++j;
            const double r = static_cast<double>(i) / static_cast<double>(n - 1);
            for (std::size_t q = i; q <= j; ++q) total[order[q]] += r;
            i = j + 1;
        }
    }
    return total;
}

}  // namespace

std::vector<std::size_t> select_batch(const std::vector<const ArchGraph*>& pool,
                                      const std::vector<ObjectiveVector>& scores,
                                      std::size_t l,
                                      const std::unordered_set<std::string>& exclude) {
    if (l < 1) throw std::invalid_argument("select_batch: l must be >= 1");
    if (scores.size() != pool.size())
        throw std::invalid_argument("select_batch: scores misaligned with pool");

    std::vector<std::size_t> remaining;
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (!exclude.count(pool[i]->id)) remaining.push_back(i);
    if (remaining.empty()) return {};

    // all score components are larger-is-better by construction
    ObjectiveSpec maxspec;
    const std::size_t m = scores[remaining[0]].size();
    for (std::size_t k = 0; k < m; ++k) {
        maxspec.names.push_back("s" + std::to_string(k));
        maxspec.directions.push_back(Direction::maximize);
        maxspec.costly.push_back(true);
    }

    const Vector scalar = rank_scalarization(scores, remaining);
    std::vector<double> scalar_of(pool.size(), 0.0);
    for (std::size_t i = 0; i < remaining.size(); ++i)
        scalar_of[remaining[i]] = scalar[i];

    std::vector<std::size_t> selected;
    std::vector<std::size_t> current = std::move(remaining);
    while (selected.size() < l && !current.empty()) {
        std::vector<ObjectiveVector> pts(current.size());
        for (std::size_t i = 0; i < current.size(); ++i) pts[i] = scores[current[i]];
        const std::vector<std::size_t> front_local = pareto_front(pts, maxspec);

        std::vector<std::size_t> front;
        std::vector<char> in_front(current.size(), 0);
        for (std::size_t fl : front_local) {
            front.push_back(current[fl]);
            in_front[fl] = 1;
        }
        std::sort(front.begin(), front.end(), [&](std::size_t a, std::size_t b) {
            if (scalar_of[a] != scalar_of[b]) return scalar_of[a] > scalar_of[b];
            return pool[a]->id < pool[b]->id;
        });
        for (std::size_t idx : front) {
            if (selected.size() >= l) break;
            selected.push_back(idx);
        }
        std::vector<std::size_t> next;
        for (std::size_t i = 0; i < current.size(); ++i)
            if (!in_front[i]) next.push_back(current[i]);
        current = std::move(next);
    }
    return selected;
}

}  // namespace bogcn
