#pragma once

#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "bogcn/arch_graph.hpp"
#include "bogcn/bayes_head.hpp"
#include "bogcn/objectives.hpp"

namespace bogcn {

double standard_normal_cdf(double x);
double standard_normal_pdf(double x);

/// Expected improvement over f_best under N(mu, sigma^2):
/// sigma * (gamma * Phi(gamma) + N(gamma)), gamma = (mu - f_best) / sigma.
/// A degenerate posterior (sigma = 0) scores 0 even when mu > f_best.
double expected_improvement(double mu, double var, double f_best);

/// Direction-adjusted Pareto dominance: a at least as good everywhere and
/// strictly better somewhere.
bool dominates(const ObjectiveVector& a, const ObjectiveVector& b,
               const ObjectiveSpec& spec);

/// Indices (ascending) of all points not dominated by any other point.
/// Duplicates of a front point are all included.
std::vector<std::size_t> pareto_front(const std::vector<ObjectiveVector>& points,
                                      const ObjectiveSpec& spec);

/// Scoring context for a candidate pool: per-objective incumbents in the
/// surrogate's (logit) scale and one fitted posterior per costly objective
/// (nullptr entries for exact objectives).
struct AcquisitionContext {
    Vector incumbent;
    std::vector<const BlrPosterior*> posteriors;
};

using EmbedFn = std::function<Vector(const ArchGraph&)>;
using ExactObjectiveFn = std::function<double(const ArchGraph&, std::size_t)>;

/// Per-candidate score vectors, all components larger-is-better: EI for
/// costly objectives, the (negated-if-minimize) exact value otherwise.
/// Output order matches pool order; evaluation is order-independent.
std::vector<ObjectiveVector> score_candidates(
    const std::vector<const ArchGraph*>& pool, const AcquisitionContext& ctx,
    const EmbedFn& embed, const ExactObjectiveFn& exact, const ObjectiveSpec& spec);

/// Non-dominated sorting selection: drops excluded ids, ranks the rest into
/// successive fronts of their score vectors, orders inside a front by a
/// rank-normalized scalarization (ties by ascending id) and returns the
/// first l positions into `pool`.
std::vector<std::size_t> select_batch(const std::vector<const ArchGraph*>& pool,
                                      const std::vector<ObjectiveVector>& scores,
                                      std::size_t l,
                                      const std::unordered_set<std::string>& exclude);

}  // namespace bogcn
