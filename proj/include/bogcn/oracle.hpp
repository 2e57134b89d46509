#pragma once

#include <stdexcept>
#include <vector>

#include "bogcn/arch_graph.hpp"
#include "bogcn/objectives.hpp"

namespace bogcn {

/// Abstracts "fully train the sampled model": the search loop only ever
/// sees objective vectors, never evaluation cost. Tabular lookups,
/// synthetic functions and real trainers are interchangeable behind this.
class EvaluationOracle {
public:
    virtual ~EvaluationOracle() = default;

    /// Deterministic per graph id.
    virtual ObjectiveVector evaluate(const ArchGraph& g) = 0;

    /// Ground-truth Pareto front as distinct objective vectors, when the
    /// oracle covers a finite space exhaustively.
    virtual bool has_optimal_front() const { return false; }
    virtual const std::vector<ObjectiveVector>& optimal_front() const {
        throw std::logic_error("oracle: no optimal front available");
    }

    /// Exactly computable objective components (never charged to the
    /// budget); only called for objectives flagged non-costly.
    virtual double exact_value(const ArchGraph& g, std::size_t objective_index) const {
        (void)g;
        (void)objective_index;
        throw std::logic_error("oracle: exact objective values not available");
    }
};

}  // namespace bogcn
