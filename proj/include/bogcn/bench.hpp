#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>

#include "bogcn/arch_graph.hpp"
#include "bogcn/gcn.hpp"
#include "bogcn/oracle.hpp"

namespace bogcn {

enum class PredictorKind { gcn, mlp };
PredictorKind predictor_kind_from_string(const std::string& s);
std::string to_string(PredictorKind k);

/// Deterministic desk-scale stand-in for a tabular NAS benchmark. The space
/// is the exhaustive enumeration of a closed cell family — a mandatory
/// chain plus optional skip edges, input/output endpoints and interchangeable
/// interior operations — so mutation-based baselines stay inside the table.
struct SyntheticBenchSpec {
    int min_nodes = 5;
    int max_nodes = 7;
    int op_count = 5;              // including the input and output ops
    std::size_t space_size = 10000;  // enumeration cap; family must fit
    std::uint64_t seed = 2718281828;

    void validate() const;
};

struct GeneratedBench {
    Dataset dataset;  // metrics: accuracy (hidden function), params (cost model)
    OpVocabulary vocab;
    std::string digest;
};

/// Enumerates the family, scores every cell with the seeded hidden accuracy
/// function (linear + pairwise op-count terms, edge count, longest path,
/// small per-id perturbation) and the per-op parameter cost model. Fully
/// deterministic per seed; the accuracy argmax is unique.
GeneratedBench generate_bench(const SyntheticBenchSpec& spec);

/// Content digest of a dataset (ids and objective bit patterns); the
/// committed reference benchmark is regression-tested against this.
std::string dataset_digest(const Dataset& ds);

/// Records with node_count in [min_nodes, max_nodes]; used for the
/// transfer-split experiments.
Dataset filter_by_nodes(const Dataset& ds, int min_nodes, int max_nodes);

/// Exact lookup oracle over an ingested dataset, restricted to the
/// objectives named in `spec` (in that order). The optimal front is
/// precomputed over the whole table.
class TabularOracle final : public EvaluationOracle {
public:
    TabularOracle(const Dataset& ds, const ObjectiveSpec& spec);

    ObjectiveVector evaluate(const ArchGraph& g) override;
    bool has_optimal_front() const override { return true; }
    const std::vector<ObjectiveVector>& optimal_front() const override {
        return optimal_front_;
    }
    double exact_value(const ArchGraph& g, std::size_t objective_index) const override;

    /// Deduplicated graphs of the table, in dataset order.
    const std::vector<ArchGraph>& space() const { return space_; }
    std::size_t size() const { return space_.size(); }

private:
    std::unordered_map<std::string, ObjectiveVector> table_;
    std::vector<ArchGraph> space_;
    std::vector<ObjectiveVector> optimal_front_;
};

struct EvalSplit {
    std::size_t train_n = 1000;
    std::size_t val_n = 100;
    std::size_t test_n = 10000;
};

/// Hidden width of the flat-encoding MLP baseline, sized like the
/// performance predictors of prior NAS work (far larger than the GCN).
extern const std::size_t kMlpBaselineHidden;

struct PredictorEvaluation {
    double pearson = 0.0;
    double spearman = 0.0;
    std::size_t train_n = 0, val_n = 0, test_n = 0;
};

/// Table-1-style protocol: seeded split, train the predictor on train_n
/// records with val_n held out for early stopping, report rank/linear
/// correlation between predictions and true values on the test split.
PredictorEvaluation eval_predictor(const Dataset& ds, const OpVocabulary& vocab,
                                   const EvalSplit& split, LossKind loss_kind,
                                   PredictorKind predictor, const TrainConfig& cfg,
                                   const std::string& objective = "accuracy",
                                   std::size_t hidden_dim = 64,
                                   std::size_t layer_count = 4);

}  // namespace bogcn
