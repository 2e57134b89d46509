#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bogcn/acquisition.hpp"
#include "bogcn/arch_graph.hpp"
#include "bogcn/bayes_head.hpp"
#include "bogcn/bench.hpp"
#include "bogcn/gcn.hpp"
#include "bogcn/oracle.hpp"
#include "bogcn/rng.hpp"

#include "json.hpp"

namespace bogcn {

struct SearchConfig {
    std::size_t init_samples = 50;
    std::size_t batch_l = 10;
    std::size_t retrain_k = 10;    // BLR updates per GCN retrain
    std::size_t pool_size = 0;     // candidate pool per iteration; 0 = whole space
    std::size_t max_evaluations = 0;  // 0 = space size
    double threshold = 1.0;        // fraction of the optimal front to recover
    std::uint64_t seed = 0;
    LossKind loss = LossKind::exp_weighted;
    bool point_estimate_only = false;  // rank by predictor output, no BLR/EI
    PredictorKind predictor = PredictorKind::gcn;
    ObjectiveSpec objectives = ObjectiveSpec::single("accuracy");
    TrainConfig train;             // surrogate (re)training schedule
    std::size_t hidden_dim = 64;
    std::size_t layer_count = 4;   // graph layers; the MLP uses 2 hidden layers
    bool reoptimize_hyperparams = true;  // refresh (alpha, beta) at every BLR update
    bool charge_failed_evaluations = true;
    std::size_t evolution_population = 50;
    std::size_t evolution_sample = 10;

    void validate(std::size_t space_size) const;
    nlohmann::json to_json() const;
    static SearchConfig from_json(const nlohmann::json& j);
};

struct IterationStat {
    std::size_t iteration = 0;
    std::size_t evaluations_used = 0;
    Vector best_per_objective;  // raw values, direction-adjusted best so far
    std::size_t front_size = 0;
};

struct SearchReport {
    std::string algorithm;  // bogcn, gcn-point, bomlp, mlp-point, random, evolution
    SearchConfig config;
    std::vector<IterationStat> per_iteration;
    std::vector<TrainedRecord> final_front;
    std::optional<std::size_t> evaluations_to_optimum;
    double recovered_fraction = 0.0;
    std::size_t evaluations_used = 0;

    nlohmann::json to_json(const OpVocabulary& vocab) const;
    /// Flat "iteration,evaluations,best_accuracy" trace of objective 0.
    std::string trace_csv() const;
};

/// Immutable per-run context: resolved config, the space and its encodings.
struct SearchContext {
    SearchConfig cfg;
    EvaluationOracle& oracle;
    const std::vector<ArchGraph>& space;
    const OpVocabulary& vocab;
    std::vector<EncodedGraph> space_encoded;
    std::unordered_map<std::string, std::size_t> space_index;

    static SearchContext make(SearchConfig cfg, EvaluationOracle& oracle,
                              const std::vector<ArchGraph>& space,
                              const OpVocabulary& vocab);
};

struct SearchState {
    std::vector<TrainedRecord> trained;  // the set U
    std::unordered_set<std::string> trained_ids;
    std::vector<std::size_t> front;  // indices into trained
    std::size_t evaluations_used = 0;
    std::size_t iteration = 0;
    Rng rng;

    // per-objective surrogate state; slots for exact objectives stay empty
    std::vector<GcnParams> gcn;
    std::vector<MlpParams> mlp;
    std::vector<TargetScaler> scalers;
    std::vector<BlrPosterior> posteriors;
    Vector incumbent_logit;  // max scaled-logit target, per objective

    // embedding caches, rebuilt at every predictor retrain
    std::vector<Matrix> space_embeddings;
    std::vector<std::vector<Vector>> trained_embeddings;

    // ground-truth front tracking (only when the oracle exposes one)
    std::vector<ObjectiveVector> optimal_vectors;  // sorted distinct
    std::vector<char> optimal_found;
    std::size_t optimal_found_count = 0;
    std::optional<std::size_t> evaluations_to_optimum;

    std::vector<IterationStat> history;

    double recovered_fraction() const {
        return optimal_vectors.empty()
                   ? 0.0
                   : static_cast<double>(optimal_found_count) /
                         static_cast<double>(optimal_vectors.size());
    }
};

/// Test seam: overrides the per-objective score of costly objectives.
struct StepHooks {
    std::function<double(const ArchGraph&, std::size_t)> score_override;
};

/// Samples n0 distinct architectures, evaluates them, trains the predictor
/// per costly objective (optionally warm-started from `pretrained`), fits
/// the Bayesian head and computes the initial front.
SearchState initialize(const SearchContext& ctx,
                       const std::vector<GcnParams>* pretrained = nullptr);

/// Untrained candidate indices for one iteration: the whole remainder when
/// cfg.pool_size is 0, else a uniform sample without replacement.
std::vector<std::size_t> sample_pool(const SearchConfig& cfg, SearchState& state,
                                     const std::vector<ArchGraph>& space);

/// One Algorithm-1 iteration: pool, score, select l, evaluate, update front,
/// retrain the predictor on every k-th iteration, refresh the BLR. Returns
/// false when the space is exhausted.
bool step(const SearchContext& ctx, SearchState& state,
          const StepHooks* hooks = nullptr);

bool stop_now(const SearchContext& ctx, const SearchState& state);

SearchReport make_report(const SearchContext& ctx, const SearchState& state);

/// Full search loop; stops on the tabular front-recovery criterion (when the
/// oracle knows its optimal front) or on the evaluation budget. When
/// checkpoint_path is set the full state is rewritten there every iteration.
SearchReport run(const SearchConfig& cfg, EvaluationOracle& oracle,
                 const std::vector<ArchGraph>& space, const OpVocabulary& vocab,
                 const std::vector<GcnParams>* pretrained = nullptr,
                 const std::string& checkpoint_path = "");

SearchReport run_random_baseline(const SearchConfig& cfg, EvaluationOracle& oracle,
                                 const std::vector<ArchGraph>& space,
                                 const OpVocabulary& vocab);

/// Regularized evolution: fixed population, tournament parenting, oldest-out
/// replacement. Mutations (op relabel / acyclicity-preserving edge toggle)
/// must land inside the tabular space; dead ends are resampled. Previously
/// evaluated children are served from cache without consuming budget.
SearchReport run_evolution_baseline(
    const SearchConfig& cfg, EvaluationOracle& oracle,
    const std::vector<ArchGraph>& space, const OpVocabulary& vocab,
    const std::function<void(const std::deque<std::size_t>&, std::size_t)>&
        cycle_observer = nullptr);

/// Carries the trained predictor weights of a finished (smaller-space) state
/// into a fresh initialization on a new space; the Bayesian head is refit
/// from scratch on the new initial samples.
SearchState transfer_pretrain(const SearchState& state_small,
                              const SearchContext& ctx_large);

void save_state(const std::string& path, const SearchContext& ctx,
                const SearchState& state);
SearchState load_state(const std::string& path, const SearchContext& ctx);

}  // namespace bogcn
