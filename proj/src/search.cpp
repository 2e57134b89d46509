#include "bogcn/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace bogcn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config / report serialization

void SearchConfig::validate(std::size_t space_size) const {
    objectives.validate();
    train.validate();
    if (init_samples < 1) throw std::invalid_argument("search: init_samples must be >= 1");
    if (batch_l < 1) throw std::invalid_argument("search: batch_l must be >= 1");
    if (retrain_k < 1) throw std::invalid_argument("search: retrain_k must be >= 1");
    if (init_samples > space_size)
        throw std::invalid_argument("search: space smaller than init_samples");
    if (pool_size > space_size)
        throw std::invalid_argument("search: pool_size larger than the space");
    if (max_evaluations != 0 && max_evaluations < init_samples)
        throw std::invalid_argument("search: budget below init_samples");
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw std::invalid_argument("search: threshold must be in (0,1]");
    if (evolution_sample < 1 || evolution_population < evolution_sample)
        throw std::invalid_argument("search: evolution needs 1 <= sample <= population");
}

json SearchConfig::to_json() const {
    json j;
    j["init_samples"] = init_samples;
    j["batch_l"] = batch_l;
    j["retrain_k"] = retrain_k;
    j["pool_size"] = pool_size;
    j["max_evaluations"] = max_evaluations;
    j["threshold"] = threshold;
    j["seed"] = seed;
    j["loss"] = to_string(loss);
    j["point_estimate_only"] = point_estimate_only;
    j["predictor"] = to_string(predictor);
    json obj;
    obj["names"] = objectives.names;
    json dirs = json::array(), costly = json::array();
    for (auto d : objectives.directions) dirs.push_back(to_string(d));
    for (bool c : objectives.costly) costly.push_back(c);
    obj["directions"] = dirs;
    obj["costly"] = costly;
    j["objectives"] = obj;
    json t;
    t["learning_rate"] = train.learning_rate;
    t["batch_size"] = train.batch_size;
    t["max_epochs"] = train.max_epochs;
    t["patience"] = train.patience;
    t["validation_fraction"] = train.validation_fraction;
    j["train"] = t;
    j["hidden_dim"] = hidden_dim;
    j["layer_count"] = layer_count;
    j["reoptimize_hyperparams"] = reoptimize_hyperparams;
    j["charge_failed_evaluations"] = charge_failed_evaluations;
    j["evolution_population"] = evolution_population;
    j["evolution_sample"] = evolution_sample;
    return j;
}

SearchConfig SearchConfig::from_json(const json& j) {
    SearchConfig c;
    c.init_samples = j.at("init_samples").get<std::size_t>();
    c.batch_l = j.at("batch_l").get<std::size_t>();
    c.retrain_k = j.at("retrain_k").get<std::size_t>();
    c.pool_size = j.at("pool_size").get<std::size_t>();
    c.max_evaluations = j.at("max_evaluations").get<std::size_t>();
    c.threshold = j.at("threshold").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    c.point_estimate_only = j.at("point_estimate_only").get<bool>();
    c.predictor = predictor_kind_from_string(j.at("predictor").get<std::string>());
    c.objectives.names = j.at("objectives").at("names").get<std::vector<std::string>>();
    c.objectives.directions.clear();
    for (const auto& d : j.at("objectives").at("directions"))
        c.objectives.directions.push_back(d.get<std::string>() == "min"
                                              ? Direction::minimize
                                              : Direction::maximize);
    c.objectives.costly.clear();
    for (const auto& b : j.at("objectives").at("costly"))
        c.objectives.costly.push_back(b.get<bool>());
    const auto& t = j.at("train");
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.max_epochs = t.at("max_epochs").get<int>();
    c.train.patience = t.at("patience").get<int>();
    c.train.validation_fraction = t.at("validation_fraction").get<double>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.layer_count = j.at("layer_count").get<std::size_t>();
    c.reoptimize_hyperparams = j.at("reoptimize_hyperparams").get<bool>();
    c.charge_failed_evaluations = j.at("charge_failed_evaluations").get<bool>();
    c.evolution_population = j.at("evolution_population").get<std::size_t>();
    c.evolution_sample = j.at("evolution_sample").get<std::size_t>();
    return c;
}

namespace {

json graph_to_json(const ArchGraph& g, const OpVocabulary& vocab) {
    json j;
    j["id"] = g.id;
    j["node_count"] = g.node_count;
    json adj = json::array();
    for (int i = 0; i < g.node_count; ++i) {
        json row = json::array();
        for (int c = 0; c < g.node_count; ++c) row.push_back(g.edge(i, c));
        adj.push_back(std::move(row));
    }
    j["adjacency"] = std::move(adj);
    json ops = json::array();
    for (int label : g.op_labels)
        ops.push_back(vocab.names.at(static_cast<std::size_t>(label)));
    j["ops"] = std::move(ops);
    return j;
}

}  // namespace

json SearchReport::to_json(const OpVocabulary& vocab) const {
    json j;
    j["algorithm"] = algorithm;
    j["seed"] = config.seed;
    j["config"] = config.to_json();
    json rows = json::array();
    for (const auto& r : per_iteration) {
        json row;
        row["iteration"] = r.iteration;
        row["evaluations_used"] = r.evaluations_used;
        row["best_per_objective"] = r.best_per_objective;
        row["front_size"] = r.front_size;
        rows.push_back(std::move(row));
    }
    j["per_iteration"] = std::move(rows);
    json front = json::array();
    for (const auto& rec : final_front) {
        json f = graph_to_json(rec.graph, vocab);
        json obj;
        for (std::size_t k = 0; k < config.objectives.m(); ++k)
            obj[config.objectives.names[k]] = rec.objectives[k];
        f["objectives"] = std::move(obj);
        front.push_back(std::move(f));
    }
    j["final_front"] = std::move(front);
    if (evaluations_to_optimum)
        j["evaluations_to_optimum"] = *evaluations_to_optimum;
    else
        j["evaluations_to_optimum"] = nullptr;
    j["recovered_fraction"] = recovered_fraction;
    j["evaluations_used"] = evaluations_used;
    return j;
}

std::string SearchReport::trace_csv() const {
    std::string out = "iteration,evaluations,best_accuracy\n";
    char buf[96];
    for (const auto& r : per_iteration) {
        const double best = r.best_per_objective.empty() ? 0.0 : r.best_per_objective[0];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", r.iteration,
                      r.evaluations_used, best);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Context and shared state plumbing

SearchContext SearchContext::make(SearchConfig cfg, EvaluationOracle& oracle,
                                  const std::vector<ArchGraph>& space,
                                  const OpVocabulary& vocab) {
    cfg.validate(space.size());
    if (cfg.max_evaluations == 0) cfg.max_evaluations = space.size();
    SearchContext ctx{std::move(cfg), oracle, space, vocab, {}, {}};
    ctx.space_encoded.reserve(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        ctx.space_encoded.push_back(encode(space[i], vocab));
        if (!ctx.space_index.emplace(space[i].id, i).second)
            throw std::invalid_argument("search: duplicate id in space: " + space[i].id);
    }
    return ctx;
}

namespace {

std::uint64_t derive_seed(std::uint64_t base, std::size_t objective,
                          std::size_t iteration, std::uint64_t salt) {
    return mix64(base ^ (0x9e3779b9ULL * (objective + 1)) ^
                 (0x61c88647ULL * (iteration + 1)) ^ salt);
}

void setup_optimum_tracking(const SearchContext& ctx, SearchState& st) {
    if (!ctx.oracle.has_optimal_front()) return;
    st.optimal_vectors = ctx.oracle.optimal_front();
    std::sort(st.optimal_vectors.begin(), st.optimal_vectors.end());
    st.optimal_vectors.erase(
        std::unique(st.optimal_vectors.begin(), st.optimal_vectors.end()),
        st.optimal_vectors.end());
    st.optimal_found.assign(st.optimal_vectors.size(), 0);
}

void note_objectives_seen(const SearchContext& ctx, SearchState& st,
                          const ObjectiveVector& v) {
    if (st.optimal_vectors.empty()) return;
    auto it = std::lower_bound(st.optimal_vectors.begin(), st.optimal_vectors.end(), v);
    if (it == st.optimal_vectors.end() || *it != v) return;
    const std::size_t pos = static_cast<std::size_t>(it - st.optimal_vectors.begin());
    if (st.optimal_found[pos]) return;
    st.optimal_found[pos] = 1;
    ++st.optimal_found_count;
    if (!st.evaluations_to_optimum &&
        st.recovered_fraction() >= ctx.cfg.threshold - 1e-12)
        st.evaluations_to_optimum = st.evaluations_used;
}

/// One oracle call with budget accounting and front-recovery tracking.
bool evaluate_graph(const SearchContext& ctx, SearchState& st, const ArchGraph& g) {
    ObjectiveVector v;
    try {
        v = ctx.oracle.evaluate(g);
    } catch (const std::exception& e) {
        std::cerr << "search: evaluation failed for " << g.id << ": " << e.what()
                  << "\n";
        if (ctx.cfg.charge_failed_evaluations) ++st.evaluations_used;
        return false;
    }
    ++st.evaluations_used;
    st.trained.push_back(TrainedRecord{g, v});
    st.trained_ids.insert(g.id);
    note_objectives_seen(ctx, st, v);
    return true;
}

void refresh_front(const SearchContext& ctx, SearchState& st) {
    if (st.trained.empty()) {
        st.front.clear();
        return;
    }
    std::vector<ObjectiveVector> values(st.trained.size());
    for (std::size_t i = 0; i < st.trained.size(); ++i) values[i] = st.trained[i].objectives;
    st.front = pareto_front(values, ctx.cfg.objectives);
}

void push_history(const SearchContext& ctx, SearchState& st) {
    IterationStat row;
    row.iteration = st.iteration;
    row.evaluations_used = st.evaluations_used;
    row.front_size = st.front.size();
    const std::size_t m = ctx.cfg.objectives.m();
    row.best_per_objective.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        const bool maximize = ctx.cfg.objectives.directions[k] == Direction::maximize;
        double best = maximize ? -HUGE_VAL : HUGE_VAL;
        for (const auto& rec : st.trained)
            best = maximize ? std::max(best, rec.objectives[k])
                            : std::min(best, rec.objectives[k]);
        row.best_per_objective[k] = best;
    }
    st.history.push_back(std::move(row));
}

Vector costly_targets(const SearchContext& ctx, SearchState& st, std::size_t k,
                      bool refit_scaler) {
    Vector raw(st.trained.size());
    for (std::size_t i = 0; i < st.trained.size(); ++i)
        raw[i] = st.trained[i].objectives[k];
    if (refit_scaler)
        st.scalers[k] = TargetScaler::fit(raw, ctx.cfg.objectives.directions[k]);
    Vector t(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) t[i] = st.scalers[k].apply(raw[i]);
    return t;
}

int space_node_capacity(const std::vector<ArchGraph>& space) {
    int cap = 1;
    for (const auto& g : space) cap = std::max(cap, g.node_count);
    return cap;
}

void rebuild_caches(const SearchContext& ctx, SearchState& st) {
    const std::size_t m = ctx.cfg.objectives.m();
    st.space_embeddings.assign(m, Matrix());
    st.trained_embeddings.assign(m, {});
    for (std::size_t k = 0; k < m; ++k) {
        if (!ctx.cfg.objectives.costly[k]) continue;
        if (ctx.cfg.predictor == PredictorKind::gcn) {
            std::vector<const EncodedGraph*> ptrs(ctx.space_encoded.size());
            for (std::size_t i = 0; i < ptrs.size(); ++i) ptrs[i] = &ctx.space_encoded[i];
            st.space_embeddings[k] = embed_batch(st.gcn[k], ptrs);
        } else {
            const std::size_t h = st.mlp[k].hidden_dim();
            Matrix emb(ctx.space.size(), h);
#pragma omp parallel for schedule(dynamic, 64)
            for (std::size_t i = 0; i < ctx.space.size(); ++i)
                emb.set_row(i, mlp_embed(st.mlp[k], ctx.space[i]));
            st.space_embeddings[k] = std::move(emb);
        }
        st.trained_embeddings[k].reserve(st.trained.size());
        for (const auto& rec : st.trained) {
            const std::size_t idx = ctx.space_index.at(rec.graph.id);
            st.trained_embeddings[k].push_back(st.space_embeddings[k].row_copy(idx));
        }
    }
}

void fit_predictors(const SearchContext& ctx, SearchState& st,
                    const std::vector<GcnParams>* pretrained) {
    const SearchConfig& cfg = ctx.cfg;
    const std::size_t m = cfg.objectives.m();
    st.gcn.resize(m);
    st.mlp.resize(m);
    st.scalers.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        if (!cfg.objectives.costly[k]) continue;
        const Vector targets = costly_targets(ctx, st, k, /*refit_scaler=*/true);
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, k, st.iteration, 0x7472ULL);
        if (cfg.predictor == PredictorKind::gcn) {
            std::vector<EncodedGraph> encoded;
            encoded.reserve(st.trained.size());
            for (const auto& rec : st.trained)
                encoded.push_back(ctx.space_encoded[ctx.space_index.at(rec.graph.id)]);
            GcnParams p0 =
                !st.gcn[k].layer_weights.empty()
                    ? st.gcn[k]
                    : (pretrained && k < pretrained->size() &&
                               !(*pretrained)[k].layer_weights.empty()
                           ? (*pretrained)[k]
                           : GcnParams::init(ctx.vocab.feature_width(), cfg.hidden_dim,
                                             cfg.layer_count,
                                             derive_seed(cfg.seed, k, 0, 0x696eULL)));
            if (p0.feature_dim() != ctx.vocab.feature_width())
                throw std::invalid_argument("search: predictor/vocabulary width mismatch");
            st.gcn[k] = train_gcn(p0, encoded, targets, tc, cfg.loss);
        } else {
            std::vector<const ArchGraph*> graphs;
            graphs.reserve(st.trained.size());
            for (const auto& rec : st.trained) graphs.push_back(&rec.graph);
            MlpParams p0 = !st.mlp[k].weights.empty()
                               ? st.mlp[k]
                               : MlpParams::init(space_node_capacity(ctx.space),
                                                 ctx.vocab.names.size(),
                                                 kMlpBaselineHidden, cfg.layer_count,
                                                 derive_seed(cfg.seed, k, 0, 0x696eULL),
                                                 /*allow_padding=*/true);
            st.mlp[k] = mlp_train(p0, graphs, targets, tc, cfg.loss);
        }
    }
    rebuild_caches(ctx, st);
}

void fit_blr(const SearchContext& ctx, SearchState& st) {
    const SearchConfig& cfg = ctx.cfg;
    if (cfg.point_estimate_only) return;
    const std::size_t m = cfg.objectives.m();
    st.posteriors.resize(m);
    st.incumbent_logit.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        if (!cfg.objectives.costly[k]) continue;
        const Vector targets = costly_targets(ctx, st, k, /*refit_scaler=*/true);
        const auto& rows = st.trained_embeddings[k];
        Matrix phi(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) phi.set_row(i, rows[i]);
        double alpha = st.posteriors[k].sample_count ? st.posteriors[k].alpha : 1.0;
        double beta = st.posteriors[k].sample_count ? st.posteriors[k].beta : 100.0;
        if (cfg.reoptimize_hyperparams && rows.size() >= 2) {
            const HyperparamResult h = optimize_hyperparams(phi, targets);
            alpha = h.alpha;
            beta = h.beta;
        }
        st.posteriors[k] = blr_fit(phi, targets, alpha, beta);
        st.incumbent_logit[k] = *std::max_element(st.posteriors[k].targets.begin(),
                                                  st.posteriors[k].targets.end());
    }
}

double head_preactivation_score(const SearchContext& ctx, const SearchState& st,
                                std::size_t k, std::size_t space_idx) {
    const Vector phi = st.space_embeddings[k].row_copy(space_idx);
    if (ctx.cfg.predictor == PredictorKind::gcn)
        return gcn_head_preactivation(st.gcn[k], phi);
    return dot(st.mlp[k].head_weight, phi) + st.mlp[k].head_bias;
}

}  // namespace

SearchState initialize(const SearchContext& ctx,
                       const std::vector<GcnParams>* pretrained) {
    const SearchConfig& cfg = ctx.cfg;
    SearchState st;
    st.rng = Rng(cfg.seed);
    setup_optimum_tracking(ctx, st);

    const auto indices =
        sample_without_replacement(st.rng, ctx.space.size(), cfg.init_samples);
    for (std::size_t idx : indices) evaluate_graph(ctx, st, ctx.space[idx]);
    if (st.trained.empty())
        throw std::runtime_error("search: every initial evaluation failed");

    fit_predictors(ctx, st, pretrained);
    fit_blr(ctx, st);
    refresh_front(ctx, st);
    push_history(ctx, st);
    return st;
}

std::vector<std::size_t> sample_pool(const SearchConfig& cfg, SearchState& state,
                                     const std::vector<ArchGraph>& space) {
    std::vector<std::size_t> untrained;
    untrained.reserve(space.size() - state.trained.size());
    for (std::size_t i = 0; i < space.size(); ++i)
        if (!state.trained_ids.count(space[i].id)) untrained.push_back(i);
    if (cfg.pool_size == 0 || untrained.size() <= cfg.pool_size) return untrained;
    const auto picks =
        sample_without_replacement(state.rng, untrained.size(), cfg.pool_size);
    std::vector<std::size_t> pool(picks.size());
    for (std::size_t i = 0; i < picks.size(); ++i) pool[i] = untrained[picks[i]];
    return pool;
}

bool step(const SearchContext& ctx, SearchState& st, const StepHooks* hooks) {
    const SearchConfig& cfg = ctx.cfg;
    ++st.iteration;
    const std::vector<std::size_t> pool = sample_pool(cfg, st, ctx.space);
    if (pool.empty()) return false;

    const std::size_t m = cfg.objectives.m();
    std::vector<ObjectiveVector> scores(pool.size(), ObjectiveVector(m, 0.0));
    for (std::size_t k = 0; k < m; ++k) {
        if (cfg.objectives.costly[k]) {
            if (hooks && hooks->score_override) {
                for (std::size_t i = 0; i < pool.size(); ++i)
                    scores[i][k] = hooks->score_override(ctx.space[pool[i]], k);
            } else if (cfg.point_estimate_only) {
#pragma omp parallel for schedule(static)
                for (std::size_t i = 0; i < pool.size(); ++i)
                    scores[i][k] = head_preactivation_score(ctx, st, k, pool[i]);
            } else {
                Matrix phi(pool.size(), st.space_embeddings[k].cols());
                for (std::size_t i = 0; i < pool.size(); ++i)
                    phi.set_row(i, st.space_embeddings[k].row_copy(pool[i]));
                Vector mu, var;
                blr_predict_batch(st.posteriors[k], phi, mu, var);
                for (std::size_t i = 0; i < pool.size(); ++i)
                    scores[i][k] =
                        expected_improvement(mu[i], var[i], st.incumbent_logit[k]);
            }
        } else {
            const bool minimize = cfg.objectives.directions[k] == Direction::minimize;
            for (std::size_t i = 0; i < pool.size(); ++i) {
                const double v = ctx.oracle.exact_value(ctx.space[pool[i]], k);
                scores[i][k] = minimize ? -v : v;
            }
        }
    }

    std::vector<const ArchGraph*> pool_ptrs(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool_ptrs[i] = &ctx.space[pool[i]];
    std::vector<std::size_t> selected =
        select_batch(pool_ptrs, scores, cfg.batch_l, st.trained_ids);
    // never overshoot the evaluation budget
    const std::size_t remaining =
        cfg.max_evaluations > st.evaluations_used
            ? cfg.max_evaluations - st.evaluations_used
            : 0;
    if (selected.size() > remaining) selected.resize(remaining);
    if (selected.empty()) return false;

    const std::size_t first_new = st.trained.size();
    for (std::size_t sel : selected) evaluate_graph(ctx, st, ctx.space[pool[sel]]);

    for (std::size_t k = 0; k < m; ++k) {
        if (!cfg.objectives.costly[k]) continue;
        for (std::size_t i = first_new; i < st.trained.size(); ++i) {
            const std::size_t idx = ctx.space_index.at(st.trained[i].graph.id);
            st.trained_embeddings[k].push_back(st.space_embeddings[k].row_copy(idx));
        }
    }

    refresh_front(ctx, st);
    if (st.iteration % cfg.retrain_k == 0) fit_predictors(ctx, st, nullptr);
    fit_blr(ctx, st);
    push_history(ctx, st);
    return true;
}

bool stop_now(const SearchContext& ctx, const SearchState& st) {
    if (!st.optimal_vectors.empty() &&
        st.recovered_fraction() >= ctx.cfg.threshold - 1e-12)
        return true;
    if (st.evaluations_used >= ctx.cfg.max_evaluations) return true;
    if (st.trained.size() >= ctx.space.size()) return true;
    return false;
}

SearchReport make_report(const SearchContext& ctx, const SearchState& st) {
    SearchReport rep;
    const SearchConfig& cfg = ctx.cfg;
    if (cfg.point_estimate_only)
        rep.algorithm = cfg.predictor == PredictorKind::mlp ? "mlp-point" : "gcn-point";
    else
        rep.algorithm = cfg.predictor == PredictorKind::mlp ? "bomlp" : "bogcn";
    rep.config = cfg;
    rep.per_iteration = st.history;
    for (std::size_t idx : st.front) rep.final_front.push_back(st.trained[idx]);
    rep.evaluations_to_optimum = st.evaluations_to_optimum;
    rep.recovered_fraction = st.recovered_fraction();
    rep.evaluations_used = st.evaluations_used;
    return rep;
}

SearchReport run(const SearchConfig& cfg, EvaluationOracle& oracle,
                 const std::vector<ArchGraph>& space, const OpVocabulary& vocab,
                 const std::vector<GcnParams>* pretrained,
                 const std::string& checkpoint_path) {
    bool any_costly = false;
    for (bool c : cfg.objectives.costly) any_costly |= c;
    if (!any_costly)
        throw std::invalid_argument("search: need at least one costly objective");
    SearchContext ctx = SearchContext::make(cfg, oracle, space, vocab);
    SearchState st = initialize(ctx, pretrained);
    if (!checkpoint_path.empty()) save_state(checkpoint_path, ctx, st);
    while (!stop_now(ctx, st)) {
        if (!step(ctx, st)) break;
        if (!checkpoint_path.empty()) save_state(checkpoint_path, ctx, st);
    }
    return make_report(ctx, st);
}

SearchReport run_random_baseline(const SearchConfig& cfg, EvaluationOracle& oracle,
                                 const std::vector<ArchGraph>& space,
                                 const OpVocabulary& vocab) {
    SearchContext ctx = SearchContext::make(cfg, oracle, space, vocab);
    SearchState st;
    st.rng = Rng(ctx.cfg.seed);
    setup_optimum_tracking(ctx, st);

    std::vector<std::size_t> order(space.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, st.rng);

    for (std::size_t idx : order) {
        if (st.evaluations_used >= ctx.cfg.max_evaluations) break;
        if (!st.optimal_vectors.empty() &&
            st.recovered_fraction() >= ctx.cfg.threshold - 1e-12)
            break;
        evaluate_graph(ctx, st, space[idx]);
        if (st.evaluations_used % ctx.cfg.batch_l == 0) {
            ++st.iteration;
            refresh_front(ctx, st);
            push_history(ctx, st);
        }
    }
    refresh_front(ctx, st);
    if (st.history.empty() ||
        st.history.back().evaluations_used != st.evaluations_used) {
        ++st.iteration;
        push_history(ctx, st);
    }
    SearchReport rep = make_report(ctx, st);
    rep.algorithm = "random";
    return rep;
}

namespace {

/// Mutates within the space: op relabel or acyclicity-preserving edge
/// toggle, retried until the child is a member of the table.
std::optional<std::size_t> mutate_in_space(const SearchContext& ctx, Rng& rng,
                                           const ArchGraph& parent, int attempts) {
    const int n = parent.node_count;
    for (int a = 0; a < attempts; ++a) {
        std::vector<std::uint8_t> adj = parent.adjacency;
        std::vector<int> ops = parent.op_labels;
        if (rand_index(rng, 2) == 0) {
            const int node = static_cast<int>(rand_index(rng, n));
            const int shift =
                1 + static_cast<int>(rand_index(rng, ctx.vocab.names.size() - 1));
            ops[node] = (ops[node] + shift) % static_cast<int>(ctx.vocab.names.size());
        } else {
            const int i = static_cast<int>(rand_index(rng, n));
            const int j = static_cast<int>(rand_index(rng, n));
            if (i == j) continue;
            adj[static_cast<std::size_t>(i) * n + j] ^= 1;
        }
        ArchGraph child;
        try {
            child = ArchGraph::create(n, std::move(adj), std::move(ops));
        } catch (const EncodingError&) {
            continue;  // introduced a cycle
        }
        auto it = ctx.space_index.find(child.id);
        if (it != ctx.space_index.end()) return it->second;
    }
    return std::nullopt;
}

}  // namespace

SearchReport run_evolution_baseline(
    const SearchConfig& cfg, EvaluationOracle& oracle,
    const std::vector<ArchGraph>& space, const OpVocabulary& vocab,
    const std::function<void(const std::deque<std::size_t>&, std::size_t)>&
        cycle_observer) {
    SearchContext ctx = SearchContext::make(cfg, oracle, space, vocab);
    SearchState st;
    st.rng = Rng(ctx.cfg.seed);
    setup_optimum_tracking(ctx, st);

    std::unordered_map<std::string, ObjectiveVector> cache;
    auto stop = [&] {
        if (st.evaluations_used >= ctx.cfg.max_evaluations) return true;
        if (!st.optimal_vectors.empty() &&
            st.recovered_fraction() >= ctx.cfg.threshold - 1e-12)
            return true;
        return cache.size() >= space.size();
    };
    // Every sampled child costs budget, repeats included: regularized
    // evolution keeps no global archive, and the sample count it is judged
    // by is the number of models sent to training.
    auto evaluate_idx = [&](std::size_t idx) -> bool {
        const ArchGraph& g = space[idx];
        auto it = cache.find(g.id);
        if (it != cache.end()) {
            ++st.evaluations_used;
        } else {
            if (!evaluate_graph(ctx, st, g)) return false;
            cache.emplace(g.id, st.trained.back().objectives);
        }
        if (st.evaluations_used % ctx.cfg.batch_l == 0) {
            ++st.iteration;
            refresh_front(ctx, st);
            push_history(ctx, st);
        }
        return true;
    };

    const std::size_t pop_target = std::min(cfg.evolution_population, space.size());
    const auto warmup =
        sample_without_replacement(st.rng, space.size(), pop_target);
    std::deque<std::size_t> population;
    for (std::size_t idx : warmup) {
        if (stop()) break;
        if (evaluate_idx(idx)) population.push_back(idx);
    }

    // tournament scoring: single objective compares the adjusted value,
    // multi-objective prefers the least-dominated member of the sample
    auto adjusted0 = [&](std::size_t idx) {
        const double v = cache.at(space[idx].id)[0];
        return ctx.cfg.objectives.directions[0] == Direction::minimize ? -v : v;
    };

    std::size_t cycles = 0;
    const std::size_t cycle_cap = 2 * ctx.cfg.max_evaluations + 10000;
    while (!stop() && !population.empty() && cycles++ < cycle_cap) {
        const std::size_t s = std::min(cfg.evolution_sample, population.size());
        const auto positions = sample_without_replacement(st.rng, population.size(), s);

        std::size_t parent = population[positions[0]];
        if (ctx.cfg.objectives.m() == 1) {
            for (std::size_t p = 1; p < positions.size(); ++p) {
                const std::size_t cand = population[positions[p]];
                if (adjusted0(cand) > adjusted0(parent) ||
                    (adjusted0(cand) == adjusted0(parent) && cand < parent))
                    parent = cand;
            }
        } else {
            auto dominated_count = [&](std::size_t idx) {
                int c = 0;
                for (std::size_t p = 0; p < positions.size(); ++p) {
                    const std::size_t other = population[positions[p]];
                    if (other != idx && dominates(cache.at(space[other].id),
                                                  cache.at(space[idx].id),
                                                  ctx.cfg.objectives))
                        ++c;
                }
                return c;
            };
            int best_dom = dominated_count(parent);
            for (std::size_t p = 1; p < positions.size(); ++p) {
                const std::size_t cand = population[positions[p]];
                const int d = dominated_count(cand);
                if (d < best_dom ||
                    (d == best_dom && adjusted0(cand) > adjusted0(parent)) ||
                    (d == best_dom && adjusted0(cand) == adjusted0(parent) &&
                     cand < parent)) {
                    best_dom = d;
                    parent = cand;
                }
            }
        }

        std::optional<std::size_t> child;
        for (int round = 0; round < 3 && !child; ++round) {
            child = mutate_in_space(ctx, st.rng, space[parent], 64);
            if (!child && round + 1 < 3) {
                // dead end: resample a parent uniformly from the population
                parent = population[rand_index(st.rng, population.size())];
            }
        }
        if (!child) {
            // fully stuck: fall back to a uniform unevaluated architecture
            std::vector<std::size_t> unevaluated;
            for (std::size_t i = 0; i < space.size(); ++i)
                if (!cache.count(space[i].id)) unevaluated.push_back(i);
            if (unevaluated.empty()) break;
            child = unevaluated[rand_index(st.rng, unevaluated.size())];
        }

        if (!evaluate_idx(*child)) continue;
        population.push_back(*child);
        std::size_t removed = static_cast<std::size_t>(-1);
        while (population.size() > pop_target) {
            removed = population.front();
            population.pop_front();
        }
        if (cycle_observer) cycle_observer(population, removed);
    }

    refresh_front(ctx, st);
    if (st.history.empty() ||
        st.history.back().evaluations_used != st.evaluations_used) {
        ++st.iteration;
        push_history(ctx, st);
    }
    SearchReport rep = make_report(ctx, st);
    rep.algorithm = "evolution";
    return rep;
}

SearchState transfer_pretrain(const SearchState& state_small,
                              const SearchContext& ctx_large) {
    if (ctx_large.cfg.predictor != PredictorKind::gcn)
        throw std::invalid_argument("transfer: only the GCN predictor transfers");
    for (std::size_t k = 0; k < state_small.gcn.size(); ++k) {
        if (state_small.gcn[k].layer_weights.empty()) continue;
        if (state_small.gcn[k].feature_dim() != ctx_large.vocab.feature_width())
            throw std::invalid_argument(
                "transfer: vocabulary mismatch between search spaces");
    }
    return initialize(ctx_large, &state_small.gcn);
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = std::vector<double>(m.data(), m.data() + m.size());
    return j;
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.size()) throw std::runtime_error("checkpoint: matrix size");
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

}  // namespace

void save_state(const std::string& path, const SearchContext& ctx,
                const SearchState& st) {
    json j;
    j["version"] = 1;
    j["config"] = ctx.cfg.to_json();
    j["iteration"] = st.iteration;
    j["evaluations_used"] = st.evaluations_used;
    std::ostringstream rng_ss;
    rng_ss << st.rng;
    j["rng"] = rng_ss.str();
    json trained = json::array();
    for (const auto& rec : st.trained) {
        json r = graph_to_json(rec.graph, ctx.vocab);
        r["objectives"] = rec.objectives;
        trained.push_back(std::move(r));
    }
    j["trained"] = std::move(trained);
    json gcns = json::array();
    for (const auto& p : st.gcn) {
        if (p.layer_weights.empty()) {
            gcns.push_back(nullptr);
            continue;
        }
        json g;
        json layers = json::array();
        for (const auto& w : p.layer_weights) layers.push_back(matrix_to_json(w));
        g["layers"] = std::move(layers);
        g["head_weight"] = p.head_weight;
        g["head_bias"] = p.head_bias;
        gcns.push_back(std::move(g));
    }
    j["gcn"] = std::move(gcns);
    json mlps = json::array();
    for (const auto& p : st.mlp) {
        if (p.weights.empty()) {
            mlps.push_back(nullptr);
            continue;
        }
        json m;
        m["node_capacity"] = p.node_capacity;
        m["base_ops"] = p.base_ops;
        m["allow_padding"] = p.allow_padding;
        json ws = json::array(), bs = json::array();
        for (const auto& w : p.weights) ws.push_back(matrix_to_json(w));
        for (const auto& b : p.biases) bs.push_back(b);
        m["weights"] = std::move(ws);
        m["biases"] = std::move(bs);
        m["head_weight"] = p.head_weight;
        m["head_bias"] = p.head_bias;
        mlps.push_back(std::move(m));
    }
    j["mlp"] = std::move(mlps);
    json hist = json::array();
    for (const auto& r : st.history) {
        json row;
        row["iteration"] = r.iteration;
        row["evaluations_used"] = r.evaluations_used;
        row["best_per_objective"] = r.best_per_objective;
        row["front_size"] = r.front_size;
        hist.push_back(std::move(row));
    }
    j["history"] = std::move(hist);
    if (st.evaluations_to_optimum)
        j["evaluations_to_optimum"] = *st.evaluations_to_optimum;
    else
        j["evaluations_to_optimum"] = nullptr;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
}

SearchState load_state(const std::string& path, const SearchContext& ctx) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    json j;
    in >> j;
    if (j.at("version").get<int>() != 1)
        throw std::runtime_error("unsupported search checkpoint version");

    SearchState st;
    st.iteration = j.at("iteration").get<std::size_t>();
    st.evaluations_used = j.at("evaluations_used").get<std::size_t>();
    std::istringstream rng_ss(j.at("rng").get<std::string>());
    rng_ss >> st.rng;
    setup_optimum_tracking(ctx, st);

    for (const auto& r : j.at("trained")) {
        const int n = r.at("node_count").get<int>();
        std::vector<std::uint8_t> adj;
        for (const auto& row : r.at("adjacency"))
            for (const auto& cell : row) adj.push_back(cell.get<std::uint8_t>());
        std::vector<int> ops;
        for (const auto& name : r.at("ops")) {
            const int idx = ctx.vocab.index_of(name.get<std::string>());
            if (idx < 0) throw std::runtime_error("checkpoint: op outside vocabulary");
            ops.push_back(idx);
        }
        TrainedRecord rec;
        rec.graph = ArchGraph::create(n, std::move(adj), std::move(ops));
        rec.objectives = r.at("objectives").get<Vector>();
        st.trained_ids.insert(rec.graph.id);
        st.trained.push_back(std::move(rec));
    }
    // replay front-recovery bookkeeping in stored evaluation order
    for (const auto& rec : st.trained) {
        if (st.optimal_vectors.empty()) break;
        auto it = std::lower_bound(st.optimal_vectors.begin(),
                                   st.optimal_vectors.end(), rec.objectives);
        if (it != st.optimal_vectors.end() && *it == rec.objectives) {
            const std::size_t pos =
                static_cast<std::size_t>(it - st.optimal_vectors.begin());
            if (!st.optimal_found[pos]) {
                st.optimal_found[pos] = 1;
                ++st.optimal_found_count;
            }
        }
    }
    if (!j.at("evaluations_to_optimum").is_null())
        st.evaluations_to_optimum = j.at("evaluations_to_optimum").get<std::size_t>();

    const std::size_t m = ctx.cfg.objectives.m();
    st.gcn.resize(m);
    st.mlp.resize(m);
    st.scalers.resize(m);
    std::size_t k = 0;
    for (const auto& g : j.at("gcn")) {
        if (!g.is_null()) {
            GcnParams p;
            for (const auto& w : g.at("layers"))
                p.layer_weights.push_back(matrix_from_json(w));
            p.head_weight = g.at("head_weight").get<Vector>();
            p.head_bias = g.at("head_bias").get<double>();
            st.gcn[k] = std::move(p);
        }
        ++k;
    }
    k = 0;
    for (const auto& mj : j.at("mlp")) {
        if (!mj.is_null()) {
            MlpParams p;
            p.node_capacity = mj.at("node_capacity").get<int>();
            p.base_ops = mj.at("base_ops").get<std::size_t>();
            p.allow_padding = mj.at("allow_padding").get<bool>();
            for (const auto& w : mj.at("weights")) p.weights.push_back(matrix_from_json(w));
            for (const auto& b : mj.at("biases")) p.biases.push_back(b.get<Vector>());
            p.head_weight = mj.at("head_weight").get<Vector>();
            p.head_bias = mj.at("head_bias").get<double>();
            st.mlp[k] = std::move(p);
        }
        ++k;
    }
    for (const auto& r : j.at("history")) {
        IterationStat row;
        row.iteration = r.at("iteration").get<std::size_t>();
        row.evaluations_used = r.at("evaluations_used").get<std::size_t>();
        row.best_per_objective = r.at("best_per_objective").get<Vector>();
        row.front_size = r.at("front_size").get<std::size_t>();
        st.history.push_back(std::move(row));
    }

    rebuild_caches(ctx, st);
    fit_blr(ctx, st);
    refresh_front(ctx, st);
    return st;
}

}  // namespace bogcn
