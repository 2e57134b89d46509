#include "bogcn/bench.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

#include "bogcn/acquisition.hpp"
#include "bogcn/gcn.hpp"
#include "bogcn/rng.hpp"

namespace bogcn {

PredictorKind predictor_kind_from_string(const std::string& s) {
    if (s == "gcn") return PredictorKind::gcn;
    if (s == "mlp") return PredictorKind::mlp;
    throw std::invalid_argument("unknown predictor kind: " + s);
}

std::string to_string(PredictorKind k) {
    return k == PredictorKind::gcn ? "gcn" : "mlp";
}

void SyntheticBenchSpec::validate() const {
    if (min_nodes < 3 || max_nodes < min_nodes)
        throw std::invalid_argument("bench: need 3 <= min_nodes <= max_nodes");
    if (op_count < 3)
        throw std::invalid_argument("bench: need input, output and one interior op");
    if (space_size < 2) throw std::invalid_argument("bench: space_size must be >= 2");
}

namespace {

const char* kOpNamePool[] = {"conv1x1", "conv3x3", "maxpool3x3",
                             "sepconv3x3", "avgpool3x3", "conv5x5"};

}  // namespace

// Width of the flat-encoding baseline predictor (shared with the search
// engine); sized like the MLP performance predictors of prior NAS work
// rather than like our graph model.
const std::size_t kMlpBaselineHidden = 512;

namespace {

/// One enumerable size class: mandatory edges, free edge slots and the
/// interior operations each cell may use.
struct SizeClass {
    int n = 0;
    std::vector<std::pair<int, int>> base;   // always present
    std::vector<std::pair<int, int>> slots;  // one bit each
    std::vector<int> interior_choices;       // vocabulary indices
};

/// The default family keeps the space enumerable yet structurally diverse:
/// the smallest cells range over every DAG on their node set (with two
/// interior op choices), larger cells are chains with optional skips and the
/// full interior vocabulary. Mutations (relabels, edge toggles) either stay
/// inside a class or dead-end, so evolutionary baselines behave sensibly.
std::vector<SizeClass> size_classes(const SyntheticBenchSpec& spec) {
    std::vector<SizeClass> out;
    const int interior = spec.op_count - 2;
    for (int n = spec.min_nodes; n <= spec.max_nodes; ++n) {
        SizeClass cls;
        cls.n = n;
        if (n == spec.min_nodes) {
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) cls.slots.emplace_back(i, j);
            for (int t = 0; t < std::min(2, interior); ++t)
                cls.interior_choices.push_back(1 + t);
        } else {
            for (int i = 0; i + 1 < n; ++i) cls.base.emplace_back(i, i + 1);
            if (n == spec.max_nodes && n - spec.min_nodes >= 2) {
                cls.slots.emplace_back(0, 2);
            } else {
                for (int i = 0; i + 2 < n; ++i) cls.slots.emplace_back(i, i + 2);
            }
            for (int t = 0; t < interior; ++t) cls.interior_choices.push_back(1 + t);
        }
        out.push_back(std::move(cls));
    }
    return out;
}

int longest_path_edges(const ArchGraph& g) {
    // DP over a topological order
    const int n = g.node_count;
    std::vector<int> indeg(n, 0), order;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (g.edge(i, j)) ++indeg[j];
    std::vector<int> stack;
    for (int i = 0; i < n; ++i)
        if (indeg[i] == 0) stack.push_back(i);
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        order.push_back(u);
        for (int j = 0; j < n; ++j)
            if (g.edge(u, j) && --indeg[j] == 0) stack.push_back(j);
    }
    std::vector<int> dist(n, 0);
    int best = 0;
    for (int u : order)
        for (int j = 0; j < n; ++j)
            if (g.edge(u, j)) {
                dist[j] = std::max(dist[j], dist[u] + 1);
                best = std::max(best, dist[j]);
            }
    return best;
}

std::uint64_t hash_str(const std::string& s, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix64(h);
}

struct HiddenModel {
    int interior_ops = 0;
    Vector w_op;         // per interior op type
    Matrix w_pair;       // symmetric interactions over op counts
    Matrix w_edge_pair;  // op-of-source x op-of-target term per edge
    Matrix w_two_hop;    // op-at-start x op-at-end term per directed 2-path
    double w_edge = 0, w_path = 0, bias = 0, perturb_amp = 0;
    // fixed random message-passing teacher: a deep compositional term that a
    // flat encoding cannot read off directly
    GcnParams teacher;
    OpVocabulary teacher_vocab;
    double teacher_weight = 0, teacher_shift = 0, teacher_scale = 1;
    Vector op_cost;      // per vocabulary op (input/output included)
    std::uint64_t perturb_seed = 0;

    static HiddenModel make(const SyntheticBenchSpec& spec) {
        HiddenModel m;
        m.interior_ops = spec.op_count - 2;
        Rng rng(mix64(spec.seed ^ 0x5eedf00dULL));
        m.w_op.resize(m.interior_ops);
        for (auto& w : m.w_op) w = urand(rng, -0.2, 0.2);
        m.w_pair = Matrix(m.interior_ops, m.interior_ops);
        for (int a = 0; a < m.interior_ops; ++a)
            for (int b = a; b < m.interior_ops; ++b) {
                const double v = urand(rng, -0.08, 0.08);
                m.w_pair(a, b) = v;
                m.w_pair(b, a) = v;
            }
        // which op feeds which matters most: edge-pair and two-hop
        // composition terms make the landscape rugged under single mutations
        // while staying visible to a message-passing predictor
        m.w_edge_pair = Matrix(spec.op_count, spec.op_count);
        for (std::size_t i = 0; i < m.w_edge_pair.size(); ++i)
            m.w_edge_pair.data()[i] = urand(rng, -0.24, 0.24);
        m.w_two_hop = Matrix(spec.op_count, spec.op_count);
        for (std::size_t i = 0; i < m.w_two_hop.size(); ++i)
            m.w_two_hop.data()[i] = urand(rng, -0.18, 0.18);
        m.w_edge = urand(rng, -0.15, 0.15);
        m.w_path = urand(rng, -0.3, 0.3);
        m.bias = 0.6;
        for (int t = 0; t < spec.op_count; ++t)
            m.teacher_vocab.names.push_back("t" + std::to_string(t));
        m.teacher = GcnParams::init(m.teacher_vocab.feature_width(), 32, 4,
                                    mix64(spec.seed ^ 0x7ea4c4e5ULL));
        m.teacher_weight = 1.8;  // shift/scale standardized over the space later
        // stands in for seed-to-seed evaluation noise of tabular benchmarks
        m.perturb_amp = 0.13;
        m.perturb_seed = spec.seed;
        // parameter cost: correlated with the accuracy weight, so better ops
        // tend to cost more and the two objectives trade off
        m.op_cost.resize(spec.op_count);
        m.op_cost[0] = urand(rng, 0.1, 0.4);                  // input
        m.op_cost[spec.op_count - 1] = urand(rng, 0.1, 0.4);  // output
        for (int t = 0; t < m.interior_ops; ++t)
            m.op_cost[1 + t] = 0.4 + 1.8 * (m.w_op[t] + 0.5) + urand(rng, 0.0, 0.4);
        return m;
    }

    double teacher_raw(const ArchGraph& g) const {
        return gcn_head_preactivation(teacher,
                                      gcn_embed(teacher, encode(g, teacher_vocab)));
    }

    double accuracy(const ArchGraph& g) const {
        Vector cnt(interior_ops, 0.0);
        for (int label : g.op_labels)
            if (label >= 1 && label <= interior_ops) cnt[label - 1] += 1.0;
        double z = bias;
        for (int t = 0; t < interior_ops; ++t) z += w_op[t] * cnt[t];
        for (int a = 0; a < interior_ops; ++a)
            for (int b = a; b < interior_ops; ++b) z += w_pair(a, b) * cnt[a] * cnt[b];
        for (int u = 0; u < g.node_count; ++u)
            for (int v = 0; v < g.node_count; ++v)
                if (g.edge(u, v)) {
                    z += w_edge_pair(static_cast<std::size_t>(g.op_labels[u]),
                                     static_cast<std::size_t>(g.op_labels[v]));
                    for (int w = 0; w < g.node_count; ++w)
                        if (g.edge(v, w))
                            z += w_two_hop(static_cast<std::size_t>(g.op_labels[u]),
                                           static_cast<std::size_t>(g.op_labels[w]));
                }
        z += w_edge * g.edge_count();
        z += w_path * longest_path_edges(g);
        z += teacher_weight * (teacher_raw(g) - teacher_shift) * teacher_scale;
        const double u =
            static_cast<double>(hash_str(g.id, perturb_seed) >> 11) * 0x1.0p-53;
        z += perturb_amp * (2.0 * u - 1.0);
        return sigmoid(z);
    }

    double params(const ArchGraph& g) const {
        double s = 0.0;
        for (int label : g.op_labels) s += op_cost[static_cast<std::size_t>(label)];
        return s;
    }
};

}  // namespace

GeneratedBench generate_bench(const SyntheticBenchSpec& spec) {
    spec.validate();
    GeneratedBench out;
    out.vocab.names.push_back("input");
    const int interior = spec.op_count - 2;
    for (int t = 0; t < interior; ++t)
        out.vocab.names.push_back(t < 6 ? kOpNamePool[t] : "op" + std::to_string(t));
    out.vocab.names.push_back("output");

    HiddenModel model = HiddenModel::make(spec);
    out.dataset.metric_names = {"accuracy", "params"};

    std::vector<ArchGraph> graphs;
    for (const SizeClass& cls : size_classes(spec)) {
        const int n = cls.n;
        const std::size_t n_masks = std::size_t{1} << cls.slots.size();
        const std::size_t k = cls.interior_choices.size();
        std::size_t n_ops = 1;
        for (int i = 0; i + 2 < n; ++i) n_ops *= k;
        for (std::size_t mask = 0; mask < n_masks; ++mask) {
            for (std::size_t combo = 0; combo < n_ops; ++combo) {
                std::vector<std::uint8_t> adj(static_cast<std::size_t>(n) * n, 0);
                for (const auto& [i, j] : cls.base)
                    adj[static_cast<std::size_t>(i) * n + j] = 1;
                for (std::size_t s = 0; s < cls.slots.size(); ++s)
                    if (mask & (std::size_t{1} << s))
                        adj[static_cast<std::size_t>(cls.slots[s].first) * n +
                            cls.slots[s].second] = 1;
                std::vector<int> ops(static_cast<std::size_t>(n));
                ops.front() = 0;
                ops.back() = spec.op_count - 1;
                std::size_t c = combo;
                for (int i = 1; i + 1 < n; ++i) {
                    ops[static_cast<std::size_t>(i)] =
                        cls.interior_choices[c % k];
                    c /= k;
                }
                graphs.push_back(ArchGraph::create(n, std::move(adj), std::move(ops)));
                if (graphs.size() > spec.space_size)
                    throw std::invalid_argument(
                        "bench: family exceeds space_size; narrow the node range");
            }
        }
    }

    // standardize the teacher term over the whole space so its share of the
    // signal is independent of the seed
    Vector raw(graphs.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (std::size_t i = 0; i < graphs.size(); ++i)
        raw[i] = model.teacher_raw(graphs[i]);
    double mean = 0.0;
    for (double r : raw) mean += r;
    mean /= static_cast<double>(raw.size());
    double var = 0.0;
    for (double r : raw) var += (r - mean) * (r - mean);
    var /= static_cast<double>(raw.size());
    model.teacher_shift = mean;
    model.teacher_scale = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;

    out.dataset.records.reserve(graphs.size());
    for (auto& g : graphs) {
        TrainedRecord rec;
        rec.objectives = {model.accuracy(g), model.params(g)};
        rec.graph = std::move(g);
        out.dataset.records.push_back(std::move(rec));
    }

    // the perturbation term keeps the argmax unique; verify
    std::size_t best = 0;
    bool tie = false;
    for (std::size_t i = 1; i < out.dataset.records.size(); ++i) {
        const double a = out.dataset.records[i].objectives[0];
        const double b = out.dataset.records[best].objectives[0];
        if (a > b) {
            best = i;
            tie = false;
        } else if (a == b) {
            tie = true;
        }
    }
    if (tie) throw std::runtime_error("bench: accuracy argmax is not unique");

    out.digest = dataset_digest(out.dataset);
    return out;
}

std::string dataset_digest(const Dataset& ds) {
    auto pass = [&](std::uint64_t h, std::uint64_t prime) {
        auto eat = [&](std::uint64_t byte) {
            h ^= byte & 0xff;
            h *= prime;
        };
        eat(ds.records.size());
        for (const auto& rec : ds.records) {
            for (char ch : rec.graph.id) eat(static_cast<unsigned char>(ch));
            for (double v : rec.objectives) {
                const auto bits = std::bit_cast<std::uint64_t>(v);
                for (int b = 0; b < 8; ++b) eat(bits >> (8 * b));
            }
        }
        return mix64(h);
    };
    const std::uint64_t h1 = pass(0xcbf29ce484222325ULL, 0x100000001b3ULL);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h1));
    return std::string(buf);
}

Dataset filter_by_nodes(const Dataset& ds, int min_nodes, int max_nodes) {
    Dataset out;
    out.metric_names = ds.metric_names;
    for (const auto& rec : ds.records)
        if (rec.graph.node_count >= min_nodes && rec.graph.node_count <= max_nodes)
            out.records.push_back(rec);
    return out;
}

TabularOracle::TabularOracle(const Dataset& ds, const ObjectiveSpec& spec) {
    spec.validate();
    std::vector<int> columns;
    for (const auto& name : spec.names) {
        const int idx = ds.metric_index(name);
        if (idx < 0)
            throw std::invalid_argument("oracle: objective '" + name +
                                        "' missing from dataset metrics");
        columns.push_back(idx);
    }
    std::vector<ObjectiveVector> all_values;
    for (const auto& rec : ds.records) {
        ObjectiveVector v(columns.size());
        for (std::size_t k = 0; k < columns.size(); ++k)
            v[k] = rec.objectives[static_cast<std::size_t>(columns[k])];
        auto [it, fresh] = table_.emplace(rec.graph.id, v);
        (void)it;
        if (fresh) {
            space_.push_back(rec.graph);
            all_values.push_back(std::move(v));
        }
    }
    if (space_.empty()) throw std::invalid_argument("oracle: empty dataset");
    for (std::size_t idx : pareto_front(all_values, spec))
        optimal_front_.push_back(all_values[idx]);
    std::sort(optimal_front_.begin(), optimal_front_.end());
    optimal_front_.erase(std::unique(optimal_front_.begin(), optimal_front_.end()),
                         optimal_front_.end());
}

ObjectiveVector TabularOracle::evaluate(const ArchGraph& g) {
    auto it = table_.find(g.id);
    if (it == table_.end())
        throw std::out_of_range("oracle: architecture " + g.id + " not in table");
    return it->second;
}

double TabularOracle::exact_value(const ArchGraph& g, std::size_t objective_index) const {
    auto it = table_.find(g.id);
    if (it == table_.end())
        throw std::out_of_range("oracle: architecture " + g.id + " not in table");
    return it->second.at(objective_index);
}

PredictorEvaluation eval_predictor(const Dataset& ds, const OpVocabulary& vocab,
                                   const EvalSplit& split, LossKind loss_kind,
                                   PredictorKind predictor, const TrainConfig& cfg,
                                   const std::string& objective,
                                   std::size_t hidden_dim, std::size_t layer_count) {
    const std::size_t need = split.train_n + split.val_n + split.test_n;
    if (split.train_n < 2 || split.val_n < 1 || split.test_n < 2)
        throw std::invalid_argument("eval_predictor: splits too small");
    if (ds.records.size() < need)
        throw std::invalid_argument("eval_predictor: dataset has " +
                                    std::to_string(ds.records.size()) +
                                    " records, split needs " + std::to_string(need));
    const int metric = ds.metric_index(objective);
    if (metric < 0)
        throw std::invalid_argument("eval_predictor: objective '" + objective +
                                    "' missing from dataset");

    std::vector<std::size_t> idx(ds.records.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix64(cfg.seed ^ 0x5b717u));
    shuffle_in_place(idx, rng);

    const std::size_t test_base = split.train_n + split.val_n;
    auto raw_of = [&](std::size_t i) {
        return ds.records[idx[i]].objectives[static_cast<std::size_t>(metric)];
    };
    Vector fit_values(test_base);
    for (std::size_t i = 0; i < test_base; ++i) fit_values[i] = raw_of(i);
    const TargetScaler scaler = TargetScaler::fit(fit_values, Direction::maximize);
    auto target_of = [&](std::size_t i) { return scaler.apply(raw_of(i)); };

    PredictorEvaluation out;
    out.train_n = split.train_n;
    out.val_n = split.val_n;
    out.test_n = split.test_n;

    // correlations are computed against the raw metric; the affine target
    // scaling cannot change them
    Vector test_pred(split.test_n), test_truth(split.test_n);
    for (std::size_t i = 0; i < split.test_n; ++i) test_truth[i] = raw_of(test_base + i);

    if (predictor == PredictorKind::gcn) {
        std::vector<EncodedGraph> encoded(ds.records.size());
        std::vector<const EncodedGraph*> train_in, val_in;
        Vector train_t, val_t;
        for (std::size_t i = 0; i < need; ++i)
            encoded[i] = encode(ds.records[idx[i]].graph, vocab);
        for (std::size_t i = 0; i < split.train_n; ++i) {
            train_in.push_back(&encoded[i]);
            train_t.push_back(target_of(i));
        }
        for (std::size_t i = split.train_n; i < test_base; ++i) {
            val_in.push_back(&encoded[i]);
            val_t.push_back(target_of(i));
        }
        GcnParams p0 =
            GcnParams::init(vocab.feature_width(), hidden_dim, layer_count, cfg.seed);
        GcnParams p = train_gcn_with_val(p0, train_in, train_t, val_in, val_t, cfg,
                                         loss_kind);
        std::vector<const EncodedGraph*> test_in;
        for (std::size_t i = 0; i < split.test_n; ++i)
            test_in.push_back(&encoded[test_base + i]);
        test_pred = predict_batch(p, test_in);
    } else {
        int capacity = 0;
        for (std::size_t i = 0; i < need; ++i)
            capacity = std::max(capacity, ds.records[idx[i]].graph.node_count);
        // flat encoding is fixed-width: smaller cells are zero-padded here.
        // The width follows the flat-encoding predictors of the NAS
        // literature, which are orders of magnitude larger than the GCN.
        MlpParams p0 = MlpParams::init(capacity, vocab.names.size(),
                                       kMlpBaselineHidden, layer_count, cfg.seed,
                                       /*allow_padding=*/true);
        std::vector<const ArchGraph*> train_graphs;
        Vector train_t;
        for (std::size_t i = 0; i < test_base; ++i) {
            train_graphs.push_back(&ds.records[idx[i]].graph);
            train_t.push_back(target_of(i));
        }
        // mlp_train holds out its validation split internally; feed it the
        // train+val pool so the budget matches the GCN branch
        TrainConfig mcfg = cfg;
        mcfg.validation_fraction =
            static_cast<double>(split.val_n) /
            static_cast<double>(split.train_n + split.val_n);
        MlpParams p = mlp_train(p0, train_graphs, train_t, mcfg, loss_kind);
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < split.test_n; ++i)
            test_pred[i] = mlp_predict(p, ds.records[idx[test_base + i]].graph);
    }

    out.pearson = pearson_correlation(test_pred, test_truth);
    out.spearman = spearman_correlation(test_pred, test_truth);
    return out;
}

}  // namespace bogcn
