#include "bogcn/gcn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "bogcn/rng.hpp"
#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bogcn {

using nlohmann::json;

namespace {

// Fixed accumulation granularity for parallel batch reductions. Partial sums
// are combined in chunk order, so results are independent of thread count.
constexpr std::size_t kGradChunk = 16;

}  // namespace

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "exp_weighted" || s == "exp") return LossKind::exp_weighted;
    if (s == "log_weighted" || s == "log") return LossKind::log_weighted;
    if (s == "linear_weighted" || s == "linear") return LossKind::linear_weighted;
    throw std::invalid_argument("unknown loss kind: " + s);
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::mse: return "mse";
        case LossKind::exp_weighted: return "exp_weighted";
        case LossKind::log_weighted: return "log_weighted";
        case LossKind::linear_weighted: return "linear_weighted";
    }
    return "?";
}

double loss_weight_unnormalized(LossKind k, double truth) {
    switch (k) {
        case LossKind::mse: return 1.0;
        case LossKind::exp_weighted: return std::expm1(truth);
        case LossKind::log_weighted: return std::log1p(truth);
        case LossKind::linear_weighted: return truth;
    }
    return 0.0;
}

double loss_normalizer(LossKind k) {
    switch (k) {
        case LossKind::mse: return 1.0;
        case LossKind::exp_weighted: return std::expm1(1.0);  // e - 1
        case LossKind::log_weighted: return std::log(2.0);
        case LossKind::linear_weighted: return 1.0;
    }
    return 1.0;
}

double loss(LossKind k, const Vector& predicted, const Vector& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("loss: length mismatch");
    if (predicted.empty()) throw std::invalid_argument("loss: empty batch");
    const double norm = loss_normalizer(k);
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!(truth[i] >= 0.0 && truth[i] <= 1.0))
            throw std::invalid_argument("loss: truth value outside [0,1]");
        const double d = predicted[i] - truth[i];
        s += loss_weight_unnormalized(k, truth[i]) * d * d;
    }
    return s / (static_cast<double>(truth.size()) * norm);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (patience > max_epochs) throw std::invalid_argument("patience must be <= max_epochs");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw std::invalid_argument("validation_fraction must be in (0,1)");
}

std::vector<std::span<double>> GcnParams::tensor_views() {
    std::vector<std::span<double>> v;
    for (auto& w : layer_weights) v.emplace_back(w.data(), w.size());
    v.emplace_back(head_weight.data(), head_weight.size());
    v.emplace_back(&head_bias, 1);
    return v;
}

std::vector<std::span<const double>> GcnParams::tensor_views() const {
    std::vector<std::span<const double>> v;
    for (const auto& w : layer_weights) v.emplace_back(w.data(), w.size());
    v.emplace_back(head_weight.data(), head_weight.size());
    v.emplace_back(&head_bias, 1);
    return v;
}

std::size_t GcnParams::parameter_count() const {
    std::size_t n = head_weight.size() + 1;
    for (const auto& w : layer_weights) n += w.size();
    return n;
}

namespace {

void glorot_fill(Matrix& w, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = urand(rng, -a, a);
}

}  // namespace

GcnParams GcnParams::init(std::size_t feature_dim, std::size_t hidden_dim,
                          std::size_t layer_count, std::uint64_t seed) {
    if (layer_count < 1) throw std::invalid_argument("gcn: need at least one layer");
    GcnParams p;
    Rng rng(seed);
    p.layer_weights.emplace_back(feature_dim, hidden_dim);
    for (std::size_t l = 1; l < layer_count; ++l)
        p.layer_weights.emplace_back(hidden_dim, hidden_dim);
    for (auto& w : p.layer_weights) glorot_fill(w, rng);
    p.head_weight.resize(hidden_dim);
    const double a = std::sqrt(6.0 / static_cast<double>(hidden_dim + 1));
    for (auto& x : p.head_weight) x = urand(rng, -a, a);
    p.head_bias = 0.0;
    return p;
}

namespace {

struct ForwardTrace {
    std::vector<Matrix> msg;  // A_hat * H^(l), per layer
    std::vector<Matrix> pre;  // A_hat * H^(l) * W^(l), before ReLU
};

Matrix relu(const Matrix& z) {
    Matrix h = z;
    for (std::size_t i = 0; i < h.size(); ++i)
        if (h.data()[i] < 0.0) h.data()[i] = 0.0;
    return h;
}

void check_dims(const GcnParams& p, const EncodedGraph& e) {
    if (e.features.cols() != p.feature_dim())
        throw std::invalid_argument("gcn: feature width " + std::to_string(e.features.cols()) +
                                    " != parameter F " + std::to_string(p.feature_dim()));
    if (e.aug_adjacency.rows() != e.features.rows())
        throw std::invalid_argument("gcn: adjacency/features row mismatch");
    if (e.global_row >= e.features.rows())
        throw std::invalid_argument("gcn: global row out of range");
}

Matrix forward(const GcnParams& p, const EncodedGraph& e, ForwardTrace* trace) {
    check_dims(p, e);
    Matrix h = e.features;
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        Matrix msg = matmul(e.aug_adjacency, h);
        Matrix pre = matmul(msg, p.layer_weights[l]);
        h = relu(pre);
        if (trace) {
            trace->msg.push_back(std::move(msg));
            trace->pre.push_back(std::move(pre));
        }
    }
    return h;
}

GcnGrad zero_like(const GcnParams& p) {
    GcnGrad g;
    for (const auto& w : p.layer_weights) g.layer_weights.emplace_back(w.rows(), w.cols());
    g.head_weight.assign(p.head_weight.size(), 0.0);
    g.head_bias = 0.0;
    return g;
}

void add_into(GcnGrad& acc, const GcnGrad& g) {
    for (std::size_t l = 0; l < acc.layer_weights.size(); ++l) {
        double* a = acc.layer_weights[l].data();
        const double* b = g.layer_weights[l].data();
        for (std::size_t i = 0; i < acc.layer_weights[l].size(); ++i) a[i] += b[i];
    }
    for (std::size_t i = 0; i < acc.head_weight.size(); ++i)
        acc.head_weight[i] += g.head_weight[i];
    acc.head_bias += g.head_bias;
}

/// dLoss/dparams for one sample, scaled by coeff = w_i / (n * normalizer),
/// added into `out`.
void accumulate_sample_grad(GcnGrad& out, const GcnParams& p, const EncodedGraph& e,
                            double truth, double coeff) {
    ForwardTrace trace;
    Matrix h_last = forward(p, e, &trace);
    const std::size_t g_row = e.global_row;
    const std::size_t h_dim = p.hidden_dim();

    Vector phi(h_last.row(g_row), h_last.row(g_row) + h_dim);
    const double s = dot(p.head_weight, phi) + p.head_bias;
    const double y = sigmoid(s);
    // d/ds of coeff * (y - t)^2 through the sigmoid
    const double ds = coeff * 2.0 * (y - truth) * y * (1.0 - y);

    for (std::size_t i = 0; i < h_dim; ++i) out.head_weight[i] += ds * phi[i];
    out.head_bias += ds;

    const std::size_t rows = e.features.rows();
    Matrix dh(rows, h_dim);
    for (std::size_t i = 0; i < h_dim; ++i) dh(g_row, i) = ds * p.head_weight[i];

    for (std::size_t l = p.layer_count(); l-- > 0;) {
        Matrix dz = dh;
        const Matrix& pre = trace.pre[l];
        for (std::size_t i = 0; i < dz.size(); ++i)
            if (pre.data()[i] <= 0.0) dz.data()[i] = 0.0;
        Matrix dw = matmul_ta(trace.msg[l], dz);
        double* a = out.layer_weights[l].data();
        const double* b = dw.data();
        for (std::size_t i = 0; i < dw.size(); ++i) a[i] += b[i];
        if (l > 0) dh = matmul_ta(e.aug_adjacency, matmul_tb(dz, p.layer_weights[l]));
    }
}

}  // namespace

Vector gcn_embed(const GcnParams& p, const EncodedGraph& e) {
    Matrix h = forward(p, e, nullptr);
    return h.row_copy(e.global_row);
}

double gcn_head_preactivation(const GcnParams& p, const Vector& embedding) {
    return dot(p.head_weight, embedding) + p.head_bias;
}

double gcn_predict(const GcnParams& p, const EncodedGraph& e) {
    return sigmoid(gcn_head_preactivation(p, gcn_embed(p, e)));
}

GcnGrad gcn_grad_serial(LossKind k, const GcnParams& p,
                        const std::vector<const EncodedGraph*>& graphs,
                        const Vector& truth) {
    if (graphs.empty()) throw std::invalid_argument("grad: empty batch");
    if (graphs.size() != truth.size())
        throw std::invalid_argument("grad: batch/target length mismatch");
    const double scale = static_cast<double>(graphs.size()) * loss_normalizer(k);
    GcnGrad out = zero_like(p);
    for (std::size_t i = 0; i < graphs.size(); ++i)
        accumulate_sample_grad(out, p, *graphs[i], truth[i],
                               loss_weight_unnormalized(k, truth[i]) / scale);
    return out;
}

GcnGrad gcn_grad(LossKind k, const GcnParams& p,
                 const std::vector<const EncodedGraph*>& graphs,
                 const Vector& truth) {
    if (graphs.empty()) throw std::invalid_argument("grad: empty batch");
    if (graphs.size() != truth.size())
        throw std::invalid_argument("grad: batch/target length mismatch");
    const std::size_t n = graphs.size();
    const double scale = static_cast<double>(n) * loss_normalizer(k);
    const std::size_t nchunks = (n + kGradChunk - 1) / kGradChunk;
    std::vector<GcnGrad> partial(nchunks, zero_like(p));
#pragma omp parallel for schedule(dynamic)
    for (std::size_t c = 0; c < nchunks; ++c) {
        const std::size_t end = std::min(n, (c + 1) * kGradChunk);
        for (std::size_t i = c * kGradChunk; i < end; ++i)
            accumulate_sample_grad(partial[c], p, *graphs[i], truth[i],
                                   loss_weight_unnormalized(k, truth[i]) / scale);
    }
    GcnGrad out = std::move(partial.front());
    for (std::size_t c = 1; c < nchunks; ++c) add_into(out, partial[c]);
    return out;
}

Matrix embed_batch_serial(const GcnParams& p,
                          const std::vector<const EncodedGraph*>& graphs) {
    Matrix out(graphs.size(), p.hidden_dim());
    for (std::size_t i = 0; i < graphs.size(); ++i)
        out.set_row(i, gcn_embed(p, *graphs[i]));
    return out;
}

Matrix embed_batch(const GcnParams& p, const std::vector<const EncodedGraph*>& graphs) {
    Matrix out(graphs.size(), p.hidden_dim());
#pragma omp parallel for schedule(dynamic, 64)
    for (std::size_t i = 0; i < graphs.size(); ++i)
        out.set_row(i, gcn_embed(p, *graphs[i]));
    return out;
}

Vector predict_batch(const GcnParams& p,
                     const std::vector<const EncodedGraph*>& graphs) {
    Vector out(graphs.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (std::size_t i = 0; i < graphs.size(); ++i)
        out[i] = gcn_predict(p, *graphs[i]);
    return out;
}

EncodedGraph pad_encoded(const EncodedGraph& e, std::size_t total_rows) {
    if (total_rows < e.aug_adjacency.rows())
        throw std::invalid_argument("pad_encoded: target smaller than input");
    EncodedGraph out;
    out.global_row = e.global_row;
    out.aug_adjacency = Matrix(total_rows, total_rows);
    for (std::size_t i = 0; i < e.aug_adjacency.rows(); ++i)
        for (std::size_t j = 0; j < e.aug_adjacency.cols(); ++j)
            out.aug_adjacency(i, j) = e.aug_adjacency(i, j);
    out.features = Matrix(total_rows, e.features.cols());
    for (std::size_t i = 0; i < e.features.rows(); ++i)
        for (std::size_t j = 0; j < e.features.cols(); ++j)
            out.features(i, j) = e.features(i, j);
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct AdamState {
    Vector m, v;
    long t = 0;
};

template <typename Params>
void adam_step(AdamState& st, Params& params, const Params& grad, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto pv = params.tensor_views();
    auto gv = const_cast<Params&>(grad).tensor_views();
    std::size_t total = 0;
    for (const auto& s : pv) total += s.size();
    if (st.m.empty()) {
        st.m.assign(total, 0.0);
        st.v.assign(total, 0.0);
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    std::size_t o = 0;
    for (std::size_t s = 0; s < pv.size(); ++s) {
        for (std::size_t i = 0; i < pv[s].size(); ++i, ++o) {
            const double g = gv[s][i];
            st.m[o] = b1 * st.m[o] + (1.0 - b1) * g;
            st.v[o] = b2 * st.v[o] + (1.0 - b2) * g * g;
            pv[s][i] -= lr * (st.m[o] / c1) / (std::sqrt(st.v[o] / c2) + eps);
        }
    }
}

/// Shared mini-batch loop with best-checkpoint selection and early stopping.
/// batch_grad(params, indices) -> gradient; val_loss(params) -> double.
template <typename Params, typename GradFn, typename ValFn>
Params train_loop(const Params& p0, std::size_t n_train, const TrainConfig& cfg,
                  GradFn&& batch_grad, ValFn&& val_loss) {
    cfg.validate();
    Params params = p0;
    Params best = p0;
    double best_val = val_loss(p0);
    if (!std::isfinite(best_val))
        throw std::runtime_error("train: non-finite validation loss at start");
    AdamState adam;
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    int stale = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_in_place(order, rng);
        for (std::size_t start = 0; start < n_train;
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
            adam_step(adam, params, batch_grad(params, batch), cfg.learning_rate);
        }
        const double v = val_loss(params);
        if (!std::isfinite(v))
            throw std::runtime_error("train: validation loss diverged at epoch " +
                                     std::to_string(epoch + 1));
        if (v < best_val) {
            best_val = v;
            best = params;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    return best;
}

}  // namespace

GcnParams train_gcn_with_val(const GcnParams& p0,
                             const std::vector<const EncodedGraph*>& train_inputs,
                             const Vector& train_targets,
                             const std::vector<const EncodedGraph*>& val_inputs,
                             const Vector& val_targets, const TrainConfig& cfg,
                             LossKind k) {
    if (train_inputs.empty()) throw std::invalid_argument("train: empty data");
    auto batch_grad = [&](const GcnParams& p, const std::vector<std::size_t>& idx) {
        std::vector<const EncodedGraph*> graphs(idx.size());
        Vector t(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            graphs[i] = train_inputs[idx[i]];
            t[i] = train_targets[idx[i]];
        }
        return gcn_grad(k, p, graphs, t);
    };
    auto val_loss = [&](const GcnParams& p) {
        return loss(k, predict_batch(p, val_inputs), val_targets);
    };
    return train_loop(p0, train_inputs.size(), cfg, batch_grad, val_loss);
}

GcnParams train_gcn(const GcnParams& p0, const std::vector<EncodedGraph>& inputs,
                    const Vector& targets, const TrainConfig& cfg, LossKind k) {
    if (inputs.empty()) throw std::invalid_argument("train: empty data");
    const std::size_t n = inputs.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(mix64(cfg.seed));
    shuffle_in_place(idx, split_rng);
    std::size_t n_val =
        n >= 2 ? std::max<std::size_t>(1, static_cast<std::size_t>(
                                              std::llround(cfg.validation_fraction *
                                                           static_cast<double>(n))))
               : 0;
    if (n_val >= n) n_val = n - 1;

    std::vector<const EncodedGraph*> train_in, val_in;
    Vector train_t, val_t;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_val) {
            val_in.push_back(&inputs[idx[i]]);
            val_t.push_back(targets[idx[i]]);
        } else {
            train_in.push_back(&inputs[idx[i]]);
            train_t.push_back(targets[idx[i]]);
        }
    }
    if (val_in.empty()) {  // single record: validate on the training point
        val_in = train_in;
        val_t = train_t;
    }
    return train_gcn_with_val(p0, train_in, train_t, val_in, val_t, cfg, k);
}

double TargetScaler::apply(double v) const {
    if (identity) return v;
    if (hi == lo) return 0.5;
    const double u = flip ? (hi - v) / (hi - lo) : (v - lo) / (hi - lo);
    return 0.05 + 0.9 * u;
}

TargetScaler TargetScaler::fit(const Vector& values, Direction dir) {
    TargetScaler s;
    if (values.empty()) return s;
    bool in_unit = dir == Direction::maximize;
    for (double v : values)
        if (!(v > 0.0 && v < 1.0)) in_unit = false;
    if (in_unit) return s;
    s.identity = false;
    s.flip = dir == Direction::minimize;
    s.lo = *std::min_element(values.begin(), values.end());
    s.hi = *std::max_element(values.begin(), values.end());
    return s;
}

TrainedPredictor train(const GcnParams& p0, const std::vector<TrainedRecord>& data,
                       const OpVocabulary& vocab, const TrainConfig& cfg,
                       LossKind k, std::size_t objective_index, Direction direction) {
    if (data.empty()) throw std::invalid_argument("train: empty data");
    Vector raw(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        raw[i] = data[i].objectives.at(objective_index);
    TargetScaler scaler = TargetScaler::fit(raw, direction);
    Vector targets(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) targets[i] = scaler.apply(raw[i]);
    std::vector<EncodedGraph> encoded;
    encoded.reserve(data.size());
    for (const auto& rec : data) encoded.push_back(encode(rec.graph, vocab));
    return TrainedPredictor{train_gcn(p0, encoded, targets, cfg, k), scaler};
}

double pearson_correlation(const Vector& pred, const Vector& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("correlation: length mismatch");
    const std::size_t n = pred.size();
    if (n < 2) throw std::invalid_argument("correlation: need at least 2 samples");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += pred[i];
        my += truth[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = pred[i] - mx, dy = truth[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::invalid_argument("correlation: undefined for zero variance");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

Vector average_ranks(const Vector& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vector ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_correlation(const Vector& pred, const Vector& truth) {
    return pearson_correlation(average_ranks(pred), average_ranks(truth));
}

// ---------------------------------------------------------------------------
// MLP baseline

std::vector<std::span<double>> MlpParams::tensor_views() {
    std::vector<std::span<double>> v;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        v.emplace_back(weights[l].data(), weights[l].size());
        v.emplace_back(biases[l].data(), biases[l].size());
    }
    v.emplace_back(head_weight.data(), head_weight.size());
    v.emplace_back(&head_bias, 1);
    return v;
}

std::vector<std::span<const double>> MlpParams::tensor_views() const {
    std::vector<std::span<const double>> v;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        v.emplace_back(weights[l].data(), weights[l].size());
        v.emplace_back(biases[l].data(), biases[l].size());
    }
    v.emplace_back(head_weight.data(), head_weight.size());
    v.emplace_back(&head_bias, 1);
    return v;
}

MlpParams MlpParams::init(int node_capacity, std::size_t base_ops,
                          std::size_t hidden_dim, std::size_t hidden_layers,
                          std::uint64_t seed, bool allow_padding) {
    if (node_capacity < 1) throw std::invalid_argument("mlp: node capacity must be >= 1");
    if (hidden_layers < 1) throw std::invalid_argument("mlp: need a hidden layer");
    MlpParams p;
    p.node_capacity = node_capacity;
    p.base_ops = base_ops;
    p.allow_padding = allow_padding;
    Rng rng(seed);
    std::size_t in = p.input_width();
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        p.weights.emplace_back(in, hidden_dim);
        glorot_fill(p.weights.back(), rng);
        p.biases.emplace_back(hidden_dim, 0.0);
        in = hidden_dim;
    }
    p.head_weight.resize(hidden_dim);
    const double a = std::sqrt(6.0 / static_cast<double>(hidden_dim + 1));
    for (auto& x : p.head_weight) x = urand(rng, -a, a);
    p.head_bias = 0.0;
    return p;
}

Vector flatten_graph(const ArchGraph& g, std::size_t base_ops, int node_capacity,
                     bool allow_padding) {
    if (g.node_count != node_capacity && !allow_padding)
        throw UnsupportedShapeError("mlp: graph has " + std::to_string(g.node_count) +
                                    " nodes, predictor is fixed at " +
                                    std::to_string(node_capacity));
    if (g.node_count > node_capacity)
        throw UnsupportedShapeError("mlp: graph has " + std::to_string(g.node_count) +
                                    " nodes, exceeding capacity " +
                                    std::to_string(node_capacity));
    const std::size_t cap = static_cast<std::size_t>(node_capacity);
    Vector x(cap * cap + cap * base_ops, 0.0);
    for (int i = 0; i < g.node_count; ++i)
        for (int j = 0; j < g.node_count; ++j)
            x[static_cast<std::size_t>(i) * cap + j] = g.edge(i, j);
    const std::size_t base = cap * cap;
    for (int i = 0; i < g.node_count; ++i) {
        const int label = g.op_labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= base_ops)
            throw EncodingError("mlp: op label " + std::to_string(label) +
                                " outside vocabulary");
        x[base + static_cast<std::size_t>(i) * base_ops + label] = 1.0;
    }
    return x;
}

namespace {

Vector mlp_forward(const MlpParams& p, const Vector& x,
                   std::vector<Vector>* activations) {
    Vector a = x;
    if (activations) activations->push_back(a);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        Vector z = matvec_t(p.weights[l], a);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] += p.biases[l][i];
            if (z[i] < 0.0) z[i] = 0.0;
        }
        a = std::move(z);
        if (activations) activations->push_back(a);
    }
    return a;
}

MlpParams mlp_zero_like(const MlpParams& p) {
    MlpParams g = p;
    for (auto& w : g.weights) w = Matrix(w.rows(), w.cols());
    for (auto& b : g.biases) b.assign(b.size(), 0.0);
    g.head_weight.assign(g.head_weight.size(), 0.0);
    g.head_bias = 0.0;
    return g;
}

void mlp_add_into(MlpParams& acc, const MlpParams& g) {
    auto av = acc.tensor_views();
    auto gv = const_cast<MlpParams&>(g).tensor_views();
    for (std::size_t s = 0; s < av.size(); ++s)
        for (std::size_t i = 0; i < av[s].size(); ++i) av[s][i] += gv[s][i];
}

void mlp_accumulate_sample_grad(MlpParams& out, const MlpParams& p, const Vector& x,
                                double truth, double coeff) {
    std::vector<Vector> acts;
    Vector phi = mlp_forward(p, x, &acts);
    const double s = dot(p.head_weight, phi) + p.head_bias;
    const double y = sigmoid(s);
    const double ds = coeff * 2.0 * (y - truth) * y * (1.0 - y);
    for (std::size_t i = 0; i < phi.size(); ++i) out.head_weight[i] += ds * phi[i];
    out.head_bias += ds;

    Vector da(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i) da[i] = ds * p.head_weight[i];
    for (std::size_t l = p.weights.size(); l-- > 0;) {
        // acts[l] is the layer input, acts[l+1] the ReLU output
        Vector dz = da;
        for (std::size_t i = 0; i < dz.size(); ++i)
            if (acts[l + 1][i] <= 0.0) dz[i] = 0.0;
        const Vector& in = acts[l];
        for (std::size_t i = 0; i < in.size(); ++i) {
            const double v = in[i];
            if (v == 0.0) continue;
            double* row = out.weights[l].row(i);
            for (std::size_t j = 0; j < dz.size(); ++j) row[j] += v * dz[j];
        }
        for (std::size_t j = 0; j < dz.size(); ++j) out.biases[l][j] += dz[j];
        if (l > 0) da = matvec(p.weights[l], dz);
    }
}

}  // namespace

Vector mlp_embed(const MlpParams& p, const ArchGraph& g) {
    return mlp_forward(p, flatten_graph(g, p.base_ops, p.node_capacity, p.allow_padding),
                       nullptr);
}

double mlp_predict(const MlpParams& p, const ArchGraph& g) {
    return sigmoid(dot(p.head_weight, mlp_embed(p, g)) + p.head_bias);
}

MlpParams mlp_train(const MlpParams& p0, const std::vector<const ArchGraph*>& graphs,
                    const Vector& targets, const TrainConfig& cfg, LossKind k) {
    if (graphs.empty()) throw std::invalid_argument("train: empty data");
    std::vector<Vector> flat;
    flat.reserve(graphs.size());
    for (const auto* g : graphs)
        flat.push_back(flatten_graph(*g, p0.base_ops, p0.node_capacity, p0.allow_padding));

    const std::size_t n = graphs.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(mix64(cfg.seed));
    shuffle_in_place(idx, split_rng);
    std::size_t n_val =
        n >= 2 ? std::max<std::size_t>(1, static_cast<std::size_t>(
                                              std::llround(cfg.validation_fraction *
                                                           static_cast<double>(n))))
               : 0;
    if (n_val >= n) n_val = n - 1;
    std::vector<std::size_t> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<std::size_t> train_idx(idx.begin() + n_val, idx.end());
    if (val_idx.empty()) val_idx = train_idx;

    const double scale_norm = loss_normalizer(k);
    auto batch_grad = [&](const MlpParams& p, const std::vector<std::size_t>& batch) {
        MlpParams g = mlp_zero_like(p);
        const double scale = static_cast<double>(batch.size()) * scale_norm;
        const std::size_t nchunks = (batch.size() + kGradChunk - 1) / kGradChunk;
        std::vector<MlpParams> partial(nchunks, g);
#pragma omp parallel for schedule(dynamic)
        for (std::size_t c = 0; c < nchunks; ++c) {
            const std::size_t end = std::min(batch.size(), (c + 1) * kGradChunk);
            for (std::size_t i = c * kGradChunk; i < end; ++i) {
                const std::size_t s = train_idx[batch[i]];
                mlp_accumulate_sample_grad(
                    partial[c], p, flat[s], targets[s],
                    loss_weight_unnormalized(k, targets[s]) / scale);
            }
        }
        for (const auto& part : partial) mlp_add_into(g, part);
        return g;
    };
    auto val_loss = [&](const MlpParams& p) {
        Vector pred(val_idx.size()), t(val_idx.size());
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < val_idx.size(); ++i) {
            pred[i] = sigmoid(dot(p.head_weight, mlp_forward(p, flat[val_idx[i]], nullptr)) +
                              p.head_bias);
        }
        for (std::size_t i = 0; i < val_idx.size(); ++i) t[i] = targets[val_idx[i]];
        return loss(k, pred, t);
    };
    return train_loop(p0, train_idx.size(), cfg, batch_grad, val_loss);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'B', 'G', 'C', 'N', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_doubles_le(std::ostream& out, std::span<const double> xs) {
    for (double x : xs) {
        const auto bits = std::bit_cast<std::uint64_t>(x);
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        out.write(b, 8);
    }
}

void read_doubles_le(std::istream& in, std::span<double> xs) {
    for (double& x : xs) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        x = std::bit_cast<double>(bits);
    }
}

template <typename Params>
void write_checkpoint_file(const std::string& path, const json& header,
                           const Params& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    const std::string h = header.dump();
    write_u32(out, static_cast<std::uint32_t>(h.size()));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (auto view : const_cast<Params&>(p).tensor_views()) write_doubles_le(out, view);
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

json shapes_json(const std::vector<std::span<const double>>& views) {
    json shapes = json::array();
    for (const auto& v : views) shapes.push_back(v.size());
    return shapes;
}

}  // namespace

void save_checkpoint(const std::string& path, const GcnParams& p, std::uint64_t seed) {
    json header;
    header["format_version"] = 1;
    header["kind"] = "gcn";
    header["seed"] = seed;
    header["feature_dim"] = p.feature_dim();
    header["hidden_dim"] = p.hidden_dim();
    header["layer_count"] = p.layer_count();
    header["tensor_sizes"] = shapes_json(p.tensor_views());
    write_checkpoint_file(path, header, p);
}

void save_checkpoint(const std::string& path, const MlpParams& p, std::uint64_t seed) {
    json header;
    header["format_version"] = 1;
    header["kind"] = "mlp";
    header["seed"] = seed;
    header["node_capacity"] = p.node_capacity;
    header["base_ops"] = p.base_ops;
    header["allow_padding"] = p.allow_padding;
    header["hidden_dim"] = p.hidden_dim();
    header["hidden_layers"] = p.weights.size();
    header["tensor_sizes"] = shapes_json(p.tensor_views());
    write_checkpoint_file(path, header, p);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const std::uint32_t hlen = read_u32(in);
    std::string hstr(hlen, '\0');
    in.read(hstr.data(), hlen);
    json header = json::parse(hstr);
    if (header.at("format_version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint version in " + path);

    LoadedCheckpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    if (ck.kind == "gcn") {
        GcnParams p = GcnParams::init(header.at("feature_dim").get<std::size_t>(),
                                      header.at("hidden_dim").get<std::size_t>(),
                                      header.at("layer_count").get<std::size_t>(), 0);
        for (auto view : p.tensor_views()) read_doubles_le(in, view);
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        ck.gcn = std::move(p);
    } else if (ck.kind == "mlp") {
        MlpParams p = MlpParams::init(header.at("node_capacity").get<int>(),
                                      header.at("base_ops").get<std::size_t>(),
                                      header.at("hidden_dim").get<std::size_t>(),
                                      header.at("hidden_layers").get<std::size_t>(), 0,
                                      header.at("allow_padding").get<bool>());
        for (auto view : p.tensor_views()) read_doubles_le(in, view);
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        ck.mlp = std::move(p);
    } else {
        throw std::runtime_error("unknown checkpoint kind '" + ck.kind + "' in " + path);
    }
    return ck;
}

}  // namespace bogcn
