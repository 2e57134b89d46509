#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bogcn/arch_graph.hpp"
#include "bogcn/linalg.hpp"
#include "bogcn/objectives.hpp"

namespace bogcn {

enum class LossKind { mse, exp_weighted, log_weighted, linear_weighted };

LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

/// Per-sample weight of each loss before its normalization constant:
/// mse -> 1, exp -> e^t - 1, log -> ln(t + 1), linear -> t.
double loss_weight_unnormalized(LossKind k, double truth);
/// The constant each weighted loss divides by (so weight(1) normalizes to 1).
double loss_normalizer(LossKind k);

/// Mean weighted squared error over a batch.
double loss(LossKind k, const Vector& predicted, const Vector& truth);

struct TrainConfig {
    double learning_rate = 0.001;
    int batch_size = 128;
    int max_epochs = 300;
    int patience = 30;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;

    void validate() const;
};

/// Weights of the L-layer graph convolution stack plus the dense sigmoid
/// head. Graph layers carry no bias; only the head does.
struct GcnParams {
    std::vector<Matrix> layer_weights;  // F x h, then h x h
    Vector head_weight;
    double head_bias = 0.0;

    std::size_t layer_count() const { return layer_weights.size(); }
    std::size_t feature_dim() const { return layer_weights.front().rows(); }
    std::size_t hidden_dim() const { return head_weight.size(); }

    /// Flat spans over every tensor, in a fixed order (layers, head weight,
    /// head bias). Used by the optimizer and the checkpoint writer.
    std::vector<std::span<double>> tensor_views();
    std::vector<std::span<const double>> tensor_views() const;
    std::size_t parameter_count() const;

    /// Glorot-uniform init, deterministic per seed.
    static GcnParams init(std::size_t feature_dim, std::size_t hidden_dim,
                          std::size_t layer_count, std::uint64_t seed);
};

using GcnGrad = GcnParams;

/// Embedding of the global node: row global_row of H^(L) where
/// H^(l+1) = ReLU(A_hat * H^(l) * W^(l)), H^(0) = one-hot features.
Vector gcn_embed(const GcnParams& p, const EncodedGraph& e);

/// Dense head before the sigmoid.
double gcn_head_preactivation(const GcnParams& p, const Vector& embedding);

/// sigmoid(w . phi + b); strictly inside (0,1).
double gcn_predict(const GcnParams& p, const EncodedGraph& e);

/// Analytic gradient of the mean batch loss w.r.t. every parameter.
/// Per-sample gradients accumulate in fixed chunk order, so the result does
/// not depend on the number of threads.
GcnGrad gcn_grad(LossKind k, const GcnParams& p,
                 const std::vector<const EncodedGraph*>& graphs,
                 const Vector& truth);
/// Single-threaded reference for the same computation.
GcnGrad gcn_grad_serial(LossKind k, const GcnParams& p,
                        const std::vector<const EncodedGraph*>& graphs,
                        const Vector& truth);

/// Rows are gcn_embed of each graph.
Matrix embed_batch(const GcnParams& p, const std::vector<const EncodedGraph*>& graphs);
Matrix embed_batch_serial(const GcnParams& p,
                          const std::vector<const EncodedGraph*>& graphs);

Vector predict_batch(const GcnParams& p,
                     const std::vector<const EncodedGraph*>& graphs);

/// Zero-pads adjacency rows/columns and feature rows up to total_rows.
/// Padded rows are isolated and never affect live rows.
EncodedGraph pad_encoded(const EncodedGraph& e, std::size_t total_rows);

/// Adam training with a held-out validation split chosen inside (seeded,
/// validation_fraction of the data, at least one record when n >= 2).
/// Returns the parameters with the best validation loss observed, which is
/// never worse than p0's. Targets must already live in [0,1].
GcnParams train_gcn(const GcnParams& p0, const std::vector<EncodedGraph>& inputs,
                    const Vector& targets, const TrainConfig& cfg, LossKind k);

/// Same but with an explicitly provided validation set.
GcnParams train_gcn_with_val(const GcnParams& p0,
                             const std::vector<const EncodedGraph*>& train_inputs,
                             const Vector& train_targets,
                             const std::vector<const EncodedGraph*>& val_inputs,
                             const Vector& val_targets, const TrainConfig& cfg,
                             LossKind k);

/// Affine map taking raw objective values into (0,1) for the sigmoid head.
/// Accuracy-style objectives (maximize, already inside (0,1)) pass through;
/// anything else is min-max scaled over the observed values into
/// [0.05, 0.95], flipped so larger is always better.
struct TargetScaler {
    bool identity = true;
    bool flip = false;
    double lo = 0.0;
    double hi = 1.0;

    double apply(double v) const;
    static TargetScaler fit(const Vector& values, Direction dir);
};

struct TrainedPredictor {
    GcnParams params;
    TargetScaler scaler;
};

/// Spec-level train operation: select objective objective_index from the
/// records, map it into (0,1), train against it.
TrainedPredictor train(const GcnParams& p0, const std::vector<TrainedRecord>& data,
                       const OpVocabulary& vocab, const TrainConfig& cfg,
                       LossKind k, std::size_t objective_index, Direction direction);

double pearson_correlation(const Vector& pred, const Vector& truth);
double spearman_correlation(const Vector& pred, const Vector& truth);

// ---------------------------------------------------------------------------
// MLP baseline over flattened (adjacency || one-hot) input of a fixed node
// count. Kept for the predictor ablation; unlike the GCN it cannot absorb a
// larger architecture than it was built for.

struct UnsupportedShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MlpParams {
    int node_capacity = 0;
    std::size_t base_ops = 0;      // vocabulary size without the global slot
    bool allow_padding = false;    // opt-in: zero-pad smaller graphs
    std::vector<Matrix> weights;   // hidden layers
    std::vector<Vector> biases;
    Vector head_weight;
    double head_bias = 0.0;

    std::size_t input_width() const {
        return static_cast<std::size_t>(node_capacity) * node_capacity +
               static_cast<std::size_t>(node_capacity) * base_ops;
    }
    std::size_t hidden_dim() const { return head_weight.size(); }

    std::vector<std::span<double>> tensor_views();
    std::vector<std::span<const double>> tensor_views() const;

    static MlpParams init(int node_capacity, std::size_t base_ops,
                          std::size_t hidden_dim, std::size_t hidden_layers,
                          std::uint64_t seed, bool allow_padding = false);
};

/// Row-major adjacency followed by per-node one-hot rows (no global node).
/// Throws UnsupportedShapeError when the node count does not match the
/// capacity (or exceeds it, when padding is allowed).
Vector flatten_graph(const ArchGraph& g, std::size_t base_ops, int node_capacity,
                     bool allow_padding);

Vector mlp_embed(const MlpParams& p, const ArchGraph& g);
double mlp_predict(const MlpParams& p, const ArchGraph& g);

MlpParams mlp_train(const MlpParams& p0, const std::vector<const ArchGraph*>& graphs,
                    const Vector& targets, const TrainConfig& cfg, LossKind k);

// ---------------------------------------------------------------------------
// Model checkpoints: one self-describing binary file with a JSON header
// (format version, kind, seed, tensor shapes) and little-endian f64 payload.

void save_checkpoint(const std::string& path, const GcnParams& p, std::uint64_t seed);
void save_checkpoint(const std::string& path, const MlpParams& p, std::uint64_t seed);

struct LoadedCheckpoint {
    std::string kind;  // "gcn" or "mlp"
    std::uint64_t seed = 0;
    std::optional<GcnParams> gcn;
    std::optional<MlpParams> mlp;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace bogcn
