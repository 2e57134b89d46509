#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bogcn/linalg.hpp"

namespace bogcn {

struct EncodingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Ordered operation vocabulary. One extra feature slot beyond the named
/// operations is reserved for the global node, so feature width is
/// names.size() + 1.
struct OpVocabulary {
    std::vector<std::string> names;

    std::size_t global_index() const { return names.size(); }
    std::size_t feature_width() const { return names.size() + 1; }
    /// Index of `name`, or -1 if unknown.
    int index_of(const std::string& name) const;
    void validate() const;  // throws on duplicate names

    static OpVocabulary from_json_file(const std::string& path);
    void to_json_file(const std::string& path) const;
};

/// A cell architecture: directed acyclic graph over operation nodes.
/// adjacency(i, j) = 1 means a data-flow edge i -> j. Node order is part of
/// the identity; no isomorphism canonicalization happens anywhere.
struct ArchGraph {
    int node_count = 0;
    std::vector<std::uint8_t> adjacency;  // row-major node_count^2, 0/1
    std::vector<int> op_labels;
    std::string id;  // content hash of (adjacency, op_labels)

    std::uint8_t edge(int i, int j) const {
        return adjacency[static_cast<std::size_t>(i) * node_count + j];
    }
    int edge_count() const;

    /// Validates shape, binary entries, zero diagonal and acyclicity, then
    /// stamps the content hash.
    static ArchGraph create(int node_count, std::vector<std::uint8_t> adjacency,
                            std::vector<int> op_labels);
};

/// True iff the adjacency (row-major n*n) has a topological order.
bool is_acyclic(const std::vector<std::uint8_t>& adjacency, int n);

/// Deterministic 128-bit content hash over (node_count, adjacency, ops),
/// rendered as 32 hex characters.
std::string content_hash(int node_count,
                         const std::vector<std::uint8_t>& adjacency,
                         const std::vector<int>& op_labels);

/// GCN-ready encoding of a graph. aug_adjacency is the symmetrically
/// normalized message matrix over the global-augmented cell:
/// aug_adjacency(v, u) weights the message sent along edge u -> v (plus
/// self-loops), so one forward product H' = aug_adjacency * H moves
/// information one hop along the data-flow direction and the appended
/// global row aggregates every node.
struct EncodedGraph {
    Matrix aug_adjacency;  // (N+1) x (N+1)
    Matrix features;       // (N+1) x F one-hot
    std::size_t global_row = 0;
};

/// One-hot feature matrix: row i flags op_labels[i], the appended row N
/// flags the vocabulary's global slot.
Matrix one_hot_features(const ArchGraph& g, const OpVocabulary& v);

/// Appends the global node: out(i, j) = A(i, j) for i,j < N, out(i, N) = 1
/// for every original node i, global row all zero. Binary, still acyclic.
Matrix augment_with_global(const ArchGraph& g);

/// D^{-1/2} (A + I) D^{-1/2} with D_ii the row sums of A + I. The self-loop
/// keeps every degree >= 1.
Matrix normalize_adjacency(const Matrix& a);

EncodedGraph encode(const ArchGraph& g, const OpVocabulary& v);

/// Inverse of encode up to the information kept in EncodedGraph (structure
/// and labels; the id is recomputed).
ArchGraph decode(const EncodedGraph& e, const OpVocabulary& v);

/// A fully evaluated architecture. `objectives` aligns with the owning
/// dataset's metric_names.
struct TrainedRecord {
    ArchGraph graph;
    Vector objectives;
};

struct Dataset {
    std::vector<std::string> metric_names;  // sorted, uniform across records
    std::vector<TrainedRecord> records;

    int metric_index(const std::string& name) const;  // -1 when absent
};

/// Reads the JSON-lines dataset format: one object per line with keys
/// "adjacency" (0/1 matrix), "ops" (names) and "metrics" (name -> value).
/// Parse errors carry the line number; validation errors carry the record
/// id. Duplicate ids with conflicting objectives are rejected; exact
/// duplicates are kept as-is.
Dataset load_dataset(const std::string& path, const OpVocabulary& vocab);

void save_dataset(const std::string& path, const Dataset& dataset,
                  const OpVocabulary& vocab);

/// Sorted unique operation names appearing in a JSON-lines dataset file;
/// fallback when no vocabulary file is given.
OpVocabulary vocabulary_from_dataset(const std::string& path);

}  // namespace bogcn
