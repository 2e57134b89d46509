#include "bogcn/arch_graph.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "bogcn/rng.hpp"
#include "json.hpp"

namespace bogcn {

using nlohmann::json;

int OpVocabulary::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

void OpVocabulary::validate() const {
    std::set<std::string> seen;
    for (const auto& n : names)
        if (!seen.insert(n).second)
            throw EncodingError("vocabulary: duplicate operation name '" + n + "'");
}

OpVocabulary OpVocabulary::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open vocabulary file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DatasetError("vocabulary " + path + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("ops") || !j["ops"].is_array())
        throw DatasetError("vocabulary " + path + ": expected {\"ops\": [...]}");
    OpVocabulary v;
    for (const auto& n : j["ops"]) v.names.push_back(n.get<std::string>());
    v.validate();
    return v;
}

void OpVocabulary::to_json_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write vocabulary file: " + path);
    json j;
    j["ops"] = names;
    out << j.dump(2) << "\n";
}

int ArchGraph::edge_count() const {
    int c = 0;
    for (auto b : adjacency) c += b;
    return c;
}

bool is_acyclic(const std::vector<std::uint8_t>& adjacency, int n) {
    // Kahn's algorithm
    std::vector<int> indeg(n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (adjacency[static_cast<std::size_t>(i) * n + j]) ++indeg[j];
    std::vector<int> stack;
    for (int i = 0; i < n; ++i)
        if (indeg[i] == 0) stack.push_back(i);
    int visited = 0;
    while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        ++visited;
        for (int j = 0; j < n; ++j)
            if (adjacency[static_cast<std::size_t>(u) * n + j] && --indeg[j] == 0)
                stack.push_back(j);
    }
    return visited == n;
}

std::string content_hash(int node_count,
                         const std::vector<std::uint8_t>& adjacency,
                         const std::vector<int>& op_labels) {
    auto fnv = [&](std::uint64_t h, std::uint64_t prime) {
        auto eat = [&](std::uint64_t byte) {
            h ^= byte;
            h *= prime;
        };
        eat(static_cast<std::uint64_t>(node_count));
        for (auto b : adjacency) eat(b);
        for (auto l : op_labels) {
            eat(static_cast<std::uint64_t>(l) & 0xff);
            eat((static_cast<std::uint64_t>(l) >> 8) & 0xff);
        }
        return mix64(h);
    };
    const std::uint64_t h1 = fnv(0xcbf29ce484222325ULL, 0x100000001b3ULL);
    const std::uint64_t h2 = fnv(0x9ae16a3b2f90404fULL, 0x10000000233ULL);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx",
                  static_cast<unsigned long long>(h1),
                  static_cast<unsigned long long>(h2));
    return std::string(buf);
}

ArchGraph ArchGraph::create(int node_count, std::vector<std::uint8_t> adjacency,
                            std::vector<int> op_labels) {
    if (node_count < 1) throw EncodingError("graph: node_count must be >= 1");
    if (adjacency.size() != static_cast<std::size_t>(node_count) * node_count)
        throw EncodingError("graph: adjacency shape mismatch");
    if (op_labels.size() != static_cast<std::size_t>(node_count))
        throw EncodingError("graph: op label count mismatch");
    for (int i = 0; i < node_count; ++i) {
        for (int j = 0; j < node_count; ++j) {
            const auto v = adjacency[static_cast<std::size_t>(i) * node_count + j];
            if (v != 0 && v != 1)
                throw EncodingError("graph: adjacency entries must be 0/1");
            if (i == j && v != 0)
                throw EncodingError("graph: adjacency diagonal must be zero");
        }
    }
    for (int i = 0; i < node_count; ++i)
        if (op_labels[i] < 0)
            throw EncodingError("graph: negative op label at node " + std::to_string(i));
    if (!is_acyclic(adjacency, node_count))
        throw EncodingError("graph: adjacency contains a cycle");
    ArchGraph g;
    g.node_count = node_count;
    g.adjacency = std::move(adjacency);
    g.op_labels = std::move(op_labels);
    g.id = content_hash(g.node_count, g.adjacency, g.op_labels);
    return g;
}

Matrix one_hot_features(const ArchGraph& g, const OpVocabulary& v) {
    const std::size_t n = static_cast<std::size_t>(g.node_count);
    Matrix x(n + 1, v.feature_width());
    for (std::size_t i = 0; i < n; ++i) {
        const int label = g.op_labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= v.names.size())
            throw EncodingError("node " + std::to_string(i) + ": op label " +
                                std::to_string(label) + " outside vocabulary of " +
                                std::to_string(v.names.size()));
        x(i, static_cast<std::size_t>(label)) = 1.0;
    }
    x(n, v.global_index()) = 1.0;
    return x;
}

Matrix augment_with_global(const ArchGraph& g) {
    const std::size_t n = static_cast<std::size_t>(g.node_count);
    Matrix a(n + 1, n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a(i, j) = g.edge(i, j);
        a(i, n) = 1.0;
    }
    return a;
}

Matrix normalize_adjacency(const Matrix& a) {
    assert(a.rows() == a.cols());
    const std::size_t n = a.rows();
    Matrix tilde = a;
    for (std::size_t i = 0; i < n; ++i) tilde(i, i) += 1.0;
    Vector inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d += tilde(i, j);
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
    }
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out(i, j) = tilde(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
    return out;
}

EncodedGraph encode(const ArchGraph& g, const OpVocabulary& v) {
    EncodedGraph e;
    e.features = one_hot_features(g, v);
    // Message matrix orientation: transpose the stored src->dst adjacency so
    // that row v collects from in-edges and the global row sees every node.
    e.aug_adjacency = normalize_adjacency(transpose(augment_with_global(g)));
    e.global_row = static_cast<std::size_t>(g.node_count);
    return e;
}

ArchGraph decode(const EncodedGraph& e, const OpVocabulary& v) {
    const std::size_t total = e.aug_adjacency.rows();
    if (total < 2) throw EncodingError("decode: encoded graph too small");
    const int n = static_cast<int>(total - 1);
    std::vector<std::uint8_t> adj(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && e.aug_adjacency(static_cast<std::size_t>(j),
                                          static_cast<std::size_t>(i)) != 0.0)
                adj[static_cast<std::size_t>(i) * n + j] = 1;
    std::vector<int> ops(n, -1);
    for (int i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < e.features.cols(); ++f)
            if (e.features(static_cast<std::size_t>(i), f) == 1.0) {
                ops[i] = static_cast<int>(f);
                break;
            }
        if (ops[i] < 0 || static_cast<std::size_t>(ops[i]) >= v.names.size())
            throw EncodingError("decode: bad one-hot row " + std::to_string(i));
    }
    return ArchGraph::create(n, std::move(adj), std::move(ops));
}

Dataset load_dataset(const std::string& path, const OpVocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset file: " + path);
    Dataset ds;
    std::unordered_map<std::string, Vector> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DatasetError("parse error at line " + std::to_string(line_no) +
                               ": " + e.what());
        }
        TrainedRecord rec;
        try {
            if (!j.contains("adjacency") || !j.contains("ops") || !j.contains("metrics"))
                throw EncodingError("record needs adjacency, ops and metrics");
            const auto& adj_rows = j["adjacency"];
            const int n = static_cast<int>(adj_rows.size());
            std::vector<std::uint8_t> adj;
            adj.reserve(static_cast<std::size_t>(n) * n);
            for (const auto& row : adj_rows) {
                if (!row.is_array() || static_cast<int>(row.size()) != n)
                    throw EncodingError("adjacency is not square");
                for (const auto& cell : row) {
                    const int v = cell.get<int>();
                    if (v != 0 && v != 1) throw EncodingError("adjacency entry not 0/1");
                    adj.push_back(static_cast<std::uint8_t>(v));
                }
            }
            std::vector<int> ops;
            for (const auto& name : j["ops"]) {
                const int idx = vocab.index_of(name.get<std::string>());
                if (idx < 0)
                    throw EncodingError("unknown op '" + name.get<std::string>() + "'");
                ops.push_back(idx);
            }
            rec.graph = ArchGraph::create(n, std::move(adj), std::move(ops));

            std::map<std::string, double> metrics;  // ordered for determinism
            for (const auto& [key, value] : j["metrics"].items())
                metrics[key] = value.get<double>();
            if (metrics.empty()) throw EncodingError("empty metrics");
            std::vector<std::string> names;
            for (const auto& [key, value] : metrics) {
                names.push_back(key);
                rec.objectives.push_back(value);
            }
            if (ds.metric_names.empty() && ds.records.empty())
                ds.metric_names = names;
            else if (names != ds.metric_names)
                throw EncodingError("metric keys differ from previous records");
            const int acc = ds.metric_index("accuracy");
            if (acc >= 0) {
                const double a = rec.objectives[static_cast<std::size_t>(acc)];
                if (!(a > 0.0 && a < 1.0))
                    throw EncodingError("accuracy outside (0,1)");
            }
        } catch (const std::exception& e) {
            throw DatasetError("line " + std::to_string(line_no) + ": " + e.what());
        }
        auto it = seen.find(rec.graph.id);
        if (it != seen.end()) {
            if (it->second != rec.objectives)
                throw DatasetError("line " + std::to_string(line_no) +
                                   ": duplicate id " + rec.graph.id +
                                   " with conflicting objectives");
        } else {
            seen.emplace(rec.graph.id, rec.objectives);
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

int Dataset::metric_index(const std::string& name) const {
    for (std::size_t i = 0; i < metric_names.size(); ++i)
        if (metric_names[i] == name) return static_cast<int>(i);
    return -1;
}

void save_dataset(const std::string& path, const Dataset& dataset,
                  const OpVocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write dataset file: " + path);
    for (const auto& rec : dataset.records) {
        json j;
        const int n = rec.graph.node_count;
        json adj = json::array();
        for (int i = 0; i < n; ++i) {
            json row = json::array();
            for (int jj = 0; jj < n; ++jj) row.push_back(rec.graph.edge(i, jj));
            adj.push_back(std::move(row));
        }
        j["adjacency"] = std::move(adj);
        json ops = json::array();
        for (int label : rec.graph.op_labels)
            ops.push_back(vocab.names.at(static_cast<std::size_t>(label)));
        j["ops"] = std::move(ops);
        json metrics;
        for (std::size_t m = 0; m < dataset.metric_names.size(); ++m)
            metrics[dataset.metric_names[m]] = rec.objectives[m];
        j["metrics"] = std::move(metrics);
        out << j.dump() << "\n";
    }
}

OpVocabulary vocabulary_from_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset file: " + path);
    std::set<std::string> names;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DatasetError("parse error at line " + std::to_string(line_no) +
                               ": " + e.what());
        }
        if (j.contains("ops"))
            for (const auto& n : j["ops"]) names.insert(n.get<std::string>());
    }
    OpVocabulary v;
    v.names.assign(names.begin(), names.end());
    return v;
}

}  // namespace bogcn
