#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "bogcn/bench.hpp"
#include "bogcn/gcn.hpp"
#include "bogcn/search.hpp"
#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << text;
}

bogcn::OpVocabulary resolve_vocab(const std::string& vocab_path,
                                  const std::string& data_path) {
    if (!vocab_path.empty()) return bogcn::OpVocabulary::from_json_file(vocab_path);
    // fall back to the sorted distinct op names of the dataset itself
    return bogcn::vocabulary_from_dataset(data_path);
}

bogcn::ObjectiveSpec parse_objectives(const std::string& text) {
    bogcn::ObjectiveSpec spec;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        const std::string part = text.substr(pos, comma - pos);
        pos = comma + 1;
        if (part.empty()) break;
        std::vector<std::string> bits;
        std::size_t p = 0;
        while (p <= part.size()) {
            const std::size_t colon = std::min(part.find(':', p), part.size());
            bits.push_back(part.substr(p, colon - p));
            p = colon + 1;
        }
        if (bits.size() < 2 || bits.size() > 3)
            throw CLI::ValidationError("--objectives",
                                       "expected name:max|min[:exact] entries");
        spec.names.push_back(bits[0]);
        if (bits[1] == "max")
            spec.directions.push_back(bogcn::Direction::maximize);
        else if (bits[1] == "min")
            spec.directions.push_back(bogcn::Direction::minimize);
        else
            throw CLI::ValidationError("--objectives", "direction must be max or min");
        bool costly = true;
        if (bits.size() == 3) {
            if (bits[2] != "exact")
                throw CLI::ValidationError("--objectives", "third field must be 'exact'");
            costly = false;
        }
        spec.costly.push_back(costly);
    }
    spec.validate();
    return spec;
}

struct CommonTrainFlags {
    double learning_rate = 0.001;
    int batch_size = 128;
    int max_epochs = 300;
    int patience = 30;

    void attach(CLI::App* cmd) {
        cmd->add_option("--learning-rate", learning_rate, "Adam learning rate");
        cmd->add_option("--train-batch", batch_size, "mini-batch size");
        cmd->add_option("--epochs", max_epochs, "max training epochs");
        cmd->add_option("--patience", patience, "early stopping patience");
    }
    bogcn::TrainConfig config(std::uint64_t seed) const {
        bogcn::TrainConfig cfg;
        cfg.learning_rate = learning_rate;
        cfg.batch_size = batch_size;
        cfg.max_epochs = max_epochs;
        cfg.patience = patience;
        cfg.seed = seed;
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BOGCN-NAS: multi-objective architecture search with a GCN "
                 "surrogate and Bayesian linear regression head"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config");
    app.allow_config_extras(false);

    int threads = 0;
    app.add_option("--threads", threads,
                   "worker threads for pool scoring and batch kernels "
                   "(default: BOGCN_THREADS or all cores)");

    // ---- gen-bench ----
    auto* gen = app.add_subcommand("gen-bench", "generate the synthetic tabular benchmark");
    bogcn::SyntheticBenchSpec bench_spec;
    std::string gen_out = "bench";
    bool gen_force = false;
    gen->add_option("--out", gen_out, "output prefix (<out>.jsonl, <out>.meta.json)");
    gen->add_option("--min-nodes", bench_spec.min_nodes, "smallest cell size");
    gen->add_option("--max-nodes", bench_spec.max_nodes, "largest cell size");
    gen->add_option("--op-count", bench_spec.op_count, "vocabulary size incl. input/output");
    gen->add_option("--space-size", bench_spec.space_size, "enumeration cap");
    gen->add_option("--seed", bench_spec.seed, "generator seed");
    gen->add_flag("--force", gen_force, "overwrite existing files");

    // ---- train-predictor ----
    auto* trn = app.add_subcommand("train-predictor", "train a performance predictor");
    std::string trn_data, trn_vocab, trn_out = "predictor.ckpt", trn_loss = "mse";
    std::string trn_objective = "accuracy", trn_kind = "gcn";
    std::uint64_t trn_seed = 0;
    std::size_t trn_hidden = 64, trn_layers = 4;
    CommonTrainFlags trn_flags;
    trn->add_option("--data", trn_data, "JSON-lines dataset")->required();
    trn->add_option("--vocab", trn_vocab, "vocabulary JSON file");
    trn->add_option("--objective", trn_objective, "metric to fit");
    trn->add_option("--loss", trn_loss, "mse|exp_weighted|log_weighted|linear_weighted");
    trn->add_option("--predictor", trn_kind, "gcn|mlp");
    trn->add_option("--hidden", trn_hidden, "hidden units");
    trn->add_option("--layers", trn_layers, "graph layers");
    trn->add_option("--seed", trn_seed, "seed");
    trn->add_option("--out", trn_out, "checkpoint path");
    trn_flags.attach(trn);

    // ---- eval-predictor ----
    auto* evl = app.add_subcommand("eval-predictor",
                                   "train/val/test split correlation protocol");
    std::string evl_data, evl_vocab, evl_out = "metrics.json", evl_loss = "mse";
    std::string evl_objective = "accuracy", evl_kind = "gcn";
    bogcn::EvalSplit evl_split;
    std::uint64_t evl_seed = 0;
    std::size_t evl_hidden = 64, evl_layers = 4;
    CommonTrainFlags evl_flags;
    evl->add_option("--data", evl_data, "JSON-lines dataset")->required();
    evl->add_option("--vocab", evl_vocab, "vocabulary JSON file");
    evl->add_option("--objective", evl_objective, "metric to fit");
    evl->add_option("--loss", evl_loss, "loss kind");
    evl->add_option("--predictor", evl_kind, "gcn|mlp");
    evl->add_option("--train-n", evl_split.train_n, "training records");
    evl->add_option("--val-n", evl_split.val_n, "validation records");
    evl->add_option("--test-n", evl_split.test_n, "test records");
    evl->add_option("--hidden", evl_hidden, "hidden units");
    evl->add_option("--layers", evl_layers, "graph layers");
    evl->add_option("--seed", evl_seed, "seed");
    evl->add_option("--out", evl_out, "metrics JSON path");
    evl_flags.attach(evl);

    // ---- search ----
    auto* src = app.add_subcommand("search", "run the architecture search");
    std::string src_data, src_vocab, src_out = "search_out";
    std::string src_objectives = "accuracy:max";
    std::string src_loss = "exp_weighted", src_kind = "gcn", src_baseline = "bogcn";
    std::string src_checkpoint;
    bogcn::SearchConfig scfg;
    CommonTrainFlags src_flags;
    src_flags.max_epochs = 150;
    src_flags.patience = 15;
    src->add_option("--data", src_data, "JSON-lines dataset (tabular oracle)")->required();
    src->add_option("--vocab", src_vocab, "vocabulary JSON file");
    src->add_option("--objectives", src_objectives,
                    "comma list of name:max|min[:exact]");
    src->add_option("--init-samples", scfg.init_samples, "initial random evaluations");
    src->add_option("--batch-l", scfg.batch_l, "architectures evaluated per iteration");
    src->add_option("--retrain-k", scfg.retrain_k, "BLR updates per GCN retrain");
    src->add_option("--pool-size", scfg.pool_size, "candidate pool size (0 = whole space)");
    src->add_option("--budget", scfg.max_evaluations, "max oracle evaluations (0 = space)");
    src->add_option("--threshold", scfg.threshold, "optimal-front fraction stop criterion");
    src->add_option("--loss", src_loss, "surrogate training loss");
    src->add_option("--predictor", src_kind, "gcn|mlp");
    src->add_flag("--point-estimate-only", scfg.point_estimate_only,
                  "rank by predictor output, no BLR/EI");
    src->add_option("--baseline", src_baseline, "bogcn|random|evolution");
    src->add_option("--hidden", scfg.hidden_dim, "hidden units");
    src->add_option("--layers", scfg.layer_count, "graph layers");
    src->add_option("--evolution-population", scfg.evolution_population, "RE population");
    src->add_option("--evolution-sample", scfg.evolution_sample, "RE tournament size");
    src->add_option("--seed", scfg.seed, "seed");
    src->add_option("--out", src_out, "output prefix (<out>.report.json, <out>.trace.csv)");
    src->add_option("--checkpoint", src_checkpoint,
                    "rewrite full search state here each iteration");
    src_flags.attach(src);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    const char* env_threads = std::getenv("BOGCN_THREADS");
    if (threads == 0 && env_threads) threads = std::atoi(env_threads);
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (gen->parsed()) {
            const std::string data_path = gen_out + ".jsonl";
            const std::string meta_path = gen_out + ".meta.json";
            if (!gen_force && (fs::exists(data_path) || fs::exists(meta_path))) {
                std::cerr << "refusing to overwrite " << data_path
                          << " (use --force)\n";
                return 2;
            }
            const bogcn::GeneratedBench bench = bogcn::generate_bench(bench_spec);
            bogcn::save_dataset(data_path, bench.dataset, bench.vocab);
            json meta;
            meta["digest"] = bench.digest;
            meta["records"] = bench.dataset.records.size();
            meta["seed"] = bench_spec.seed;
            meta["min_nodes"] = bench_spec.min_nodes;
            meta["max_nodes"] = bench_spec.max_nodes;
            meta["op_count"] = bench_spec.op_count;
            meta["ops"] = bench.vocab.names;
            meta["metrics"] = bench.dataset.metric_names;
            write_text(meta_path, meta.dump(2) + "\n");
            std::cout << "digest " << bench.digest << "\n";
            return 0;
        }

        if (trn->parsed()) {
            const auto vocab = resolve_vocab(trn_vocab, trn_data);
            const auto ds = bogcn::load_dataset(trn_data, vocab);
            const int metric = ds.metric_index(trn_objective);
            if (metric < 0) {
                std::cerr << "objective '" << trn_objective << "' not in dataset\n";
                return 2;
            }
            const auto cfg = trn_flags.config(trn_seed);
            const auto kind = bogcn::predictor_kind_from_string(trn_kind);
            const auto loss = bogcn::loss_kind_from_string(trn_loss);
            if (kind == bogcn::PredictorKind::gcn) {
                bogcn::GcnParams p0 = bogcn::GcnParams::init(vocab.feature_width(),
                                                             trn_hidden, trn_layers,
                                                             trn_seed);
                auto trained = bogcn::train(p0, ds.records, vocab, cfg, loss,
                                            static_cast<std::size_t>(metric),
                                            bogcn::Direction::maximize);
                bogcn::save_checkpoint(trn_out, trained.params, trn_seed);
            } else {
                int cap = 0;
                for (const auto& rec : ds.records)
                    cap = std::max(cap, rec.graph.node_count);
                bogcn::MlpParams p0 = bogcn::MlpParams::init(
                    cap, vocab.names.size(), trn_hidden, 2, trn_seed, true);
                std::vector<const bogcn::ArchGraph*> graphs;
                bogcn::Vector targets;
                for (const auto& rec : ds.records) {
                    graphs.push_back(&rec.graph);
                    targets.push_back(rec.objectives[static_cast<std::size_t>(metric)]);
                }
                const auto scaler =
                    bogcn::TargetScaler::fit(targets, bogcn::Direction::maximize);
                for (auto& t : targets) t = scaler.apply(t);
                auto p = bogcn::mlp_train(p0, graphs, targets, cfg, loss);
                bogcn::save_checkpoint(trn_out, p, trn_seed);
            }
            std::cout << "checkpoint " << trn_out << "\n";
            return 0;
        }

        if (evl->parsed()) {
            const auto vocab = resolve_vocab(evl_vocab, evl_data);
            const auto ds = bogcn::load_dataset(evl_data, vocab);
            const auto cfg = evl_flags.config(evl_seed);
            const auto result = bogcn::eval_predictor(
                ds, vocab, evl_split, bogcn::loss_kind_from_string(evl_loss),
                bogcn::predictor_kind_from_string(evl_kind), cfg, evl_objective,
                evl_hidden, evl_layers);
            json out;
            out["pearson"] = result.pearson;
            out["spearman"] = result.spearman;
            out["train_n"] = result.train_n;
            out["val_n"] = result.val_n;
            out["test_n"] = result.test_n;
            out["seed"] = evl_seed;
            out["predictor"] = evl_kind;
            out["loss"] = evl_loss;
            write_text(evl_out, out.dump(2) + "\n");
            std::cout << out.dump(2) << "\n";
            return 0;
        }

        if (src->parsed()) {
            const auto vocab = resolve_vocab(src_vocab, src_data);
            const auto ds = bogcn::load_dataset(src_data, vocab);
            scfg.objectives = parse_objectives(src_objectives);
            scfg.loss = bogcn::loss_kind_from_string(src_loss);
            scfg.predictor = bogcn::predictor_kind_from_string(src_kind);
            scfg.train = src_flags.config(scfg.seed);
            bogcn::TabularOracle oracle(ds, scfg.objectives);

            bogcn::SearchReport report;
            if (src_baseline == "bogcn")
                report = bogcn::run(scfg, oracle, oracle.space(), vocab, nullptr,
                                    src_checkpoint);
            else if (src_baseline == "random")
                report = bogcn::run_random_baseline(scfg, oracle, oracle.space(), vocab);
            else if (src_baseline == "evolution")
                report = bogcn::run_evolution_baseline(scfg, oracle, oracle.space(),
                                                       vocab);
            else {
                std::cerr << "unknown --baseline '" << src_baseline << "'\n";
                return 2;
            }
            write_text(src_out + ".report.json", report.to_json(vocab).dump(2) + "\n");
            write_text(src_out + ".trace.csv", report.trace_csv());
            std::cout << "evaluations " << report.evaluations_used
                      << " front " << report.final_front.size();
            if (report.evaluations_to_optimum)
                std::cout << " evaluations_to_optimum " << *report.evaluations_to_optimum;
            std::cout << "\n";
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const bogcn::DatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
