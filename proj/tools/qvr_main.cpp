// Command line front end: generate a synthetic corpus, train the dual-path
// scorer, build the medoid tree, then retrieve or evaluate against it.
//
// Data goes to stdout (TSV); status and progress go to stderr. Any failure
// prints a single machine-readable line `error\t<kind>\t<message>` and exits
// with code 2.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qvr/errors.hpp"
#include "qvr/pipeline.hpp"

namespace {

struct GeometryFlags {
    std::string base = "desk";
    int feature_dim = -1;
    int d_model = -1;
    int heads = -1;
    int layers = -1;
    int trunk_layers = -1;
    int student_width = -1;
    int student_heads = -1;
    int student_layers = -1;
    bool scaled_logits = false;
    bool pool_head = false;
};

void add_geometry_flags(CLI::App* cmd, GeometryFlags& g) {
    cmd->add_option("--geometry", g.base, "Base geometry: desk or production")
        ->check(CLI::IsMember({"desk", "production"}));
    cmd->add_option("--feature-dim", g.feature_dim,
                    "Input feature width (default: the corpus feature width)");
    cmd->add_option("--d-model", g.d_model, "Shared model width");
    cmd->add_option("--heads", g.heads, "Attention heads per layer");
    cmd->add_option("--layers", g.layers, "Total attention layers per path");
    cmd->add_option("--trunk-layers", g.trunk_layers, "Leading layers shared by all paths");
    cmd->add_option("--student-width", g.student_width, "Student model width");
    cmd->add_option("--student-heads", g.student_heads, "Student attention heads");
    cmd->add_option("--student-layers", g.student_layers, "Student layer count");
    cmd->add_flag("--scaled-logits", g.scaled_logits, "Scale attention logits by 1/sqrt(d)");
    cmd->add_flag("--pool-head", g.pool_head,
                  "Use the pooled inner-product head instead of cross matching");
}

qvr::ModelGeometry resolve_geometry(const GeometryFlags& f, int corpus_feature_dim) {
    qvr::ModelGeometry g = f.base == "production" ? qvr::ModelGeometry::production_scale()
                                                  : qvr::ModelGeometry::desk_default();
    g.feature_dim = f.feature_dim > 0 ? f.feature_dim : corpus_feature_dim;
    if (f.d_model > 0) g.d_model = f.d_model;
    if (f.heads > 0) g.heads = f.heads;
    if (f.layers > 0) g.layers = f.layers;
    if (f.trunk_layers >= 0) g.trunk_layers = f.trunk_layers;
    if (f.student_width > 0) g.student_width = f.student_width;
    if (f.student_heads > 0) g.student_heads = f.student_heads;
    if (f.student_layers > 0) g.student_layers = f.student_layers;
    if (f.scaled_logits) g.scaled_logits = true;
    if (f.pool_head) g.head = qvr::SimilarityHead::InnerProductPool;
    g.validate();
    return g;
}

// The exact option values this invocation ran with, reusable via --config.
// Keys live under a [subcommand] section because the config option belongs to
// the top-level app; plain keys would never reach the subcommand's options.
void write_resolved_config(const CLI::App* cmd, const std::string& out_path) {
    const std::string path = out_path + ".config";
    std::ofstream out(path);
    if (!out) throw qvr::IoError("cannot write resolved config to " + path);
    out << '[' << cmd->get_name() << "]\n"
        << cmd->config_to_str(/*default_also=*/true, /*write_description=*/false);
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream ss;
    ss.precision(10);
    ss << v;
    return ss.str();
}

// Loads weights and index together and enforces that the index was built
// from these exact weights unless the caller opted out.
struct LoadedStack {
    qvr::Corpus corpus;
    qvr::ModelParams params;
    qvr::TreeIndex tree;
};

LoadedStack load_stack(const std::string& corpus_path, const std::string& weights_path,
                       const std::string& index_path, bool allow_stale) {
    LoadedStack s{qvr::load_corpus(corpus_path), qvr::load_params(weights_path),
                  qvr::load_index(index_path)};
    const std::uint64_t have = qvr::params_checksum(s.params);
    if (s.tree.meta().model_checksum != have) {
        if (!allow_stale) {
            throw qvr::FormatError(
                "index was built from different weights (checksum mismatch); "
                "rebuild the index or pass --allow-stale");
        }
        std::cerr << "warning: index checksum does not match the weights; "
                     "scores and tree routing may disagree\n";
    }
    return s;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"query-to-video retrieval: dual-path scorer over a medoid tree"};
    app.require_subcommand(1);
    // The config option has to sit on the top-level app: CLI11 only reads
    // config files when the root app processes, so subcommands route the flag
    // up via fallthrough and take their values from a [subcommand] section.
    app.set_config("--config", "",
                   "Read option defaults from a config file ([gen]/[train]/... sections)");
    app.footer("gen, train and index write '<out>.config' with the resolved options;\n"
               "pass it back via --config to repeat or tweak a run.");

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "Generate a synthetic labeled corpus");
    gen->fallthrough();
    gen->option_defaults()->always_capture_default(true);
    qvr::CorpusConfig corpus_cfg;
    std::string gen_out;
    gen->add_option("--out", gen_out, "Corpus output file")->required();
    gen->add_option("--clusters", corpus_cfg.clusters, "Category count");
    gen->add_option("--videos-per-cluster", corpus_cfg.videos_per_cluster,
                    "Videos per category");
    gen->add_option("--feature-dim", corpus_cfg.feature_dim, "Token feature width");
    gen->add_option("--query-len", corpus_cfg.query_len, "Words per query");
    gen->add_option("--centroids", corpus_cfg.centroids_per_video, "Box centroids per video");
    gen->add_option("--title-len", corpus_cfg.title_len, "Title words per video");
    gen->add_option("--raw-boxes", corpus_cfg.raw_boxes_per_video,
                    "Raw boxes drawn per video before clustering (0 = direct centroids)");
    gen->add_option("--noise", corpus_cfg.noise, "Gaussian jitter around category directions");
    gen->add_option("--seed", corpus_cfg.seed, "Generation seed");
    gen->callback([&]() {
        const qvr::Corpus corpus = qvr::generate_synthetic_corpus(corpus_cfg);
        qvr::save_corpus(corpus, gen_out);
        write_resolved_config(gen, gen_out);
        std::cerr << "wrote " << gen_out << " (" << corpus.video_count() << " videos, "
                  << corpus_cfg.clusters << " categories)\n";
    });

    // ---- train ----
    auto* train = app.add_subcommand("train", "Train the scorer on a corpus");
    train->fallthrough();
    train->option_defaults()->always_capture_default(true);
    qvr::TrainConfig train_cfg;
    GeometryFlags geo;
    std::string train_corpus, train_out;
    std::string optimizer_name = "sgd";
    std::string strategy_name = "geometric";
    bool no_tree_negatives = false;
    bool quiet = false;
    train->add_option("--corpus", train_corpus, "Corpus file")->required();
    train->add_option("--out", train_out, "Weights output file")->required();
    train->add_option("--steps", train_cfg.steps, "Gradient steps");
    train->add_option("--batch", train_cfg.batch, "Videos per in-batch score matrix");
    train->add_option("--lr", train_cfg.learning_rate, "Learning rate");
    train->add_option("--momentum", train_cfg.momentum, "SGD momentum");
    train->add_option("--optimizer", optimizer_name, "sgd or adam")
        ->check(CLI::IsMember({"sgd", "adam"}));
    train->add_option("--rebuilds", train_cfg.tree_rebuilds, "Mid-run tree rebuild count");
    train->add_flag("--no-tree-negatives", no_tree_negatives,
                    "Skip hinge terms against tree-sampled negatives");
    train->add_option("--margin", train_cfg.loss.margin, "Triplet hinge margin");
    train->add_option("--lambda", train_cfg.loss.lambda, "Embedding loss weight");
    train->add_option("--gamma", train_cfg.loss.gamma, "Distillation MSE weight");
    train->add_option("--beta", train_cfg.loss.beta, "Distillation objective weight");
    train->add_option("--strategy", strategy_name,
                      "Negative draw schedule: uniform, arithmetic or geometric")
        ->check(CLI::IsMember({"uniform", "arithmetic", "geometric"}));
    train->add_option("--alpha", train_cfg.sampling.alpha, "Geometric schedule exponent");
    train->add_option("--uniform-base", train_cfg.sampling.uniform_base,
                      "Per-level draw count for the uniform schedule");
    train->add_option("--seed", train_cfg.seed, "Training seed");
    train->add_flag("--quiet", quiet, "Suppress progress lines");
    add_geometry_flags(train, geo);
    train->callback([&]() {
        train_cfg.optimizer = optimizer_name == "adam" ? qvr::OptimizerKind::Adam
                                                       : qvr::OptimizerKind::Sgd;
        train_cfg.sampling.strategy =
            strategy_name == "uniform"      ? qvr::SamplingStrategy::Uniform
            : strategy_name == "arithmetic" ? qvr::SamplingStrategy::Arithmetic
                                            : qvr::SamplingStrategy::Geometric;
        train_cfg.tree_negatives = !no_tree_negatives;

        const qvr::Corpus corpus = qvr::load_corpus(train_corpus);
        const qvr::ModelGeometry geometry =
            resolve_geometry(geo, corpus.config.feature_dim);
        qvr::TrainResult result =
            qvr::alternating_train(corpus, geometry, train_cfg, quiet ? nullptr : &std::cerr);
        qvr::save_params(result.params, train_out);
        write_resolved_config(train, train_out);
        std::cerr << "wrote " << train_out << " (checksum "
                  << qvr::params_checksum(result.params) << ")\n";
        if (!result.log.empty()) {
            std::cerr << "final loss " << format_double(result.log.back().total) << "\n";
        }
    });

    // ---- index ----
    auto* index = app.add_subcommand("index", "Build the medoid tree from trained weights");
    index->fallthrough();
    index->option_defaults()->always_capture_default(true);
    std::string index_corpus, index_weights, index_out;
    std::uint64_t tree_seed = 1;
    int medoid_iterations = 25;
    index->add_option("--corpus", index_corpus, "Corpus file")->required();
    index->add_option("--weights", index_weights, "Weights file")->required();
    index->add_option("--out", index_out, "Index output file")->required();
    index->add_option("--tree-seed", tree_seed, "Clustering seed");
    index->add_option("--medoid-iterations", medoid_iterations,
                      "Refinement passes per 2-medoid split");
    index->callback([&]() {
        const qvr::Corpus corpus = qvr::load_corpus(index_corpus);
        const qvr::ModelParams params = qvr::load_params(index_weights);
        const qvr::TreeIndex tree =
            qvr::tree_for_corpus(corpus, params, tree_seed, medoid_iterations);
        qvr::save_index(tree, index_out);
        write_resolved_config(index, index_out);
        std::cerr << "wrote " << index_out << " (" << tree.node_count() << " nodes, depth "
                  << tree.depth() << ")\n";
    });

    // ---- retrieve ----
    auto* retrieve = app.add_subcommand("retrieve", "Beam-search videos for corpus queries");
    retrieve->fallthrough();
    retrieve->option_defaults()->always_capture_default(true);
    std::string r_corpus, r_weights, r_index;
    int r_beam = 4;
    int r_top = 10;
    std::vector<int> r_videos;
    bool r_allow_stale = false;
    retrieve->add_option("--corpus", r_corpus, "Corpus file")->required();
    retrieve->add_option("--weights", r_weights, "Weights file")->required();
    retrieve->add_option("--index", r_index, "Index file")->required();
    retrieve->add_option("--beam", r_beam, "Beam width");
    retrieve->add_option("--top", r_top, "Rows per query (0 = all reached)");
    retrieve->add_option("--videos", r_videos, "Query-owning video ids (default: all)")
        ->delimiter(',');
    retrieve->add_flag("--allow-stale", r_allow_stale,
                       "Proceed even if the index does not match the weights");
    retrieve->callback([&]() {
        const LoadedStack s = load_stack(r_corpus, r_weights, r_index, r_allow_stale);
        std::vector<int> ids = r_videos;
        if (ids.empty()) {
            for (const qvr::CorpusItem& item : s.corpus.items) ids.push_back(item.video.id);
        }
        std::cout << "query\trank\tvideo\tscore\tvisited\n";
        for (int id : ids) {
            const qvr::CorpusItem& item = s.corpus.by_video(id);
            const qvr::RetrievalResult res = qvr::beam_retrieve(
                s.tree, r_beam, qvr::make_cross_scorer(item.query, s.corpus, s.params));
            const std::size_t rows = r_top > 0
                                         ? std::min<std::size_t>(res.ranked.size(), r_top)
                                         : res.ranked.size();
            for (std::size_t r = 0; r < rows; ++r) {
                std::cout << id << '\t' << r + 1 << '\t' << res.ranked[r].first << '\t'
                          << format_double(res.ranked[r].second) << '\t' << res.visited
                          << '\n';
            }
        }
    });

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Score retrieval quality over the whole corpus");
    eval->fallthrough();
    eval->option_defaults()->always_capture_default(true);
    std::string e_corpus, e_weights, e_index;
    int e_beam = 4;
    bool e_allow_stale = false;
    eval->add_option("--corpus", e_corpus, "Corpus file")->required();
    eval->add_option("--weights", e_weights, "Weights file")->required();
    eval->add_option("--index", e_index, "Index file")->required();
    eval->add_option("--beam", e_beam, "Beam width");
    eval->add_flag("--allow-stale", e_allow_stale,
                   "Proceed even if the index does not match the weights");
    eval->callback([&]() {
        const LoadedStack s = load_stack(e_corpus, e_weights, e_index, e_allow_stale);
        const qvr::EvalReport report =
            qvr::evaluate_retrieval(s.corpus, s.params, s.tree, e_beam);
        std::cout << "map@1\t" << format_double(report.map1) << '\n'
                  << "map@3\t" << format_double(report.map3) << '\n'
                  << "map@5\t" << format_double(report.map5) << '\n'
                  << "pr_auc\t" << format_double(report.pr_auc) << '\n'
                  << "mean_visited\t" << format_double(report.mean_visited) << '\n'
                  << "query_count\t" << report.query_count << '\n'
                  << "skipped_queries\t" << report.skipped_queries << '\n';
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << "error\tusage\t" << e.get_name() << ": " << e.what() << '\n';
        return 2;
    }
    return 0;
}

int fail(const char* kind, const std::exception& e) {
    std::cerr << "error\t" << kind << '\t' << e.what() << '\n';
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const qvr::ConfigError& e) {
        return fail("config", e);
    } catch (const qvr::InputError& e) {
        return fail("input", e);
    } catch (const qvr::DimensionError& e) {
        return fail("dimension", e);
    } catch (const qvr::NumericError& e) {
        return fail("numeric", e);
    } catch (const qvr::FormatError& e) {
        return fail("format", e);
    } catch (const qvr::IoError& e) {
        return fail("io", e);
    } catch (const qvr::ContractError& e) {
        return fail("contract", e);
    } catch (const std::exception& e) {
        return fail("internal", e);
    }
}
