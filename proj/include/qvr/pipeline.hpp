#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "qvr/losses.hpp"
#include "qvr/model.hpp"
#include "qvr/tree.hpp"

namespace qvr {

// ---- box clustering ----

// Lloyd's k-means under Euclidean distance with distance-weighted seeding.
// Reduces a video's raw detection boxes to k centroids. Passing exactly k
// boxes returns them unchanged; fewer than k is an input error.
std::vector<std::vector<double>> cluster_boxes(const std::vector<std::vector<double>>& boxes,
                                               int k, std::uint64_t seed);

// ---- synthetic corpus ----

struct CorpusConfig {
    int clusters = 16;
    int videos_per_cluster = 32;
    int feature_dim = 16;
    int query_len = 3;
    int centroids_per_video = 4;
    int title_len = 2;
    // When positive, this many raw boxes are drawn per video and clustered
    // down to centroids_per_video; zero plants the centroids directly.
    int raw_boxes_per_video = 0;
    double noise = 0.1;  // gaussian jitter around the category direction
    std::uint64_t seed = 7;

    int video_count() const { return clusters * videos_per_cluster; }
    void validate() const;
};

struct CorpusItem {
    VideoFeatures video;
    QueryFeatures query;  // ground-truth query paired with this video
    int category = 0;
};

struct Corpus {
    CorpusConfig config;
    std::vector<CorpusItem> items;  // item i carries video id i

    int video_count() const { return static_cast<int>(items.size()); }
    const CorpusItem& by_video(int video_id) const;
    // Video ids sharing a category with (and including) the given video.
    std::set<int> relevant_to(int video_id) const;
    std::map<int, int> category_labels() const;
};

// Each category is a random unit direction; every token of its videos and
// queries is that direction plus gaussian noise. Values are quantized to
// 32-bit floats at generation time so the in-memory corpus equals its
// serialized form exactly. Zero noise makes every token an exact copy of the
// category direction.
Corpus generate_synthetic_corpus(const CorpusConfig& config);

// Corpus file: magic + version + the generating config + per-video records
// (id, category, centroid/title/query payloads as 32-bit floats).
// Round-trips bit-exactly.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// ---- training ----

struct TrainConfig {
    int steps = 200;
    int batch = 8;
    double learning_rate = 0.05;
    double momentum = 0.9;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    int tree_rebuilds = 3;       // mid-run re-clusterings, spread evenly
    bool tree_negatives = true;  // hinge terms against tree-sampled medoids
    LossConfig loss;
    NegativeSamplingConfig sampling;
    std::uint64_t seed = 1;

    void validate() const;
};

struct TrainLogEntry {
    int step = 0;
    double cross = 0.0;
    double embed = 0.0;
    double distill = 0.0;
    double total = 0.0;
};

struct TrainResult {
    ModelParams params;
    TreeIndex tree;  // built from the final weights
    std::vector<TrainLogEntry> log;
};

// Alternates gradient steps on the dual + distillation objective with
// periodic tree rebuilds from the current embeddings. Each step scores a
// square in-batch matrix on all three paths (cross, embedding, student),
// applies the two-sided hinge to each, and adds hinge terms for hard
// negatives sampled per level from the current tree. Teacher scores enter
// the distillation MSE as plain numbers, so that term trains the student
// only. Logged values are per-batch-row averages. A non-finite loss aborts
// with NumericError.
TrainResult alternating_train(const Corpus& corpus, const ModelGeometry& geometry,
                              const TrainConfig& cfg, std::ostream* progress = nullptr);

// Embedding-path output for every video, ascending id.
std::vector<std::pair<int, std::vector<double>>> embeddings_for_corpus(
    const Corpus& corpus, const ModelParams& params);

// Convenience: embeddings -> build_tree with the corpus categories as label
// seeds and the model checksum recorded for staleness detection.
TreeIndex tree_for_corpus(const Corpus& corpus, const ModelParams& params,
                          std::uint64_t seed, int medoid_iterations = 25);

// ---- evaluation ----

// Node scorer for one query: cross-attention score of the query against the
// node's medoid video.
std::function<double(const TreeNode&)> make_cross_scorer(const QueryFeatures& query,
                                                         const Corpus& corpus,
                                                         const ModelParams& params);

// Every video scored by the cross path, best first (ties to the lower id).
std::vector<std::pair<int, double>> exhaustive_rank(const QueryFeatures& query,
                                                    const Corpus& corpus,
                                                    const ModelParams& params);

// Average precision at cutoff k: sum over relevant hits in the top k of
// precision at the hit's rank, divided by min(k, total relevant). The
// relevant set must be non-empty.
double average_precision_at_k(const std::vector<int>& ranked_videos,
                              const std::set<int>& relevant, int k);

// Area under the precision-recall curve of scored binary labels: descending
// sweep with tied scores grouped, trapezoidal integration, anchored at recall
// zero with the first group's precision. Needs both classes present.
double pr_auc(const std::vector<std::pair<double, bool>>& scored);

struct EvalReport {
    double map1 = 0.0;
    double map3 = 0.0;
    double map5 = 0.0;
    double pr_auc = 0.0;  // NaN when the pooled results hold a single class
    double mean_visited = 0.0;
    int query_count = 0;      // queries that contributed to the averages
    int skipped_queries = 0;  // queries with no relevant videos
};

// Runs every corpus query through beam retrieval and aggregates ranking
// quality; relevance means sharing the category. The PR curve pools the
// (score, relevant) pairs of all retrieved lists.
EvalReport evaluate_retrieval(const Corpus& corpus, const ModelParams& params,
                              const TreeIndex& tree, int beam);

// Mean AP@k over all queries with every video scored directly (no tree).
double exhaustive_map_at_k(const Corpus& corpus, const ModelParams& params, int k);

}  // namespace qvr
