#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qvr/errors.hpp"

namespace qvr {

// One node of the binary search tree. A leaf represents exactly one video;
// an internal node represents its subtree through a medoid video whose local
// features stand in for the whole group during retrieval.
struct TreeNode {
    int id = -1;
    int parent = -1;
    int depth = 0;
    int left = -1;   // -1 = no child
    int right = -1;
    int medoid_video = -1;
    std::vector<float> embedding;  // medoid's embedding at build time

    bool is_leaf() const { return left < 0 && right < 0; }
};

struct TreeBuildMeta {
    std::uint64_t seed = 0;
    int medoid_iterations = 0;
    std::uint64_t embedding_checksum = 0;
    std::uint64_t model_checksum = 0;
};

struct TreeBuildConfig {
    std::uint64_t seed = 1;
    int medoid_iterations = 25;
    // A 2-medoid split leaving more than this fraction on one side is
    // discarded in favor of a balanced median split.
    double imbalance_cap = 0.9;
    std::uint64_t model_checksum = 0;
};

// Binary tree over the video corpus, nodes stored by id in breadth-first
// order (so each level occupies a contiguous ascending id range).
class TreeIndex {
  public:
    TreeIndex() = default;

    // Validates structure (ids, depths, child links, reachability, medoid
    // membership) and derives levels, parents and the video->leaf map.
    static TreeIndex from_nodes(std::vector<TreeNode> nodes, TreeBuildMeta meta);

    const TreeNode& node(int id) const;
    int root() const { return 0; }
    bool is_leaf(int id) const { return node(id).is_leaf(); }
    std::array<int, 2> children(int id) const;
    int leaf_video(int id) const;
    int depth() const { return depth_; }  // max leaf depth, root at 0
    int video_count() const { return static_cast<int>(leaf_of_.size()); }
    std::size_t node_count() const { return nodes_.size(); }
    const std::vector<int>& level(int d) const;  // node ids at depth d
    int leaf_of(int video_id) const;
    // Video ids in the subtree, ascending. Linear in subtree size.
    std::vector<int> members_of(int node_id) const;
    const TreeBuildMeta& meta() const { return meta_; }

  private:
    std::vector<TreeNode> nodes_;
    std::vector<std::vector<int>> levels_;
    std::map<int, int> leaf_of_;
    int depth_ = 0;
    TreeBuildMeta meta_;
};

// Builds the index top-down by recursive 2-medoid splits under cosine
// distance. Seeding is distance-weighted (k-means++ style) from cfg.seed;
// when category labels are supplied, the two largest categories in a node
// seed the split instead. Leaves hold exactly one video.
TreeIndex build_tree(const std::vector<std::pair<int, std::vector<double>>>& embeddings,
                     const TreeBuildConfig& cfg,
                     const std::map<int, int>* category_labels = nullptr);

// Ranked retrieval output. `visited` counts scorer invocations (each node is
// scored at most once) and is bounded by 1 + 2 * beam * depth.
struct RetrievalResult {
    std::vector<std::pair<int, double>> ranked;  // (video id, score), best first
    long visited = 0;
    bool truncated = false;  // beam asked for more results than videos exist
};

inline long count_visited(const RetrievalResult& r) { return r.visited; }

// Level-synchronous beam search over anything tree-shaped. Keeps the `beam`
// best scored candidates per level (ties to the lower node id), expands their
// children, and carries already-scored leaves forward without rescoring.
// The final leaves are ranked by score with ties to the lower video id.
//
// TreeLike needs: root(), is_leaf(id), children(id) -> {left, right},
// leaf_video(id), video_count().
template <typename TreeLike>
RetrievalResult beam_search(const TreeLike& tree, int beam,
                            const std::function<double(int)>& score_node) {
    if (beam < 1) throw InputError("beam_search: beam width must be >= 1");

    struct Cand {
        int node;
        double score;
        bool leaf;
    };
    RetrievalResult result;
    auto scored = [&](int id) {
        ++result.visited;
        return Cand{id, score_node(id), tree.is_leaf(id)};
    };

    std::vector<Cand> cands{scored(tree.root())};
    for (;;) {
        bool any_internal = false;
        for (const Cand& c : cands) {
            if (!c.leaf) { any_internal = true; break; }
        }
        if (!any_internal) break;

        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.node < b.node;
        });
        if (static_cast<int>(cands.size()) > beam) cands.resize(beam);

        std::vector<Cand> next;
        for (const Cand& c : cands) {
            if (c.leaf) {
                next.push_back(c);  // stays in the running, already scored
                continue;
            }
            const std::array<int, 2> kids = tree.children(c.node);
            for (int kid : kids) {
                if (kid >= 0) next.push_back(scored(kid));
            }
        }
        cands = std::move(next);
    }

    std::stable_sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        return tree.leaf_video(a.node) < tree.leaf_video(b.node);
    });
    if (static_cast<int>(cands.size()) > beam) cands.resize(beam);
    for (const Cand& c : cands) {
        result.ranked.emplace_back(tree.leaf_video(c.node), c.score);
    }
    result.truncated = beam > tree.video_count();
    return result;
}

// Beam retrieval over a TreeIndex; the scorer receives the node and typically
// evaluates the query against the medoid video's local features.
RetrievalResult beam_retrieve(const TreeIndex& tree, int beam,
                              const std::function<double(const TreeNode&)>& scorer);

enum class SamplingStrategy { Uniform, Arithmetic, Geometric };

struct NegativeSamplingConfig {
    SamplingStrategy strategy = SamplingStrategy::Geometric;
    double alpha = 1.4;    // geometric growth exponent
    int uniform_base = 3;  // per-level count for the uniform strategy
};

// How many negatives the strategy requests at tree level `level` (root = 0),
// before capping at the level population.
int negatives_per_level(const NegativeSamplingConfig& cfg, int level);

// Draws negative node ids per level along the root->leaf path of the positive
// video: at each level the positive's ancestor is excluded and the requested
// count (capped at the remaining population) is drawn uniformly without
// replacement. Level 0 is always an empty draw (the root has no peers).
std::map<int, std::vector<int>> sample_negatives(const TreeIndex& tree, int positive_leaf,
                                                 const NegativeSamplingConfig& cfg,
                                                 std::uint64_t seed);

// Index file: magic + version + metadata + node records with 32-bit float
// embeddings. Round-trips bit-exactly.
void save_index(const TreeIndex& tree, const std::string& path);
TreeIndex load_index(const std::string& path);

}  // namespace qvr
