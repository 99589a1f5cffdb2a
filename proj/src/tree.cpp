#include "qvr/tree.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "qvr/binio.hpp"

namespace qvr {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer; decorrelates per-node RNG streams.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

// ---- TreeIndex ----

TreeIndex TreeIndex::from_nodes(std::vector<TreeNode> nodes, TreeBuildMeta meta) {
    if (nodes.empty()) throw InputError("TreeIndex: no nodes");
    TreeIndex t;
    t.meta_ = meta;

    const int n = static_cast<int>(nodes.size());
    std::vector<int> child_refs(n, 0);
    for (int i = 0; i < n; ++i) {
        TreeNode& nd = nodes[i];
        if (nd.id != i) {
            throw FormatError("TreeIndex: node " + std::to_string(i) + " carries id " +
                              std::to_string(nd.id));
        }
        for (int kid : {nd.left, nd.right}) {
            if (kid < 0) continue;
            if (kid >= n || kid <= i) {
                throw FormatError("TreeIndex: node " + std::to_string(i) +
                                  " links to invalid child " + std::to_string(kid));
            }
            ++child_refs[kid];
            nodes[kid].parent = i;
            if (nodes[kid].depth != nd.depth + 1) {
                throw FormatError("TreeIndex: child " + std::to_string(kid) +
                                  " depth does not extend its parent");
            }
        }
        if ((nd.left < 0) != (nd.right < 0)) {
            throw FormatError("TreeIndex: node " + std::to_string(i) +
                              " has exactly one child");
        }
        if (nd.medoid_video < 0) {
            throw FormatError("TreeIndex: node " + std::to_string(i) + " lacks a medoid");
        }
    }
    if (nodes[0].depth != 0) throw FormatError("TreeIndex: root depth must be 0");
    for (int i = 1; i < n; ++i) {
        if (child_refs[i] != 1) {
            throw FormatError("TreeIndex: node " + std::to_string(i) +
                              " is referenced by " + std::to_string(child_refs[i]) +
                              " parents");
        }
    }

    t.nodes_ = std::move(nodes);
    t.depth_ = 0;
    for (const TreeNode& nd : t.nodes_) {
        if (nd.depth > t.depth_) t.depth_ = nd.depth;
        if (static_cast<int>(t.levels_.size()) <= nd.depth) t.levels_.resize(nd.depth + 1);
        t.levels_[nd.depth].push_back(nd.id);
        if (nd.is_leaf()) {
            if (t.leaf_of_.count(nd.medoid_video)) {
                throw FormatError("TreeIndex: video " + std::to_string(nd.medoid_video) +
                                  " appears in two leaves");
            }
            t.leaf_of_[nd.medoid_video] = nd.id;
        }
    }

    // Every node's medoid must be a video somewhere below it.
    for (const TreeNode& nd : t.nodes_) {
        if (nd.is_leaf()) continue;
        const std::vector<int> members = t.members_of(nd.id);
        if (!std::binary_search(members.begin(), members.end(), nd.medoid_video)) {
            throw FormatError("TreeIndex: node " + std::to_string(nd.id) +
                              " medoid is outside its member set");
        }
    }
    return t;
}

const TreeNode& TreeIndex::node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
        throw ContractError("TreeIndex::node: id " + std::to_string(id) + " out of range");
    }
    return nodes_[id];
}

std::array<int, 2> TreeIndex::children(int id) const {
    const TreeNode& n = node(id);
    return {n.left, n.right};
}

int TreeIndex::leaf_video(int id) const { return node(id).medoid_video; }

const std::vector<int>& TreeIndex::level(int d) const {
    if (d < 0 || d >= static_cast<int>(levels_.size())) {
        throw ContractError("TreeIndex::level: depth " + std::to_string(d) + " out of range");
    }
    return levels_[d];
}

int TreeIndex::leaf_of(int video_id) const {
    auto it = leaf_of_.find(video_id);
    if (it == leaf_of_.end()) {
        throw InputError("TreeIndex::leaf_of: video " + std::to_string(video_id) +
                         " is not indexed");
    }
    return it->second;
}

std::vector<int> TreeIndex::members_of(int node_id) const {
    std::vector<int> out;
    std::vector<int> stack{node(node_id).id};
    while (!stack.empty()) {
        const TreeNode& n = nodes_[stack.back()];
        stack.pop_back();
        if (n.is_leaf()) {
            out.push_back(n.medoid_video);
        } else {
            stack.push_back(n.left);
            stack.push_back(n.right);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---- construction ----

namespace {

struct BuildPoint {
    int video_id = -1;
    std::vector<double> unit;  // normalized embedding (zero stays zero)
};

double cosine_distance(const BuildPoint& a, const BuildPoint& b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.unit.size(); ++i) dot += a.unit[i] * b.unit[i];
    return 1.0 - dot;
}

// Member (by position into `members`) minimizing total cosine distance to the
// group; ties go to the smaller video id.
int medoid_position(const std::vector<BuildPoint>& pts, const std::vector<int>& members) {
    int best = -1;
    double best_cost = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        double cost = 0.0;
        for (int other : members) cost += cosine_distance(pts[members[i]], pts[other]);
        if (best < 0 || cost < best_cost ||
            (cost == best_cost && pts[members[i]].video_id < pts[members[best]].video_id)) {
            best = static_cast<int>(i);
            best_cost = cost;
        }
    }
    return members[best];
}

struct Split {
    std::vector<int> left, right;  // positions into pts
    int left_medoid = -1, right_medoid = -1;
};

// Balanced fallback when 2-medoid collapses: order members along the top
// principal direction of the node and cut at the median (by video id when the
// points carry no spread at all).
Split median_split(const std::vector<BuildPoint>& pts, const std::vector<int>& members) {
    const std::size_t dim = pts[members[0]].unit.size();
    std::vector<double> mean(dim, 0.0);
    for (int m : members)
        for (std::size_t i = 0; i < dim; ++i) mean[i] += pts[m].unit[i];
    for (double& v : mean) v /= static_cast<double>(members.size());

    std::vector<double> dir(dim, 0.0);
    for (int m : members) {
        bool nonzero = false;
        for (std::size_t i = 0; i < dim; ++i) {
            dir[i] = pts[m].unit[i] - mean[i];
            if (dir[i] != 0.0) nonzero = true;
        }
        if (nonzero) break;
    }
    double norm2 = 0.0;
    for (double v : dir) norm2 += v * v;

    std::vector<std::pair<double, int>> order;  // (projection, position)
    if (norm2 > 0.0) {
        for (int iter = 0; iter < 30; ++iter) {
            std::vector<double> next(dim, 0.0);
            for (int m : members) {
                double proj = 0.0;
                for (std::size_t i = 0; i < dim; ++i)
                    proj += (pts[m].unit[i] - mean[i]) * dir[i];
                for (std::size_t i = 0; i < dim; ++i)
                    next[i] += proj * (pts[m].unit[i] - mean[i]);
            }
            double nn = 0.0;
            for (double v : next) nn += v * v;
            if (nn == 0.0) break;
            const double inv = 1.0 / std::sqrt(nn);
            for (std::size_t i = 0; i < dim; ++i) dir[i] = next[i] * inv;
        }
        for (int m : members) {
            double proj = 0.0;
            for (std::size_t i = 0; i < dim; ++i) proj += (pts[m].unit[i] - mean[i]) * dir[i];
            order.emplace_back(proj, m);
        }
    } else {
        // Identical embeddings: any geometric cut is arbitrary, use video id.
        for (int m : members) order.emplace_back(0.0, m);
    }
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return pts[a.second].video_id < pts[b.second].video_id;
    });

    Split s;
    const std::size_t half = (order.size() + 1) / 2;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < half ? s.left : s.right).push_back(order[i].second);
    }
    s.left_medoid = medoid_position(pts, s.left);
    s.right_medoid = medoid_position(pts, s.right);
    return s;
}

// Two largest categories in the node seed the split; each category is
// represented by its member closest to the category mean.
bool seeds_from_labels(const std::vector<BuildPoint>& pts, const std::vector<int>& members,
                       const std::map<int, int>& labels, int* seed_a, int* seed_b) {
    std::map<int, std::vector<int>> by_label;
    for (int m : members) {
        auto it = labels.find(pts[m].video_id);
        if (it == labels.end()) return false;  // unlabeled member: fall back
        by_label[it->second].push_back(m);
    }
    if (by_label.size() < 2) return false;

    std::vector<std::pair<int, int>> sizes;  // (count, label); map order breaks ties by label
    for (const auto& [label, ms] : by_label) {
        sizes.emplace_back(static_cast<int>(ms.size()), label);
    }
    std::stable_sort(sizes.begin(), sizes.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    int out[2];
    for (int k = 0; k < 2; ++k) {
        const std::vector<int>& ms = by_label[sizes[k].second];
        const std::size_t dim = pts[ms[0]].unit.size();
        std::vector<double> mean(dim, 0.0);
        for (int m : ms)
            for (std::size_t i = 0; i < dim; ++i) mean[i] += pts[m].unit[i];
        for (double& v : mean) v /= static_cast<double>(ms.size());
        int best = ms[0];
        double best_dot = -1e300;
        for (int m : ms) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += pts[m].unit[i] * mean[i];
            if (dot > best_dot ||
                (dot == best_dot && pts[m].video_id < pts[best].video_id)) {
                best = m;
                best_dot = dot;
            }
        }
        out[k] = best;
    }
    *seed_a = out[0];
    *seed_b = out[1];
    return *seed_a != *seed_b;
}

Split two_medoid_split(const std::vector<BuildPoint>& pts, const std::vector<int>& members,
                       int node_id, const TreeBuildConfig& cfg,
                       const std::map<int, int>* labels) {
    int ma = -1, mb = -1;
    if (!labels || !seeds_from_labels(pts, members, *labels, &ma, &mb)) {
        // Distance-weighted seeding: first seed uniform, second proportional
        // to squared distance from the first.
        std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(node_id)));
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        ma = members[pick(rng)];
        std::vector<double> w(members.size());
        double total = 0.0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            const double d = cosine_distance(pts[members[i]], pts[ma]);
            w[i] = d * d;
            total += w[i];
        }
        if (total == 0.0) return median_split(pts, members);  // all identical
        std::uniform_real_distribution<double> unit(0.0, total);
        double target = unit(rng);
        std::size_t chosen = 0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            target -= w[i];
            if (target <= 0.0) { chosen = i; break; }
        }
        mb = members[chosen];
    }

    Split s;
    for (int iter = 0; iter < cfg.medoid_iterations; ++iter) {
        s.left.clear();
        s.right.clear();
        for (int m : members) {
            const double da = cosine_distance(pts[m], pts[ma]);
            const double db = cosine_distance(pts[m], pts[mb]);
            (da <= db ? s.left : s.right).push_back(m);
        }
        if (s.left.empty() || s.right.empty()) return median_split(pts, members);
        const int na = medoid_position(pts, s.left);
        const int nb = medoid_position(pts, s.right);
        if (na == ma && nb == mb) break;
        ma = na;
        mb = nb;
    }
    s.left_medoid = ma;
    s.right_medoid = mb;

    const double cap = cfg.imbalance_cap * static_cast<double>(members.size());
    if (static_cast<double>(std::max(s.left.size(), s.right.size())) > cap) {
        return median_split(pts, members);
    }
    return s;
}

}  // namespace

TreeIndex build_tree(const std::vector<std::pair<int, std::vector<double>>>& embeddings,
                     const TreeBuildConfig& cfg,
                     const std::map<int, int>* category_labels) {
    if (embeddings.empty()) throw InputError("build_tree: no embeddings");
    if (cfg.medoid_iterations < 1) throw ConfigError("build_tree: medoid_iterations < 1");
    if (!(cfg.imbalance_cap > 0.5 && cfg.imbalance_cap <= 1.0)) {
        throw ConfigError("build_tree: imbalance_cap must lie in (0.5, 1]");
    }

    const std::size_t dim = embeddings.front().second.size();
    if (dim == 0) throw InputError("build_tree: embeddings are empty vectors");
    std::vector<BuildPoint> pts(embeddings.size());
    std::set<int> seen;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const auto& [id, vec] = embeddings[i];
        if (!seen.insert(id).second) {
            throw InputError("build_tree: duplicate video id " + std::to_string(id));
        }
        if (vec.size() != dim) {
            throw DimensionError("build_tree: embedding for video " + std::to_string(id) +
                                 " has length " + std::to_string(vec.size()) +
                                 ", expected " + std::to_string(dim));
        }
        pts[i].video_id = id;
        pts[i].unit = vec;
        double norm = 0.0;
        for (double v : vec) norm += v * v;
        if (norm > 0.0) {
            const double inv = 1.0 / std::sqrt(norm);
            for (double& v : pts[i].unit) v *= inv;
        }
    }

    std::vector<TreeNode> nodes;
    struct Task {
        int node_id;
        std::vector<int> members;  // positions into pts
    };
    std::deque<Task> queue;

    std::vector<int> all(pts.size());
    std::iota(all.begin(), all.end(), 0);
    {
        TreeNode root;
        root.id = 0;
        root.depth = 0;
        const int mpos = medoid_position(pts, all);
        root.medoid_video = pts[mpos].video_id;
        root.embedding.assign(pts[mpos].unit.size(), 0.0f);
        for (std::size_t i = 0; i < pts[mpos].unit.size(); ++i) {
            root.embedding[i] = static_cast<float>(pts[mpos].unit[i]);
        }
        nodes.push_back(std::move(root));
        queue.push_back(Task{0, std::move(all)});
    }

    while (!queue.empty()) {
        Task task = std::move(queue.front());
        queue.pop_front();
        if (task.members.size() == 1) continue;  // leaf; nothing to split

        Split split = two_medoid_split(pts, task.members, task.node_id, cfg, category_labels);
        // Children ordered by medoid video id so rebuilds are reproducible.
        if (pts[split.left_medoid].video_id > pts[split.right_medoid].video_id) {
            std::swap(split.left, split.right);
            std::swap(split.left_medoid, split.right_medoid);
        }

        const int parent_depth = nodes[task.node_id].depth;
        const auto attach = [&](std::vector<int> side, int medoid_pos) {
            TreeNode child;
            child.id = static_cast<int>(nodes.size());
            child.parent = task.node_id;
            child.depth = parent_depth + 1;
            child.medoid_video = pts[medoid_pos].video_id;
            child.embedding.assign(pts[medoid_pos].unit.size(), 0.0f);
            for (std::size_t i = 0; i < pts[medoid_pos].unit.size(); ++i) {
                child.embedding[i] = static_cast<float>(pts[medoid_pos].unit[i]);
            }
            nodes.push_back(child);
            queue.push_back(Task{child.id, std::move(side)});
            return child.id;
        };
        nodes[task.node_id].left = attach(std::move(split.left), split.left_medoid);
        nodes[task.node_id].right = attach(std::move(split.right), split.right_medoid);
    }

    TreeBuildMeta meta;
    meta.seed = cfg.seed;
    meta.medoid_iterations = cfg.medoid_iterations;
    meta.model_checksum = cfg.model_checksum;
    {
        // Order-independent fingerprint of what was indexed.
        std::vector<std::size_t> by_id(pts.size());
        std::iota(by_id.begin(), by_id.end(), 0);
        std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
            return pts[a].video_id < pts[b].video_id;
        });
        Fnv1a h;
        for (std::size_t i : by_id) {
            const std::uint32_t id = static_cast<std::uint32_t>(pts[i].video_id);
            h.update(&id, sizeof(id));
            for (std::size_t j = 0; j < embeddings[i].second.size(); ++j) {
                h.update_f32(static_cast<float>(embeddings[i].second[j]));
            }
        }
        meta.embedding_checksum = h.digest();
    }
    return TreeIndex::from_nodes(std::move(nodes), meta);
}

// ---- retrieval ----

RetrievalResult beam_retrieve(const TreeIndex& tree, int beam,
                              const std::function<double(const TreeNode&)>& scorer) {
    return beam_search(tree, beam, [&](int id) { return scorer(tree.node(id)); });
}

// ---- negative sampling ----

int negatives_per_level(const NegativeSamplingConfig& cfg, int level) {
    if (level < 1) return 0;
    switch (cfg.strategy) {
        case SamplingStrategy::Uniform:
            if (cfg.uniform_base < 1) throw ConfigError("negatives_per_level: base < 1");
            return cfg.uniform_base;
        case SamplingStrategy::Arithmetic:
            return level;
        case SamplingStrategy::Geometric: {
            if (!(cfg.alpha > 0.0)) throw ConfigError("negatives_per_level: alpha <= 0");
            return static_cast<int>(
                std::ceil(std::pow(static_cast<double>(level), cfg.alpha)));
        }
    }
    throw ConfigError("negatives_per_level: unknown sampling strategy");
}

std::map<int, std::vector<int>> sample_negatives(const TreeIndex& tree, int positive_leaf,
                                                 const NegativeSamplingConfig& cfg,
                                                 std::uint64_t seed) {
    const TreeNode& leaf = tree.node(positive_leaf);
    if (!leaf.is_leaf()) {
        throw InputError("sample_negatives: node " + std::to_string(positive_leaf) +
                         " is not a leaf");
    }

    // Ancestor at each depth along the root->leaf path.
    std::vector<int> path(leaf.depth + 1, -1);
    for (int cur = positive_leaf; cur >= 0; cur = tree.node(cur).parent) {
        path[tree.node(cur).depth] = cur;
    }

    std::map<int, std::vector<int>> draws;
    draws[0] = {};  // the root has no peers to sample from
    std::mt19937_64 rng(seed);
    for (int depth = 1; depth <= leaf.depth; ++depth) {
        std::vector<int> pool;
        for (int id : tree.level(depth)) {
            if (id != path[depth]) pool.push_back(id);
        }
        int want = std::min(negatives_per_level(cfg, depth), static_cast<int>(pool.size()));
        std::vector<int>& out = draws[depth];
        // Partial Fisher-Yates: the first `want` slots become the sample.
        for (int i = 0; i < want; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
            out.push_back(pool[i]);
        }
        std::sort(out.begin(), out.end());
    }
    return draws;
}

// ---- persistence ----

namespace {
constexpr char kIndexMagic[4] = {'Q', 'V', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

void save_index(const TreeIndex& tree, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_index: cannot open " + path + " for writing");
    write_magic(out, kIndexMagic);
    write_u32(out, kIndexVersion);
    write_u64(out, static_cast<std::uint64_t>(tree.video_count()));
    write_u32(out, static_cast<std::uint32_t>(tree.depth()));
    const std::uint32_t dim =
        static_cast<std::uint32_t>(tree.node(tree.root()).embedding.size());
    write_u32(out, dim);
    write_u64(out, tree.meta().seed);
    write_u32(out, static_cast<std::uint32_t>(tree.meta().medoid_iterations));
    write_u64(out, tree.meta().embedding_checksum);
    write_u64(out, tree.meta().model_checksum);
    write_u64(out, static_cast<std::uint64_t>(tree.node_count()));
    for (std::size_t i = 0; i < tree.node_count(); ++i) {
        const TreeNode& n = tree.node(static_cast<int>(i));
        if (n.embedding.size() != dim) {
            throw ContractError("save_index: node embedding widths disagree");
        }
        write_i32(out, n.id);
        write_i32(out, n.depth);
        write_i32(out, n.left);
        write_i32(out, n.right);
        write_i32(out, n.medoid_video);
        for (float v : n.embedding) write_f32(out, v);
    }
    if (!out) throw IoError("save_index: write to " + path + " failed");
}

TreeIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_index: cannot open " + path);
    expect_magic(in, kIndexMagic, "index");
    expect_version(in, kIndexVersion, "index");

    const std::uint64_t video_count = read_u64(in, "video count");
    const std::uint32_t depth = read_u32(in, "depth");
    const std::uint32_t dim = read_u32(in, "embedding dim");
    TreeBuildMeta meta;
    meta.seed = read_u64(in, "seed");
    meta.medoid_iterations = static_cast<int>(read_u32(in, "medoid iterations"));
    meta.embedding_checksum = read_u64(in, "embedding checksum");
    meta.model_checksum = read_u64(in, "model checksum");

    const std::uint64_t node_count = read_u64(in, "node count");
    std::vector<TreeNode> nodes;
    nodes.reserve(node_count);
    for (std::uint64_t i = 0; i < node_count; ++i) {
        TreeNode n;
        n.id = read_i32(in, "node id");
        n.depth = read_i32(in, "node depth");
        n.left = read_i32(in, "left child");
        n.right = read_i32(in, "right child");
        n.medoid_video = read_i32(in, "medoid video");
        n.embedding.resize(dim);
        for (std::uint32_t j = 0; j < dim; ++j) n.embedding[j] = read_f32(in, "embedding");
        nodes.push_back(std::move(n));
    }
    char extra;
    if (in.read(&extra, 1), in.gcount() != 0) {
        throw FormatError("index payload longer than its header declares");
    }

    TreeIndex tree = TreeIndex::from_nodes(std::move(nodes), meta);
    if (static_cast<std::uint64_t>(tree.video_count()) != video_count) {
        throw FormatError("index header declares " + std::to_string(video_count) +
                          " videos but the nodes contain " +
                          std::to_string(tree.video_count()));
    }
    if (static_cast<std::uint32_t>(tree.depth()) != depth) {
        throw FormatError("index header depth disagrees with the node records");
    }
    return tree;
}

}  // namespace qvr
