#include "qvr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "qvr/binio.hpp"
#include "qvr/scoring.hpp"

namespace qvr {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

// ---- box clustering ----

std::vector<std::vector<double>> cluster_boxes(const std::vector<std::vector<double>>& boxes,
                                               int k, std::uint64_t seed) {
    if (k < 1) throw InputError("cluster_boxes: cluster count must be >= 1");
    if (boxes.empty()) throw InputError("cluster_boxes: no boxes given");
    const std::size_t dim = boxes.front().size();
    if (dim == 0) throw InputError("cluster_boxes: boxes have zero width");
    for (const auto& b : boxes) {
        if (b.size() != dim) throw DimensionError("cluster_boxes: box widths disagree");
    }
    if (static_cast<int>(boxes.size()) < k) {
        throw InputError("cluster_boxes: " + std::to_string(boxes.size()) +
                         " boxes cannot fill " + std::to_string(k) + " clusters");
    }
    if (static_cast<int>(boxes.size()) == k) return boxes;

    std::mt19937_64 rng(seed);

    // Distance-weighted seeding: first centroid uniform, each next one picked
    // proportionally to its squared distance from the closest centroid so far.
    std::vector<std::vector<double>> centroids;
    std::uniform_int_distribution<std::size_t> uniform(0, boxes.size() - 1);
    centroids.push_back(boxes[uniform(rng)]);
    std::vector<double> d2(boxes.size());
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centroids) best = std::min(best, squared_distance(boxes[i], c));
            d2[i] = best;
            total += best;
        }
        if (total == 0.0) {
            centroids.push_back(boxes[uniform(rng)]);  // all points already covered
            continue;
        }
        std::uniform_real_distribution<double> unit(0.0, total);
        double target = unit(rng);
        std::size_t chosen = boxes.size() - 1;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            target -= d2[i];
            if (target <= 0.0) {
                chosen = i;
                break;
            }
        }
        centroids.push_back(boxes[chosen]);
    }

    std::vector<int> assign(boxes.size(), 0);
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 50; ++iter) {
        double inertia = 0.0;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            int best = 0;
            double best_d = squared_distance(boxes[i], centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d = squared_distance(boxes[i], centroids[c]);
                if (d < best_d) {
                    best = c;
                    best_d = d;
                }
            }
            assign[i] = best;
            inertia += best_d;
        }
        if (std::isfinite(prev_inertia) &&
            prev_inertia - inertia < 1e-4 * std::max(prev_inertia, 1e-12)) {
            break;
        }
        prev_inertia = inertia;

        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k, 0);
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            ++counts[assign[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += boxes[i][d];
        }
        std::vector<bool> stolen(boxes.size(), false);
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t d = 0; d < dim; ++d) centroids[c][d] = sums[c][d] / counts[c];
                continue;
            }
            // Empty cluster: restart it at the point sitting farthest from
            // its current centroid.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < boxes.size(); ++i) {
                if (stolen[i]) continue;
                const double d = squared_distance(boxes[i], centroids[assign[i]]);
                if (d > far_d) {
                    far = i;
                    far_d = d;
                }
            }
            stolen[far] = true;
            centroids[c] = boxes[far];
        }
    }
    return centroids;
}

// ---- synthetic corpus ----

void CorpusConfig::validate() const {
    if (clusters < 1) throw ConfigError("corpus: clusters must be >= 1");
    if (videos_per_cluster < 1) throw ConfigError("corpus: videos_per_cluster must be >= 1");
    if (feature_dim < 1) throw ConfigError("corpus: feature_dim must be >= 1");
    if (query_len < 1) throw ConfigError("corpus: query_len must be >= 1");
    if (centroids_per_video < 0 || title_len < 0) {
        throw ConfigError("corpus: token counts cannot be negative");
    }
    if (centroids_per_video + title_len < 1) {
        throw ConfigError("corpus: videos need at least one centroid or title word");
    }
    if (raw_boxes_per_video != 0 && raw_boxes_per_video < centroids_per_video) {
        throw ConfigError("corpus: raw_boxes_per_video smaller than centroids_per_video");
    }
    if (raw_boxes_per_video > 0 && centroids_per_video < 1) {
        throw ConfigError("corpus: raw boxes given but no centroids to cluster them into");
    }
    if (noise < 0.0) throw InputError("corpus: noise must be non-negative");
}

const CorpusItem& Corpus::by_video(int video_id) const {
    if (video_id < 0 || video_id >= video_count() || items[video_id].video.id != video_id) {
        throw InputError("corpus: no video with id " + std::to_string(video_id));
    }
    return items[video_id];
}

std::set<int> Corpus::relevant_to(int video_id) const {
    const int category = by_video(video_id).category;
    std::set<int> out;
    for (const CorpusItem& item : items) {
        if (item.category == category) out.insert(item.video.id);
    }
    return out;
}

std::map<int, int> Corpus::category_labels() const {
    std::map<int, int> out;
    for (const CorpusItem& item : items) out[item.video.id] = item.category;
    return out;
}

namespace {

// Column vectors packed into a [d x n] tensor.
Tensor pack_columns(const std::vector<std::vector<double>>& columns, int d) {
    const int n = static_cast<int>(columns.size());
    std::vector<double> values(static_cast<std::size_t>(d) * n);
    for (int c = 0; c < n; ++c) {
        for (int r = 0; r < d; ++r) values[static_cast<std::size_t>(r) * n + c] = columns[c][r];
    }
    return Tensor::from_values({d, n}, std::move(values));
}

double quantize32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Corpus generate_synthetic_corpus(const CorpusConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> latents(config.clusters);
    for (auto& u : latents) {
        u.resize(config.feature_dim);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& v : u) {
                v = gauss(rng);
                norm += v * v;
            }
        } while (norm == 0.0);
        const double inv = 1.0 / std::sqrt(norm);
        for (double& v : u) v *= inv;
    }

    const auto draw_token = [&](const std::vector<double>& latent) {
        std::vector<double> t(config.feature_dim);
        for (int d = 0; d < config.feature_dim; ++d) {
            t[d] = quantize32(latent[d] + config.noise * gauss(rng));
        }
        return t;
    };

    Corpus corpus;
    corpus.config = config;
    corpus.items.reserve(config.video_count());
    for (int c = 0; c < config.clusters; ++c) {
        for (int v = 0; v < config.videos_per_cluster; ++v) {
            const int id = c * config.videos_per_cluster + v;
            CorpusItem item;
            item.category = c;
            item.video.id = id;

            if (config.centroids_per_video > 0) {
                std::vector<std::vector<double>> centroids;
                if (config.raw_boxes_per_video > 0) {
                    std::vector<std::vector<double>> raw;
                    raw.reserve(config.raw_boxes_per_video);
                    for (int b = 0; b < config.raw_boxes_per_video; ++b) {
                        raw.push_back(draw_token(latents[c]));
                    }
                    centroids = cluster_boxes(raw, config.centroids_per_video,
                                              mix_seed(config.seed, id));
                    for (auto& cent : centroids) {
                        for (double& x : cent) x = quantize32(x);
                    }
                } else {
                    for (int m = 0; m < config.centroids_per_video; ++m) {
                        centroids.push_back(draw_token(latents[c]));
                    }
                }
                item.video.box_centroids = pack_columns(centroids, config.feature_dim);
            }
            if (config.title_len > 0) {
                std::vector<std::vector<double>> title;
                for (int t = 0; t < config.title_len; ++t) title.push_back(draw_token(latents[c]));
                item.video.title_words = pack_columns(title, config.feature_dim);
            }
            std::vector<std::vector<double>> words;
            for (int w = 0; w < config.query_len; ++w) words.push_back(draw_token(latents[c]));
            item.query.words = pack_columns(words, config.feature_dim);
            item.query.text = "query for video " + std::to_string(id);

            corpus.items.push_back(std::move(item));
        }
    }
    return corpus;
}

namespace {
constexpr char kCorpusMagic[4] = {'Q', 'V', 'C', 'P'};
constexpr std::uint32_t kCorpusVersion = 1;

void write_tensor_f32(std::ostream& out, const Tensor& t, std::size_t expected) {
    if (!t.defined()) {
        if (expected != 0) throw ContractError("save_corpus: missing tensor payload");
        return;
    }
    if (t.size() != expected) throw ContractError("save_corpus: tensor size mismatch");
    for (double v : t.values()) write_f32(out, static_cast<float>(v));
}

Tensor read_tensor_f32(std::istream& in, int d, int n, const char* what) {
    if (n == 0) return Tensor();
    std::vector<double> values(static_cast<std::size_t>(d) * n);
    for (double& v : values) v = static_cast<double>(read_f32(in, what));
    return Tensor::from_values({d, n}, std::move(values));
}
}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_corpus: cannot open " + path + " for writing");
    const CorpusConfig& c = corpus.config;
    write_magic(out, kCorpusMagic);
    write_u32(out, kCorpusVersion);
    write_u32(out, static_cast<std::uint32_t>(c.clusters));
    write_u32(out, static_cast<std::uint32_t>(c.videos_per_cluster));
    write_u32(out, static_cast<std::uint32_t>(c.feature_dim));
    write_u32(out, static_cast<std::uint32_t>(c.query_len));
    write_u32(out, static_cast<std::uint32_t>(c.centroids_per_video));
    write_u32(out, static_cast<std::uint32_t>(c.title_len));
    write_u32(out, static_cast<std::uint32_t>(c.raw_boxes_per_video));
    write_f64(out, c.noise);
    write_u64(out, c.seed);
    write_u64(out, static_cast<std::uint64_t>(corpus.items.size()));

    const std::size_t d = static_cast<std::size_t>(c.feature_dim);
    for (const CorpusItem& item : corpus.items) {
        write_u32(out, static_cast<std::uint32_t>(item.video.id));
        write_u32(out, static_cast<std::uint32_t>(item.category));
        write_tensor_f32(out, item.video.box_centroids, d * c.centroids_per_video);
        write_tensor_f32(out, item.video.title_words, d * c.title_len);
        write_tensor_f32(out, item.query.words, d * c.query_len);
    }
    if (!out) throw IoError("save_corpus: write to " + path + " failed");
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_corpus: cannot open " + path);
    expect_magic(in, kCorpusMagic, "corpus");
    expect_version(in, kCorpusVersion, "corpus");

    Corpus corpus;
    CorpusConfig& c = corpus.config;
    c.clusters = static_cast<int>(read_u32(in, "clusters"));
    c.videos_per_cluster = static_cast<int>(read_u32(in, "videos per cluster"));
    c.feature_dim = static_cast<int>(read_u32(in, "feature dim"));
    c.query_len = static_cast<int>(read_u32(in, "query length"));
    c.centroids_per_video = static_cast<int>(read_u32(in, "centroid count"));
    c.title_len = static_cast<int>(read_u32(in, "title length"));
    c.raw_boxes_per_video = static_cast<int>(read_u32(in, "raw box count"));
    c.noise = read_f64(in, "noise");
    c.seed = read_u64(in, "seed");
    try {
        c.validate();
    } catch (const std::runtime_error& e) {
        throw FormatError(std::string("corpus header invalid: ") + e.what());
    }

    const std::uint64_t count = read_u64(in, "record count");
    corpus.items.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        CorpusItem item;
        item.video.id = static_cast<int>(read_u32(in, "video id"));
        if (item.video.id != static_cast<int>(i)) {
            throw FormatError("corpus records out of order at video " + std::to_string(i));
        }
        item.category = static_cast<int>(read_u32(in, "category"));
        item.video.box_centroids =
            read_tensor_f32(in, c.feature_dim, c.centroids_per_video, "centroids");
        item.video.title_words = read_tensor_f32(in, c.feature_dim, c.title_len, "title words");
        item.query.words = read_tensor_f32(in, c.feature_dim, c.query_len, "query words");
        item.query.text = "query for video " + std::to_string(item.video.id);
        corpus.items.push_back(std::move(item));
    }
    char extra;
    if (in.read(&extra, 1), in.gcount() != 0) {
        throw FormatError("corpus payload longer than its header declares");
    }
    return corpus;
}

// ---- training ----

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train: steps cannot be negative");
    if (batch < 2) throw ConfigError("train: batch must be >= 2 to form triplets");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
    if (tree_rebuilds < 0) throw ConfigError("train: tree_rebuilds cannot be negative");
}

std::vector<std::pair<int, std::vector<double>>> embeddings_for_corpus(
    const Corpus& corpus, const ModelParams& params) {
    NoTapeScope no_tape;
    std::vector<std::pair<int, std::vector<double>>> out;
    out.reserve(corpus.items.size());
    for (const CorpusItem& item : corpus.items) {
        Tensor e = forward_embed_video(item.video, params);
        out.emplace_back(item.video.id, e.values());
    }
    return out;
}

TreeIndex tree_for_corpus(const Corpus& corpus, const ModelParams& params, std::uint64_t seed,
                          int medoid_iterations) {
    TreeBuildConfig tc;
    tc.seed = seed;
    tc.medoid_iterations = medoid_iterations;
    tc.model_checksum = params_checksum(params);
    const std::map<int, int> labels = corpus.category_labels();
    return build_tree(embeddings_for_corpus(corpus, params), tc, &labels);
}

TrainResult alternating_train(const Corpus& corpus, const ModelGeometry& geometry,
                              const TrainConfig& cfg, std::ostream* progress) {
    cfg.validate();
    if (corpus.video_count() < 2) {
        throw InputError("alternating_train: corpus needs at least two videos");
    }
    const int n = corpus.video_count();
    const int batch = std::min(cfg.batch, n);

    TrainResult result;
    result.params = ModelParams::init(geometry, cfg.seed);
    ModelParams& params = result.params;

    std::vector<Tensor> trainable;
    for (const auto& [name, tensor] : params.parameters()) trainable.push_back(tensor);
    Optimizer opt(cfg.optimizer, trainable, cfg.learning_rate, cfg.momentum);

    TreeIndex tree = tree_for_corpus(corpus, params, cfg.seed);
    const int rebuild_every =
        cfg.tree_rebuilds > 0 ? std::max(1, cfg.steps / (cfg.tree_rebuilds + 1)) : 0;

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int step = 0; step < cfg.steps; ++step) {
        if (rebuild_every > 0 && step > 0 && step % rebuild_every == 0 &&
            step / rebuild_every <= cfg.tree_rebuilds) {
            tree = tree_for_corpus(corpus, params, cfg.seed + static_cast<std::uint64_t>(step));
        }

        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> ids(order.begin(), order.begin() + batch);

        Tape tape;
        // Rows index videos, columns queries; the diagonal holds true pairs.
        std::vector<Tensor> cross(batch * batch), embed(batch * batch), student(batch * batch);
        std::vector<Tensor> query_emb(batch), video_emb(batch);
        std::vector<double> teacher_sims;
        std::vector<Tensor> student_sims;

        for (int j = 0; j < batch; ++j) {
            query_emb[j] = forward_embed_query(corpus.by_video(ids[j]).query, params);
        }
        for (int i = 0; i < batch; ++i) {
            video_emb[i] = forward_embed_video(corpus.by_video(ids[i]).video, params);
        }
        for (int i = 0; i < batch; ++i) {
            const VideoFeatures& video = corpus.by_video(ids[i]).video;
            for (int j = 0; j < batch; ++j) {
                const QueryFeatures& query = corpus.by_video(ids[j]).query;
                const std::size_t at = static_cast<std::size_t>(i) * batch + j;
                cross[at] = forward_cross_path(query, video, params);
                student[at] = forward_student(query, video, params);
                embed[at] = embed_similarity(query_emb[j], video_emb[i]);
                teacher_sims.push_back(cross[at].item());
                student_sims.push_back(student[at]);
            }
        }

        Tensor cross_loss = triplet_loss(stack_scalars(cross, batch, batch), cfg.loss.margin);
        Tensor embed_loss = triplet_loss(stack_scalars(embed, batch, batch), cfg.loss.margin);
        Tensor student_loss =
            triplet_loss(stack_scalars(student, batch, batch), cfg.loss.margin);

        if (cfg.tree_negatives && tree.video_count() > 1) {
            std::map<int, Tensor> video_emb_cache;
            for (int i = 0; i < batch; ++i) {
                const QueryFeatures& query = corpus.by_video(ids[i]).query;
                const auto draws =
                    sample_negatives(tree, tree.leaf_of(ids[i]), cfg.sampling, rng());
                std::vector<Tensor> cross_neg, embed_neg, student_neg;
                for (const auto& [level, node_ids] : draws) {
                    for (int node_id : node_ids) {
                        const int medoid = tree.node(node_id).medoid_video;
                        const VideoFeatures& negative = corpus.by_video(medoid).video;
                        Tensor c = forward_cross_path(query, negative, params);
                        Tensor s = forward_student(query, negative, params);
                        auto cached = video_emb_cache.find(medoid);
                        if (cached == video_emb_cache.end()) {
                            cached = video_emb_cache
                                         .emplace(medoid, forward_embed_video(negative, params))
                                         .first;
                        }
                        embed_neg.push_back(embed_similarity(query_emb[i], cached->second));
                        cross_neg.push_back(c);
                        student_neg.push_back(s);
                        teacher_sims.push_back(c.item());
                        student_sims.push_back(s);
                    }
                }
                if (cross_neg.empty()) continue;
                const std::size_t diag = static_cast<std::size_t>(i) * batch + i;
                cross_loss = add(cross_loss,
                                 negative_hinge_sum(cross[diag], cross_neg, cfg.loss.margin));
                embed_loss = add(embed_loss,
                                 negative_hinge_sum(embed[diag], embed_neg, cfg.loss.margin));
                student_loss = add(
                    student_loss, negative_hinge_sum(student[diag], student_neg, cfg.loss.margin));
            }
        }

        Tensor dual = dual_loss(cross_loss, embed_loss, cfg.loss.lambda);
        Tensor distill = distill_loss(student_loss, teacher_sims, student_sims, cfg.loss.gamma);
        Tensor objective = scale(total_loss(dual, distill, cfg.loss.beta), 1.0 / batch);

        TrainLogEntry entry;
        entry.step = step;
        entry.cross = cross_loss.item() / batch;
        entry.embed = embed_loss.item() / batch;
        entry.distill = distill.item() / batch;
        entry.total = objective.item();
        if (!std::isfinite(entry.total)) {
            throw NumericError("training diverged at step " + std::to_string(step) +
                               " (loss is not finite); lower the learning rate");
        }
        result.log.push_back(entry);
        if (progress && (step % 10 == 0 || step + 1 == cfg.steps)) {
            (*progress) << "step " << step << " cross " << entry.cross << " embed "
                        << entry.embed << " distill " << entry.distill << " total "
                        << entry.total << "\n";
        }

        tape.backward(objective);
        opt.step();
        opt.zero_grad();
    }

    result.tree = tree_for_corpus(corpus, params, cfg.seed + static_cast<std::uint64_t>(cfg.steps));
    return result;
}

// ---- evaluation ----

std::function<double(const TreeNode&)> make_cross_scorer(const QueryFeatures& query,
                                                         const Corpus& corpus,
                                                         const ModelParams& params) {
    const Corpus* corpus_p = &corpus;
    const ModelParams* params_p = &params;
    return [query, corpus_p, params_p](const TreeNode& node) {
        NoTapeScope no_tape;
        const VideoFeatures& video = corpus_p->by_video(node.medoid_video).video;
        return forward_cross_path(query, video, *params_p).item();
    };
}

std::vector<std::pair<int, double>> exhaustive_rank(const QueryFeatures& query,
                                                    const Corpus& corpus,
                                                    const ModelParams& params) {
    NoTapeScope no_tape;
    std::vector<std::pair<int, double>> scored;
    scored.reserve(corpus.items.size());
    for (const CorpusItem& item : corpus.items) {
        scored.emplace_back(item.video.id, forward_cross_path(query, item.video, params).item());
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return scored;
}

double average_precision_at_k(const std::vector<int>& ranked_videos,
                              const std::set<int>& relevant, int k) {
    if (relevant.empty()) throw InputError("average_precision_at_k: relevant set is empty");
    if (k < 1) throw InputError("average_precision_at_k: k must be >= 1");
    const int top = std::min<int>(k, static_cast<int>(ranked_videos.size()));
    int hits = 0;
    double sum = 0.0;
    for (int r = 0; r < top; ++r) {
        if (relevant.count(ranked_videos[r])) {
            ++hits;
            sum += static_cast<double>(hits) / (r + 1);
        }
    }
    return sum / std::min<int>(k, static_cast<int>(relevant.size()));
}

double pr_auc(const std::vector<std::pair<double, bool>>& scored) {
    if (scored.empty()) throw InputError("pr_auc: no scored examples");
    long positives = 0;
    for (const auto& [score, label] : scored) positives += label ? 1 : 0;
    if (positives == 0 || positives == static_cast<long>(scored.size())) {
        throw InputError("pr_auc: both classes must be present");
    }

    std::vector<std::pair<double, bool>> sorted = scored;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    double auc = 0.0;
    double prev_recall = 0.0;
    double prev_precision = -1.0;  // set by the first group, anchoring (0, P_first)
    long tp = 0, seen = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            tp += sorted[j].second ? 1 : 0;
            ++j;
        }
        seen += static_cast<long>(j - i);
        const double recall = static_cast<double>(tp) / positives;
        const double precision = static_cast<double>(tp) / seen;
        if (prev_precision < 0.0) prev_precision = precision;
        auc += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
        i = j;
    }
    return auc;
}

EvalReport evaluate_retrieval(const Corpus& corpus, const ModelParams& params,
                              const TreeIndex& tree, int beam) {
    EvalReport report;
    std::vector<std::pair<double, bool>> pooled;
    double ap1 = 0.0, ap3 = 0.0, ap5 = 0.0;
    long visited = 0;
    for (const CorpusItem& item : corpus.items) {
        const std::set<int> relevant = corpus.relevant_to(item.video.id);
        if (relevant.empty()) {
            ++report.skipped_queries;
            continue;
        }
        const RetrievalResult r =
            beam_retrieve(tree, beam, make_cross_scorer(item.query, corpus, params));
        std::vector<int> ranked;
        ranked.reserve(r.ranked.size());
        for (const auto& [video_id, score] : r.ranked) {
            ranked.push_back(video_id);
            pooled.emplace_back(score, relevant.count(video_id) > 0);
        }
        ap1 += average_precision_at_k(ranked, relevant, 1);
        ap3 += average_precision_at_k(ranked, relevant, 3);
        ap5 += average_precision_at_k(ranked, relevant, 5);
        visited += r.visited;
        ++report.query_count;
    }
    if (report.query_count == 0) {
        throw InputError("evaluate_retrieval: no query has any relevant video");
    }
    report.map1 = ap1 / report.query_count;
    report.map3 = ap3 / report.query_count;
    report.map5 = ap5 / report.query_count;
    report.mean_visited = static_cast<double>(visited) / report.query_count;

    bool has_pos = false, has_neg = false;
    for (const auto& [score, label] : pooled) (label ? has_pos : has_neg) = true;
    report.pr_auc = (has_pos && has_neg) ? pr_auc(pooled) : std::nan("");
    return report;
}

double exhaustive_map_at_k(const Corpus& corpus, const ModelParams& params, int k) {
    double sum = 0.0;
    int counted = 0;
    for (const CorpusItem& item : corpus.items) {
        const std::set<int> relevant = corpus.relevant_to(item.video.id);
        if (relevant.empty()) continue;
        std::vector<int> ranked;
        for (const auto& [video_id, score] : exhaustive_rank(item.query, corpus, params)) {
            ranked.push_back(video_id);
        }
        sum += average_precision_at_k(ranked, relevant, k);
        ++counted;
    }
    if (counted == 0) throw InputError("exhaustive_map_at_k: no query has any relevant video");
    return sum / counted;
}

}  // namespace qvr
