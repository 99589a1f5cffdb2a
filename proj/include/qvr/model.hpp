#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qvr/attention.hpp"
#include "qvr/tensor.hpp"

namespace qvr {

// Which similarity head the cross path ends in. CrossMatching is the
// production head (per-token cosine reconstruction); InnerProductPool is the
// older un-normalized pooled inner product, kept selectable for comparison.
enum class SimilarityHead : std::uint8_t { CrossMatching = 0, InnerProductPool = 1 };

// Static shape of the scorer. The teacher runs `layers` self-attention layers
// of width d_model, the first `trunk_layers` of which are shared between the
// cross path and both embedding paths. The student is an independent network
// of `student_layers` layers at `student_width`, fed through a learned linear
// adapter from the raw feature width.
struct ModelGeometry {
    int feature_dim = 16;  // width of raw input tokens
    int d_model = 16;
    int heads = 2;
    int layers = 2;
    int trunk_layers = 1;  // shared prefix; the rest is per-path
    int student_width = 8;
    int student_heads = 2;
    int student_layers = 2;
    bool scaled_logits = false;
    SimilarityHead head = SimilarityHead::CrossMatching;

    // Small shape for tests and local runs.
    static ModelGeometry desk_default();
    // Deployment-sized shape: 4 teacher layers at width 768 with 8 heads,
    // 2 student layers at width 256.
    static ModelGeometry production_scale();

    void validate() const;
    int path_layers() const { return layers - trunk_layers; }
};

// One query: word vectors [d x L] plus optional source text for logs.
struct QueryFeatures {
    Tensor words;
    std::string text;
};

// One video: box-cluster centroids [d x M] and title word vectors [d x Nt].
// Either side may be absent (for the single-modality ablations) but at least
// one token must exist overall.
struct VideoFeatures {
    int id = -1;
    Tensor box_centroids;
    Tensor title_words;

    int centroid_count() const { return box_centroids.defined() ? box_centroids.cols() : 0; }
    int title_count() const { return title_words.defined() ? title_words.cols() : 0; }
};

// All learnable state.
struct ModelParams {
    ModelGeometry geometry;
    std::vector<AttentionLayerParams> trunk;
    std::vector<AttentionLayerParams> cross_path;
    std::vector<AttentionLayerParams> query_embed_path;
    std::vector<AttentionLayerParams> video_embed_path;
    Tensor class_token;      // [d_model x 1], prepended on the embedding paths
    Tensor input_adapter;    // [d_model x feature_dim] when widths differ, else undefined
    Tensor student_adapter;  // [student_width x feature_dim]
    std::vector<AttentionLayerParams> student_layers;

    static ModelParams init(const ModelGeometry& geometry, std::uint64_t seed);
    // Canonical (name, tensor) list; ordering is the serialization contract.
    std::vector<std::pair<std::string, Tensor>> parameters() const;
    void zero_grad();
};

// Inference summary for one (query, video) pair.
struct DualOutputs {
    double sim_cross = 0.0;
    double sim_embed = 0.0;
    double sim_cross_student = 0.0;
    std::vector<double> query_embedding;
    std::vector<double> video_embedding;
};

// Sinusoidal position encoding of length d for a token at `position`.
std::vector<double> sinusoidal_position(int position, int d);

// Joint sequence [query words | box centroids | title words] with sinusoidal
// positions added to word tokens only (each role counts positions from 0);
// centroids are unordered and get none. Queries must be non-empty; videos
// must contribute at least one token.
HiddenSequence build_input_sequence(const QueryFeatures& query, const VideoFeatures& video);

// Embedding-path inputs: learned class token prepended to the single-modality
// token list.
HiddenSequence build_query_embed_sequence(const QueryFeatures& query, const ModelParams& p);
HiddenSequence build_video_embed_sequence(const VideoFeatures& video, const ModelParams& p);

// Cross-attention path: joint sequence through trunk + cross layers, split
// back into query/video tokens, scored by the configured similarity head.
Tensor forward_cross_path(const QueryFeatures& query, const VideoFeatures& video,
                          const ModelParams& p);

// Embedding paths: trunk + per-modality layers; the class-token output column
// is the embedding.
Tensor forward_embed_query(const QueryFeatures& query, const ModelParams& p);
Tensor forward_embed_video(const VideoFeatures& video, const ModelParams& p);

// Student: same joint input sequence, adapted to student width, run through
// the student's own layers, scored by cross-matching.
Tensor forward_student(const QueryFeatures& query, const VideoFeatures& video,
                       const ModelParams& p);

// Convenience non-differentiating evaluation of everything at once.
DualOutputs score_pair(const QueryFeatures& query, const VideoFeatures& video,
                       const ModelParams& p);

// Weights file: magic + version + geometry header + all parameters as
// little-endian 32-bit floats in parameters() order. Loading re-extends to
// doubles, so save/load/save is byte-identical.
void save_params(const ModelParams& p, const std::string& path);
ModelParams load_params(const std::string& path);

// Fingerprint of the 32-bit quantized payload; indexes record it so a stale
// index (built from other weights) can be detected.
std::uint64_t params_checksum(const ModelParams& p);

// Multiply-add count for scoring one (query, video) pair with the given token
// counts, used to compare teacher and student cost on equal terms.
double teacher_flops(const ModelGeometry& g, int query_len, int video_tokens);
double student_flops(const ModelGeometry& g, int query_len, int video_tokens);

}  // namespace qvr
