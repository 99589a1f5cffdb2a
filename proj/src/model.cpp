#include "qvr/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "qvr/binio.hpp"
#include "qvr/errors.hpp"
#include "qvr/scoring.hpp"

namespace qvr {

// ---- geometry ----

ModelGeometry ModelGeometry::desk_default() { return ModelGeometry{}; }

ModelGeometry ModelGeometry::production_scale() {
    ModelGeometry g;
    g.feature_dim = 768;
    g.d_model = 768;
    g.heads = 8;
    g.layers = 4;
    g.trunk_layers = 2;
    g.student_width = 256;
    g.student_heads = 8;
    g.student_layers = 2;
    return g;
}

void ModelGeometry::validate() const {
    if (feature_dim <= 0 || d_model <= 0 || student_width <= 0) {
        throw ConfigError("ModelGeometry: widths must be positive");
    }
    if (layers < 1 || trunk_layers < 0 || trunk_layers > layers) {
        throw ConfigError("ModelGeometry: trunk_layers must lie within [0, layers]");
    }
    if (heads <= 0 || d_model % heads != 0) {
        throw ConfigError("ModelGeometry: heads must divide d_model");
    }
    if (student_layers < 1 || student_heads <= 0 || student_width % student_heads != 0) {
        throw ConfigError("ModelGeometry: student heads must divide student width");
    }
}

// ---- parameters ----

ModelParams ModelParams::init(const ModelGeometry& geometry, std::uint64_t seed) {
    geometry.validate();
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.geometry = geometry;
    if (geometry.feature_dim != geometry.d_model) {
        p.input_adapter = Tensor::uniform_init({geometry.d_model, geometry.feature_dim},
                                               geometry.feature_dim, rng);
    }
    for (int i = 0; i < geometry.trunk_layers; ++i) {
        p.trunk.push_back(AttentionLayerParams::init(geometry.d_model, geometry.heads, rng));
    }
    for (int i = 0; i < geometry.path_layers(); ++i) {
        p.cross_path.push_back(
            AttentionLayerParams::init(geometry.d_model, geometry.heads, rng));
    }
    for (int i = 0; i < geometry.path_layers(); ++i) {
        p.query_embed_path.push_back(
            AttentionLayerParams::init(geometry.d_model, geometry.heads, rng));
    }
    for (int i = 0; i < geometry.path_layers(); ++i) {
        p.video_embed_path.push_back(
            AttentionLayerParams::init(geometry.d_model, geometry.heads, rng));
    }
    p.class_token = Tensor::uniform_init({geometry.d_model, 1}, geometry.d_model, rng);
    p.student_adapter = Tensor::uniform_init({geometry.student_width, geometry.feature_dim},
                                             geometry.feature_dim, rng);
    for (int i = 0; i < geometry.student_layers; ++i) {
        p.student_layers.push_back(
            AttentionLayerParams::init(geometry.student_width, geometry.student_heads, rng));
    }
    return p;
}

namespace {

ModelParams allocate_params(const ModelGeometry& geometry) {
    geometry.validate();
    ModelParams p;
    p.geometry = geometry;
    if (geometry.feature_dim != geometry.d_model) {
        p.input_adapter =
            Tensor::zeros({geometry.d_model, geometry.feature_dim}, /*requires_grad=*/true);
    }
    for (int i = 0; i < geometry.trunk_layers; ++i) {
        p.trunk.push_back(AttentionLayerParams::allocate(geometry.d_model, geometry.heads));
    }
    for (int i = 0; i < geometry.path_layers(); ++i) {
        p.cross_path.push_back(
            AttentionLayerParams::allocate(geometry.d_model, geometry.heads));
    }
    for (int i = 0; i < geometry.path_layers(); ++i) {
        p.query_embed_path.push_back(
            AttentionLayerParams::allocate(geometry.d_model, geometry.heads));
    }
    for (int i = 0; i < geometry.path_layers(); ++i) {
        p.video_embed_path.push_back(
            AttentionLayerParams::allocate(geometry.d_model, geometry.heads));
    }
    p.class_token = Tensor::zeros({geometry.d_model, 1}, true);
    p.student_adapter =
        Tensor::zeros({geometry.student_width, geometry.feature_dim}, true);
    for (int i = 0; i < geometry.student_layers; ++i) {
        p.student_layers.push_back(
            AttentionLayerParams::allocate(geometry.student_width, geometry.student_heads));
    }
    return p;
}

void collect_layer(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                   const AttentionLayerParams& layer) {
    for (int h = 0; h < layer.heads; ++h) {
        const std::string head = prefix + ".h" + std::to_string(h);
        out.emplace_back(head + ".value", layer.value_proj[h]);
        out.emplace_back(head + ".key", layer.key_proj[h]);
        out.emplace_back(head + ".query", layer.query_proj[h]);
    }
    out.emplace_back(prefix + ".output", layer.output_proj);
    out.emplace_back(prefix + ".norm_gain", layer.norm_gain);
    out.emplace_back(prefix + ".norm_shift", layer.norm_shift);
}

void collect_stack(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                   const std::vector<AttentionLayerParams>& stack) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        collect_layer(out, name + "." + std::to_string(i), stack[i]);
    }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelParams::parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    if (input_adapter.defined()) out.emplace_back("input_adapter", input_adapter);
    collect_stack(out, "trunk", trunk);
    collect_stack(out, "cross", cross_path);
    collect_stack(out, "query_embed", query_embed_path);
    collect_stack(out, "video_embed", video_embed_path);
    out.emplace_back("class_token", class_token);
    out.emplace_back("student_adapter", student_adapter);
    collect_stack(out, "student", student_layers);
    return out;
}

void ModelParams::zero_grad() {
    for (auto& [name, t] : parameters()) t.zero_grad();
}

// ---- input assembly ----

std::vector<double> sinusoidal_position(int position, int d) {
    std::vector<double> pe(d);
    for (int i = 0; i < d; ++i) {
        const int pair = i / 2;
        const double rate = std::pow(10000.0, (2.0 * pair) / d);
        pe[i] = (i % 2 == 0) ? std::sin(position / rate) : std::cos(position / rate);
    }
    return pe;
}

namespace {

void check_features(const QueryFeatures& query, const VideoFeatures& video) {
    if (!query.words.defined() || query.words.ndim() != 2 || query.words.cols() < 1) {
        throw InputError("build_input_sequence: query has no word tokens");
    }
    const int d = query.words.rows();
    if (video.centroid_count() == 0 && video.title_count() == 0) {
        throw InputError("build_input_sequence: video " + std::to_string(video.id) +
                         " has no tokens at all");
    }
    if (video.box_centroids.defined() && video.box_centroids.rows() != d) {
        throw DimensionError("build_input_sequence: centroid width " +
                             std::to_string(video.box_centroids.rows()) +
                             " != query width " + std::to_string(d));
    }
    if (video.title_words.defined() && video.title_words.rows() != d) {
        throw DimensionError("build_input_sequence: title width " +
                             std::to_string(video.title_words.rows()) + " != query width " +
                             std::to_string(d));
    }
}

// Copies `src` into columns [col0, col0+n) of a row-major [d x total] buffer,
// adding per-column sinusoidal positions when `positioned`.
void emit_tokens(std::vector<double>& buf, int d, int total, int col0, const Tensor& src,
                 bool positioned) {
    const int n = src.cols();
    for (int j = 0; j < n; ++j) {
        std::vector<double> pe;
        if (positioned) pe = sinusoidal_position(j, d);
        for (int i = 0; i < d; ++i) {
            buf[static_cast<std::size_t>(i) * total + col0 + j] =
                src.at(i, j) + (positioned ? pe[i] : 0.0);
        }
    }
}

}  // namespace

HiddenSequence build_input_sequence(const QueryFeatures& query, const VideoFeatures& video) {
    check_features(query, video);
    const int d = query.words.rows();
    const int l = query.words.cols();
    const int m = video.centroid_count();
    const int nt = video.title_count();
    const int total = l + m + nt;

    std::vector<double> buf(static_cast<std::size_t>(d) * total, 0.0);
    emit_tokens(buf, d, total, 0, query.words, /*positioned=*/true);
    if (m > 0) emit_tokens(buf, d, total, l, video.box_centroids, /*positioned=*/false);
    if (nt > 0) emit_tokens(buf, d, total, l + m, video.title_words, /*positioned=*/true);

    HiddenSequence seq;
    seq.tokens = Tensor::from_values({d, total}, std::move(buf));
    seq.roles.assign(l, TokenRole::QueryWord);
    seq.roles.insert(seq.roles.end(), m, TokenRole::BoxCentroid);
    seq.roles.insert(seq.roles.end(), nt, TokenRole::TitleWord);
    return seq;
}

namespace {

Tensor to_model_width(const Tensor& tokens, const ModelParams& p) {
    return p.input_adapter.defined() ? linear_nobias(tokens, p.input_adapter) : tokens;
}

HiddenSequence run_stack(HiddenSequence seq, const std::vector<AttentionLayerParams>& stack,
                         bool scaled_logits) {
    for (const AttentionLayerParams& layer : stack) {
        seq = attention_layer(seq, layer, scaled_logits);
    }
    return seq;
}

}  // namespace

HiddenSequence build_query_embed_sequence(const QueryFeatures& query, const ModelParams& p) {
    if (!query.words.defined() || query.words.ndim() != 2 || query.words.cols() < 1) {
        throw InputError("build_query_embed_sequence: query has no word tokens");
    }
    const int d = query.words.rows();
    const int l = query.words.cols();
    std::vector<double> buf(static_cast<std::size_t>(d) * l, 0.0);
    emit_tokens(buf, d, l, 0, query.words, true);
    Tensor words = to_model_width(Tensor::from_values({d, l}, std::move(buf)), p);

    HiddenSequence seq;
    seq.tokens = concat_cols({p.class_token, words});
    seq.roles.assign(1, TokenRole::ClassToken);
    seq.roles.insert(seq.roles.end(), l, TokenRole::QueryWord);
    return seq;
}

HiddenSequence build_video_embed_sequence(const VideoFeatures& video, const ModelParams& p) {
    const int m = video.centroid_count();
    const int nt = video.title_count();
    if (m + nt < 1) {
        throw InputError("build_video_embed_sequence: video " + std::to_string(video.id) +
                         " has no tokens at all");
    }
    const int d = m > 0 ? video.box_centroids.rows() : video.title_words.rows();
    std::vector<double> buf(static_cast<std::size_t>(d) * (m + nt), 0.0);
    if (m > 0) emit_tokens(buf, d, m + nt, 0, video.box_centroids, false);
    if (nt > 0) emit_tokens(buf, d, m + nt, m, video.title_words, true);
    Tensor tokens = to_model_width(Tensor::from_values({d, m + nt}, std::move(buf)), p);

    HiddenSequence seq;
    seq.tokens = concat_cols({p.class_token, tokens});
    seq.roles.assign(1, TokenRole::ClassToken);
    seq.roles.insert(seq.roles.end(), m, TokenRole::BoxCentroid);
    seq.roles.insert(seq.roles.end(), nt, TokenRole::TitleWord);
    return seq;
}

// ---- forward paths ----

Tensor forward_cross_path(const QueryFeatures& query, const VideoFeatures& video,
                          const ModelParams& p) {
    HiddenSequence seq = build_input_sequence(query, video);
    seq.tokens = to_model_width(seq.tokens, p);
    seq = run_stack(std::move(seq), p.trunk, p.geometry.scaled_logits);
    seq = run_stack(std::move(seq), p.cross_path, p.geometry.scaled_logits);

    const int l = query.words.cols();
    const int total = seq.length();
    Tensor q = slice_cols(seq.tokens, 0, l);
    Tensor v = slice_cols(seq.tokens, l, total);
    if (p.geometry.head == SimilarityHead::InnerProductPool) {
        return soft_attention_pool(v, q).score;
    }
    return cross_similarity(q, v);
}

Tensor forward_embed_query(const QueryFeatures& query, const ModelParams& p) {
    HiddenSequence seq = build_query_embed_sequence(query, p);
    seq = run_stack(std::move(seq), p.trunk, p.geometry.scaled_logits);
    seq = run_stack(std::move(seq), p.query_embed_path, p.geometry.scaled_logits);
    return flatten(slice_cols(seq.tokens, 0, 1));
}

Tensor forward_embed_video(const VideoFeatures& video, const ModelParams& p) {
    HiddenSequence seq = build_video_embed_sequence(video, p);
    seq = run_stack(std::move(seq), p.trunk, p.geometry.scaled_logits);
    seq = run_stack(std::move(seq), p.video_embed_path, p.geometry.scaled_logits);
    return flatten(slice_cols(seq.tokens, 0, 1));
}

Tensor forward_student(const QueryFeatures& query, const VideoFeatures& video,
                       const ModelParams& p) {
    HiddenSequence seq = build_input_sequence(query, video);
    seq.tokens = linear_nobias(seq.tokens, p.student_adapter);
    seq = run_stack(std::move(seq), p.student_layers, p.geometry.scaled_logits);

    const int l = query.words.cols();
    Tensor q = slice_cols(seq.tokens, 0, l);
    Tensor v = slice_cols(seq.tokens, l, seq.length());
    if (p.geometry.head == SimilarityHead::InnerProductPool) {
        return soft_attention_pool(v, q).score;
    }
    return cross_similarity(q, v);
}

DualOutputs score_pair(const QueryFeatures& query, const VideoFeatures& video,
                       const ModelParams& p) {
    NoTapeScope inference;
    DualOutputs out;
    out.sim_cross = forward_cross_path(query, video, p).item();
    Tensor qe = forward_embed_query(query, p);
    Tensor ve = forward_embed_video(video, p);
    out.query_embedding = qe.values();
    out.video_embedding = ve.values();
    out.sim_embed = embed_similarity(qe, ve).item();
    out.sim_cross_student = forward_student(query, video, p).item();
    return out;
}

// ---- persistence ----

namespace {

constexpr char kWeightsMagic[4] = {'Q', 'V', 'W', 'T'};
constexpr std::uint32_t kWeightsVersion = 1;

std::uint32_t geometry_flags(const ModelGeometry& g) {
    std::uint32_t f = 0;
    if (g.scaled_logits) f |= 1u;
    if (g.head == SimilarityHead::InnerProductPool) f |= 2u;
    return f;
}

std::uint64_t total_elements(const ModelParams& p) {
    std::uint64_t n = 0;
    for (const auto& [name, t] : p.parameters()) n += t.size();
    return n;
}

}  // namespace

void save_params(const ModelParams& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_params: cannot open " + path + " for writing");
    write_magic(out, kWeightsMagic);
    write_u32(out, kWeightsVersion);
    const ModelGeometry& g = p.geometry;
    write_u32(out, static_cast<std::uint32_t>(g.feature_dim));
    write_u32(out, static_cast<std::uint32_t>(g.d_model));
    write_u32(out, static_cast<std::uint32_t>(g.heads));
    write_u32(out, static_cast<std::uint32_t>(g.layers));
    write_u32(out, static_cast<std::uint32_t>(g.trunk_layers));
    write_u32(out, static_cast<std::uint32_t>(g.student_width));
    write_u32(out, static_cast<std::uint32_t>(g.student_heads));
    write_u32(out, static_cast<std::uint32_t>(g.student_layers));
    write_u32(out, geometry_flags(g));
    write_u64(out, total_elements(p));
    for (const auto& [name, t] : p.parameters()) {
        for (double v : t.values()) write_f32(out, static_cast<float>(v));
    }
    if (!out) throw IoError("save_params: write to " + path + " failed");
}

ModelParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_params: cannot open " + path);
    expect_magic(in, kWeightsMagic, "weights");
    expect_version(in, kWeightsVersion, "weights");

    ModelGeometry g;
    g.feature_dim = static_cast<int>(read_u32(in, "feature_dim"));
    g.d_model = static_cast<int>(read_u32(in, "d_model"));
    g.heads = static_cast<int>(read_u32(in, "heads"));
    g.layers = static_cast<int>(read_u32(in, "layers"));
    g.trunk_layers = static_cast<int>(read_u32(in, "trunk_layers"));
    g.student_width = static_cast<int>(read_u32(in, "student_width"));
    g.student_heads = static_cast<int>(read_u32(in, "student_heads"));
    g.student_layers = static_cast<int>(read_u32(in, "student_layers"));
    const std::uint32_t flags = read_u32(in, "flags");
    g.scaled_logits = (flags & 1u) != 0;
    g.head = (flags & 2u) ? SimilarityHead::InnerProductPool : SimilarityHead::CrossMatching;
    try {
        g.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("weights header invalid: ") + e.what());
    }

    ModelParams p = allocate_params(g);
    const std::uint64_t declared = read_u64(in, "element count");
    if (declared != total_elements(p)) {
        throw FormatError("weights header geometry implies " +
                          std::to_string(total_elements(p)) + " values but file declares " +
                          std::to_string(declared));
    }
    for (auto& [name, t] : p.parameters()) {
        for (double& v : t.values()) {
            v = static_cast<double>(read_f32(in, name.c_str()));
        }
    }
    // Anything left over means the header lied about the payload.
    char extra;
    if (in.read(&extra, 1), in.gcount() != 0) {
        throw FormatError("weights payload longer than the header geometry allows");
    }
    return p;
}

std::uint64_t params_checksum(const ModelParams& p) {
    Fnv1a h;
    for (const auto& [name, t] : p.parameters()) {
        for (double v : t.values()) h.update_f32(static_cast<float>(v));
    }
    return h.digest();
}

// ---- cost model ----

namespace {

// Flops for one self-attention layer over T tokens at width d (multiply and
// add counted separately; layer norm counted at 5 ops per activation).
double layer_flops(double t, double d) {
    return 2.0 * (4.0 * t * d * d + 2.0 * t * t * d) + 5.0 * t * d;
}

// Cross-matching head: logits V^T q, reconstruction V a, then cosines.
double head_flops(double l, double tv, double d) {
    return 2.0 * (2.0 * l * tv * d) + 3.0 * l * d;
}

}  // namespace

double teacher_flops(const ModelGeometry& g, int query_len, int video_tokens) {
    const double t = query_len + video_tokens;
    double total = 0.0;
    if (g.feature_dim != g.d_model) total += 2.0 * t * g.feature_dim * g.d_model;
    total += g.layers * layer_flops(t, g.d_model);
    total += head_flops(query_len, video_tokens, g.d_model);
    return total;
}

double student_flops(const ModelGeometry& g, int query_len, int video_tokens) {
    const double t = query_len + video_tokens;
    double total = 2.0 * t * g.feature_dim * g.student_width;
    total += g.student_layers * layer_flops(t, g.student_width);
    total += head_flops(query_len, video_tokens, g.student_width);
    return total;
}

}  // namespace qvr
