#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "qvr/errors.hpp"
#include "qvr/model.hpp"
#include "qvr/scoring.hpp"
#include "qvr/tensor.hpp"

using qvr::ModelGeometry;
using qvr::ModelParams;
using qvr::QueryFeatures;
using qvr::Tensor;
using qvr::VideoFeatures;

namespace {

// Independent re-derivation of the position code (interleaved sin/cos pairs
// sharing one frequency per pair).
std::vector<double> pe_oracle(int pos, int d) {
    std::vector<double> v(d, 0.0);
    for (int i = 0; i < d; i += 2) {
        const double rate = std::pow(10000.0, static_cast<double>(i) / d);
        v[i] = std::sin(pos / rate);
        if (i + 1 < d) v[i + 1] = std::cos(pos / rate);
    }
    return v;
}

ModelGeometry tiny_geometry() {
    ModelGeometry g;
    g.feature_dim = 4;
    g.d_model = 4;
    g.heads = 2;
    g.layers = 2;
    g.trunk_layers = 1;
    g.student_width = 4;
    g.student_heads = 2;
    g.student_layers = 1;
    return g;
}

Tensor random_tokens(int d, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(d) * n);
    for (double& x : v) x = dist(rng);
    return Tensor::from_values({d, n}, std::move(v));
}

QueryFeatures make_query(int d, int l, std::uint64_t seed) {
    QueryFeatures q;
    q.words = random_tokens(d, l, seed);
    q.text = "q" + std::to_string(seed);
    return q;
}

VideoFeatures make_video(int d, int m, int nt, std::uint64_t seed) {
    VideoFeatures v;
    v.id = static_cast<int>(seed);
    if (m > 0) v.box_centroids = random_tokens(d, m, seed * 31 + 1);
    if (nt > 0) v.title_words = random_tokens(d, nt, seed * 31 + 2);
    return v;
}

// Raw joint sequence the way the cross path and the student see it: query
// words and title words carry positions restarting at zero per segment,
// centroids carry none.
oracle::Mat assemble_joint(const QueryFeatures& query, const VideoFeatures& video) {
    const int d = query.words.rows();
    oracle::Mat out(d);
    auto push = [&](const Tensor& t, bool positioned) {
        if (!t.defined()) return;
        for (int j = 0; j < t.cols(); ++j) {
            const std::vector<double> pe = pe_oracle(j, d);
            for (int i = 0; i < d; ++i) {
                out[i].push_back(t.at(i, j) + (positioned ? pe[i] : 0.0));
            }
        }
    };
    push(query.words, true);
    push(video.box_centroids, false);
    push(video.title_words, true);
    return out;
}

oracle::Mat run_stack_oracle(oracle::Mat x, const std::vector<qvr::AttentionLayerParams>& stack,
                             bool scaled) {
    for (const auto& layer : stack) x = oracle::attention_layer(x, layer, scaled);
    return x;
}

oracle::Mat adapt(const oracle::Mat& x, const ModelParams& p) {
    return p.input_adapter.defined() ? oracle::matmul(oracle::from_tensor(p.input_adapter), x)
                                     : x;
}

oracle::Mat split_cols(const oracle::Mat& m, std::size_t from, std::size_t to) {
    oracle::Mat out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        out[i].assign(m[i].begin() + from, m[i].begin() + to);
    }
    return out;
}

oracle::Mat prepend_column(const std::vector<double>& col, const oracle::Mat& m) {
    oracle::Mat out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        out[i].push_back(col[i]);
        out[i].insert(out[i].end(), m[i].begin(), m[i].end());
    }
    return out;
}

double teacher_oracle(const QueryFeatures& query, const VideoFeatures& video,
                      const ModelParams& p) {
    oracle::Mat x = adapt(assemble_joint(query, video), p);
    x = run_stack_oracle(std::move(x), p.trunk, p.geometry.scaled_logits);
    x = run_stack_oracle(std::move(x), p.cross_path, p.geometry.scaled_logits);
    const std::size_t l = static_cast<std::size_t>(query.words.cols());
    return oracle::cross_similarity(split_cols(x, 0, l), split_cols(x, l, x[0].size()));
}

double student_oracle(const QueryFeatures& query, const VideoFeatures& video,
                      const ModelParams& p) {
    oracle::Mat x = oracle::matmul(oracle::from_tensor(p.student_adapter),
                                   assemble_joint(query, video));
    x = run_stack_oracle(std::move(x), p.student_layers, p.geometry.scaled_logits);
    const std::size_t l = static_cast<std::size_t>(query.words.cols());
    return oracle::cross_similarity(split_cols(x, 0, l), split_cols(x, l, x[0].size()));
}

std::vector<double> embed_query_oracle(const QueryFeatures& query, const ModelParams& p) {
    const int d = query.words.rows();
    oracle::Mat words(d);
    for (int j = 0; j < query.words.cols(); ++j) {
        const std::vector<double> pe = pe_oracle(j, d);
        for (int i = 0; i < d; ++i) words[i].push_back(query.words.at(i, j) + pe[i]);
    }
    oracle::Mat x = prepend_column(p.class_token.values(), adapt(words, p));
    x = run_stack_oracle(std::move(x), p.trunk, p.geometry.scaled_logits);
    x = run_stack_oracle(std::move(x), p.query_embed_path, p.geometry.scaled_logits);
    return oracle::column(x, 0);
}

std::vector<double> embed_video_oracle(const VideoFeatures& video, const ModelParams& p) {
    const int d = video.centroid_count() > 0 ? video.box_centroids.rows()
                                             : video.title_words.rows();
    oracle::Mat tokens(d);
    if (video.centroid_count() > 0) {
        for (int j = 0; j < video.box_centroids.cols(); ++j) {
            for (int i = 0; i < d; ++i) tokens[i].push_back(video.box_centroids.at(i, j));
        }
    }
    for (int j = 0; j < video.title_count(); ++j) {
        const std::vector<double> pe = pe_oracle(j, d);
        for (int i = 0; i < d; ++i) tokens[i].push_back(video.title_words.at(i, j) + pe[i]);
    }
    oracle::Mat x = prepend_column(p.class_token.values(), adapt(tokens, p));
    x = run_stack_oracle(std::move(x), p.trunk, p.geometry.scaled_logits);
    x = run_stack_oracle(std::move(x), p.video_embed_path, p.geometry.scaled_logits);
    return oracle::column(x, 0);
}

double grad_mass(const Tensor& t) {
    double s = 0.0;
    for (double g : t.grad()) s += std::abs(g);
    return s;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(bool(out));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct TempDir {
    std::filesystem::path dir;
    TempDir() {
        dir = std::filesystem::temp_directory_path() / "qvr_model_test";
        std::filesystem::create_directories(dir);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("position codes follow the interleaved sin/cos layout") {
    const std::vector<double> zero = qvr::sinusoidal_position(0, 4);
    CHECK(zero == std::vector<double>{0.0, 1.0, 0.0, 1.0});

    const std::vector<double> got = qvr::sinusoidal_position(3, 4);
    CHECK(got[0] == doctest::Approx(std::sin(3.0)).epsilon(1e-12));
    CHECK(got[1] == doctest::Approx(std::cos(3.0)).epsilon(1e-12));
    CHECK(got[2] == doctest::Approx(std::sin(3.0 / std::sqrt(10000.0))).epsilon(1e-12));
    CHECK(got[3] == doctest::Approx(std::cos(3.0 / std::sqrt(10000.0))).epsilon(1e-12));

    for (int pos : {0, 1, 5, 11}) {
        for (int d : {3, 4, 8}) {
            const std::vector<double> want = pe_oracle(pos, d);
            const std::vector<double> have = qvr::sinusoidal_position(pos, d);
            REQUIRE(have.size() == want.size());
            for (std::size_t i = 0; i < want.size(); ++i) {
                CHECK(have[i] == doctest::Approx(want[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("the joint sequence lays out roles and positions per segment") {
    const int d = 4;
    QueryFeatures q = make_query(d, 2, 1);
    VideoFeatures v = make_video(d, 2, 1, 2);
    qvr::HiddenSequence seq = qvr::build_input_sequence(q, v);

    REQUIRE(seq.length() == 5);
    REQUIRE(seq.tokens.rows() == d);
    const std::vector<qvr::TokenRole> roles = {
        qvr::TokenRole::QueryWord, qvr::TokenRole::QueryWord, qvr::TokenRole::BoxCentroid,
        qvr::TokenRole::BoxCentroid, qvr::TokenRole::TitleWord};
    CHECK(seq.roles == roles);

    const oracle::Mat want = assemble_joint(q, v);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < 5; ++j) {
            CHECK(seq.tokens.at(i, j) == doctest::Approx(want[i][j]).epsilon(1e-12));
        }
    }
    // Centroid columns are the raw features; no position got mixed in.
    for (int i = 0; i < d; ++i) {
        CHECK(seq.tokens.at(i, 2) == v.box_centroids.at(i, 0));
        CHECK(seq.tokens.at(i, 3) == v.box_centroids.at(i, 1));
    }
    // The title restarts its position count at zero: position 0 adds
    // sin(0)=0 to even rows and cos(0)=1 to odd rows.
    CHECK(seq.tokens.at(0, 4) == doctest::Approx(v.title_words.at(0, 0)).epsilon(1e-12));
    CHECK(seq.tokens.at(1, 4) == doctest::Approx(v.title_words.at(1, 0) + 1.0).epsilon(1e-12));
}

TEST_CASE("sequence assembly rejects malformed inputs") {
    QueryFeatures q = make_query(4, 2, 3);
    VideoFeatures no_tokens;
    no_tokens.id = 9;
    CHECK_THROWS_AS(qvr::build_input_sequence(q, no_tokens), qvr::InputError);

    VideoFeatures narrow = make_video(3, 2, 1, 4);
    CHECK_THROWS_AS(qvr::build_input_sequence(q, narrow), qvr::DimensionError);

    QueryFeatures empty;
    VideoFeatures v = make_video(4, 2, 1, 5);
    CHECK_THROWS_AS(qvr::build_input_sequence(empty, v), qvr::InputError);
    CHECK_THROWS_AS(qvr::build_query_embed_sequence(empty, ModelParams::init(tiny_geometry(), 1)),
                    qvr::InputError);
}

TEST_CASE("embedding sequences start with the class token") {
    ModelParams p = ModelParams::init(tiny_geometry(), 7);
    QueryFeatures q = make_query(4, 3, 6);
    qvr::HiddenSequence qs = qvr::build_query_embed_sequence(q, p);
    REQUIRE(qs.length() == 4);
    CHECK(qs.roles[0] == qvr::TokenRole::ClassToken);
    for (int i = 0; i < 4; ++i) CHECK(qs.tokens.at(i, 0) == p.class_token.at(i, 0));
    // Word columns carry their positions.
    const std::vector<double> pe1 = pe_oracle(1, 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(qs.tokens.at(i, 2) == doctest::Approx(q.words.at(i, 1) + pe1[i]).epsilon(1e-12));
    }

    VideoFeatures v = make_video(4, 2, 2, 8);
    qvr::HiddenSequence vs = qvr::build_video_embed_sequence(v, p);
    REQUIRE(vs.length() == 5);
    CHECK(vs.roles[0] == qvr::TokenRole::ClassToken);
    CHECK(vs.roles[1] == qvr::TokenRole::BoxCentroid);
    CHECK(vs.roles[3] == qvr::TokenRole::TitleWord);
    for (int i = 0; i < 4; ++i) CHECK(vs.tokens.at(i, 1) == v.box_centroids.at(i, 0));
}

TEST_CASE("every forward path matches straight-line recomputation") {
    for (std::uint64_t seed : {11ull, 12ull}) {
        ModelGeometry g = tiny_geometry();
        if (seed == 12ull) {
            // Second round exercises the input adapter and logit scaling.
            g.feature_dim = 5;
            g.d_model = 6;
            g.heads = 2;
            g.student_width = 4;
            g.scaled_logits = true;
        }
        ModelParams p = ModelParams::init(g, seed);
        QueryFeatures q = make_query(g.feature_dim, 2, seed + 1);
        VideoFeatures v = make_video(g.feature_dim, 2, 2, seed + 2);

        qvr::DualOutputs out = qvr::score_pair(q, v, p);
        CHECK(out.sim_cross == doctest::Approx(teacher_oracle(q, v, p)).epsilon(1e-10));
        CHECK(out.sim_cross_student ==
              doctest::Approx(student_oracle(q, v, p)).epsilon(1e-10));

        const std::vector<double> qe = embed_query_oracle(q, p);
        const std::vector<double> ve = embed_video_oracle(v, p);
        REQUIRE(out.query_embedding.size() == qe.size());
        for (std::size_t i = 0; i < qe.size(); ++i) {
            CHECK(out.query_embedding[i] == doctest::Approx(qe[i]).epsilon(1e-10));
            CHECK(out.video_embedding[i] == doctest::Approx(ve[i]).epsilon(1e-10));
        }
        CHECK(out.sim_embed == doctest::Approx(oracle::cosine(qe, ve)).epsilon(1e-10));
    }
}

TEST_CASE("videos missing one modality still score") {
    ModelParams p = ModelParams::init(tiny_geometry(), 21);
    QueryFeatures q = make_query(4, 2, 22);

    VideoFeatures titles_only = make_video(4, 0, 3, 23);
    qvr::DualOutputs a = qvr::score_pair(q, titles_only, p);
    CHECK(std::isfinite(a.sim_cross));
    CHECK(std::isfinite(a.sim_embed));
    CHECK(a.sim_cross == doctest::Approx(teacher_oracle(q, titles_only, p)).epsilon(1e-10));

    VideoFeatures boxes_only = make_video(4, 3, 0, 24);
    qvr::DualOutputs b = qvr::score_pair(q, boxes_only, p);
    CHECK(std::isfinite(b.sim_cross));
    const std::vector<double> ve = embed_video_oracle(boxes_only, p);
    for (std::size_t i = 0; i < ve.size(); ++i) {
        CHECK(b.video_embedding[i] == doctest::Approx(ve[i]).epsilon(1e-10));
    }
}

TEST_CASE("the pooled similarity head is selectable") {
    ModelGeometry g = tiny_geometry();
    g.head = qvr::SimilarityHead::InnerProductPool;
    ModelParams p = ModelParams::init(g, 31);
    QueryFeatures q = make_query(4, 2, 32);
    VideoFeatures v = make_video(4, 2, 1, 33);
    qvr::DualOutputs pooled = qvr::score_pair(q, v, p);
    CHECK(std::isfinite(pooled.sim_cross));
    CHECK(std::isfinite(pooled.sim_cross_student));
}

TEST_CASE("reordering box centroids changes nothing") {
    ModelParams p = ModelParams::init(tiny_geometry(), 41);
    QueryFeatures q = make_query(4, 2, 42);
    VideoFeatures v = make_video(4, 3, 1, 43);

    VideoFeatures shuffled = v;
    std::vector<double> perm(4 * 3);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) {
            const int src = (j + 1) % 3;
            perm[static_cast<std::size_t>(i) * 3 + j] = v.box_centroids.at(i, src);
        }
    }
    shuffled.box_centroids = Tensor::from_values({4, 3}, std::move(perm));

    qvr::DualOutputs a = qvr::score_pair(q, v, p);
    qvr::DualOutputs b = qvr::score_pair(q, shuffled, p);
    CHECK(a.sim_cross == doctest::Approx(b.sim_cross).epsilon(1e-12));
    CHECK(a.sim_embed == doctest::Approx(b.sim_embed).epsilon(1e-12));
    CHECK(a.sim_cross_student == doctest::Approx(b.sim_cross_student).epsilon(1e-12));
}

TEST_CASE("both embedding paths pull gradient through the shared trunk") {
    ModelParams p = ModelParams::init(tiny_geometry(), 51);
    QueryFeatures q = make_query(4, 2, 52);
    VideoFeatures v = make_video(4, 2, 1, 53);

    {
        p.zero_grad();
        qvr::Tape tape;
        tape.backward(qvr::forward_cross_path(q, v, p));
        CHECK(grad_mass(p.trunk[0].query_proj[0]) > 0.0);
        CHECK(grad_mass(p.cross_path[0].output_proj) > 0.0);
        CHECK(grad_mass(p.query_embed_path[0].output_proj) == 0.0);
        CHECK(grad_mass(p.student_adapter) == 0.0);
    }
    {
        p.zero_grad();
        qvr::Tape tape;
        Tensor sim = qvr::embed_similarity(qvr::forward_embed_query(q, p),
                                           qvr::forward_embed_video(v, p));
        tape.backward(sim);
        CHECK(grad_mass(p.trunk[0].query_proj[0]) > 0.0);
        CHECK(grad_mass(p.class_token) > 0.0);
        CHECK(grad_mass(p.query_embed_path[0].output_proj) > 0.0);
        CHECK(grad_mass(p.video_embed_path[0].output_proj) > 0.0);
        CHECK(grad_mass(p.cross_path[0].output_proj) == 0.0);
    }
    {
        p.zero_grad();
        qvr::Tape tape;
        tape.backward(qvr::forward_student(q, v, p));
        CHECK(grad_mass(p.student_adapter) > 0.0);
        CHECK(grad_mass(p.student_layers[0].key_proj[0]) > 0.0);
        CHECK(grad_mass(p.trunk[0].query_proj[0]) == 0.0);
    }
}

TEST_CASE("model gradients agree with finite differences") {
    ModelGeometry g = tiny_geometry();
    g.feature_dim = 5;  // force the input adapter into the graph
    ModelParams p = ModelParams::init(g, 61);
    QueryFeatures q = make_query(5, 2, 62);
    VideoFeatures v = make_video(5, 1, 1, 63);

    const auto objective = [&]() {
        Tensor cross = qvr::forward_cross_path(q, v, p);
        Tensor embed = qvr::embed_similarity(qvr::forward_embed_query(q, p),
                                             qvr::forward_embed_video(v, p));
        Tensor student = qvr::forward_student(q, v, p);
        return qvr::add(qvr::add(cross, qvr::scale(embed, 2.0)), qvr::scale(student, 3.0));
    };

    p.zero_grad();
    qvr::Tape tape;
    tape.backward(objective());

    // The objective composes ~1e3 flops per eval, so central differences at
    // h=1e-6 drown small gradient entries in roundoff; h=1e-5 keeps the
    // noise floor well under the tolerance.
    for (Tensor t : {p.input_adapter, p.trunk[0].query_proj[0], p.class_token,
                     p.student_adapter, p.cross_path[0].output_proj}) {
        const std::vector<double> want = oracle::fd_gradient(
            [&]() {
                qvr::NoTapeScope guard;
                return objective().item();
            },
            t, 1e-5);
        CHECK(oracle::max_gradient_gap(t.grad(), want) < 2e-5);
    }
}

TEST_CASE("initialization is deterministic per seed") {
    ModelParams a = ModelParams::init(tiny_geometry(), 71);
    ModelParams b = ModelParams::init(tiny_geometry(), 71);
    ModelParams c = ModelParams::init(tiny_geometry(), 72);
    CHECK(qvr::params_checksum(a) == qvr::params_checksum(b));
    CHECK(qvr::params_checksum(a) != qvr::params_checksum(c));
    CHECK(a.trunk[0].value_proj[0].values() == b.trunk[0].value_proj[0].values());

    ModelParams d = ModelParams::init(tiny_geometry(), 71);
    d.class_token.values()[0] += 0.5;
    CHECK(qvr::params_checksum(a) != qvr::params_checksum(d));
}

TEST_CASE("geometry validation names its constraints") {
    ModelGeometry g = tiny_geometry();
    g.heads = 3;  // does not divide d_model = 4
    CHECK_THROWS_AS(g.validate(), qvr::ConfigError);
    g = tiny_geometry();
    g.trunk_layers = 3;
    CHECK_THROWS_AS(g.validate(), qvr::ConfigError);
    g = tiny_geometry();
    g.feature_dim = 0;
    CHECK_THROWS_AS(g.validate(), qvr::ConfigError);
    g = tiny_geometry();
    g.student_heads = 3;
    CHECK_THROWS_AS(g.validate(), qvr::ConfigError);
    g = tiny_geometry();
    g.layers = 0;
    CHECK_THROWS_AS(g.validate(), qvr::ConfigError);
    CHECK_NOTHROW(ModelGeometry::desk_default().validate());
    CHECK_NOTHROW(ModelGeometry::production_scale().validate());
}

TEST_CASE("weights survive a save/load round trip") {
    TempDir tmp;
    ModelGeometry g = tiny_geometry();
    g.feature_dim = 5;
    g.scaled_logits = true;
    g.head = qvr::SimilarityHead::InnerProductPool;
    ModelParams p = ModelParams::init(g, 81);

    const std::string first = tmp.path("weights_a.bin");
    const std::string second = tmp.path("weights_b.bin");
    qvr::save_params(p, first);
    ModelParams loaded = qvr::load_params(first);

    CHECK(loaded.geometry.feature_dim == 5);
    CHECK(loaded.geometry.scaled_logits);
    CHECK(loaded.geometry.head == qvr::SimilarityHead::InnerProductPool);

    // Values come back float-rounded; a second save is then byte-identical.
    const auto params = p.parameters();
    const auto reparams = loaded.parameters();
    REQUIRE(params.size() == reparams.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(params[i].first == reparams[i].first);
        const auto& want = params[i].second.values();
        const auto& got = reparams[i].second.values();
        REQUIRE(want.size() == got.size());
        for (std::size_t j = 0; j < want.size(); ++j) {
            CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-6));
            CHECK(got[j] == static_cast<double>(static_cast<float>(want[j])));
        }
    }
    qvr::save_params(loaded, second);
    CHECK(read_file(first) == read_file(second));

    // Scores computed from reloaded weights match to float precision.
    QueryFeatures q = make_query(5, 2, 82);
    VideoFeatures v = make_video(5, 2, 1, 83);
    qvr::DualOutputs a = qvr::score_pair(q, v, p);
    qvr::DualOutputs b = qvr::score_pair(q, v, loaded);
    CHECK(a.sim_cross == doctest::Approx(b.sim_cross).epsilon(1e-5));
    CHECK(qvr::params_checksum(p) == qvr::params_checksum(loaded));
}

TEST_CASE("corrupted weight files fail with the right error") {
    TempDir tmp;
    ModelParams p = ModelParams::init(tiny_geometry(), 91);
    const std::string path = tmp.path("weights.bin");
    qvr::save_params(p, path);
    const std::string good = read_file(path);

    const std::string bad = tmp.path("bad.bin");

    std::string magic = good;
    magic[1] = 'X';
    write_file(bad, magic);
    CHECK_THROWS_AS(qvr::load_params(bad), qvr::FormatError);

    std::string version = good;
    version[4] = 9;
    write_file(bad, version);
    CHECK_THROWS_AS(qvr::load_params(bad), qvr::FormatError);

    // heads field at byte 16: 3 does not divide d_model = 4.
    std::string geometry = good;
    geometry[16] = 3;
    write_file(bad, geometry);
    CHECK_THROWS_AS(qvr::load_params(bad), qvr::FormatError);

    // Declared element count out of step with the header geometry.
    std::string count = good;
    count[44] = static_cast<char>(static_cast<unsigned char>(count[44]) + 1);
    write_file(bad, count);
    CHECK_THROWS_AS(qvr::load_params(bad), qvr::FormatError);

    write_file(bad, good.substr(0, good.size() - 8));
    CHECK_THROWS_AS(qvr::load_params(bad), qvr::IoError);

    write_file(bad, good + "xyz");
    CHECK_THROWS_AS(qvr::load_params(bad), qvr::FormatError);

    CHECK_THROWS_AS(qvr::load_params(tmp.path("missing.bin")), qvr::IoError);
}

TEST_CASE("the student is far cheaper than the teacher at production scale") {
    const ModelGeometry g = ModelGeometry::production_scale();
    const double teacher = qvr::teacher_flops(g, 3, 6);
    const double student = qvr::student_flops(g, 3, 6);
    CHECK(teacher > 0.0);
    CHECK(student > 0.0);
    CHECK(student / teacher < 0.25);

    // Cost grows with depth and token count.
    ModelGeometry deeper = g;
    deeper.layers = g.layers * 2;
    CHECK(qvr::teacher_flops(deeper, 3, 6) > teacher);
    CHECK(qvr::teacher_flops(g, 3, 12) > teacher);
    CHECK(qvr::student_flops(g, 3, 12) > student);
}
