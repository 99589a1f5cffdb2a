#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "qvr/errors.hpp"
#include "qvr/losses.hpp"

using qvr::Tensor;

TEST_CASE("well-separated scores cost nothing") {
    // Diagonal 1.0, everything else 0: both hinge directions clear the margin.
    Tensor s = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(qvr::triplet_loss(s, 0.2).item() == 0.0);
}

TEST_CASE("an all-equal score matrix pays the margin everywhere") {
    Tensor s = Tensor::full({2, 2}, 0.5);
    // Four active hinges, each exactly at the margin.
    CHECK(qvr::triplet_loss(s, 0.2).item() == doctest::Approx(0.8).epsilon(1e-12));
    Tensor s3 = Tensor::full({3, 3}, -1.25);
    // 3 anchors x 2 others x 2 directions = 12 terms.
    CHECK(qvr::triplet_loss(s3, 0.2).item() == doctest::Approx(2.4).epsilon(1e-12));
}

TEST_CASE("a hand-worked asymmetric case") {
    // Row = video, column = query. Anchor 1 is beaten in both directions.
    Tensor s = Tensor::from_values({2, 2}, {0.9, 0.3, 0.6, 0.2});
    // a=1: row hinge 0.2 - 0.2 + 0.6, column hinge 0.2 - 0.2 + 0.3.
    CHECK(qvr::triplet_loss(s, 0.2).item() == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("the loss ignores a constant shift and transposition") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(16);
    for (double& x : v) x = dist(rng);
    Tensor s = Tensor::from_values({4, 4}, v);
    const double base = qvr::triplet_loss(s, 0.2).item();

    CHECK(qvr::triplet_loss(qvr::add_scalar(s, 3.7), 0.2).item() ==
          doctest::Approx(base).epsilon(1e-10));
    CHECK(qvr::triplet_loss(qvr::transpose(s), 0.2).item() ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("a larger margin never costs less") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(9);
    for (double& x : v) x = dist(rng);
    Tensor s = Tensor::from_values({3, 3}, v);
    double prev = qvr::triplet_loss(s, 0.0).item();
    for (double margin : {0.1, 0.2, 0.5, 1.0, 2.0}) {
        const double cur = qvr::triplet_loss(s, margin).item();
        CHECK(cur >= prev);
        prev = cur;
    }
    // With a huge margin every one of the 12 hinges is active and linear.
    const double huge = qvr::triplet_loss(s, 100.0).item();
    double want = 0.0;
    auto at = [&](int r, int c) { return v[static_cast<std::size_t>(r) * 3 + c]; };
    for (int a = 0; a < 3; ++a) {
        for (int j = 0; j < 3; ++j) {
            if (j == a) continue;
            want += 100.0 - at(a, a) + at(a, j);
            want += 100.0 - at(a, a) + at(j, a);
        }
    }
    CHECK(huge == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("score matrices must be square with at least two pairs") {
    CHECK_THROWS_AS(qvr::triplet_loss(Tensor::zeros({2, 3}), 0.2), qvr::DimensionError);
    CHECK_THROWS_AS(qvr::triplet_loss(Tensor::zeros({3}), 0.2), qvr::DimensionError);
    CHECK_THROWS_AS(qvr::triplet_loss(Tensor::zeros({1, 1}), 0.2), qvr::InputError);
}

TEST_CASE("triplet gradients match finite differences away from kinks") {
    // Entries picked so no hinge argument lands near zero.
    Tensor s = Tensor::from_values({3, 3},
                                   {0.80, 0.30, 0.95, 0.10, 0.55, 0.40, 0.70, 0.05, 0.20},
                                   true);
    qvr::Tape tape;
    tape.backward(qvr::triplet_loss(s, 0.2));
    const std::vector<double> want = oracle::fd_gradient(
        [&]() {
            qvr::NoTapeScope guard;
            return qvr::triplet_loss(s, 0.2).item();
        },
        s);
    CHECK(oracle::max_gradient_gap(s.grad(), want) < 2e-6);
}

TEST_CASE("the subgradient at the kink is zero") {
    // margin - s(0,0) + s(0,1) == 0 exactly: that hinge must stay silent.
    Tensor s = Tensor::from_values({2, 2}, {0.5, 0.3, -0.5, 0.5}, true);
    qvr::Tape tape;
    tape.backward(qvr::triplet_loss(s, 0.2));
    // Active terms: only (1,1) vs (0,1) column hinge and (1,1) vs (1,0) row
    // hinge: 0.2 - 0.5 + 0.3 == 0 (kink, silent), 0.2 - 0.5 - 0.5 < 0,
    // 0.2 - 0.5 + 0.3 == 0 (kink), 0.2 - 0.5 - 0.5 < 0. All silent.
    for (double g : s.grad()) CHECK(g == 0.0);
}

TEST_CASE("negative hinge terms add up and differentiate") {
    Tensor pos = Tensor::scalar(0.5, true);
    std::vector<Tensor> negs = {Tensor::scalar(0.2, true), Tensor::scalar(0.45, true),
                                Tensor::scalar(0.9, true)};
    qvr::Tape tape;
    Tensor loss = qvr::negative_hinge_sum(pos, negs, 0.2);
    CHECK(loss.item() == doctest::Approx(0.75).epsilon(1e-12));
    tape.backward(loss);
    // Two active hinges pull the positive down by one each.
    CHECK(pos.grad()[0] == doctest::Approx(-2.0));
    CHECK(negs[0].grad()[0] == 0.0);
    CHECK(negs[1].grad()[0] == doctest::Approx(1.0));
    CHECK(negs[2].grad()[0] == doctest::Approx(1.0));

    CHECK(qvr::negative_hinge_sum(pos, {}, 0.2).item() == 0.0);
}

TEST_CASE("dual loss weighs the embedding term") {
    Tensor cross = Tensor::scalar(1.5);
    Tensor embed = Tensor::scalar(0.8);
    CHECK(qvr::dual_loss(cross, embed, 0.5).item() == doctest::Approx(1.9).epsilon(1e-12));
    CHECK(qvr::dual_loss(cross, embed, 0.0).item() == doctest::Approx(1.5).epsilon(1e-12));
    CHECK_THROWS_AS(qvr::dual_loss(Tensor::zeros({2}), embed, 0.5), qvr::DimensionError);
}

TEST_CASE("distillation adds the mean squared similarity gap") {
    Tensor student_loss = Tensor::scalar(1.0);
    const std::vector<double> teacher = {1.0, -0.5};
    const std::vector<Tensor> student = {Tensor::scalar(0.5), Tensor::scalar(-0.5)};
    // MSE = ((0.5-1)^2 + 0) / 2 = 0.125; loss = 1 + 0.3 * 0.125.
    CHECK(qvr::distill_loss(student_loss, teacher, student, 0.3).item() ==
          doctest::Approx(1.0375).epsilon(1e-12));

    CHECK_THROWS_AS(qvr::distill_loss(student_loss, {1.0}, student, 0.3), qvr::InputError);
    CHECK_THROWS_AS(qvr::distill_loss(student_loss, {}, {}, 0.3), qvr::InputError);
}

TEST_CASE("teacher similarities are constants to the distillation term") {
    // The teacher score is produced by a differentiable graph, but only its
    // numeric value crosses into the distillation loss.
    Tensor teacher_param = Tensor::scalar(0.9, true);
    Tensor student_param = Tensor::scalar(0.2, true);
    qvr::Tape tape;
    Tensor teacher_sim = qvr::scale(teacher_param, 2.0);    // 1.8
    Tensor student_sim = qvr::scale(student_param, 1.0);    // 0.2
    Tensor loss = qvr::distill_loss(Tensor::scalar(0.0), {teacher_sim.item()},
                                    {student_sim}, 0.3);
    tape.backward(loss);
    CHECK(teacher_param.grad()[0] == 0.0);
    // d/ds of 0.3 * (s - 1.8)^2 = 0.6 * (0.2 - 1.8) = -0.96.
    CHECK(student_param.grad()[0] == doctest::Approx(-0.96).epsilon(1e-12));
}

TEST_CASE("total loss composes the two objectives") {
    CHECK(qvr::total_loss(Tensor::scalar(2.0), Tensor::scalar(1.0), 0.5).item() ==
          doctest::Approx(2.5).epsilon(1e-12));
    CHECK_THROWS_AS(qvr::total_loss(Tensor::zeros({2}), Tensor::scalar(1.0), 0.5),
                    qvr::DimensionError);
}

TEST_CASE("the composed objective differentiates end to end") {
    // Teacher scores, embedding scores and student scores each feed their own
    // loss; the teacher side of the MSE is detached by construction.
    Tensor cross_scores = Tensor::from_values({2, 2}, {0.82, 0.33, 0.11, 0.64}, true);
    Tensor embed_scores = Tensor::from_values({2, 2}, {0.55, -0.15, 0.25, 0.75}, true);
    Tensor student_scores = Tensor::from_values({2, 2}, {0.42, 0.13, -0.28, 0.51}, true);
    const qvr::LossConfig cfg;

    // Snapshot the teacher targets once: the trainer hands plain doubles to
    // the distillation term, so finite differences must not see them move.
    const std::vector<double> teacher_sims(cross_scores.values().begin(),
                                           cross_scores.values().end());

    const auto build = [&]() {
        Tensor cross_loss = qvr::triplet_loss(cross_scores, cfg.margin);
        Tensor embed_loss = qvr::triplet_loss(embed_scores, cfg.margin);
        Tensor student_loss = qvr::triplet_loss(student_scores, cfg.margin);
        std::vector<Tensor> student_sims;
        for (std::size_t i = 0; i < 4; ++i) {
            student_sims.push_back(qvr::element(student_scores, i));
        }
        Tensor dual = qvr::dual_loss(cross_loss, embed_loss, cfg.lambda);
        Tensor distill = qvr::distill_loss(student_loss, teacher_sims, student_sims, cfg.gamma);
        return qvr::total_loss(dual, distill, cfg.beta);
    };

    qvr::Tape tape;
    tape.backward(build());
    for (Tensor t : {cross_scores, embed_scores, student_scores}) {
        const std::vector<double> want = oracle::fd_gradient(
            [&]() {
                qvr::NoTapeScope guard;
                return build().item();
            },
            t);
        CHECK(oracle::max_gradient_gap(t.grad(), want) < 2e-6);
    }
}
