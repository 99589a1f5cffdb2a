#pragma once

#include <vector>

#include "qvr/tensor.hpp"

namespace qvr {

// Loss weights. margin is the triplet hinge margin; lambda weighs the
// embedding-path loss against the cross-attention loss; gamma weighs the
// teacher-student MSE inside the distillation loss; beta weighs the whole
// distillation loss in the final objective.
struct LossConfig {
    double margin = 0.2;
    double lambda = 0.5;
    double gamma = 0.3;
    double beta = 0.5;
};

// Two-sided triplet hinge over a square in-batch score matrix S [K x K] whose
// diagonal holds the ground-truth pairs (row = video, column = sentence):
//
//   sum_k sum_{j != k} [m - S(k,k) + S(k,j)]_+  +  [m - S(k,k) + S(j,k)]_+
//
// The value is invariant to adding a constant to every score and to
// transposing S. Requires K >= 2; there are no triplets otherwise.
Tensor triplet_loss(const Tensor& scores, double margin);

// Hinge terms for extra negatives that live outside the square batch matrix:
// sum_i [m - positive + negatives[i]]_+ with all operands scalar tensors.
Tensor negative_hinge_sum(const Tensor& positive_score,
                          const std::vector<Tensor>& negative_scores, double margin);

// L_dual = L_cross + lambda * L_embed.
Tensor dual_loss(const Tensor& cross_loss, const Tensor& embed_loss, double lambda);

// L_distill = L_cross_student + gamma * MSE(teacher sims, student sims).
// Teacher similarities enter as plain numbers: the distillation target is a
// constant with respect to the teacher, so no gradient flows back into it.
Tensor distill_loss(const Tensor& student_cross_loss,
                    const std::vector<double>& teacher_sims,
                    const std::vector<Tensor>& student_sims, double gamma);

// L = L_dual + beta * L_distill.
Tensor total_loss(const Tensor& dual, const Tensor& distill, double beta);

}  // namespace qvr
