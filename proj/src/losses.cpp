#include "qvr/losses.hpp"

#include <algorithm>
#include <string>

#include "qvr/errors.hpp"

namespace qvr {

Tensor triplet_loss(const Tensor& scores, double margin) {
    if (scores.ndim() != 2 || scores.rows() != scores.cols()) {
        throw DimensionError("triplet_loss: score matrix must be square, got " +
                             scores.shape_str());
    }
    const int k = scores.rows();
    if (k < 2) {
        throw InputError("triplet_loss: need at least 2 in-batch pairs, got " +
                         std::to_string(k));
    }
    const std::vector<double>& s = scores.values();
    auto at = [&](int r, int c) { return s[static_cast<std::size_t>(r) * k + c]; };
    double total = 0.0;
    for (int a = 0; a < k; ++a) {
        for (int j = 0; j < k; ++j) {
            if (j == a) continue;
            total += std::max(0.0, margin - at(a, a) + at(a, j));
            total += std::max(0.0, margin - at(a, a) + at(j, a));
        }
    }
    const bool rec = Tape::active() && scores.requires_grad();
    Tensor y = Tensor::from_values({1}, {total}, rec);
    if (rec) {
        Tape::active()->record([scores, y, margin, k]() mutable {
            const double g = y.grad()[0];
            std::vector<double>& gs = scores.grad();
            const std::vector<double>& sv = scores.values();
            auto val = [&](int r, int c) {
                return sv[static_cast<std::size_t>(r) * k + c];
            };
            auto slot = [&](int r, int c) -> double& {
                return gs[static_cast<std::size_t>(r) * k + c];
            };
            // Active hinges only; the kink itself passes nothing.
            for (int a = 0; a < k; ++a) {
                for (int j = 0; j < k; ++j) {
                    if (j == a) continue;
                    if (margin - val(a, a) + val(a, j) > 0.0) {
                        slot(a, j) += g;
                        slot(a, a) -= g;
                    }
                    if (margin - val(a, a) + val(j, a) > 0.0) {
                        slot(j, a) += g;
                        slot(a, a) -= g;
                    }
                }
            }
        });
    }
    return y;
}

Tensor negative_hinge_sum(const Tensor& positive_score,
                          const std::vector<Tensor>& negative_scores, double margin) {
    Tensor total = Tensor::scalar(0.0);
    for (const Tensor& neg : negative_scores) {
        Tensor term = relu(add_scalar(sub(neg, positive_score), margin));
        total = add(total, term);
    }
    return total;
}

Tensor dual_loss(const Tensor& cross_loss, const Tensor& embed_loss, double lambda) {
    if (cross_loss.size() != 1 || embed_loss.size() != 1) {
        throw DimensionError("dual_loss: both losses must be scalar");
    }
    return add(cross_loss, scale(embed_loss, lambda));
}

Tensor distill_loss(const Tensor& student_cross_loss,
                    const std::vector<double>& teacher_sims,
                    const std::vector<Tensor>& student_sims, double gamma) {
    if (student_cross_loss.size() != 1) {
        throw DimensionError("distill_loss: student loss must be scalar");
    }
    if (teacher_sims.size() != student_sims.size()) {
        throw InputError("distill_loss: " + std::to_string(teacher_sims.size()) +
                         " teacher sims vs " + std::to_string(student_sims.size()) +
                         " student sims");
    }
    if (teacher_sims.empty()) {
        throw InputError("distill_loss: no similarity pairs to match");
    }
    Tensor sq_sum = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < student_sims.size(); ++i) {
        Tensor diff = add_scalar(student_sims[i], -teacher_sims[i]);
        sq_sum = add(sq_sum, mul(diff, diff));
    }
    Tensor mse = scale(sq_sum, 1.0 / static_cast<double>(student_sims.size()));
    return add(student_cross_loss, scale(mse, gamma));
}

Tensor total_loss(const Tensor& dual, const Tensor& distill, double beta) {
    if (dual.size() != 1 || distill.size() != 1) {
        throw DimensionError("total_loss: both losses must be scalar");
    }
    return add(dual, scale(distill, beta));
}

}  // namespace qvr
