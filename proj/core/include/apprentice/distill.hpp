#pragma once

#include <optional>

#include "apprentice/ops.hpp"

namespace apprentice {

// Weights of the joint training loss
//   L = alpha*H(y, p_teacher) + beta*H(y, p_student) + gamma*H(soft_targets, p_student)
// where H is cross-entropy and soft targets are the softmax of the teacher
// logits divided by the temperature tau.
struct DistillConfig {
    double alpha = 1.0;
    double beta = 0.5;
    double gamma = 0.5;
    double tau = 1.0;

    void validate() const {
        if (alpha < 0 || beta < 0 || gamma < 0)
            throw ConfigError("distill weights must be non-negative");
        if (alpha == 0 && beta == 0 && gamma == 0)
            throw ConfigError("at least one of distill.alpha/beta/gamma must be nonzero");
        if (tau <= 0) throw ConfigError("distill.tau must be positive");
    }
};

// Logits and their softmax, kept together so loss code can use either view.
template <typename Real>
struct Prediction {
    TensorPtr<Real> logits;
    TensorPtr<Real> probs;

    static Prediction from_logits(Tape<Real>& tape, const TensorPtr<Real>& z) {
        return Prediction{z, softmax(tape, z)};
    }
};

// softmax(z / tau); the temperature is applied to a detached copy, so soft
// targets never feed gradients back into their producer.
template <typename Real>
TensorPtr<Real> soft_targets(Tape<Real>& tape, const TensorPtr<Real>& teacher_logits, Real tau) {
    if (tau <= Real(0)) throw ShapeError(cat("temperature must be positive, got ", tau));
    return softmax(tape, scale(tape, detach(teacher_logits), Real(1) / tau));
}

template <typename Real>
struct LossBreakdown {
    TensorPtr<Real> total;
    std::optional<Real> teacher_ce;
    std::optional<Real> student_ce;
    std::optional<Real> distill_ce;
};

template <typename Real>
void require_one_hot(const Tensor<Real>& y) {
    const std::size_t c = y.shape.back();
    const std::size_t rows = y.numel() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const Real v = y.data[r * c + j];
            if (v == Real(1))
                ++ones;
            else if (v != Real(0))
                throw ShapeError(cat("labels must be one-hot when hard-label terms are enabled; "
                                     "row ", r, " holds ", v));
        }
        if (ones != 1)
            throw ShapeError(cat("labels must be one-hot when hard-label terms are enabled; "
                                 "row ", r, " holds ", ones, " ones"));
    }
}

// Core combination once the three target distributions exist. Kept separate
// so tests can inject degenerate targets (e.g. exact one-hot soft targets)
// without constructing infinite logits.
template <typename Real>
LossBreakdown<Real> apprentice_loss_from_parts(Tape<Real>& tape, const TensorPtr<Real>& onehot,
                                               const TensorPtr<Real>& teacher_probs,
                                               const TensorPtr<Real>& student_probs,
                                               const TensorPtr<Real>& soft,
                                               const DistillConfig& cfg, bool teacher_trainable) {
    cfg.validate();
    if (teacher_probs->shape != student_probs->shape || onehot->shape != student_probs->shape)
        throw ShapeError(cat("loss batch mismatch: labels ", shape_str(onehot->shape),
                             ", teacher ", shape_str(teacher_probs->shape), ", student ",
                             shape_str(student_probs->shape)));
    const bool teacher_term = teacher_trainable && cfg.alpha > 0;
    if (teacher_term || cfg.beta > 0) require_one_hot(*onehot);

    LossBreakdown<Real> out;
    std::vector<std::pair<Real, TensorPtr<Real>>> terms;
    if (teacher_term) {
        auto t = cross_entropy(tape, onehot, teacher_probs);
        out.teacher_ce = t->data[0];
        terms.push_back({static_cast<Real>(cfg.alpha), t});
    }
    if (cfg.beta > 0) {
        auto t = cross_entropy(tape, onehot, student_probs);
        out.student_ce = t->data[0];
        terms.push_back({static_cast<Real>(cfg.beta), t});
    }
    if (cfg.gamma > 0) {
        if (!soft) throw ShapeError("distill term enabled but no soft targets given");
        if (soft->shape != student_probs->shape)
            throw ShapeError(cat("soft target shape ", shape_str(soft->shape),
                                 " does not match student ", shape_str(student_probs->shape)));
        auto t = cross_entropy(tape, soft, student_probs);
        out.distill_ce = t->data[0];
        terms.push_back({static_cast<Real>(cfg.gamma), t});
    }
    if (terms.empty()) {
        // alpha-only config with a frozen teacher: nothing to optimize.
        throw ConfigError("loss has no active terms (alpha-only with frozen teacher)");
    }
    out.total = weighted_sum(tape, terms);
    return out;
}

// The joint loss. When teacher_trainable is false the teacher hard-label
// term is dropped entirely; the distillation term always uses detached
// teacher logits, so no gradient reaches the teacher through it in either
// mode.
template <typename Real>
LossBreakdown<Real> apprentice_loss(Tape<Real>& tape, const TensorPtr<Real>& onehot,
                                    const Prediction<Real>& teacher,
                                    const Prediction<Real>& student, const DistillConfig& cfg,
                                    bool teacher_trainable) {
    TensorPtr<Real> soft;
    if (cfg.gamma > 0) soft = soft_targets(tape, teacher.logits, static_cast<Real>(cfg.tau));
    return apprentice_loss_from_parts(tape, onehot, teacher.probs, student.probs, soft, cfg,
                                      teacher_trainable);
}

} // namespace apprentice
