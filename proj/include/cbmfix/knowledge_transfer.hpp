#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbmfix/local_cbm.hpp"

namespace cbmfix {

struct TeacherConfig {
    double t1 = 2.0;  // temperature on the intervened CBM logits
    double t2 = 1.5;  // temperature on the student (live head) logits
    double lr = 3e-7;
    std::size_t epochs = 10;
    std::size_t batch = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr double kLogEps = 1e-12;

/// Frozen model's probability mass on Γ, i.e. 1 - sum over Γ-complement.
double residual_coefficient(std::span<const double> p_org_probs, const ConfusedSet& gamma);

/// Teacher distribution over all classes: frozen softmax on Γ-complement,
/// pr * softmax(p_cbm_star / t1) placed at the Γ class ids.
std::vector<double> build_teacher(std::span<const double> p_cbm_star, std::span<const double> p_org_logits,
                                  const ConfusedSet& gamma, double t1);

std::vector<double> student(std::span<const double> logits, double t2);

/// -sum_k teacher_k log(softmax(logits / t2)_k + eps)
double distillation_loss(std::span<const double> teacher, std::span<const double> logits, double t2);
/// Exact gradient of distillation_loss with respect to the logits.
std::vector<double> distillation_grad(std::span<const double> teacher, std::span<const double> logits, double t2);

/// One teacher row per sample.
Matrix build_teachers(const Matrix& p_cbm_star, const Matrix& p_org_logits, const ConfusedSet& gamma, double t1);

struct TransferEpoch {
    std::size_t epoch = 0;
    double loss = 0.0;       // mean distillation loss over the set after the epoch
    double gamma_acc = 0.0;  // accuracy on Γ-labeled samples of the set
    double non_gamma_acc = 0.0;
};

struct TransferResult {
    BlackBoxHead head;
    std::vector<TransferEpoch> log;  // entry 0 is the state before training
};

/// Mean distillation loss of `head` against fixed teachers.
double transfer_loss(const BlackBoxHead& head, const Matrix& features, const Matrix& teachers, double t2);
/// Gradient of transfer_loss with respect to head weights and bias (as a head).
BlackBoxHead transfer_grad(const BlackBoxHead& head, const Matrix& features, const Matrix& teachers, double t2);

/// Distills the intervened CBM back into `head` over the validation set.
/// Teachers come from `frozen_copy` and `cbm_bar` only; neither is modified.
TransferResult transfer(const BlackBoxHead& head, const BlackBoxHead& frozen_copy, const CbmModel& cbm_bar,
                        const Matrix& val_scores, const FeatureSet& val, const TeacherConfig& cfg);

std::string transfer_log_to_json(const std::vector<TransferEpoch>& log);

}  // namespace cbmfix
