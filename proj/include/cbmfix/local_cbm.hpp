#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cbmfix/blackbox_head.hpp"
#include "cbmfix/confusion_miner.hpp"

namespace cbmfix {

/// Linear concept bottleneck over the confused classes: P_cbm = S W^T.
struct CbmModel {
    Matrix weight;  // N_gamma x N_c, rows follow gamma.gamma
    ConfusedSet gamma;

    std::size_t n_concepts() const { return weight.cols(); }
};

struct CbmFitConfig {
    double lr = 1e-4;
    std::size_t epochs = 200;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
};

struct CbmFitResult {
    CbmModel model;
    // Full-data loss before training, then after each epoch.
    std::vector<double> loss_curve;
};

/// Weights drawn uniform(-0.01, 0.01) from `seed`.
CbmModel init_cbm(const ConfusedSet& gamma, std::size_t n_concepts, std::uint64_t seed);

Matrix cbm_forward(const CbmModel& model, const Matrix& scores);

/// Black-box logits restricted to the Γ columns, in Γ order.
Matrix gamma_targets(const BlackBoxHead& head, const Matrix& features, const ConfusedSet& gamma);
Matrix gamma_columns(const Matrix& logits, const ConfusedSet& gamma);

/// Batch mean of (1/N_gamma) * ||p_cbm[i] - target[i]||_2.
double approximation_loss(const Matrix& p_cbm, const Matrix& targets);

/// d approximation_loss / dW for the given batch. Rows with a zero residual
/// contribute the zero subgradient.
Matrix approximation_grad(const CbmModel& model, const Matrix& scores, const Matrix& targets);

CbmFitResult fit(const CbmModel& init, const Matrix& scores, const Matrix& targets, const CbmFitConfig& cfg);
CbmFitResult fit(const CbmModel& init, const Matrix& scores, const BlackBoxHead& head, const Matrix& features,
                 const CbmFitConfig& cfg);

/// Argmax agreement rate between the CBM and the Γ-restricted black box.
double fidelity(const CbmModel& model, const Matrix& scores, const Matrix& targets);
double fidelity(const CbmModel& model, const Matrix& scores, const BlackBoxHead& head, const Matrix& features);

void save_cbm(const CbmModel& model, const std::filesystem::path& dir, const std::string& prefix = "cbm");
CbmModel load_cbm(const std::filesystem::path& dir, const std::string& prefix = "cbm");

}  // namespace cbmfix
