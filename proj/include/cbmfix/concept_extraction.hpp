#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "cbmfix/tensor_store.hpp"

namespace cbmfix {

/// Visual concepts found by factorizing clamped features A ~= H * U.
struct NmfModel {
    Matrix basis;  // n x p, entries >= 0; row k is concept direction u_k
    std::size_t iterations_run = 0;
    double final_error = 0.0;  // ||A - H U||_F
    std::uint64_t seed = 0;
    // Error after every multiplicative update, then once more after the final
    // exact coefficient solve.
    std::vector<double> error_history;

    std::size_t n_concepts() const { return basis.rows(); }
    std::size_t feature_dim() const { return basis.cols(); }
};

struct ConceptCoefficients {
    Matrix coeffs;  // N x n, entries >= 0
};

/// Per-image, per-concept embedding stack [N x n x d].
class ConceptStack {
public:
    ConceptStack() = default;
    ConceptStack(std::size_t samples, std::size_t concepts, std::size_t dim);

    std::size_t samples() const { return samples_; }
    std::size_t concepts() const { return concepts_; }
    std::size_t dim() const { return dim_; }

    std::span<double> at(std::size_t i, std::size_t k) { return {data_.data() + (i * concepts_ + k) * dim_, dim_}; }
    std::span<const double> at(std::size_t i, std::size_t k) const {
        return {data_.data() + (i * concepts_ + k) * dim_, dim_};
    }

private:
    std::size_t samples_ = 0, concepts_ = 0, dim_ = 0;
    std::vector<double> data_;
};

/// Lee-Seung multiplicative-update NMF on max(features, 0).
///
/// Basis and coefficients start uniform in (0, 1] from `seed`. After `iters`
/// alternating updates the coefficients are replaced by the exact
/// non-negative least-squares solution for the final basis, which can only
/// lower the objective and makes the fitted coefficients agree with
/// project_coeffs() on the same rows.
std::pair<NmfModel, ConceptCoefficients> fit_nmf(const Matrix& features, std::size_t n, std::size_t iters,
                                                 std::uint64_t seed);

/// Coefficients of new rows against a frozen basis (exact NNLS per row).
ConceptCoefficients project_coeffs(const NmfModel& model, const Matrix& features);

/// Non-negative least squares min_h ||x - h U||_2, h >= 0, via Lawson-Hanson
/// active sets on the Gram matrix U U^T.
std::vector<double> nnls_row(const Matrix& gram, std::span<const double> rhs);

/// embedding(i, k) = projector * (coeffs[i, k] * basis[k]); projector is d x p.
ConceptStack visual_concept_embeddings(const NmfModel& model, const ConceptCoefficients& coeffs,
                                       const Matrix& projector);

Matrix clamp_nonnegative(const Matrix& m);

void save_nmf(const NmfModel& model, const std::filesystem::path& dir);
NmfModel load_nmf(const std::filesystem::path& dir);

}  // namespace cbmfix
