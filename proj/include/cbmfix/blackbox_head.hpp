#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbmfix/tensor_store.hpp"

namespace cbmfix {

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Precomputed hidden-layer features g(x) of one dataset split.
struct FeatureSet {
    Matrix features;          // N x p
    std::vector<int> labels;  // N, each in [0, n_class)
    Split split = Split::train;

    std::size_t size() const { return labels.size(); }
    // Throws DimensionError / InvalidArgument when the invariants fail.
    void validate(std::size_t n_class) const;
};

FeatureSet subset(const FeatureSet& fs, std::span<const std::size_t> rows);

/// Linear classification head h mapping p features to n_class logits.
struct BlackBoxHead {
    Matrix weights;            // n_class x p
    std::vector<double> bias;  // n_class

    BlackBoxHead() = default;
    BlackBoxHead(Matrix w, std::vector<double> b);

    std::size_t n_class() const { return weights.rows(); }
    std::size_t feature_dim() const { return weights.cols(); }

    friend bool operator==(const BlackBoxHead&, const BlackBoxHead&) = default;
};

Matrix forward(const BlackBoxHead& head, const Matrix& features);

/// Max-shifted temperature softmax.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> v);
std::vector<int> predict(const BlackBoxHead& head, const Matrix& features);
std::vector<int> argmax_rows(const Matrix& logits);

/// One SGD step given dLoss/dlogits for every row of `features`; the update
/// is averaged over the rows.
BlackBoxHead fine_tune_step(const BlackBoxHead& head, const Matrix& features, const Matrix& grad_logits, double lr);

/// Fraction of samples whose argmax matches the label, optionally restricted
/// to samples whose label is in `class_filter`. Throws if nothing is left.
double accuracy(const BlackBoxHead& head, const FeatureSet& fs,
                std::optional<std::span<const int>> class_filter = std::nullopt);
double accuracy(std::span<const int> predictions, std::span<const int> labels,
                std::optional<std::span<const int>> class_filter = std::nullopt);

// <prefix>_weights.f64, <prefix>_bias.f64 and <prefix>.json {n_class, p}.
void save_head(const BlackBoxHead& head, const std::filesystem::path& dir, const std::string& prefix = "head");
BlackBoxHead load_head(const std::filesystem::path& dir, const std::string& prefix = "head");

}  // namespace cbmfix
