#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cbmfix/blackbox_head.hpp"

namespace cbmfix {

struct PairCount {
    int a = 0;  // a < b
    int b = 0;
    long count = 0;  // counts[a][b] + counts[b][a]

    friend bool operator==(const PairCount&, const PairCount&) = default;
};

struct ConfusionRecord {
    Matrix counts;  // counts(true, predicted)
    // Non-increasing by count, ties by lexicographic (a, b); every a<b pair listed.
    std::vector<PairCount> pair_ranking;

    std::size_t n_class() const { return counts.rows(); }
};

/// The confused classes Γ in ascending class-id order. Position in `gamma`
/// is the row index of every Γ-indexed matrix downstream.
struct ConfusedSet {
    std::vector<int> gamma;

    ConfusedSet() = default;
    explicit ConfusedSet(std::vector<int> classes);

    std::size_t size() const { return gamma.size(); }
    bool contains(int cls) const;
    std::optional<std::size_t> row_of(int cls) const;
    std::vector<int> complement(std::size_t n_class) const;

    friend bool operator==(const ConfusedSet&, const ConfusedSet&) = default;
};

ConfusionRecord confusion_from_predictions(std::span<const int> labels, std::span<const int> predictions,
                                           std::size_t n_class);
ConfusionRecord build_confusion(const BlackBoxHead& head, const FeatureSet& val);

/// Union of classes in the top `k_pairs` pairs with a positive count, with
/// pairs dropped from the bottom while |Γ| > floor(max_fraction * n_class).
ConfusedSet select_confused(const ConfusionRecord& rec, std::size_t k_pairs, double max_fraction = 0.25);

std::string confusion_to_csv(const ConfusionRecord& rec);
std::string pair_ranking_to_csv(const ConfusionRecord& rec);
std::string confused_set_to_json(const ConfusedSet& set);
ConfusedSet confused_set_from_json(const std::string& text);

}  // namespace cbmfix
