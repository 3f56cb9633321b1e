#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cbmfix/concept_extraction.hpp"

namespace cbmfix {

/// Named concepts with unit-norm text embeddings (N_c x d).
struct ConceptBottleneck {
    std::vector<std::string> names;
    Matrix text_embeddings;

    std::size_t size() const { return names.size(); }
    std::size_t dim() const { return text_embeddings.cols(); }
};

// Normalizes the embedding rows; throws if names and rows disagree.
ConceptBottleneck make_bottleneck(std::vector<std::string> names, const Matrix& embeddings);
ConceptBottleneck load_bottleneck(const std::filesystem::path& concepts_txt,
                                  const std::filesystem::path& embeddings_tensor);
void save_bottleneck(const ConceptBottleneck& b, const std::filesystem::path& concepts_txt,
                     const std::filesystem::path& embeddings_tensor);

/// S_i = (1/n) sum_k embedding(i, k) * E^T, one row per sample (N x N_c).
Matrix score(const ConceptStack& stack, const ConceptBottleneck& bottleneck);

}  // namespace cbmfix
