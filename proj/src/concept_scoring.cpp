#include "cbmfix/concept_scoring.hpp"

namespace cbmfix {

ConceptBottleneck make_bottleneck(std::vector<std::string> names, const Matrix& embeddings) {
    if (names.size() != embeddings.rows()) {
        throw DimensionError("bottleneck: " + std::to_string(names.size()) + " names but " +
                             std::to_string(embeddings.rows()) + " embedding rows");
    }
    return ConceptBottleneck{std::move(names), row_l2_normalize(embeddings)};
}

ConceptBottleneck load_bottleneck(const std::filesystem::path& concepts_txt,
                                  const std::filesystem::path& embeddings_tensor) {
    return make_bottleneck(load_lines(concepts_txt), load_matrix(embeddings_tensor));
}

void save_bottleneck(const ConceptBottleneck& b, const std::filesystem::path& concepts_txt,
                     const std::filesystem::path& embeddings_tensor) {
    save_lines(b.names, concepts_txt);
    save_matrix(b.text_embeddings, embeddings_tensor);
}

Matrix score(const ConceptStack& stack, const ConceptBottleneck& bottleneck) {
    if (stack.dim() != bottleneck.dim()) {
        throw DimensionError("score: stack dim " + std::to_string(stack.dim()) + " != text embedding dim " +
                             std::to_string(bottleneck.dim()));
    }
    if (stack.concepts() == 0) throw InvalidArgument("score: stack has no visual concepts");
    const std::size_t d = stack.dim();
    const double inv_n = 1.0 / static_cast<double>(stack.concepts());
    // The mean embedding times E^T equals the mean of the per-concept products.
    Matrix mean(stack.samples(), d);
    for (std::size_t i = 0; i < stack.samples(); ++i) {
        auto dst = mean.row(i);
        for (std::size_t k = 0; k < stack.concepts(); ++k) {
            auto src = stack.at(i, k);
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        for (double& v : dst) v *= inv_n;
    }
    return matmul_bt(mean, bottleneck.text_embeddings);
}

}  // namespace cbmfix
