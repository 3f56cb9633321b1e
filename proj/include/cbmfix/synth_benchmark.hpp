#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbmfix/blackbox_head.hpp"
#include "cbmfix/concept_scoring.hpp"

namespace cbmfix {

/// Parameters of the synthetic benchmark.
///
/// Every class owns `cores_per_class` concepts. Class `spurious_a` also always
/// carries one shared concept; in the train split class `spurious_b` never
/// does, while in val/test it does with probability `spurious_rate_eval`.
/// A head fit on train therefore learns "shared concept => a" and confuses
/// b with a on held-out data. Class a also carries `pair_shared_cores` of
/// b's cores, so the shared concept is what separates the pair in train.
struct SynthSpec {
    std::size_t n_class = 20;
    std::size_t p = 256;  // feature dim, >= d
    std::size_t d = 128;  // concept embedding dim
    std::size_t cores_per_class = 3;
    double core_weight_min = 0.0;  // per-sample core weights ~ U(min, max)
    double core_weight_max = 1.4;
    std::size_t n_distractors = 20;
    std::size_t concept_support = 3;  // nonzero embedding dims per concept
    int spurious_a = 4;
    int spurious_b = 11;
    double spurious_strength = 3.0;
    double spurious_rate_eval = 0.8;
    std::size_t pair_shared_cores = 1;  // cores of spurious_b that spurious_a also carries
    std::size_t train_per_class = 60;
    std::size_t val_per_class = 40;
    std::size_t test_per_class = 40;
    double noise_sigma = 0.5;
    double clutter = 1.0;  // max weight of randomly co-occurring concepts
    std::size_t clutter_concepts = 3;
    double activation_scale = 300.0;
    std::size_t head_epochs = 300;
    double head_lr = 0.5;  // divided by the mean squared feature norm
    double head_l2 = 1e-4;
    std::size_t search_set_size = 30;
    std::uint64_t seed = 42;

    std::size_t n_true_concepts() const { return n_class * cores_per_class + 1; }
    std::size_t n_concepts() const { return n_true_concepts() + n_distractors; }
    void validate() const;
};

struct SynthData {
    FeatureSet train, val, test;
    ConceptBottleneck bottleneck;
    ConceptBottleneck search_set;  // disjoint names, usable for replacement
    Matrix projector;              // d x p, orthonormal rows
    std::vector<std::vector<std::size_t>> class_concepts;  // bottleneck ids per class
    std::size_t spurious_concept = 0;
    BlackBoxHead head;  // fit on train
};

SynthData generate(const SynthSpec& spec);

/// Multinomial logistic regression by full-batch gradient descent.
BlackBoxHead train_head(const FeatureSet& train, std::size_t n_class, std::size_t epochs, double lr, double l2);

/// Writes all pipeline inputs plus ground_truth.json and synth_spec.json.
void write_synth(const SynthData& data, const SynthSpec& spec, const std::filesystem::path& dir);

std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& text);

}  // namespace cbmfix
