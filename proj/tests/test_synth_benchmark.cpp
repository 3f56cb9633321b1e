#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cbmfix/concept_extraction.hpp"
#include "cbmfix/confusion_miner.hpp"
#include "cbmfix/synth_benchmark.hpp"
#include "test_support.hpp"

using namespace cbmfix;

namespace {

const SynthData& default_data() {
    static const SynthData data = generate(SynthSpec{});
    return data;
}

}  // namespace

TEST_CASE("fixed seed gives bit-identical outputs") {
    SynthSpec spec;
    spec.n_class = 6;
    spec.spurious_a = 1;
    spec.spurious_b = 4;
    spec.head_epochs = 20;
    const SynthData a = generate(spec), b = generate(spec);
    CHECK(bit_equal(a.train.features, b.train.features));
    CHECK(bit_equal(a.test.features, b.test.features));
    CHECK(a.val.labels == b.val.labels);
    CHECK(a.head == b.head);
    CHECK(bit_equal(a.bottleneck.text_embeddings, b.bottleneck.text_embeddings));
    spec.seed += 1;
    CHECK_FALSE(bit_equal(generate(spec).train.features, a.train.features));
}

TEST_CASE("without noise or a shared concept the head is perfect") {
    SynthSpec spec;
    spec.noise_sigma = 0.0;
    spec.spurious_strength = 0.0;
    spec.clutter = 0.0;
    spec.pair_shared_cores = 0;
    const SynthData d = generate(spec);
    CHECK(accuracy(d.head, d.val) == 1.0);
    CHECK_THROWS_WITH_AS(select_confused(build_confusion(d.head, d.val), 1), doctest::Contains("nothing to intervene"),
                         InvalidArgument);
}

TEST_CASE("default spec confuses the planted pair most") {
    const SynthData& d = default_data();
    const SynthSpec spec;
    const auto rec = build_confusion(d.head, d.val);
    CHECK(rec.pair_ranking.front().a == spec.spurious_a);
    CHECK(rec.pair_ranking.front().b == spec.spurious_b);
    CHECK(rec.pair_ranking.front().count > rec.pair_ranking[1].count);
}

TEST_CASE("clamping negatives keeps at least 99% of the Frobenius mass") {
    const SynthData& d = default_data();
    for (const FeatureSet* fs : {&d.train, &d.val, &d.test}) {
        const double full = frobenius_norm(fs->features);
        const double kept = frobenius_norm(clamp_nonnegative(fs->features));
        CHECK(kept * kept >= 0.99 * full * full);
    }
}

TEST_CASE("the shared concept has the largest score gap between the pair and the rest") {
    const SynthData& d = default_data();
    const SynthSpec spec;
    // Scores through the generating projector: (M x) . e_j.
    const Matrix z = matmul_bt(d.val.features, d.projector);
    const Matrix s = matmul_bt(z, d.bottleneck.text_embeddings);
    const std::size_t nc = d.bottleneck.size();
    std::vector<double> in(nc, 0.0), out(nc, 0.0);
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < d.val.size(); ++i) {
        const int y = d.val.labels[i];
        const bool pair = y == spec.spurious_a || y == spec.spurious_b;
        (pair ? n_in : n_out)++;
        for (std::size_t j = 0; j < nc; ++j) (pair ? in : out)[j] += s(i, j);
    }
    std::size_t best = 0;
    double best_gap = -1e300;
    for (std::size_t j = 0; j < nc; ++j) {
        const double gap = in[j] / n_in - out[j] / n_out;
        if (gap > best_gap) {
            best_gap = gap;
            best = j;
        }
    }
    CHECK(best == d.spurious_concept);
}

TEST_CASE("ground truth bookkeeping") {
    const SynthData& d = default_data();
    const SynthSpec spec;
    CHECK(d.bottleneck.size() == spec.n_concepts());
    CHECK(d.class_concepts.size() == spec.n_class);
    CHECK(d.bottleneck.names[d.spurious_concept].rfind("shared_cue", 0) == 0);
    CHECK(d.projector.rows() == spec.d);
    CHECK(d.projector.cols() == spec.p);
    const Matrix mmt = matmul_bt(d.projector, d.projector);
    for (std::size_t i = 0; i < spec.d; ++i)
        for (std::size_t j = 0; j < spec.d; ++j) CHECK(std::abs(mmt(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-12);
    for (const auto& n : d.search_set.names)
        CHECK(std::find(d.bottleneck.names.begin(), d.bottleneck.names.end(), n) == d.bottleneck.names.end());
}

TEST_CASE("spec validation and JSON") {
    SynthSpec bad;
    bad.spurious_b = bad.spurious_a;
    CHECK_THROWS_AS(generate(bad), InvalidArgument);
    bad = SynthSpec{};
    bad.d = bad.p + 1;
    CHECK_THROWS_AS(generate(bad), InvalidArgument);
    bad = SynthSpec{};
    bad.spurious_a = 20;
    CHECK_THROWS_AS(generate(bad), InvalidArgument);
    bad = SynthSpec{};
    bad.noise_sigma = -1;
    CHECK_THROWS_AS(generate(bad), InvalidArgument);

    SynthSpec s;
    s.seed = 1234;
    s.noise_sigma = 0.25;
    const SynthSpec back = synth_spec_from_json(synth_spec_to_json(s));
    CHECK(back.seed == 1234);
    CHECK(back.noise_sigma == 0.25);
    CHECK(synth_spec_to_json(back) == synth_spec_to_json(s));
}

TEST_CASE("written files load back") {
    const auto dir = testing::scratch("synth_io");
    SynthSpec spec;
    spec.n_class = 5;
    spec.spurious_a = 0;
    spec.spurious_b = 3;
    spec.head_epochs = 10;
    const SynthData d = generate(spec);
    write_synth(d, spec, dir);
    CHECK(bit_equal(load_matrix(dir / "features_val.f64"), d.val.features));
    CHECK(load_labels(dir / "labels_test.csv") == d.test.labels);
    CHECK(load_head(dir, "head") == d.head);
    CHECK(std::filesystem::exists(dir / "ground_truth.json"));
    CHECK(std::filesystem::exists(dir / "search_embeddings.f64"));
}
