#include "cbmfix/synth_benchmark.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "cbmfix/knowledge_transfer.hpp"
#include "json.hpp"

namespace cbmfix {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw InvalidArgument(std::string("SynthSpec: ") + what);
    };
    require(n_class >= 2, "n_class must be >= 2");
    require(p >= 1 && d >= 1 && p >= d, "need 1 <= d <= p");
    require(cores_per_class >= 1, "cores_per_class must be >= 1");
    require(concept_support >= 1 && concept_support <= d, "concept_support must be in [1, d]");
    require(spurious_a != spurious_b, "spurious pair classes must differ");
    require(spurious_a >= 0 && spurious_b >= 0 && static_cast<std::size_t>(spurious_a) < n_class &&
                static_cast<std::size_t>(spurious_b) < n_class,
            "spurious pair classes must be < n_class");
    require(noise_sigma >= 0.0 && clutter >= 0.0 && spurious_strength >= 0.0, "magnitudes must be >= 0");
    require(spurious_rate_eval >= 0.0 && spurious_rate_eval <= 1.0, "spurious_rate_eval must be in [0, 1]");
    require(train_per_class >= 1 && val_per_class >= 1 && test_per_class >= 1, "sample counts must be >= 1");
    require(core_weight_min >= 0.0 && core_weight_max > core_weight_min, "need 0 <= core_weight_min < core_weight_max");
    require(pair_shared_cores <= cores_per_class, "pair_shared_cores must be <= cores_per_class");
    require(activation_scale > 0.0, "activation_scale must be positive");
}

namespace {

Matrix sparse_unit_rows(std::size_t rows, std::size_t dim, std::size_t support, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mag(0.5, 1.0);
    Matrix m(rows, dim);
    std::vector<std::size_t> dims(dim);
    for (std::size_t r = 0; r < rows; ++r) {
        std::iota(dims.begin(), dims.end(), std::size_t{0});
        for (std::size_t s = 0; s < support; ++s) {
            std::uniform_int_distribution<std::size_t> pick(s, dim - 1);
            std::swap(dims[s], dims[pick(rng)]);
            m(r, dims[s]) = mag(rng);
        }
    }
    return row_l2_normalize(m);
}

// Nonnegative d x p matrix with disjoint row supports, hence orthonormal rows.
Matrix make_projector(std::size_t d, std::size_t p, std::mt19937_64& rng) {
    std::vector<std::size_t> cols(p);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    std::shuffle(cols.begin(), cols.end(), rng);
    std::uniform_real_distribution<double> mag(0.5, 1.0);
    Matrix m(d, p);
    for (std::size_t i = 0; i < p; ++i) m(i % d, cols[i]) = mag(rng);
    return row_l2_normalize(m);
}

std::string pad2(std::size_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%02zu", v);
    return buf;
}

}  // namespace

BlackBoxHead train_head(const FeatureSet& train, std::size_t n_class, std::size_t epochs, double lr, double l2) {
    train.validate(n_class);
    const std::size_t n = train.size(), p = train.features.cols();
    BlackBoxHead head(Matrix(n_class, p), std::vector<double>(n_class, 0.0));
    double mean_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double nrm = l2_norm(train.features.row(i));
        mean_sq += nrm * nrm + 1.0;
    }
    mean_sq /= static_cast<double>(std::max<std::size_t>(n, 1));
    const double step = lr / mean_sq;

    Matrix onehot(n, n_class);
    for (std::size_t i = 0; i < n; ++i) onehot(i, train.labels[i]) = 1.0;
    for (std::size_t e = 0; e < epochs; ++e) {
        const Matrix logits = forward(head, train.features);
        Matrix grads(n, n_class);
        for (std::size_t i = 0; i < n; ++i) {
            const auto g = distillation_grad(onehot.row(i), logits.row(i), 1.0);
            std::copy(g.begin(), g.end(), grads.row(i).begin());
        }
        head = fine_tune_step(head, train.features, grads, step);
        for (double& w : head.weights.data()) w -= step * l2 * mean_sq * w;
    }
    return head;
}

SynthData generate(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    SynthData out;

    const std::size_t n_true = spec.n_true_concepts(), n_c = spec.n_concepts();
    // Concept slots before shuffling: class cores, then the shared one, then distractors.
    const Matrix raw = sparse_unit_rows(n_c, spec.d, spec.concept_support, rng);
    std::vector<std::size_t> perm(n_c);  // slot -> bottleneck id
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<std::string> names(n_c);
    Matrix embeddings(n_c, spec.d);
    out.class_concepts.assign(spec.n_class, {});
    for (std::size_t slot = 0; slot < n_c; ++slot) {
        const std::size_t id = perm[slot];
        std::copy_n(raw.row(slot).begin(), spec.d, embeddings.row(id).begin());
        if (slot < spec.n_class * spec.cores_per_class) {
            const std::size_t cls = slot / spec.cores_per_class;
            names[id] = "class" + pad2(cls) + "_cue" + std::to_string(slot % spec.cores_per_class);
            out.class_concepts[cls].push_back(id);
        } else if (slot + 1 == n_true) {
            names[id] = "shared_cue_" + pad2(spec.spurious_a) + "_" + pad2(spec.spurious_b);
            out.spurious_concept = id;
        } else {
            names[id] = "distractor_" + pad2(slot - n_true);
        }
    }
    out.bottleneck = make_bottleneck(names, embeddings);
    out.projector = make_projector(spec.d, spec.p, rng);

    std::uniform_real_distribution<double> core_w(spec.core_weight_min, spec.core_weight_max), spur_w(0.8, 1.2), unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> any_concept(0, n_c - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    const Matrix& concepts = out.bottleneck.text_embeddings;

    auto make_split = [&](Split split, std::size_t per_class) {
        FeatureSet fs;
        fs.split = split;
        fs.features = Matrix(per_class * spec.n_class, spec.p);
        std::vector<double> z(spec.d);
        std::size_t row = 0;
        for (std::size_t s = 0; s < per_class; ++s)
            for (std::size_t cls = 0; cls < spec.n_class; ++cls, ++row) {
                std::fill(z.begin(), z.end(), 0.0);
                auto add = [&](std::size_t id, double w) {
                    auto t = concepts.row(id);
                    for (std::size_t j = 0; j < spec.d; ++j) z[j] += w * t[j];
                };
                for (auto id : out.class_concepts[cls]) add(id, core_w(rng));
                if (static_cast<int>(cls) == spec.spurious_a)
                    for (std::size_t k = 0; k < spec.pair_shared_cores; ++k)
                        add(out.class_concepts[spec.spurious_b][k], core_w(rng));
                for (std::size_t m = 0; m < spec.clutter_concepts; ++m) {
                    const std::size_t id = any_concept(rng);
                    const double w = spec.clutter * unit(rng);
                    if (id != out.spurious_concept) add(id, w);
                }
                const int c = static_cast<int>(cls);
                const double u = unit(rng);
                const bool shared = c == spec.spurious_a ||
                                    (c == spec.spurious_b && split != Split::train && u < spec.spurious_rate_eval);
                const double sw = spur_w(rng);
                if (shared) add(out.spurious_concept, spec.spurious_strength * sw);

                auto x = fs.features.row(row);
                for (std::size_t r = 0; r < spec.d; ++r) {
                    if (z[r] == 0.0) continue;
                    auto m = out.projector.row(r);
                    for (std::size_t j = 0; j < spec.p; ++j) x[j] += spec.activation_scale * z[r] * m[j];
                }
                for (std::size_t j = 0; j < spec.p; ++j) x[j] += spec.noise_sigma * noise(rng);
                fs.labels.push_back(c);
            }
        return fs;
    };
    out.train = make_split(Split::train, spec.train_per_class);
    out.val = make_split(Split::val, spec.val_per_class);
    out.test = make_split(Split::test, spec.test_per_class);

    // Search set: unrelated concepts plus perturbed variants of class cues.
    std::vector<std::string> search_names;
    Matrix search(spec.search_set_size, spec.d);
    const Matrix extra = sparse_unit_rows(spec.search_set_size, spec.d, spec.concept_support, rng);
    for (std::size_t i = 0; i < spec.search_set_size; ++i) {
        auto dst = search.row(i);
        if (i % 2 == 0) {
            std::copy_n(extra.row(i).begin(), spec.d, dst.begin());
            search_names.push_back("alt_unrelated_" + pad2(i));
        } else {
            const std::size_t cls = (i / 2) % spec.n_class;
            const auto& cues = out.class_concepts[cls];
            const std::size_t id = cues[(i / 2 / spec.n_class) % cues.size()];
            auto src = concepts.row(id);
            auto pert = extra.row(i);
            for (std::size_t j = 0; j < spec.d; ++j) dst[j] = src[j] + 0.3 * pert[j];
            search_names.push_back("alt_variant_of_" + names[id] + "_" + pad2(i));
        }
    }
    out.search_set = make_bottleneck(search_names, search);

    out.head = train_head(out.train, spec.n_class, spec.head_epochs, spec.head_lr, spec.head_l2);
    return out;
}

void write_synth(const SynthData& data, const SynthSpec& spec, const fs::path& dir) {
    fs::create_directories(dir);
    for (const FeatureSet* s : {&data.train, &data.val, &data.test}) {
        const std::string tag = to_string(s->split);
        save_matrix(s->features, dir / ("features_" + tag + ".f64"));
        save_labels(s->labels, dir / ("labels_" + tag + ".csv"));
    }
    save_bottleneck(data.bottleneck, dir / "concepts.txt", dir / "text_embeddings.f64");
    save_bottleneck(data.search_set, dir / "search_concepts.txt", dir / "search_embeddings.f64");
    save_matrix(data.projector, dir / "projector.f64");
    save_head(data.head, dir, "head");
    nlohmann::ordered_json truth = {
        {"spurious_pair", {spec.spurious_a, spec.spurious_b}},
        {"spurious_concept", data.spurious_concept},
        {"class_concepts", data.class_concepts},
    };
    write_text(dir / "ground_truth.json", truth.dump(2) + "\n");
    write_text(dir / "synth_spec.json", synth_spec_to_json(spec));
}

#define CBMFIX_SYNTH_FIELDS(X)                                                                               \
    X(n_class) X(p) X(d) X(cores_per_class) X(core_weight_min) X(core_weight_max) X(n_distractors) X(concept_support) X(spurious_a) X(spurious_b) \
    X(spurious_strength) X(spurious_rate_eval) X(pair_shared_cores) X(train_per_class) X(val_per_class) X(test_per_class)        \
    X(noise_sigma) X(clutter) X(clutter_concepts) X(activation_scale) X(head_epochs) X(head_lr) X(head_l2)  \
    X(search_set_size) X(seed)

std::string synth_spec_to_json(const SynthSpec& spec) {
    nlohmann::ordered_json j;
#define X(f) j[#f] = spec.f;
    CBMFIX_SYNTH_FIELDS(X)
#undef X
    return j.dump(2) + "\n";
}

SynthSpec synth_spec_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SynthSpec spec;
#define X(f) \
    if (j.contains(#f)) j.at(#f).get_to(spec.f);
    CBMFIX_SYNTH_FIELDS(X)
#undef X
    return spec;
}

}  // namespace cbmfix
