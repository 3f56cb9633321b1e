#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbmfix/concept_extraction.hpp"
#include "cbmfix/concept_scoring.hpp"
#include "cbmfix/confusion_miner.hpp"
#include "cbmfix/intervention.hpp"
#include "cbmfix/knowledge_transfer.hpp"
#include "cbmfix/local_cbm.hpp"

namespace cbmfix {

enum class InterventionMode { gradient, random, replace, none };

std::string to_string(InterventionMode m);
InterventionMode mode_from_string(const std::string& s);

struct InputPaths {
    std::filesystem::path features_val, labels_val;
    std::filesystem::path features_test, labels_test;
    std::filesystem::path concepts, text_embeddings;
    std::filesystem::path projector;
    std::filesystem::path head_dir;
    std::string head_prefix = "head";
    // Only needed for InterventionMode::replace.
    std::filesystem::path search_concepts, search_embeddings;
};

struct RunConfig {
    InputPaths inputs;
    std::size_t k_pairs = 1;
    double max_fraction = 0.25;
    std::size_t n_visual = 10;  // NMF concepts
    std::size_t nmf_iters = 300;
    std::size_t q = 20;
    CbmFitConfig cbm;  // its seed is derived from `seed`
    TeacherConfig teacher;
    InterventionMode mode = InterventionMode::gradient;
    std::size_t q_bar_replace = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

// Relative paths in the file resolve against `base_dir`.
RunConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
std::string config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);
/// Config pointing at the files written by write_synth() into `dir`.
RunConfig synth_run_config(const std::filesystem::path& dir);

struct ClassDelta {
    int cls = 0;
    long minus_n = 0;  // predicted as cls before, wrongly, and correct after
    long plus_n = 0;   // label cls, wrong before, correct after
};

struct RunReport {
    std::string mode;
    std::vector<int> gamma;
    std::size_t q = 0, q_bar = 0;
    std::size_t n_test = 0;
    double pre_acc = 0, post_acc = 0;
    double pre_gamma_acc = 0, post_gamma_acc = 0;
    double pre_non_gamma_acc = 0, post_non_gamma_acc = 0;
    long pre_correct = 0, post_correct = 0;
    long corrected = 0, newly_broken = 0, coverage = 0;
    std::vector<ClassDelta> per_class;
    std::map<int, std::vector<std::string>> intervention_concepts;
    double cbm_fidelity_val = 0, cbm_fidelity_test = 0;
    double approx_bias_test = 0;  // (1 - fidelity) / (1 - 1/N_gamma)
    double cbm_gamma_acc_before = 0, cbm_gamma_acc_after = 0;
    std::vector<double> loss_lp, loss_kt;
};

std::string report_to_json(const RunReport& r);
std::string report_to_text(const RunReport& r);

/// Counts and accuracies of a before/after pair of test predictions.
RunReport compare_predictions(std::span<const int> labels, std::span<const int> before, std::span<const int> after,
                              const ConfusedSet& gamma, std::size_t n_class);

/// Thrown when a stage fails; carries the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// The staged intervention pipeline. Every stage writes its outputs into
/// `<output_root>/<stage>-<key>/` where the key hashes the inputs and the
/// upstream keys; a completed directory is loaded instead of recomputed.
class Pipeline {
public:
    Pipeline(RunConfig cfg, std::filesystem::path output_root);

    struct Mined {
        ConfusionRecord record;
        ConfusedSet gamma;
    };
    struct Extracted {
        NmfModel nmf;
    };
    struct Scored {
        Matrix val, test;
    };
    struct Approximated {
        CbmModel cbm;
        std::vector<double> loss_curve;
        double fidelity_val = 0;
    };
    struct Intervened {
        ContributionLedger ledger;
        InterventionPlan plan;
        CbmModel cbm_bar;
        ConceptBottleneck bottleneck;  // after replacement, if any
        Scored scores;                 // scores under `bottleneck`
    };
    struct Transferred {
        BlackBoxHead head;
        std::vector<TransferEpoch> log;
    };

    const Mined& mine();
    const Extracted& extract();
    const Scored& score();
    const Approximated& approximate();
    const Intervened& intervene();
    const Transferred& transfer();
    const RunReport& evaluate();

    const RunConfig& config() const { return cfg_; }
    // Directory of a finished stage (after calling it).
    std::filesystem::path stage_dir(const std::string& stage) const;

private:
    struct Inputs {
        FeatureSet val, test;
        ConceptBottleneck bottleneck;
        Matrix projector;
        BlackBoxHead head;
    };
    const Inputs& inputs();
    std::vector<std::size_t> gamma_rows(const FeatureSet& fs, const ConfusedSet& gamma) const;
    Scored score_with(const ConceptBottleneck& bottleneck);

    RunConfig cfg_;
    std::filesystem::path root_;
    std::uint64_t input_key_ = 0;
    std::uint64_t search_key_ = 0;
    std::map<std::string, std::uint64_t> keys_;
    std::optional<Inputs> inputs_;
    std::optional<Mined> mined_;
    std::optional<Extracted> extracted_;
    std::optional<Scored> scored_;
    std::optional<Approximated> approximated_;
    std::optional<Intervened> intervened_;
    std::optional<Transferred> transferred_;
    std::optional<RunReport> report_;
};

/// Runs every stage and writes report.json / report.txt in the evaluate stage dir.
RunReport run(const RunConfig& cfg, const std::filesystem::path& output_root);

struct AblationRow {
    double fraction = 0;
    std::size_t n_gamma = 0;
    double approx_bias = 0;       // normalized CBM/black-box disagreement on test
    double improvement = 0;       // post - pre global test accuracy
    double gamma_improvement = 0; // post - pre Γ test accuracy
};

/// Re-selects Γ from every confused pair, capped at each fraction of the
/// classes, and reruns the pipeline.
std::vector<AblationRow> ablate_gamma_fraction(const RunConfig& cfg, std::span<const double> fractions,
                                               const std::filesystem::path& output_root);
std::string ablation_to_json(const std::vector<AblationRow>& rows);
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

/// FNV-1a 64-bit, used for stage keys.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Output root from the CBMFIX_OUTPUT_ROOT environment variable, else "cbmfix_out".
std::filesystem::path default_output_root();

}  // namespace cbmfix
