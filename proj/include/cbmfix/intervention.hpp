#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbmfix/concept_scoring.hpp"
#include "cbmfix/local_cbm.hpp"

namespace cbmfix {

/// Accumulated per-concept contributions that suppress the true class (s_nt)
/// or reinforce a wrong CBM prediction (s_pf). Rows follow the CBM's Γ order.
struct ContributionLedger {
    Matrix s_nt;
    Matrix s_pf;
    std::size_t samples_seen = 0;  // samples with a label in Γ
};

/// Per confused class (Γ row order), the concept ids to cut from W.
struct InterventionPlan {
    std::vector<std::vector<std::size_t>> indices;
    std::size_t q = 0;

    std::size_t q_bar() const;
    bool empty() const;

    friend bool operator==(const InterventionPlan&, const InterventionPlan&) = default;
};

ContributionLedger make_ledger(const CbmModel& cbm);

/// G(w_k, P_k) = dP_k/dw_k (.) w_k. For the linear CBM dP_k/dw_k = S_i.
std::vector<double> attribution(std::span<const double> s_i, std::span<const double> w_k);

/// Adds one validation sample's contribution:
///   label in Γ       -> s_nt[row(label)] -= S_i (.) G(w_label, P_label)
///   Γ[argmax p] != y -> s_pf[argmax p]   += S_i (.) G(w_pred, P_pred)
void accumulate(ContributionLedger& ledger, std::span<const double> s_i, std::span<const double> p_cbm_i,
                int true_label, const CbmModel& cbm);

/// Runs accumulate() over every row in index order.
ContributionLedger accumulate_all(const CbmModel& cbm, const Matrix& scores, std::span<const int> labels);

/// Per class, up to q/2 strictly positive entries of each ledger row by
/// descending value (ties to the lower id), merged nt-first without repeats.
InterventionPlan select(const ContributionLedger& ledger, std::size_t q);

/// Copy of `cbm` with W[k, j] = 0 for every j in plan.indices[k].
CbmModel apply(const CbmModel& cbm, const InterventionPlan& plan);

/// q distinct concept ids per class, drawn uniformly without replacement.
InterventionPlan random_plan(std::size_t n_concepts, const ConfusedSet& gamma, std::size_t q, std::uint64_t seed);

struct ConceptSwap {
    std::size_t target = 0;     // bottleneck row that was replaced
    std::size_t candidate = 0;  // row in the search set that replaced it
    double score = 0.0;         // S_near - S_away of the winner
};

struct ReplacementResult {
    ConceptBottleneck bottleneck;
    CbmModel cbm;
    std::vector<ConceptSwap> swaps;
};

/// Replaces the `q_bar_replace` most frequently cut concepts with the search
/// set candidates maximizing mean-cosine(positives) - mean-cosine(negatives).
/// `cbm` is the pre-intervention model; the returned model is the intervened
/// model with the replaced columns restored to their pre-intervention weights.
ReplacementResult replace_concepts(const CbmModel& cbm, const InterventionPlan& plan,
                                   const ConceptBottleneck& bottleneck, const ConceptBottleneck& search_set,
                                   std::size_t q_bar_replace);

double replacement_score(std::span<const double> candidate, const Matrix& embeddings,
                         std::span<const std::size_t> positives, std::span<const std::size_t> negatives);

std::string plan_to_json(const InterventionPlan& plan, const ConfusedSet& gamma);
InterventionPlan plan_from_json(const std::string& text, const ConfusedSet& gamma);

/// Text listing, per confused class, the names of the concepts that were cut.
std::string intervention_report(const InterventionPlan& plan, const ConfusedSet& gamma,
                                const ConceptBottleneck& bottleneck, const ContributionLedger* ledger = nullptr);

}  // namespace cbmfix
