#include "cbmfix/intervention.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cbmfix {

std::size_t InterventionPlan::q_bar() const {
    std::size_t m = 0;
    for (const auto& row : indices) m = std::max(m, row.size());
    return m;
}

bool InterventionPlan::empty() const {
    return std::all_of(indices.begin(), indices.end(), [](const auto& r) { return r.empty(); });
}

ContributionLedger make_ledger(const CbmModel& cbm) {
    return {Matrix(cbm.weight.rows(), cbm.n_concepts()), Matrix(cbm.weight.rows(), cbm.n_concepts()), 0};
}

std::vector<double> attribution(std::span<const double> s_i, std::span<const double> w_k) {
    if (s_i.size() != w_k.size()) throw DimensionError("attribution: score/weight length mismatch");
    std::vector<double> g(s_i.size());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = s_i[j] * w_k[j];
    return g;
}

void accumulate(ContributionLedger& ledger, std::span<const double> s_i, std::span<const double> p_cbm_i,
                int true_label, const CbmModel& cbm) {
    const std::size_t n_gamma = cbm.weight.rows();
    if (s_i.size() != cbm.n_concepts()) throw DimensionError("accumulate: score length != N_c");
    if (p_cbm_i.size() != n_gamma) throw DimensionError("accumulate: CBM output length != N_gamma");
    if (ledger.s_nt.rows() != n_gamma || ledger.s_nt.cols() != cbm.n_concepts() ||
        ledger.s_pf.rows() != n_gamma || ledger.s_pf.cols() != cbm.n_concepts())
        throw DimensionError("accumulate: ledger shape does not match the CBM");
    if (true_label < 0) throw InvalidArgument("accumulate: negative class label");

    // The local CBM only ranks Γ classes, so samples outside Γ carry no signal.
    const auto row = cbm.gamma.row_of(true_label);
    if (!row) return;
    {
        const auto g = attribution(s_i, cbm.weight.row(*row));
        auto dst = ledger.s_nt.row(*row);
        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += -s_i[j] * g[j];
    }
    const std::size_t pred_row = argmax(p_cbm_i);
    if (cbm.gamma.gamma[pred_row] != true_label) {
        const auto g = attribution(s_i, cbm.weight.row(pred_row));
        auto dst = ledger.s_pf.row(pred_row);
        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += s_i[j] * g[j];
    }
    ++ledger.samples_seen;
}

ContributionLedger accumulate_all(const CbmModel& cbm, const Matrix& scores, std::span<const int> labels) {
    if (scores.rows() != labels.size()) throw DimensionError("accumulate_all: scores/labels row mismatch");
    const Matrix p = cbm_forward(cbm, scores);
    ContributionLedger ledger = make_ledger(cbm);
    for (std::size_t i = 0; i < scores.rows(); ++i) accumulate(ledger, scores.row(i), p.row(i), labels[i], cbm);
    return ledger;
}

namespace {

std::vector<std::size_t> top_positive(std::span<const double> row, std::size_t limit) {
    std::vector<std::size_t> ids;
    for (std::size_t j = 0; j < row.size(); ++j)
        if (row[j] > 0.0) ids.push_back(j);
    std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    if (ids.size() > limit) ids.resize(limit);
    return ids;
}

}  // namespace

InterventionPlan select(const ContributionLedger& ledger, std::size_t q) {
    if (q < 2 || q % 2 != 0) throw InvalidArgument("select: q must be an even number >= 2");
    InterventionPlan plan;
    plan.q = q;
    for (std::size_t k = 0; k < ledger.s_nt.rows(); ++k) {
        auto merged = top_positive(ledger.s_nt.row(k), q / 2);
        for (std::size_t j : top_positive(ledger.s_pf.row(k), q / 2))
            if (std::find(merged.begin(), merged.end(), j) == merged.end()) merged.push_back(j);
        plan.indices.push_back(std::move(merged));
    }
    return plan;
}

CbmModel apply(const CbmModel& cbm, const InterventionPlan& plan) {
    if (plan.indices.size() != cbm.weight.rows())
        throw DimensionError("apply: plan has " + std::to_string(plan.indices.size()) + " rows, W has " +
                             std::to_string(cbm.weight.rows()));
    CbmModel out = cbm;
    for (std::size_t k = 0; k < plan.indices.size(); ++k)
        for (std::size_t j : plan.indices[k]) {
            if (j >= cbm.n_concepts()) throw InvalidArgument("apply: concept id " + std::to_string(j) + " out of range");
            out.weight(k, j) = 0.0;
        }
    return out;
}

InterventionPlan random_plan(std::size_t n_concepts, const ConfusedSet& gamma, std::size_t q, std::uint64_t seed) {
    if (q > n_concepts) throw InvalidArgument("random_plan: q exceeds the number of concepts");
    std::mt19937_64 rng(seed);
    InterventionPlan plan;
    plan.q = q;
    for (std::size_t k = 0; k < gamma.size(); ++k) {
        std::vector<std::size_t> ids(n_concepts);
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        // Partial Fisher-Yates: the first q slots are a uniform draw.
        for (std::size_t i = 0; i < q; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n_concepts - 1);
            std::swap(ids[i], ids[pick(rng)]);
        }
        ids.resize(q);
        plan.indices.push_back(std::move(ids));
    }
    return plan;
}

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

}  // namespace

double replacement_score(std::span<const double> candidate, const Matrix& embeddings,
                         std::span<const std::size_t> positives, std::span<const std::size_t> negatives) {
    auto mean_cos = [&](std::span<const std::size_t> ids) {
        if (ids.empty()) return 0.0;
        double s = 0.0;
        for (auto j : ids) s += cosine(candidate, embeddings.row(j));
        return s / static_cast<double>(ids.size());
    };
    return mean_cos(positives) - mean_cos(negatives);
}

ReplacementResult replace_concepts(const CbmModel& cbm, const InterventionPlan& plan,
                                   const ConceptBottleneck& bottleneck, const ConceptBottleneck& search_set,
                                   std::size_t q_bar_replace) {
    if (search_set.size() == 0) throw InvalidArgument("replace_concepts: empty search set");
    if (search_set.dim() != bottleneck.dim()) throw DimensionError("replace_concepts: search set embedding dim differs");
    if (bottleneck.size() != cbm.n_concepts()) throw DimensionError("replace_concepts: bottleneck size != N_c");
    const std::set<std::string> existing(bottleneck.names.begin(), bottleneck.names.end());
    for (const auto& name : search_set.names)
        if (existing.count(name)) throw InvalidArgument("replace_concepts: search set repeats concept '" + name + "'");

    const CbmModel cut = apply(cbm, plan);

    // Rank cut concepts by how many confused classes cut them.
    std::map<std::size_t, std::size_t> occurrences;
    for (const auto& row : plan.indices)
        for (std::size_t j : row) ++occurrences[j];
    std::vector<std::pair<std::size_t, std::size_t>> ranked(occurrences.begin(), occurrences.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > q_bar_replace) ranked.resize(q_bar_replace);

    ReplacementResult result{bottleneck, cut, {}};
    std::vector<bool> used(search_set.size(), false);
    for (const auto& [target, count] : ranked) {
        std::set<std::size_t> pos, neg;
        for (std::size_t k = 0; k < plan.indices.size(); ++k) {
            const auto& row = plan.indices[k];
            if (std::find(row.begin(), row.end(), target) == row.end()) continue;
            neg.insert(row.begin(), row.end());
            for (std::size_t l = 0; l < cut.n_concepts(); ++l)
                if (cut.weight(k, l) > 0.0) pos.insert(l);
        }
        for (auto j : neg) pos.erase(j);
        if (pos.empty())
            throw InvalidArgument("replace_concepts: no positive concepts for target " + std::to_string(target));
        const std::vector<std::size_t> positives(pos.begin(), pos.end()), negatives(neg.begin(), neg.end());

        std::size_t best = search_set.size();
        double best_score = 0.0;
        for (std::size_t c = 0; c < search_set.size(); ++c) {
            if (used[c]) continue;
            const double s = replacement_score(search_set.text_embeddings.row(c), bottleneck.text_embeddings,
                                               positives, negatives);
            if (best == search_set.size() || s > best_score) {
                best = c;
                best_score = s;
            }
        }
        if (best == search_set.size()) throw InvalidArgument("replace_concepts: search set exhausted");
        used[best] = true;

        result.bottleneck.names[target] = search_set.names[best];
        auto dst = result.bottleneck.text_embeddings.row(target);
        auto src = search_set.text_embeddings.row(best);
        std::copy(src.begin(), src.end(), dst.begin());
        for (std::size_t k = 0; k < cbm.weight.rows(); ++k) result.cbm.weight(k, target) = cbm.weight(k, target);
        result.swaps.push_back({target, best, best_score});
    }
    return result;
}

std::string plan_to_json(const InterventionPlan& plan, const ConfusedSet& gamma) {
    if (plan.indices.size() != gamma.size()) throw DimensionError("plan_to_json: plan rows != |gamma|");
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < gamma.size(); ++k) j[std::to_string(gamma.gamma[k])] = plan.indices[k];
    return j.dump(2) + "\n";
}

InterventionPlan plan_from_json(const std::string& text, const ConfusedSet& gamma) {
    const auto j = nlohmann::json::parse(text);
    InterventionPlan plan;
    for (int cls : gamma.gamma) plan.indices.push_back(j.at(std::to_string(cls)).get<std::vector<std::size_t>>());
    if (j.size() != gamma.size()) throw FormatError("plan_from_json: plan lists classes outside gamma");
    plan.q = plan.q_bar();
    return plan;
}

std::string intervention_report(const InterventionPlan& plan, const ConfusedSet& gamma,
                                const ConceptBottleneck& bottleneck, const ContributionLedger* ledger) {
    std::ostringstream out;
    out << "Concept intervention (q=" << plan.q << ", q_bar=" << plan.q_bar() << ")\n";
    for (std::size_t k = 0; k < plan.indices.size(); ++k) {
        out << "class " << gamma.gamma.at(k) << ": " << plan.indices[k].size() << " concept(s) removed\n";
        for (std::size_t j : plan.indices[k]) {
            out << "  - [" << j << "] " << bottleneck.names.at(j);
            if (ledger) out << "  (s_nT=" << ledger->s_nt(k, j) << ", s_pF=" << ledger->s_pf(k, j) << ")";
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace cbmfix
