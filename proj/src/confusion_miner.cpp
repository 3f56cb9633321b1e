#include "cbmfix/confusion_miner.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cbmfix {

ConfusedSet::ConfusedSet(std::vector<int> classes) : gamma(std::move(classes)) {
    std::sort(gamma.begin(), gamma.end());
    if (std::adjacent_find(gamma.begin(), gamma.end()) != gamma.end())
        throw InvalidArgument("ConfusedSet: duplicate class id");
    if (!gamma.empty() && gamma.front() < 0) throw InvalidArgument("ConfusedSet: negative class id");
}

bool ConfusedSet::contains(int cls) const { return std::binary_search(gamma.begin(), gamma.end(), cls); }

std::optional<std::size_t> ConfusedSet::row_of(int cls) const {
    auto it = std::lower_bound(gamma.begin(), gamma.end(), cls);
    if (it == gamma.end() || *it != cls) return std::nullopt;
    return static_cast<std::size_t>(it - gamma.begin());
}

std::vector<int> ConfusedSet::complement(std::size_t n_class) const {
    std::vector<int> out;
    for (int c = 0; c < static_cast<int>(n_class); ++c)
        if (!contains(c)) out.push_back(c);
    return out;
}

ConfusionRecord confusion_from_predictions(std::span<const int> labels, std::span<const int> predictions,
                                           std::size_t n_class) {
    if (labels.size() != predictions.size()) throw DimensionError("confusion: labels/predictions mismatch");
    if (labels.empty()) throw InvalidArgument("confusion: empty validation set");
    ConfusionRecord rec;
    rec.counts = Matrix(n_class, n_class);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predictions[i];
        if (y < 0 || p < 0 || static_cast<std::size_t>(y) >= n_class || static_cast<std::size_t>(p) >= n_class)
            throw InvalidArgument("confusion: class id out of range");
        rec.counts(y, p) += 1.0;
    }
    for (int a = 0; a < static_cast<int>(n_class); ++a)
        for (int b = a + 1; b < static_cast<int>(n_class); ++b)
            rec.pair_ranking.push_back({a, b, std::lround(rec.counts(a, b) + rec.counts(b, a))});
    std::stable_sort(rec.pair_ranking.begin(), rec.pair_ranking.end(),
                     [](const PairCount& x, const PairCount& y) { return x.count > y.count; });
    return rec;
}

ConfusionRecord build_confusion(const BlackBoxHead& head, const FeatureSet& val) {
    val.validate(head.n_class());
    if (val.size() == 0) throw InvalidArgument("build_confusion: empty validation set");
    return confusion_from_predictions(val.labels, predict(head, val.features), head.n_class());
}

ConfusedSet select_confused(const ConfusionRecord& rec, std::size_t k_pairs, double max_fraction) {
    if (k_pairs < 1) throw InvalidArgument("select_confused: k_pairs must be >= 1");
    if (!(max_fraction > 0.0 && max_fraction <= 1.0)) throw InvalidArgument("select_confused: max_fraction must be in (0, 1]");
    std::vector<PairCount> chosen;
    for (const auto& pc : rec.pair_ranking) {
        if (chosen.size() == k_pairs || pc.count <= 0) break;
        chosen.push_back(pc);
    }
    if (chosen.empty()) throw InvalidArgument("select_confused: nothing to intervene (no confused pair)");

    // Small epsilon so that e.g. 0.25 * 20 is not floored to 4.
    const auto cap = static_cast<std::size_t>(std::floor(max_fraction * static_cast<double>(rec.n_class()) + 1e-9));
    auto classes_of = [](const std::vector<PairCount>& pairs) {
        std::set<int> s;
        for (const auto& pc : pairs) {
            s.insert(pc.a);
            s.insert(pc.b);
        }
        return s;
    };
    auto classes = classes_of(chosen);
    while (classes.size() > cap && !chosen.empty()) {
        chosen.pop_back();
        classes = classes_of(chosen);
    }
    if (classes.size() < 2) {
        throw InvalidArgument("select_confused: cap of " + std::to_string(cap) +
                              " classes leaves fewer than two confused classes");
    }
    return ConfusedSet(std::vector<int>(classes.begin(), classes.end()));
}

std::string confusion_to_csv(const ConfusionRecord& rec) {
    std::ostringstream out;
    out << "true\\pred";
    for (std::size_t c = 0; c < rec.n_class(); ++c) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < rec.n_class(); ++r) {
        out << r;
        for (std::size_t c = 0; c < rec.n_class(); ++c) out << ',' << std::lround(rec.counts(r, c));
        out << '\n';
    }
    return out.str();
}

std::string pair_ranking_to_csv(const ConfusionRecord& rec) {
    std::ostringstream out;
    out << "a,b,count\n";
    for (const auto& pc : rec.pair_ranking) out << pc.a << ',' << pc.b << ',' << pc.count << '\n';
    return out.str();
}

std::string confused_set_to_json(const ConfusedSet& set) {
    return nlohmann::json{{"gamma", set.gamma}}.dump(2) + "\n";
}

ConfusedSet confused_set_from_json(const std::string& text) {
    return ConfusedSet(nlohmann::json::parse(text).at("gamma").get<std::vector<int>>());
}

}  // namespace cbmfix
