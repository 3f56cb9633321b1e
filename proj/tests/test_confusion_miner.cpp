#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cbmfix/confusion_miner.hpp"
#include "test_support.hpp"

using namespace cbmfix;

TEST_CASE("perfect head gives a diagonal confusion matrix") {
    FeatureSet fs{Matrix::identity(3), {0, 1, 2}, Split::val};
    const BlackBoxHead h(Matrix::identity(3), {0, 0, 0});
    const auto rec = build_confusion(h, fs);
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) CHECK(rec.counts(a, b) == (a == b ? 1.0 : 0.0));
    for (const auto& pc : rec.pair_ranking) CHECK(pc.count == 0);
    CHECK(rec.pair_ranking.size() == 3);
    CHECK_THROWS_WITH_AS(select_confused(rec, 1), doctest::Contains("nothing to intervene"), InvalidArgument);
}

TEST_CASE("constant head predicting class 0") {
    FeatureSet fs{Matrix(9, 2, 1.0), {0, 1, 2, 0, 1, 2, 0, 1, 2}, Split::val};
    const BlackBoxHead h(Matrix(3, 2, 0.0), {0, 0, 0});
    const auto rec = build_confusion(h, fs);
    CHECK(rec.counts(1, 0) == 3);
    CHECK(rec.counts(2, 0) == 3);
    CHECK(rec.counts(0, 0) == 3);
    // Ties in the symmetric count keep lexicographic order.
    CHECK(rec.pair_ranking[0] == PairCount{0, 1, 3});
    CHECK(rec.pair_ranking[1] == PairCount{0, 2, 3});
    CHECK(rec.pair_ranking[2] == PairCount{1, 2, 0});
}

TEST_CASE("pairs are scored symmetrically") {
    const std::vector<int> labels = {0, 1, 1, 2, 3, 3, 3};
    const std::vector<int> preds = {1, 0, 0, 3, 2, 2, 3};
    const auto rec = confusion_from_predictions(labels, preds, 4);
    CHECK(rec.pair_ranking[0] == PairCount{0, 1, 3});
    CHECK(rec.pair_ranking[1] == PairCount{2, 3, 3});
    const ConfusedSet g = select_confused(rec, 1, 0.5);
    CHECK(g.gamma == std::vector<int>{0, 1});
}

TEST_CASE("select_confused takes the top pair") {
    std::vector<int> labels, preds;
    for (int i = 0; i < 5; ++i) {
        labels.push_back(3);
        preds.push_back(7);
    }
    labels.push_back(1);
    preds.push_back(2);
    const auto rec = confusion_from_predictions(labels, preds, 10);
    CHECK(select_confused(rec, 1, 1.0).gamma == std::vector<int>{3, 7});
    CHECK(select_confused(rec, 2, 1.0).gamma == std::vector<int>{1, 2, 3, 7});
}

TEST_CASE("cap limits the confused set to a fraction of the classes") {
    // Every class confused with its neighbour in a 20-class ring.
    std::vector<int> labels, preds;
    for (int c = 0; c < 20; ++c) {
        labels.push_back(c);
        preds.push_back((c + 1) % 20);
    }
    const auto rec = confusion_from_predictions(labels, preds, 20);
    const ConfusedSet g = select_confused(rec, 1000, 0.25);
    CHECK(g.size() <= 5);
    CHECK(g.size() >= 2);
    CHECK_THROWS_AS(select_confused(rec, 1000, 0.05), InvalidArgument);
    CHECK_THROWS_AS(select_confused(rec, 0), InvalidArgument);
}

TEST_CASE("confused set bookkeeping") {
    const ConfusedSet g({7, 3});
    CHECK(g.gamma == std::vector<int>{3, 7});
    CHECK(g.row_of(7) == 1);
    CHECK_FALSE(g.row_of(4).has_value());
    CHECK(g.complement(5) == std::vector<int>{0, 1, 2, 4});
    CHECK_THROWS_AS(ConfusedSet({1, 1}), InvalidArgument);
    CHECK(confused_set_from_json(confused_set_to_json(g)) == g);
}

TEST_CASE("empty validation set is an error") {
    CHECK_THROWS_AS(confusion_from_predictions({}, {}, 3), InvalidArgument);
}
