#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "cbmfix/knowledge_transfer.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace cbmfix;

TEST_CASE("residual coefficient") {
    CHECK(residual_coefficient(std::vector<double>{0.1, 0.2, 0.3, 0.4}, ConfusedSet({1, 3})) == doctest::Approx(0.6));
    CHECK(residual_coefficient(std::vector<double>{0.5, 0.2, 0.3}, ConfusedSet({0, 1, 2})) == 1.0);
    CHECK(residual_coefficient(std::vector<double>(10, 0.1), ConfusedSet({0, 9})) == doctest::Approx(0.2));
    // Γ∁ mass 0.7.
    CHECK(residual_coefficient(std::vector<double>{0.2, 0.1, 0.7}, ConfusedSet({0, 1})) == doctest::Approx(0.3));
    CHECK_THROWS_AS(residual_coefficient(std::vector<double>{0.5, 0.6}, ConfusedSet({0})), InvalidArgument);
}

TEST_CASE("build_teacher") {
    SUBCASE("hand-computed example") {
        std::vector<double> logits = {std::log(0.1), std::log(0.2), std::log(0.3), std::log(0.4)};
        // softmax(z / t1) = [0.25, 0.75] needs z1 - z0 = t1 * ln 3.
        const double t1 = 2.0;
        const std::vector<double> cbm = {0.0, t1 * std::log(3.0)};
        const auto t = build_teacher(cbm, logits, ConfusedSet({1, 3}), t1);
        CHECK(t[0] == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(t[1] == doctest::Approx(0.15).epsilon(1e-12));
        CHECK(t[2] == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(t[3] == doctest::Approx(0.45).epsilon(1e-12));
    }
    SUBCASE("uniform CBM output spreads pr evenly") {
        const std::vector<double> logits = {0.3, -1.0, 2.0, 0.5, 0.0};
        const ConfusedSet g({0, 2, 4});
        const auto t = build_teacher(std::vector<double>{1.0, 1.0, 1.0}, logits, g, 2.0);
        const auto frozen = softmax(logits);
        const double pr = residual_coefficient(frozen, g);
        for (int c : g.gamma) CHECK(t[c] == doctest::Approx(pr / 3).epsilon(1e-14));
        CHECK(t[1] == frozen[1]);
        CHECK(t[3] == frozen[3]);
    }
    SUBCASE("dim mismatch") {
        CHECK_THROWS_AS(build_teacher(std::vector<double>{1.0}, std::vector<double>{0, 0}, ConfusedSet({0, 1}), 2.0),
                        DimensionError);
        CHECK_THROWS_AS(build_teacher(std::vector<double>{1.0, 0}, std::vector<double>{0, 0}, ConfusedSet({0, 5}), 2.0),
                        DimensionError);
    }
}

TEST_CASE("student") {
    const auto flat = student(std::vector<double>{10, -3, 4, 0}, 1e6);
    for (double v : flat) CHECK(std::abs(v - 0.25) <= 1e-3);
    const auto p = student(std::vector<double>{std::log(4.0), 0.0}, 1.0);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(0.2).epsilon(1e-14));
    const std::vector<double> x = {0.1, 2.0, -1.0}, y = {5.1, 7.0, 4.0};
    const auto a = student(x, 1.5), b = student(y, 1.5);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-12);
    CHECK_THROWS_AS(student(x, 0.0), InvalidArgument);
}

TEST_CASE("distillation gradient") {
    SUBCASE("vanishes when teacher equals student at t2 = 1") {
        const std::vector<double> z = {0.4, -1.1, 2.3, 0.0};
        const auto g = distillation_grad(softmax(z), z, 1.0);
        double norm = 0;
        for (double v : g) norm += v * v;
        CHECK(std::sqrt(norm) <= 1e-9);
    }
    SUBCASE("matches central differences of the loss in the logits") {
        std::mt19937_64 rng(12);
        for (int trial = 0; trial < 10; ++trial) {
            Matrix z = testing::random_matrix(1, 5, rng, -2, 2);
            const auto t = softmax(testing::random_matrix(1, 5, rng).row(0));
            auto zr = z.data();
            const auto g = distillation_grad(t, zr, 1.5);
            for (std::size_t j = 0; j < 5; ++j) {
                const double fd = testing::central_diff([&] { return distillation_loss(t, zr, 1.5); }, zr, j, 1e-6);
                CHECK(testing::rel_err(g[j], fd) <= 1e-6);
            }
        }
    }
}

TEST_CASE("head gradient matches central differences") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        Matrix b0 = testing::random_matrix(1, 4, rng);
        BlackBoxHead head(testing::random_matrix(4, 3, rng), {b0.data().begin(), b0.data().end()});
        const Matrix x = testing::random_matrix(6, 3, rng);
        Matrix teachers(6, 4);
        for (std::size_t i = 0; i < 6; ++i) {
            const auto t = softmax(testing::random_matrix(1, 4, rng).row(0));
            std::copy(t.begin(), t.end(), teachers.row(i).begin());
        }
        const BlackBoxHead g = transfer_grad(head, x, teachers, 1.5);
        auto w = head.weights.data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double fd = testing::central_diff([&] { return transfer_loss(head, x, teachers, 1.5); }, w, j, 1e-6);
            CHECK(testing::rel_err(g.weights.data()[j], fd) <= 1e-6);
        }
        for (std::size_t c = 0; c < 4; ++c) {
            const double fd =
                testing::central_diff([&] { return transfer_loss(head, x, teachers, 1.5); }, head.bias, c, 1e-6);
            CHECK(testing::rel_err(g.bias[c], fd) <= 1e-6);
        }
    }
}

TEST_CASE("transfer") {
    std::mt19937_64 rng(19);
    const ConfusedSet gamma({0, 2});
    Matrix b0 = testing::random_matrix(1, 3, rng);
    const BlackBoxHead head(testing::random_matrix(3, 4, rng), {b0.data().begin(), b0.data().end()});
    FeatureSet val{testing::random_matrix(12, 4, rng), {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2}, Split::val};
    const CbmModel cbm{testing::random_matrix(2, 5, rng), gamma};
    const Matrix scores = testing::random_matrix(12, 5, rng);
    TeacherConfig cfg;
    cfg.lr = 0.05;
    cfg.epochs = 5;
    cfg.batch = 4;
    SUBCASE("logs every epoch and lowers the distillation loss") {
        const auto r = transfer(head, head, cbm, scores, val, cfg);
        REQUIRE(r.log.size() == 6);
        CHECK(r.log.back().loss < r.log.front().loss);
        CHECK(r.log[3].epoch == 3);
        const auto again = transfer(head, head, cbm, scores, val, cfg);
        CHECK(again.head == r.head);
        CHECK_FALSE(transfer_log_to_json(r.log).empty());
    }
    SUBCASE("zero epochs return the head untouched") {
        cfg.epochs = 0;
        CHECK(transfer(head, head, cbm, scores, val, cfg).head == head);
    }
    SUBCASE("errors") {
        FeatureSet empty{Matrix(0, 4), {}, Split::val};
        CHECK_THROWS_AS(transfer(head, head, cbm, Matrix(0, 5), empty, cfg), InvalidArgument);
        cfg.t2 = 0;
        CHECK_THROWS_AS(transfer(head, head, cbm, scores, val, cfg), InvalidArgument);
    }
}
