#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cbmfix/blackbox_head.hpp"
#include "test_support.hpp"

using namespace cbmfix;

namespace {

BlackBoxHead random_head(std::size_t c, std::size_t p, std::mt19937_64& rng) {
    Matrix b = testing::random_matrix(1, c, rng);
    return BlackBoxHead(testing::random_matrix(c, p, rng), {b.data().begin(), b.data().end()});
}

double ce_loss(const BlackBoxHead& h, const Matrix& x, const std::vector<int>& y) {
    const Matrix z = forward(h, x);
    double l = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) l -= std::log(softmax(z.row(i))[y[i]]);
    return l / static_cast<double>(x.rows());
}

}  // namespace

TEST_CASE("forward") {
    SUBCASE("identity weights map basis vectors to themselves") {
        const BlackBoxHead h(Matrix::identity(3), {0, 0, 0});
        Matrix x(1, 3, 0.0);
        x(0, 1) = 1.0;
        CHECK(bit_equal(forward(h, x), x));
    }
    SUBCASE("zero weights give the bias on every row") {
        const BlackBoxHead h(Matrix(2, 4, 0.0), {0.5, -1.5});
        std::mt19937_64 rng(0);
        const Matrix z = forward(h, testing::random_matrix(3, 4, rng));
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(z(i, 0) == 0.5);
            CHECK(z(i, 1) == -1.5);
        }
    }
    SUBCASE("matches a naive triple loop") {
        std::mt19937_64 rng(11);
        const BlackBoxHead h = random_head(5, 7, rng);
        const Matrix x = testing::random_matrix(6, 7, rng);
        const Matrix z = forward(h, x);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t c = 0; c < 5; ++c) {
                double s = h.bias[c];
                for (std::size_t j = 0; j < 7; ++j) s += h.weights(c, j) * x(i, j);
                CHECK(std::abs(z(i, c) - s) <= 1e-12);
            }
    }
    SUBCASE("dim mismatch") {
        const BlackBoxHead h(Matrix(2, 4), {0, 0});
        CHECK_THROWS_AS(forward(h, Matrix(1, 3)), DimensionError);
        CHECK_THROWS_AS(BlackBoxHead(Matrix(2, 4), {0}), DimensionError);
    }
}

TEST_CASE("softmax") {
    const auto u = softmax(std::vector<double>{0, 0, 0});
    for (double v : u) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
    const auto two = softmax(std::vector<double>{std::log(2.0), 0.0});
    CHECK(two[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(two[1] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    const auto big = softmax(std::vector<double>{1000, 0});
    CHECK(std::isfinite(big[0]));
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(std::exp(-1000.0)));
    CHECK_THROWS_AS(softmax(std::vector<double>{1, 2}, 0.0), InvalidArgument);
    CHECK_THROWS_AS(softmax(std::vector<double>{1, 2}, -1.0), InvalidArgument);
}

TEST_CASE("fine_tune_step") {
    std::mt19937_64 rng(2);
    const BlackBoxHead h = random_head(3, 4, rng);
    const Matrix x = testing::random_matrix(5, 4, rng);
    SUBCASE("zero gradient or zero lr leaves the head unchanged") {
        CHECK(fine_tune_step(h, x, Matrix(5, 3, 0.0), 0.1) == h);
        CHECK(fine_tune_step(h, x, testing::random_matrix(5, 3, rng), 0.0) == h);
    }
    SUBCASE("a small step along the cross-entropy gradient lowers the loss") {
        const std::vector<int> y = {0, 1, 2, 1, 0};
        const Matrix z = forward(h, x);
        Matrix g(5, 3);
        for (std::size_t i = 0; i < 5; ++i) {
            const auto p = softmax(z.row(i));
            for (std::size_t c = 0; c < 3; ++c) g(i, c) = p[c] - (static_cast<int>(c) == y[i]);
        }
        const BlackBoxHead stepped = fine_tune_step(h, x, g, 1e-3);
        CHECK(ce_loss(stepped, x, y) < ce_loss(h, x, y));
        // Bound on the weight change: lr * ||g|| * ||x|| / N.
        Matrix dw = stepped.weights;
        for (std::size_t i = 0; i < dw.size(); ++i) dw.data()[i] -= h.weights.data()[i];
        CHECK(frobenius_norm(dw) <= 1e-3 * frobenius_norm(g) * frobenius_norm(x) / 5 + 1e-15);
    }
    SUBCASE("shape mismatch") { CHECK_THROWS_AS(fine_tune_step(h, x, Matrix(4, 3), 0.1), DimensionError); }
}

TEST_CASE("accuracy") {
    SUBCASE("memorizing head scores 1") {
        FeatureSet fs{Matrix::identity(4), {0, 1, 2, 3}, Split::val};
        const BlackBoxHead h(Matrix::identity(4), {0, 0, 0, 0});
        CHECK(accuracy(h, fs) == 1.0);
    }
    SUBCASE("uniform logits fall back to class 0") {
        FeatureSet fs{Matrix(6, 2, 1.0), {0, 1, 0, 2, 2, 2}, Split::val};
        const BlackBoxHead h(Matrix(3, 2, 0.0), {0, 0, 0});
        CHECK(accuracy(h, fs) == doctest::Approx(2.0 / 6));
        const std::vector<int> only2 = {2};
        CHECK(accuracy(h, fs, std::span<const int>(only2)) == 0.0);
    }
    SUBCASE("empty filtered set is an error") {
        FeatureSet fs{Matrix(2, 2, 1.0), {0, 1}, Split::val};
        const BlackBoxHead h(Matrix(3, 2, 0.0), {0, 0, 0});
        const std::vector<int> absent = {2};
        CHECK_THROWS_AS(accuracy(h, fs, std::span<const int>(absent)), InvalidArgument);
    }
}

TEST_CASE("argmax ties go to the lowest index") {
    CHECK(argmax(std::vector<double>{1, 3, 3, 2}) == 1);
    CHECK_THROWS_AS(argmax(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("head files round-trip") {
    const auto dir = testing::scratch("head_io");
    std::mt19937_64 rng(9);
    const BlackBoxHead h = random_head(4, 6, rng);
    save_head(h, dir, "h");
    CHECK(load_head(dir, "h") == h);
}

TEST_CASE("labels outside the class range are rejected") {
    FeatureSet fs{Matrix(2, 2), {0, 5}, Split::test};
    CHECK_THROWS_AS(fs.validate(3), InvalidArgument);
    CHECK(split_from_string(to_string(Split::val)) == Split::val);
}
