#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cbmfix/concept_extraction.hpp"
#include "test_support.hpp"

using namespace cbmfix;

namespace {

Matrix rank_one(std::span<const double> h, std::span<const double> u) {
    Matrix a(h.size(), u.size());
    for (std::size_t i = 0; i < h.size(); ++i)
        for (std::size_t j = 0; j < u.size(); ++j) a(i, j) = h[i] * u[j];
    return a;
}

// Brute force NNLS for tiny n: best unconstrained solution over every support.
std::vector<double> nnls_brute(const Matrix& g, std::span<const double> b) {
    const std::size_t n = g.rows();
    std::vector<double> best(n, 0.0);
    double best_obj = 0.0;  // objective 0.5 x'Gx - b'x at x = 0
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < n; ++j)
            if (mask & (1u << j)) idx.push_back(j);
        const std::size_t m = idx.size();
        // Gauss-Jordan on the support.
        std::vector<double> a(m * (m + 1));
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < m; ++c) a[r * (m + 1) + c] = g(idx[r], idx[c]);
            a[r * (m + 1) + m] = b[idx[r]];
        }
        bool ok = true;
        for (std::size_t c = 0; c < m && ok; ++c) {
            std::size_t piv = c;
            for (std::size_t r = c + 1; r < m; ++r)
                if (std::abs(a[r * (m + 1) + c]) > std::abs(a[piv * (m + 1) + c])) piv = r;
            if (std::abs(a[piv * (m + 1) + c]) < 1e-12) ok = false;
            if (!ok) break;
            for (std::size_t k = 0; k <= m; ++k) std::swap(a[c * (m + 1) + k], a[piv * (m + 1) + k]);
            for (std::size_t r = 0; r < m; ++r) {
                if (r == c) continue;
                const double f = a[r * (m + 1) + c] / a[c * (m + 1) + c];
                for (std::size_t k = 0; k <= m; ++k) a[r * (m + 1) + k] -= f * a[c * (m + 1) + k];
            }
        }
        if (!ok) continue;
        std::vector<double> x(n, 0.0);
        bool feasible = true;
        for (std::size_t r = 0; r < m; ++r) {
            x[idx[r]] = a[r * (m + 1) + m] / a[r * (m + 1) + r];
            if (x[idx[r]] < 0) feasible = false;
        }
        if (!feasible) continue;
        double obj = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            obj -= b[i] * x[i];
            for (std::size_t j = 0; j < n; ++j) obj += 0.5 * x[i] * g(i, j) * x[j];
        }
        if (obj < best_obj) {
            best_obj = obj;
            best = x;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("rank-1 matrix is recovered with n = 1") {
    const std::vector<double> h = {1.0, 2.5, 0.3, 4.0, 0.0, 1.2};
    const std::vector<double> u = {0.5, 1.0, 0.0, 2.0, 0.1};
    const Matrix a = rank_one(h, u);
    auto [model, coeffs] = fit_nmf(a, 1, 100, 4);
    CHECK(model.final_error <= 1e-8 * frobenius_norm(a));
    CHECK(model.error_history.size() == 101);
}

TEST_CASE("reconstruction error never increases") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix a = testing::random_matrix(30, 12, rng, 0.0, 1.0);
        auto [model, coeffs] = fit_nmf(a, 4, 150, trial);
        for (std::size_t t = 1; t < model.error_history.size(); ++t)
            REQUIRE(model.error_history[t] <= model.error_history[t - 1] + 1e-10);
        for (double v : model.basis.data()) CHECK(v >= 0.0);
        for (double v : coeffs.coeffs.data()) CHECK(v >= 0.0);
    }
}

TEST_CASE("fixed seed gives bit-identical factors") {
    std::mt19937_64 rng(3);
    const Matrix a = testing::random_matrix(20, 9, rng, 0.0, 2.0);
    auto [m1, c1] = fit_nmf(a, 3, 50, 99);
    auto [m2, c2] = fit_nmf(a, 3, 50, 99);
    CHECK(bit_equal(m1.basis, m2.basis));
    CHECK(bit_equal(c1.coeffs, c2.coeffs));
    auto [m3, c3] = fit_nmf(a, 3, 50, 100);
    CHECK_FALSE(bit_equal(m1.basis, m3.basis));
}

TEST_CASE("argument errors") {
    const Matrix a(4, 3, 1.0);
    CHECK_THROWS_AS(fit_nmf(a, 4, 10, 0), InvalidArgument);
    CHECK_THROWS_AS(fit_nmf(a, 0, 10, 0), InvalidArgument);
    CHECK_THROWS_AS(fit_nmf(a, 2, 0, 0), InvalidArgument);
}

TEST_CASE("project_coeffs") {
    NmfModel model;
    model.basis = Matrix(2, 4, std::vector<double>{1, 0, 0, 0, 0, 0, 1, 0});
    SUBCASE("aligned input gives a unit coefficient") {
        const auto c = project_coeffs(model, Matrix(1, 4, std::vector<double>{0, 0, 1, 0}));
        CHECK(c.coeffs(0, 0) == doctest::Approx(0.0));
        CHECK(c.coeffs(0, 1) == doctest::Approx(1.0));
    }
    SUBCASE("zero row gives zero coefficients") {
        const auto c = project_coeffs(model, Matrix(1, 4, 0.0));
        CHECK(c.coeffs(0, 0) == 0.0);
        CHECK(c.coeffs(0, 1) == 0.0);
    }
    SUBCASE("dim mismatch") { CHECK_THROWS_AS(project_coeffs(model, Matrix(1, 3)), DimensionError); }
}

TEST_CASE("re-projecting the training rows reproduces the fitted coefficients") {
    std::mt19937_64 rng(8);
    const Matrix a = testing::random_matrix(40, 16, rng, 0.0, 1.0);
    auto [model, coeffs] = fit_nmf(a, 5, 200, 1);
    const auto again = project_coeffs(model, a);
    for (std::size_t i = 0; i < coeffs.coeffs.size(); ++i)
        CHECK(std::abs(again.coeffs.data()[i] - coeffs.coeffs.data()[i]) <= 1e-6);
}

TEST_CASE("nnls agrees with a brute-force support search") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const Matrix basis = testing::random_matrix(4, 7, rng, 0.0, 1.0);
        const Matrix gram = matmul_bt(basis, basis);
        const Matrix b = testing::random_matrix(1, 4, rng, -1.0, 2.0);
        const auto x = nnls_row(gram, b.row(0));
        const auto y = nnls_brute(gram, b.row(0));
        for (std::size_t j = 0; j < 4; ++j) CHECK(x[j] == doctest::Approx(y[j]).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("visual concept embeddings") {
    NmfModel model;
    model.basis = Matrix(2, 3, std::vector<double>{1, 2, 0, 0, 1, 3});
    ConceptCoefficients c{Matrix(1, 2, std::vector<double>{0.0, 2.0})};
    SUBCASE("identity projector gives the scaled basis row") {
        const auto s = visual_concept_embeddings(model, c, Matrix::identity(3));
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(s.at(0, 0)[j] == 0.0);
            CHECK(s.at(0, 1)[j] == 2.0 * model.basis(1, j));
        }
    }
    SUBCASE("shape checks") {
        CHECK_THROWS_AS(visual_concept_embeddings(model, c, Matrix(2, 2)), DimensionError);
        CHECK_THROWS_AS(visual_concept_embeddings(model, ConceptCoefficients{Matrix(1, 3)}, Matrix::identity(3)),
                        DimensionError);
    }
}

TEST_CASE("model files round-trip") {
    const auto dir = testing::scratch("nmf_io");
    std::mt19937_64 rng(2);
    auto [model, coeffs] = fit_nmf(testing::random_matrix(10, 6, rng, 0.0, 1.0), 2, 20, 5);
    save_nmf(model, dir);
    const NmfModel back = load_nmf(dir);
    CHECK(bit_equal(back.basis, model.basis));
    CHECK(back.error_history == model.error_history);
    CHECK(back.seed == 5);
}
