#include "cbmfix/concept_extraction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "json.hpp"

namespace cbmfix {

namespace {

constexpr double kDenomEps = 1e-12;

// Solves the dense system a x = b in place (partial pivoting). Returns false
// when a pivot vanishes.
bool solve_dense(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
        const double scale = std::abs(a[col * n + col]) + std::abs(a[piv * n + col]);
        if (std::abs(a[piv * n + col]) <= 1e-14 * std::max(scale, 1e-300)) return false;
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
            std::swap(b[col], b[piv]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / a[col * n + col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t r = n; r-- > 0;) {
        double s = b[r];
        for (std::size_t c = r + 1; c < n; ++c) s -= a[r * n + c] * b[c];
        b[r] = s / a[r * n + r];
    }
    return true;
}

// Unconstrained least-squares solution restricted to the passive set.
bool solve_passive(const Matrix& gram, std::span<const double> rhs, const std::vector<bool>& passive,
                   std::vector<double>& out) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < passive.size(); ++j)
        if (passive[j]) idx.push_back(j);
    const std::size_t m = idx.size();
    std::vector<double> a(m * m), b(m);
    for (std::size_t r = 0; r < m; ++r) {
        b[r] = rhs[idx[r]];
        for (std::size_t c = 0; c < m; ++c) a[r * m + c] = gram(idx[r], idx[c]);
    }
    if (!solve_dense(a, b, m)) return false;
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t r = 0; r < m; ++r) out[idx[r]] = b[r];
    return true;
}

Matrix uniform_open_closed(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = 1.0 - unit(rng);  // (0, 1]
    return m;
}

double reconstruction_error(const Matrix& a, const Matrix& h, const Matrix& u) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto hi = h.row(i);
        auto ai = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double approx = 0.0;
            for (std::size_t k = 0; k < hi.size(); ++k) approx += hi[k] * u(k, j);
            const double r = ai[j] - approx;
            total += r * r;
        }
    }
    return std::sqrt(total);
}

Matrix nnls_rows(const Matrix& basis, const Matrix& clamped) {
    const Matrix gram = matmul_bt(basis, basis);
    const Matrix rhs = matmul_bt(clamped, basis);  // N x n
    Matrix coeffs(clamped.rows(), basis.rows());
    for (std::size_t i = 0; i < clamped.rows(); ++i) {
        auto h = nnls_row(gram, rhs.row(i));
        std::copy(h.begin(), h.end(), coeffs.row(i).begin());
    }
    return coeffs;
}

}  // namespace

ConceptStack::ConceptStack(std::size_t samples, std::size_t concepts, std::size_t dim)
    : samples_(samples), concepts_(concepts), dim_(dim), data_(samples * concepts * dim, 0.0) {}

Matrix clamp_nonnegative(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data()) v = std::max(v, 0.0);
    return out;
}

std::vector<double> nnls_row(const Matrix& gram, std::span<const double> rhs) {
    const std::size_t n = gram.rows();
    if (gram.cols() != n || rhs.size() != n) throw DimensionError("nnls_row: gram/rhs shape mismatch");
    std::vector<double> h(n, 0.0), s(n, 0.0), w(rhs.begin(), rhs.end());
    std::vector<bool> passive(n, false), blocked(n, false);
    double bmax = 0.0;
    for (double v : rhs) bmax = std::max(bmax, std::abs(v));
    if (bmax == 0.0) return h;
    double gmax = 0.0;
    for (double v : gram.data()) gmax = std::max(gmax, std::abs(v));
    const double tol = 1e-13 * bmax * static_cast<double>(n);

    for (std::size_t outer = 0; outer < 3 * n + 3; ++outer) {
        std::size_t t = n;
        double best = tol;
        for (std::size_t j = 0; j < n; ++j)
            if (!passive[j] && !blocked[j] && w[j] > best) {
                best = w[j];
                t = j;
            }
        if (t == n) break;
        passive[t] = true;

        bool progressed = false;
        for (std::size_t inner = 0; inner < 3 * n + 3; ++inner) {
            if (!solve_passive(gram, rhs, passive, s)) {
                passive[t] = false;
                break;
            }
            double min_s = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j)
                if (passive[j]) min_s = std::min(min_s, s[j]);
            if (min_s > 0.0) {
                h = s;
                progressed = true;
                break;
            }
            if (inner == 0 && s[t] <= 0.0) {
                // Adding t cannot help; leave it out until h moves.
                passive[t] = false;
                break;
            }
            double alpha = 1.0;
            for (std::size_t j = 0; j < n; ++j)
                if (passive[j] && s[j] <= 0.0) alpha = std::min(alpha, h[j] / (h[j] - s[j]));
            for (std::size_t j = 0; j < n; ++j) {
                if (!passive[j]) continue;
                h[j] += alpha * (s[j] - h[j]);
                if (h[j] <= 0.0 || (s[j] <= 0.0 && h[j] <= 1e-15 * bmax / std::max(gmax, 1e-300))) {
                    h[j] = 0.0;
                    passive[j] = false;
                }
            }
            progressed = true;
        }
        if (!progressed) {
            blocked[t] = true;
            continue;
        }
        std::fill(blocked.begin(), blocked.end(), false);
        for (std::size_t j = 0; j < n; ++j) {
            double g = rhs[j];
            for (std::size_t k = 0; k < n; ++k) g -= gram(j, k) * h[k];
            w[j] = g;
        }
    }
    return h;
}

std::pair<NmfModel, ConceptCoefficients> fit_nmf(const Matrix& features, std::size_t n, std::size_t iters,
                                                 std::uint64_t seed) {
    if (n == 0) throw InvalidArgument("fit_nmf: n must be >= 1");
    if (n > std::min(features.rows(), features.cols())) {
        throw InvalidArgument("fit_nmf: n=" + std::to_string(n) + " exceeds min(N, p)=" +
                              std::to_string(std::min(features.rows(), features.cols())));
    }
    if (iters == 0) throw InvalidArgument("fit_nmf: iters must be >= 1");

    const Matrix a = clamp_nonnegative(features);
    const std::size_t rows = a.rows(), p = a.cols();
    std::mt19937_64 rng(seed);
    Matrix u = uniform_open_closed(n, p, rng);
    Matrix h = uniform_open_closed(rows, n, rng);

    NmfModel model;
    model.seed = seed;
    model.error_history.reserve(iters + 1);
    for (std::size_t it = 0; it < iters; ++it) {
        // U <- U * (H^T A) / (H^T H U)
        Matrix hta(n, p), hth(n, n);
        for (std::size_t i = 0; i < rows; ++i) {
            auto hi = h.row(i);
            auto ai = a.row(i);
            for (std::size_t k = 0; k < n; ++k) {
                if (hi[k] == 0.0) continue;
                auto dst = hta.row(k);
                for (std::size_t j = 0; j < p; ++j) dst[j] += hi[k] * ai[j];
                for (std::size_t l = 0; l < n; ++l) hth(k, l) += hi[k] * hi[l];
            }
        }
        const Matrix denom_u = matmul(hth, u);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < p; ++j) u(k, j) *= hta(k, j) / (denom_u(k, j) + kDenomEps);

        // H <- H * (A U^T) / (H U U^T)
        const Matrix aut = matmul_bt(a, u);
        const Matrix uut = matmul_bt(u, u);
        const Matrix denom_h = matmul(h, uut);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < n; ++k) h(i, k) *= aut(i, k) / (denom_h(i, k) + kDenomEps);

        model.error_history.push_back(reconstruction_error(a, h, u));
    }

    Matrix exact = nnls_rows(u, a);
    const double exact_err = reconstruction_error(a, exact, u);
    // Keep the multiplicative iterate if rounding made the solve marginally worse.
    if (exact_err <= model.error_history.back()) h = std::move(exact);
    model.error_history.push_back(std::min(exact_err, model.error_history.back()));

    model.basis = std::move(u);
    model.iterations_run = iters;
    model.final_error = model.error_history.back();
    return {std::move(model), ConceptCoefficients{std::move(h)}};
}

ConceptCoefficients project_coeffs(const NmfModel& model, const Matrix& features) {
    if (features.cols() != model.feature_dim()) {
        throw DimensionError("project_coeffs: features have " + std::to_string(features.cols()) +
                             " columns, basis has " + std::to_string(model.feature_dim()));
    }
    return ConceptCoefficients{nnls_rows(model.basis, clamp_nonnegative(features))};
}

ConceptStack visual_concept_embeddings(const NmfModel& model, const ConceptCoefficients& coeffs,
                                       const Matrix& projector) {
    if (projector.cols() != model.feature_dim())
        throw DimensionError("visual_concept_embeddings: projector must be d x p with p = basis cols");
    if (coeffs.coeffs.cols() != model.n_concepts())
        throw DimensionError("visual_concept_embeddings: coefficient columns != number of concepts");
    const Matrix projected = matmul_bt(model.basis, projector);  // n x d
    const std::size_t n = model.n_concepts(), d = projector.rows();
    ConceptStack stack(coeffs.coeffs.rows(), n, d);
    for (std::size_t i = 0; i < coeffs.coeffs.rows(); ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const double c = coeffs.coeffs(i, k);
            auto dst = stack.at(i, k);
            auto src = projected.row(k);
            for (std::size_t j = 0; j < d; ++j) dst[j] = c * src[j];
        }
    return stack;
}

void save_nmf(const NmfModel& model, const std::filesystem::path& dir) {
    save_matrix(model.basis, dir / "nmf_basis.f64");
    nlohmann::json meta = {{"n", model.n_concepts()},
                           {"iters", model.iterations_run},
                           {"seed", model.seed},
                           {"final_error", model.final_error},
                           {"error_history", model.error_history}};
    write_text(dir / "nmf.json", meta.dump(2) + "\n");
}

NmfModel load_nmf(const std::filesystem::path& dir) {
    auto meta = nlohmann::json::parse(read_text(dir / "nmf.json"));
    NmfModel model;
    model.basis = load_matrix(dir / "nmf_basis.f64");
    if (meta.at("n").get<std::size_t>() != model.basis.rows()) throw FormatError("nmf meta n disagrees with basis");
    model.iterations_run = meta.at("iters").get<std::size_t>();
    model.seed = meta.at("seed").get<std::uint64_t>();
    model.final_error = meta.at("final_error").get<double>();
    model.error_history = meta.at("error_history").get<std::vector<double>>();
    return model;
}

}  // namespace cbmfix
