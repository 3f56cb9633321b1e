#include "cbmfix/local_cbm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cbmfix {

CbmModel init_cbm(const ConfusedSet& gamma, std::size_t n_concepts, std::uint64_t seed) {
    if (gamma.size() == 0 || n_concepts == 0) throw InvalidArgument("init_cbm: empty gamma or bottleneck");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-0.01, 0.01);
    CbmModel model{Matrix(gamma.size(), n_concepts), gamma};
    for (double& v : model.weight.data()) v = dist(rng);
    return model;
}

Matrix cbm_forward(const CbmModel& model, const Matrix& scores) {
    if (scores.cols() != model.n_concepts()) {
        throw DimensionError("cbm_forward: scores have " + std::to_string(scores.cols()) + " columns, W has " +
                             std::to_string(model.n_concepts()));
    }
    return matmul_bt(scores, model.weight);
}

Matrix gamma_columns(const Matrix& logits, const ConfusedSet& gamma) {
    std::vector<std::size_t> cols(gamma.gamma.begin(), gamma.gamma.end());
    return select_cols(logits, cols);
}

Matrix gamma_targets(const BlackBoxHead& head, const Matrix& features, const ConfusedSet& gamma) {
    return gamma_columns(forward(head, features), gamma);
}

double approximation_loss(const Matrix& p_cbm, const Matrix& targets) {
    if (p_cbm.rows() != targets.rows() || p_cbm.cols() != targets.cols())
        throw DimensionError("approximation_loss: shape mismatch");
    if (p_cbm.rows() == 0) throw InvalidArgument("approximation_loss: empty batch");
    const double n_gamma = static_cast<double>(p_cbm.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < p_cbm.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t k = 0; k < p_cbm.cols(); ++k) {
            const double r = p_cbm(i, k) - targets(i, k);
            sq += r * r;
        }
        total += std::sqrt(sq) / n_gamma;
    }
    return total / static_cast<double>(p_cbm.rows());
}

Matrix approximation_grad(const CbmModel& model, const Matrix& scores, const Matrix& targets) {
    const Matrix p = cbm_forward(model, scores);
    if (p.rows() != targets.rows() || p.cols() != targets.cols())
        throw DimensionError("approximation_grad: target shape mismatch");
    const std::size_t n = scores.rows(), n_gamma = model.weight.rows();
    Matrix grad(n_gamma, model.n_concepts());
    if (n == 0) return grad;
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n_gamma));
    std::vector<double> resid(n_gamma);
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t k = 0; k < n_gamma; ++k) {
            resid[k] = p(i, k) - targets(i, k);
            sq += resid[k] * resid[k];
        }
        const double norm = std::sqrt(sq);
        if (norm == 0.0) continue;
        auto s = scores.row(i);
        for (std::size_t k = 0; k < n_gamma; ++k) {
            const double c = scale * resid[k] / norm;
            auto g = grad.row(k);
            for (std::size_t j = 0; j < s.size(); ++j) g[j] += c * s[j];
        }
    }
    return grad;
}

CbmFitResult fit(const CbmModel& init, const Matrix& scores, const Matrix& targets, const CbmFitConfig& cfg) {
    if (scores.rows() == 0) throw InvalidArgument("cbm fit: no training samples");
    if (!(cfg.lr > 0.0)) throw InvalidArgument("cbm fit: lr must be positive");
    if (cfg.batch == 0) throw InvalidArgument("cbm fit: batch must be >= 1");
    if (scores.rows() != targets.rows() || targets.cols() != init.weight.rows())
        throw DimensionError("cbm fit: scores/targets/model shapes disagree");

    CbmFitResult result{init, {}};
    CbmModel& model = result.model;
    result.loss_curve.push_back(approximation_loss(cbm_forward(model, scores), targets));

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(scores.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Matrix grad = approximation_grad(model, select_rows(scores, idx), select_rows(targets, idx));
            auto w = model.weight.data();
            auto g = grad.data();
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.lr * g[j];
        }
        result.loss_curve.push_back(approximation_loss(cbm_forward(model, scores), targets));
    }
    return result;
}

CbmFitResult fit(const CbmModel& init, const Matrix& scores, const BlackBoxHead& head, const Matrix& features,
                 const CbmFitConfig& cfg) {
    return fit(init, scores, gamma_targets(head, features, init.gamma), cfg);
}

double fidelity(const CbmModel& model, const Matrix& scores, const Matrix& targets) {
    if (scores.rows() == 0) throw InvalidArgument("fidelity: empty sample set");
    const auto cbm_pred = argmax_rows(cbm_forward(model, scores));
    const auto org_pred = argmax_rows(targets);
    if (cbm_pred.size() != org_pred.size()) throw DimensionError("fidelity: scores/targets row mismatch");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < cbm_pred.size(); ++i) agree += cbm_pred[i] == org_pred[i];
    return static_cast<double>(agree) / static_cast<double>(cbm_pred.size());
}

double fidelity(const CbmModel& model, const Matrix& scores, const BlackBoxHead& head, const Matrix& features) {
    return fidelity(model, scores, gamma_targets(head, features, model.gamma));
}

void save_cbm(const CbmModel& model, const std::filesystem::path& dir, const std::string& prefix) {
    save_matrix(model.weight, dir / (prefix + "_W.f64"));
    write_text(dir / (prefix + "_gamma.json"), confused_set_to_json(model.gamma));
}

CbmModel load_cbm(const std::filesystem::path& dir, const std::string& prefix) {
    CbmModel model{load_matrix(dir / (prefix + "_W.f64")),
                   confused_set_from_json(read_text(dir / (prefix + "_gamma.json")))};
    if (model.weight.rows() != model.gamma.size()) throw FormatError("cbm: W rows != |gamma|");
    return model;
}

}  // namespace cbmfix
