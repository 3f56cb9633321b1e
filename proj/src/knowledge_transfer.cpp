#include "cbmfix/knowledge_transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace cbmfix {

void TeacherConfig::validate() const {
    if (!(t1 > 0.0) || !(t2 > 0.0)) throw InvalidArgument("TeacherConfig: temperatures must be positive");
    if (!(lr > 0.0)) throw InvalidArgument("TeacherConfig: lr must be positive");
    if (batch == 0) throw InvalidArgument("TeacherConfig: batch must be >= 1");
}

double residual_coefficient(std::span<const double> p_org_probs, const ConfusedSet& gamma) {
    const double total = std::accumulate(p_org_probs.begin(), p_org_probs.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("residual_coefficient: input is not a distribution");
    double outside = 0.0;
    for (std::size_t c = 0; c < p_org_probs.size(); ++c)
        if (!gamma.contains(static_cast<int>(c))) outside += p_org_probs[c];
    return std::clamp(1.0 - outside, 0.0, 1.0);
}

std::vector<double> build_teacher(std::span<const double> p_cbm_star, std::span<const double> p_org_logits,
                                  const ConfusedSet& gamma, double t1) {
    if (p_cbm_star.size() != gamma.size()) throw DimensionError("build_teacher: CBM output length != N_gamma");
    if (!gamma.gamma.empty() && static_cast<std::size_t>(gamma.gamma.back()) >= p_org_logits.size())
        throw DimensionError("build_teacher: gamma class id outside the logit vector");
    std::vector<double> teacher = softmax(p_org_logits, 1.0);
    const double pr = residual_coefficient(teacher, gamma);
    const auto cbm = softmax(p_cbm_star, t1);
    for (std::size_t k = 0; k < gamma.size(); ++k) teacher[gamma.gamma[k]] = pr * cbm[k];
    return teacher;
}

std::vector<double> student(std::span<const double> logits, double t2) {
    if (!(t2 > 0.0)) throw InvalidArgument("student: temperature must be positive");
    return softmax(logits, t2);
}

double distillation_loss(std::span<const double> teacher, std::span<const double> logits, double t2) {
    if (teacher.size() != logits.size()) throw DimensionError("distillation_loss: length mismatch");
    const auto p = student(logits, t2);
    double loss = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) loss -= teacher[k] * std::log(p[k] + kLogEps);
    return loss;
}

std::vector<double> distillation_grad(std::span<const double> teacher, std::span<const double> logits, double t2) {
    if (teacher.size() != logits.size()) throw DimensionError("distillation_grad: length mismatch");
    const auto p = student(logits, t2);
    std::vector<double> r(p.size());
    double r_sum = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        r[k] = teacher[k] * p[k] / (p[k] + kLogEps);
        r_sum += r[k];
    }
    std::vector<double> g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) g[j] = (p[j] * r_sum - r[j]) / t2;
    return g;
}

Matrix build_teachers(const Matrix& p_cbm_star, const Matrix& p_org_logits, const ConfusedSet& gamma, double t1) {
    if (p_cbm_star.rows() != p_org_logits.rows()) throw DimensionError("build_teachers: row mismatch");
    Matrix out(p_org_logits.rows(), p_org_logits.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        const auto t = build_teacher(p_cbm_star.row(i), p_org_logits.row(i), gamma, t1);
        std::copy(t.begin(), t.end(), out.row(i).begin());
    }
    return out;
}

double transfer_loss(const BlackBoxHead& head, const Matrix& features, const Matrix& teachers, double t2) {
    const Matrix logits = forward(head, features);
    if (teachers.rows() != logits.rows() || teachers.cols() != logits.cols())
        throw DimensionError("transfer_loss: teacher shape mismatch");
    if (logits.rows() == 0) throw InvalidArgument("transfer_loss: empty set");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) total += distillation_loss(teachers.row(i), logits.row(i), t2);
    return total / static_cast<double>(logits.rows());
}

namespace {

Matrix logit_grads(const BlackBoxHead& head, const Matrix& features, const Matrix& teachers, double t2) {
    const Matrix logits = forward(head, features);
    if (teachers.rows() != logits.rows() || teachers.cols() != logits.cols())
        throw DimensionError("transfer: teacher shape mismatch");
    Matrix grads(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto g = distillation_grad(teachers.row(i), logits.row(i), t2);
        std::copy(g.begin(), g.end(), grads.row(i).begin());
    }
    return grads;
}

}  // namespace

BlackBoxHead transfer_grad(const BlackBoxHead& head, const Matrix& features, const Matrix& teachers, double t2) {
    const Matrix grads = logit_grads(head, features, teachers, t2);
    // fine_tune_step with lr = -1 from a zero head yields exactly the mean gradient.
    BlackBoxHead zero(Matrix(head.n_class(), head.feature_dim()), std::vector<double>(head.n_class(), 0.0));
    return fine_tune_step(zero, features, grads, -1.0);
}

namespace {

TransferEpoch evaluate_epoch(std::size_t epoch, const BlackBoxHead& head, const FeatureSet& val,
                             const Matrix& teachers, const ConfusedSet& gamma, double t2) {
    TransferEpoch e;
    e.epoch = epoch;
    e.loss = transfer_loss(head, val.features, teachers, t2);
    const auto preds = predict(head, val.features);
    const auto outside = gamma.complement(head.n_class());
    auto safe_acc = [&](std::span<const int> filter) {
        const bool any = std::any_of(val.labels.begin(), val.labels.end(), [&](int y) {
            return std::find(filter.begin(), filter.end(), y) != filter.end();
        });
        return any ? accuracy(preds, val.labels, filter) : 0.0;
    };
    e.gamma_acc = safe_acc(gamma.gamma);
    e.non_gamma_acc = safe_acc(outside);
    return e;
}

}  // namespace

TransferResult transfer(const BlackBoxHead& head, const BlackBoxHead& frozen_copy, const CbmModel& cbm_bar,
                        const Matrix& val_scores, const FeatureSet& val, const TeacherConfig& cfg) {
    cfg.validate();
    if (val.size() == 0) throw InvalidArgument("transfer: empty validation set");
    val.validate(head.n_class());
    if (val_scores.rows() != val.size()) throw DimensionError("transfer: one score row per validation sample required");

    const Matrix teachers =
        build_teachers(cbm_forward(cbm_bar, val_scores), forward(frozen_copy, val.features), cbm_bar.gamma, cfg.t1);

    TransferResult result{head, {}};
    result.log.push_back(evaluate_epoch(0, result.head, val, teachers, cbm_bar.gamma, cfg.t2));

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(val.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Matrix x = select_rows(val.features, idx);
            const Matrix grads = logit_grads(result.head, x, select_rows(teachers, idx), cfg.t2);
            result.head = fine_tune_step(result.head, x, grads, cfg.lr);
        }
        result.log.push_back(evaluate_epoch(epoch, result.head, val, teachers, cbm_bar.gamma, cfg.t2));
    }
    return result;
}

std::string transfer_log_to_json(const std::vector<TransferEpoch>& log) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : log)
        arr.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"gamma_acc", e.gamma_acc}, {"non_gamma_acc", e.non_gamma_acc}});
    return arr.dump(2) + "\n";
}

}  // namespace cbmfix
