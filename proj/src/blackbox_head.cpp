#include "cbmfix/blackbox_head.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace cbmfix {

namespace fs = std::filesystem;

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw InvalidArgument("unknown split '" + s + "'");
}

void FeatureSet::validate(std::size_t n_class) const {
    if (features.rows() != labels.size()) {
        throw DimensionError("FeatureSet(" + to_string(split) + "): " + std::to_string(features.rows()) +
                             " feature rows but " + std::to_string(labels.size()) + " labels");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= n_class) {
            throw InvalidArgument("FeatureSet(" + to_string(split) + "): label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(n_class) + ")");
        }
    }
}

FeatureSet subset(const FeatureSet& fs, std::span<const std::size_t> rows) {
    FeatureSet out;
    out.features = select_rows(fs.features, rows);
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(fs.labels.at(r));
    out.split = fs.split;
    return out;
}

BlackBoxHead::BlackBoxHead(Matrix w, std::vector<double> b) : weights(std::move(w)), bias(std::move(b)) {
    if (bias.size() != weights.rows()) {
        throw DimensionError("BlackBoxHead: bias length " + std::to_string(bias.size()) + " != n_class " +
                             std::to_string(weights.rows()));
    }
}

Matrix forward(const BlackBoxHead& head, const Matrix& features) {
    if (features.cols() != head.feature_dim()) {
        throw DimensionError("forward: features have " + std::to_string(features.cols()) + " columns, head expects " +
                             std::to_string(head.feature_dim()));
    }
    Matrix logits = matmul_bt(features, head.weights);
    for (std::size_t i = 0; i < logits.rows(); ++i)
        for (std::size_t c = 0; c < logits.cols(); ++c) logits(i, c) += head.bias[c];
    return logits;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw InvalidArgument("softmax: temperature must be positive");
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - mx) / temperature);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::vector<int> argmax_rows(const Matrix& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) out[i] = static_cast<int>(argmax(logits.row(i)));
    return out;
}

std::vector<int> predict(const BlackBoxHead& head, const Matrix& features) {
    return argmax_rows(forward(head, features));
}

BlackBoxHead fine_tune_step(const BlackBoxHead& head, const Matrix& features, const Matrix& grad_logits, double lr) {
    if (grad_logits.rows() != features.rows() || grad_logits.cols() != head.n_class() ||
        features.cols() != head.feature_dim()) {
        throw DimensionError("fine_tune_step: gradient/feature shapes do not match the head");
    }
    BlackBoxHead out = head;
    const std::size_t n = features.rows();
    if (n == 0 || lr == 0.0) return out;
    const double scale = lr / static_cast<double>(n);
    for (std::size_t c = 0; c < head.n_class(); ++c) {
        auto wrow = out.weights.row(c);
        double bias_grad = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad_logits(i, c);
            if (g == 0.0) continue;
            bias_grad += g;
            auto x = features.row(i);
            for (std::size_t j = 0; j < wrow.size(); ++j) wrow[j] -= scale * g * x[j];
        }
        out.bias[c] -= scale * bias_grad;
    }
    return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels,
                std::optional<std::span<const int>> class_filter) {
    if (predictions.size() != labels.size()) throw DimensionError("accuracy: predictions/labels length mismatch");
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (class_filter && std::find(class_filter->begin(), class_filter->end(), labels[i]) == class_filter->end())
            continue;
        ++total;
        if (predictions[i] == labels[i]) ++hit;
    }
    if (total == 0) throw InvalidArgument("accuracy: no samples left after class filter");
    return static_cast<double>(hit) / static_cast<double>(total);
}

double accuracy(const BlackBoxHead& head, const FeatureSet& fs, std::optional<std::span<const int>> class_filter) {
    fs.validate(head.n_class());
    const auto preds = predict(head, fs.features);
    return accuracy(preds, fs.labels, class_filter);
}

void save_head(const BlackBoxHead& head, const fs::path& dir, const std::string& prefix) {
    save_matrix(head.weights, dir / (prefix + "_weights.f64"));
    save_matrix(row_matrix(head.bias), dir / (prefix + "_bias.f64"));
    nlohmann::json meta = {{"n_class", head.n_class()}, {"p", head.feature_dim()}};
    write_text(dir / (prefix + ".json"), meta.dump(2) + "\n");
}

BlackBoxHead load_head(const fs::path& dir, const std::string& prefix) {
    auto meta = nlohmann::json::parse(read_text(dir / (prefix + ".json")));
    Matrix w = load_matrix(dir / (prefix + "_weights.f64"));
    Matrix b = load_matrix(dir / (prefix + "_bias.f64"));
    if (b.rows() != 1) throw FormatError("head bias must be a 1-row tensor");
    if (meta.at("n_class").get<std::size_t>() != w.rows() || meta.at("p").get<std::size_t>() != w.cols())
        throw FormatError("head meta disagrees with weight tensor dims");
    return BlackBoxHead(std::move(w), std::vector<double>(b.data().begin(), b.data().end()));
}

}  // namespace cbmfix
