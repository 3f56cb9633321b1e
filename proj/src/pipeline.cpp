#include "cbmfix/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cbmfix {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string to_string(InterventionMode m) {
    switch (m) {
        case InterventionMode::gradient: return "gradient";
        case InterventionMode::random: return "random";
        case InterventionMode::replace: return "replace";
        case InterventionMode::none: return "none";
    }
    return "?";
}

InterventionMode mode_from_string(const std::string& s) {
    if (s == "gradient") return InterventionMode::gradient;
    if (s == "random") return InterventionMode::random;
    if (s == "replace") return InterventionMode::replace;
    if (s == "none") return InterventionMode::none;
    throw InvalidArgument("unknown intervention mode '" + s + "' (gradient|random|replace|none)");
}

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw InvalidArgument("RunConfig: " + what);
    };
    require(k_pairs >= 1, "k_pairs must be >= 1");
    require(max_fraction > 0.0 && max_fraction <= 1.0, "max_fraction must be in (0, 1]");
    require(n_visual >= 1, "n_visual must be >= 1");
    require(nmf_iters >= 1, "nmf_iters must be >= 1");
    if (mode == InterventionMode::gradient || mode == InterventionMode::replace)
        require(q >= 10 && q <= 100 && q % 2 == 0, "q must be even and within [10, 100]");
    if (mode == InterventionMode::random) require(q >= 1, "q must be >= 1");
    if (mode == InterventionMode::replace) require(q_bar_replace >= 1, "q_bar_replace must be >= 1");
    require(cbm.lr > 0.0 && cbm.batch >= 1, "cbm lr must be positive and batch >= 1");
    teacher.validate();
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

RunConfig config_from_json(const std::string& text, const fs::path& base_dir) {
    const auto j = nlohmann::json::parse(text);
    RunConfig cfg;
    const auto& in = j.at("inputs");
    auto path_of = [&](const char* key) { return resolve(base_dir, in.value(key, std::string{})); };
    cfg.inputs.features_val = path_of("features_val");
    cfg.inputs.labels_val = path_of("labels_val");
    cfg.inputs.features_test = path_of("features_test");
    cfg.inputs.labels_test = path_of("labels_test");
    cfg.inputs.concepts = path_of("concepts");
    cfg.inputs.text_embeddings = path_of("text_embeddings");
    cfg.inputs.projector = path_of("projector");
    cfg.inputs.head_dir = path_of("head_dir");
    cfg.inputs.head_prefix = in.value("head_prefix", std::string("head"));
    cfg.inputs.search_concepts = path_of("search_concepts");
    cfg.inputs.search_embeddings = path_of("search_embeddings");

    cfg.k_pairs = j.value("k_pairs", cfg.k_pairs);
    cfg.max_fraction = j.value("max_fraction", cfg.max_fraction);
    cfg.n_visual = j.value("n_visual", cfg.n_visual);
    cfg.nmf_iters = j.value("nmf_iters", cfg.nmf_iters);
    cfg.q = j.value("q", cfg.q);
    cfg.q_bar_replace = j.value("q_bar_replace", cfg.q_bar_replace);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.mode = mode_from_string(j.value("mode", std::string("gradient")));
    if (j.contains("cbm")) {
        const auto& c = j.at("cbm");
        cfg.cbm.lr = c.value("lr", cfg.cbm.lr);
        cfg.cbm.epochs = c.value("epochs", cfg.cbm.epochs);
        cfg.cbm.batch = c.value("batch", cfg.cbm.batch);
    }
    if (j.contains("teacher")) {
        const auto& t = j.at("teacher");
        cfg.teacher.t1 = t.value("t1", cfg.teacher.t1);
        cfg.teacher.t2 = t.value("t2", cfg.teacher.t2);
        cfg.teacher.lr = t.value("lr", cfg.teacher.lr);
        cfg.teacher.epochs = t.value("epochs", cfg.teacher.epochs);
        cfg.teacher.batch = t.value("batch", cfg.teacher.batch);
    }
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    const auto& in = cfg.inputs;
    ojson j = {
        {"inputs",
         {{"features_val", in.features_val.string()},
          {"labels_val", in.labels_val.string()},
          {"features_test", in.features_test.string()},
          {"labels_test", in.labels_test.string()},
          {"concepts", in.concepts.string()},
          {"text_embeddings", in.text_embeddings.string()},
          {"projector", in.projector.string()},
          {"head_dir", in.head_dir.string()},
          {"head_prefix", in.head_prefix},
          {"search_concepts", in.search_concepts.string()},
          {"search_embeddings", in.search_embeddings.string()}}},
        {"k_pairs", cfg.k_pairs},
        {"max_fraction", cfg.max_fraction},
        {"n_visual", cfg.n_visual},
        {"nmf_iters", cfg.nmf_iters},
        {"q", cfg.q},
        {"cbm", {{"lr", cfg.cbm.lr}, {"epochs", cfg.cbm.epochs}, {"batch", cfg.cbm.batch}}},
        {"teacher",
         {{"t1", cfg.teacher.t1},
          {"t2", cfg.teacher.t2},
          {"lr", cfg.teacher.lr},
          {"epochs", cfg.teacher.epochs},
          {"batch", cfg.teacher.batch}}},
        {"mode", to_string(cfg.mode)},
        {"q_bar_replace", cfg.q_bar_replace},
        {"seed", cfg.seed},
    };
    return j.dump(2) + "\n";
}

RunConfig load_config(const fs::path& path) {
    return config_from_json(read_text(path), path.has_parent_path() ? path.parent_path() : fs::path{});
}

RunConfig synth_run_config(const fs::path& dir) {
    RunConfig cfg;
    auto& in = cfg.inputs;
    in.features_val = dir / "features_val.f64";
    in.labels_val = dir / "labels_val.csv";
    in.features_test = dir / "features_test.f64";
    in.labels_test = dir / "labels_test.csv";
    in.concepts = dir / "concepts.txt";
    in.text_embeddings = dir / "text_embeddings.f64";
    in.projector = dir / "projector.f64";
    in.head_dir = dir;
    in.search_concepts = dir / "search_concepts.txt";
    in.search_embeddings = dir / "search_embeddings.f64";
    return cfg;
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

fs::path default_output_root() {
    if (const char* env = std::getenv("CBMFIX_OUTPUT_ROOT"); env && *env) return fs::path(env);
    return fs::path("cbmfix_out");
}

namespace {

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t combine(std::uint64_t upstream, const std::string& stage, const ojson& params) {
    return fnv1a(stage + "|" + hex(upstream) + "|" + params.dump());
}

std::uint64_t hash_file(const fs::path& p, std::uint64_t h) {
    if (p.empty()) return fnv1a("<none>", h);
    return fnv1a(read_text(p), fnv1a(p.filename().string(), h));
}

std::vector<std::size_t> rows_with_labels_in(std::span<const int> labels, const ConfusedSet& gamma) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (gamma.contains(labels[i])) rows.push_back(i);
    return rows;
}

std::vector<double> json_doubles(const fs::path& p, const char* key) {
    return nlohmann::json::parse(read_text(p)).at(key).get<std::vector<double>>();
}

}  // namespace

Pipeline::Pipeline(RunConfig cfg, fs::path output_root) : cfg_(std::move(cfg)), root_(std::move(output_root)) {
    cfg_.validate();
    const auto& in = cfg_.inputs;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const fs::path& sidecar : {sidecar_path(in.features_val), sidecar_path(in.features_test),
                                    sidecar_path(in.text_embeddings), sidecar_path(in.projector),
                                    sidecar_path(in.head_dir / (in.head_prefix + "_weights.f64")),
                                    sidecar_path(in.head_dir / (in.head_prefix + "_bias.f64"))}) {
        if (!fs::exists(sidecar)) throw StageError("inputs", "missing input file " + sidecar.string());
        h = hash_file(sidecar, h);
    }
    for (const fs::path& p : {in.labels_val, in.labels_test, in.concepts}) {
        if (!fs::exists(p)) throw StageError("inputs", "missing input file " + p.string());
        h = hash_file(p, h);
    }
    input_key_ = h;
    // The search set only feeds the intervene stage.
    if (cfg_.mode == InterventionMode::replace) {
        for (const fs::path& p : {in.search_concepts, sidecar_path(in.search_embeddings)}) {
            if (p.empty() || !fs::exists(p)) throw StageError("inputs", "replace mode needs a search set: " + p.string());
            search_key_ = hash_file(p, search_key_);
        }
    }
}

fs::path Pipeline::stage_dir(const std::string& stage) const {
    auto it = keys_.find(stage);
    if (it == keys_.end()) throw InvalidArgument("stage '" + stage + "' has not run");
    return root_ / (stage + "-" + hex(it->second));
}

namespace {

template <class Compute, class Load>
auto run_cached(const fs::path& root, const std::string& stage, std::uint64_t key, Compute compute, Load load) {
    const fs::path dir = root / (stage + "-" + hex(key));
    try {
        if (fs::exists(dir / ".complete")) return load(dir);
        fs::path tmp = dir;
        tmp += ".partial";
        fs::remove_all(tmp);
        fs::create_directories(tmp);
        auto result = compute(tmp);
        write_text(tmp / ".complete", "");
        fs::remove_all(dir);
        fs::rename(tmp, dir);
        return result;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

}  // namespace

const Pipeline::Inputs& Pipeline::inputs() {
    if (inputs_) return *inputs_;
    try {
        const auto& in = cfg_.inputs;
        Inputs x;
        x.head = load_head(in.head_dir, in.head_prefix);
        x.val = FeatureSet{load_matrix(in.features_val), load_labels(in.labels_val), Split::val};
        x.test = FeatureSet{load_matrix(in.features_test), load_labels(in.labels_test), Split::test};
        x.val.validate(x.head.n_class());
        x.test.validate(x.head.n_class());
        x.bottleneck = load_bottleneck(in.concepts, in.text_embeddings);
        x.projector = load_matrix(in.projector);
        if (x.projector.cols() != x.head.feature_dim())
            throw DimensionError("projector has " + std::to_string(x.projector.cols()) + " columns, features have " +
                                 std::to_string(x.head.feature_dim()));
        if (x.projector.rows() != x.bottleneck.dim())
            throw DimensionError("projector rows != text embedding dim");
        inputs_ = std::move(x);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("inputs", e.what());
    }
    return *inputs_;
}

std::vector<std::size_t> Pipeline::gamma_rows(const FeatureSet& fs, const ConfusedSet& gamma) const {
    return rows_with_labels_in(fs.labels, gamma);
}

const Pipeline::Mined& Pipeline::mine() {
    if (mined_) return *mined_;
    const auto key = combine(input_key_, "mine", {{"k_pairs", cfg_.k_pairs}, {"max_fraction", cfg_.max_fraction}});
    keys_["mine"] = key;
    mined_ = run_cached(
        root_, "mine", key,
        [&](const fs::path& dir) {
            const auto& in = inputs();
            Mined m;
            m.record = build_confusion(in.head, in.val);
            m.gamma = select_confused(m.record, cfg_.k_pairs, cfg_.max_fraction);
            save_matrix(m.record.counts, dir / "confusion_counts.f64");
            write_text(dir / "confusion.csv", confusion_to_csv(m.record));
            write_text(dir / "pairs.csv", pair_ranking_to_csv(m.record));
            write_text(dir / "gamma.json", confused_set_to_json(m.gamma));
            return m;
        },
        [&](const fs::path& dir) {
            Mined m;
            const Matrix counts = load_matrix(dir / "confusion_counts.f64");
            std::vector<int> labels, preds;
            for (std::size_t a = 0; a < counts.rows(); ++a)
                for (std::size_t b = 0; b < counts.cols(); ++b)
                    for (long c = 0; c < std::lround(counts(a, b)); ++c) {
                        labels.push_back(static_cast<int>(a));
                        preds.push_back(static_cast<int>(b));
                    }
            m.record = confusion_from_predictions(labels, preds, counts.rows());
            m.gamma = confused_set_from_json(read_text(dir / "gamma.json"));
            return m;
        });
    return *mined_;
}

const Pipeline::Extracted& Pipeline::extract() {
    if (extracted_) return *extracted_;
    const auto& gamma = mine().gamma;
    const auto key = combine(keys_["mine"], "extract",
                             {{"n_visual", cfg_.n_visual}, {"nmf_iters", cfg_.nmf_iters}, {"seed", cfg_.seed}});
    keys_["extract"] = key;
    extracted_ = run_cached(
        root_, "extract", key,
        [&](const fs::path& dir) {
            const auto& in = inputs();
            const auto rows = gamma_rows(in.val, gamma);
            if (rows.empty()) throw InvalidArgument("no validation samples belong to the confused classes");
            auto [model, coeffs] = fit_nmf(select_rows(in.val.features, rows), cfg_.n_visual, cfg_.nmf_iters, cfg_.seed);
            save_nmf(model, dir);
            return Extracted{std::move(model)};
        },
        [&](const fs::path& dir) { return Extracted{load_nmf(dir)}; });
    return *extracted_;
}

Pipeline::Scored Pipeline::score_with(const ConceptBottleneck& bottleneck) {
    const auto& in = inputs();
    const auto& nmf = extract().nmf;
    auto score_split = [&](const FeatureSet& fs) {
        return cbmfix::score(visual_concept_embeddings(nmf, project_coeffs(nmf, fs.features), in.projector), bottleneck);
    };
    return Scored{score_split(in.val), score_split(in.test)};
}

const Pipeline::Scored& Pipeline::score() {
    if (scored_) return *scored_;
    extract();
    const auto key = combine(keys_["extract"], "score", ojson::object());
    keys_["score"] = key;
    scored_ = run_cached(
        root_, "score", key,
        [&](const fs::path& dir) {
            Scored s = score_with(inputs().bottleneck);
            save_matrix(s.val, dir / "scores_val.f64");
            save_matrix(s.test, dir / "scores_test.f64");
            return s;
        },
        [&](const fs::path& dir) {
            return Scored{load_matrix(dir / "scores_val.f64"), load_matrix(dir / "scores_test.f64")};
        });
    return *scored_;
}

const Pipeline::Approximated& Pipeline::approximate() {
    if (approximated_) return *approximated_;
    const auto& scores = score();
    const auto& gamma = mine().gamma;
    const auto key = combine(keys_["score"], "approximate",
                             {{"lr", cfg_.cbm.lr}, {"epochs", cfg_.cbm.epochs}, {"batch", cfg_.cbm.batch}});
    keys_["approximate"] = key;
    approximated_ = run_cached(
        root_, "approximate", key,
        [&](const fs::path& dir) {
            const auto& in = inputs();
            const auto rows = gamma_rows(in.val, gamma);
            const Matrix s = select_rows(scores.val, rows);
            const Matrix targets = gamma_targets(in.head, select_rows(in.val.features, rows), gamma);
            CbmFitConfig fc = cfg_.cbm;
            fc.seed = cfg_.seed + 2;
            auto fitted = fit(init_cbm(gamma, in.bottleneck.size(), cfg_.seed + 1), s, targets, fc);
            Approximated a{std::move(fitted.model), std::move(fitted.loss_curve), 0.0};
            a.fidelity_val = fidelity(a.cbm, s, targets);
            save_cbm(a.cbm, dir, "cbm");
            write_text(dir / "loss_lp.json",
                       ojson{{"loss_lp", a.loss_curve}, {"fidelity_val", a.fidelity_val}}.dump(2) + "\n");
            return a;
        },
        [&](const fs::path& dir) {
            Approximated a{load_cbm(dir, "cbm"), json_doubles(dir / "loss_lp.json", "loss_lp"), 0.0};
            a.fidelity_val = nlohmann::json::parse(read_text(dir / "loss_lp.json")).at("fidelity_val").get<double>();
            return a;
        });
    return *approximated_;
}

const Pipeline::Intervened& Pipeline::intervene() {
    if (intervened_) return *intervened_;
    const auto& approx = approximate();
    const auto& scores = score();
    const auto key = combine(keys_["approximate"], "intervene",
                             {{"mode", to_string(cfg_.mode)}, {"q", cfg_.q}, {"q_bar_replace", cfg_.q_bar_replace},
                              {"seed", cfg_.seed}, {"search", hex(search_key_)}});
    keys_["intervene"] = key;
    const bool replaced = cfg_.mode == InterventionMode::replace;
    intervened_ = run_cached(
        root_, "intervene", key,
        [&](const fs::path& dir) {
            const auto& in = inputs();
            Intervened r;
            r.ledger = accumulate_all(approx.cbm, scores.val, in.val.labels);
            switch (cfg_.mode) {
                case InterventionMode::gradient:
                case InterventionMode::replace: r.plan = select(r.ledger, cfg_.q); break;
                case InterventionMode::random:
                    r.plan = random_plan(approx.cbm.n_concepts(), approx.cbm.gamma, cfg_.q, cfg_.seed + 4);
                    break;
                case InterventionMode::none:
                    r.plan.indices.assign(approx.cbm.gamma.size(), {});
                    break;
            }
            if (replaced) {
                const auto search = load_bottleneck(cfg_.inputs.search_concepts, cfg_.inputs.search_embeddings);
                auto rep = replace_concepts(approx.cbm, r.plan, in.bottleneck, search, cfg_.q_bar_replace);
                r.cbm_bar = std::move(rep.cbm);
                r.bottleneck = std::move(rep.bottleneck);
                r.scores = score_with(r.bottleneck);
                ojson swaps = ojson::array();
                for (const auto& s : rep.swaps)
                    swaps.push_back({{"target", s.target},
                                     {"replaced", in.bottleneck.names[s.target]},
                                     {"candidate", s.candidate},
                                     {"with", search.names[s.candidate]},
                                     {"score", s.score}});
                write_text(dir / "swaps.json", swaps.dump(2) + "\n");
                save_bottleneck(r.bottleneck, dir / "concepts_replaced.txt", dir / "text_embeddings_replaced.f64");
                save_matrix(r.scores.val, dir / "scores_val.f64");
                save_matrix(r.scores.test, dir / "scores_test.f64");
            } else {
                r.cbm_bar = apply(approx.cbm, r.plan);
                r.bottleneck = in.bottleneck;
                r.scores = scores;
            }
            save_matrix(r.ledger.s_nt, dir / "s_nt.f64");
            save_matrix(r.ledger.s_pf, dir / "s_pf.f64");
            write_text(dir / "plan.json", plan_to_json(r.plan, approx.cbm.gamma));
            save_cbm(r.cbm_bar, dir, "cbm_bar");
            write_text(dir / "intervention_report.txt",
                       intervention_report(r.plan, approx.cbm.gamma, in.bottleneck, &r.ledger));
            ojson meta = {{"q", r.plan.q}, {"samples_seen", r.ledger.samples_seen}};
            write_text(dir / "intervene.json", meta.dump(2) + "\n");
            return r;
        },
        [&](const fs::path& dir) {
            Intervened r;
            r.ledger.s_nt = load_matrix(dir / "s_nt.f64");
            r.ledger.s_pf = load_matrix(dir / "s_pf.f64");
            const auto meta = nlohmann::json::parse(read_text(dir / "intervene.json"));
            r.ledger.samples_seen = meta.at("samples_seen").get<std::size_t>();
            r.plan = plan_from_json(read_text(dir / "plan.json"), approx.cbm.gamma);
            r.plan.q = meta.at("q").get<std::size_t>();
            r.cbm_bar = load_cbm(dir, "cbm_bar");
            if (replaced) {
                r.bottleneck = load_bottleneck(dir / "concepts_replaced.txt", dir / "text_embeddings_replaced.f64");
                r.scores = Scored{load_matrix(dir / "scores_val.f64"), load_matrix(dir / "scores_test.f64")};
            } else {
                r.bottleneck = inputs().bottleneck;
                r.scores = scores;
            }
            return r;
        });
    return *intervened_;
}

const Pipeline::Transferred& Pipeline::transfer() {
    if (transferred_) return *transferred_;
    const auto& iv = intervene();
    const auto key = combine(keys_["intervene"], "transfer",
                             {{"t1", cfg_.teacher.t1},
                              {"t2", cfg_.teacher.t2},
                              {"lr", cfg_.teacher.lr},
                              {"epochs", cfg_.teacher.epochs},
                              {"batch", cfg_.teacher.batch}});
    keys_["transfer"] = key;
    transferred_ = run_cached(
        root_, "transfer", key,
        [&](const fs::path& dir) {
            const auto& in = inputs();
            TeacherConfig tc = cfg_.teacher;
            tc.seed = cfg_.seed + 3;
            const BlackBoxHead frozen = in.head;
            auto res = cbmfix::transfer(in.head, frozen, iv.cbm_bar, iv.scores.val, in.val, tc);
            save_head(res.head, dir, "head_after");
            write_text(dir / "transfer_log.json", transfer_log_to_json(res.log));
            return Transferred{std::move(res.head), std::move(res.log)};
        },
        [&](const fs::path& dir) {
            Transferred t{load_head(dir, "head_after"), {}};
            for (const auto& e : nlohmann::json::parse(read_text(dir / "transfer_log.json")))
                t.log.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(),
                                 e.at("gamma_acc").get<double>(), e.at("non_gamma_acc").get<double>()});
            return t;
        });
    return *transferred_;
}

RunReport compare_predictions(std::span<const int> labels, std::span<const int> before, std::span<const int> after,
                              const ConfusedSet& gamma, std::size_t n_class) {
    if (labels.size() != before.size() || labels.size() != after.size())
        throw DimensionError("compare_predictions: length mismatch");
    if (labels.empty()) throw InvalidArgument("compare_predictions: empty test set");
    RunReport r;
    r.gamma = gamma.gamma;
    r.n_test = labels.size();
    r.pre_acc = accuracy(before, labels);
    r.post_acc = accuracy(after, labels);
    const auto outside = gamma.complement(n_class);
    auto has_any = [&](std::span<const int> classes) {
        return std::any_of(labels.begin(), labels.end(), [&](int y) {
            return std::find(classes.begin(), classes.end(), y) != classes.end();
        });
    };
    if (has_any(gamma.gamma)) {
        r.pre_gamma_acc = accuracy(before, labels, std::span<const int>(gamma.gamma));
        r.post_gamma_acc = accuracy(after, labels, std::span<const int>(gamma.gamma));
    }
    if (has_any(outside)) {
        r.pre_non_gamma_acc = accuracy(before, labels, std::span<const int>(outside));
        r.post_non_gamma_acc = accuracy(after, labels, std::span<const int>(outside));
    }
    for (int c : gamma.gamma) r.per_class.push_back({c, 0, 0});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool ok_before = before[i] == labels[i], ok_after = after[i] == labels[i];
        r.pre_correct += ok_before;
        r.post_correct += ok_after;
        if (!ok_before && ok_after) {
            ++r.corrected;
            if (gamma.contains(before[i]) || gamma.contains(after[i]) || gamma.contains(labels[i])) ++r.coverage;
            if (auto row = gamma.row_of(before[i])) ++r.per_class[*row].minus_n;
            if (auto row = gamma.row_of(labels[i])) ++r.per_class[*row].plus_n;
        }
        if (ok_before && !ok_after) ++r.newly_broken;
    }
    return r;
}

const RunReport& Pipeline::evaluate() {
    if (report_) return *report_;
    const auto& tr = transfer();
    const auto& iv = intervene();
    const auto& approx = approximate();
    const auto& scores = score();
    const auto key = combine(keys_["transfer"], "evaluate", ojson::object());
    keys_["evaluate"] = key;
    auto build = [&]() {
        const auto& in = inputs();
        const auto& gamma = approx.cbm.gamma;
        RunReport r = compare_predictions(in.test.labels, predict(in.head, in.test.features),
                                          predict(tr.head, in.test.features), gamma, in.head.n_class());
        r.mode = to_string(cfg_.mode);
        r.q = iv.plan.q;
        r.q_bar = iv.plan.q_bar();
        for (std::size_t k = 0; k < gamma.size(); ++k) {
            auto& names = r.intervention_concepts[gamma.gamma[k]];
            for (std::size_t j : iv.plan.indices[k]) names.push_back(in.bottleneck.names.at(j));
        }
        r.cbm_fidelity_val = approx.fidelity_val;
        const auto rows = gamma_rows(in.test, gamma);
        if (!rows.empty()) {
            const Matrix s_before = select_rows(scores.test, rows);
            const Matrix s_after = select_rows(iv.scores.test, rows);
            r.cbm_fidelity_test = fidelity(approx.cbm, s_before, in.head, select_rows(in.test.features, rows));
            const double chance = 1.0 - 1.0 / static_cast<double>(gamma.size());
            r.approx_bias_test = (1.0 - r.cbm_fidelity_test) / chance;
            auto cbm_acc = [&](const CbmModel& m, const Matrix& s) {
                const auto pred = argmax_rows(cbm_forward(m, s));
                std::size_t hit = 0;
                for (std::size_t i = 0; i < rows.size(); ++i) hit += gamma.gamma[pred[i]] == in.test.labels[rows[i]];
                return static_cast<double>(hit) / static_cast<double>(rows.size());
            };
            r.cbm_gamma_acc_before = cbm_acc(approx.cbm, s_before);
            r.cbm_gamma_acc_after = cbm_acc(iv.cbm_bar, s_after);
        }
        r.loss_lp = approx.loss_curve;
        for (const auto& e : tr.log) r.loss_kt.push_back(e.loss);
        return r;
    };
    report_ = run_cached(
        root_, "evaluate", key,
        [&](const fs::path& dir) {
            RunReport r = build();
            write_text(dir / "report.json", report_to_json(r));
            write_text(dir / "report.txt", report_to_text(r));
            return r;
        },
        [&](const fs::path&) { return build(); });
    return *report_;
}

RunReport run(const RunConfig& cfg, const fs::path& output_root) {
    Pipeline p(cfg, output_root);
    return p.evaluate();
}

// ---------------------------------------------------------------------------

std::string report_to_json(const RunReport& r) {
    ojson per_class = ojson::array();
    for (const auto& d : r.per_class) per_class.push_back({{"class", d.cls}, {"minus_n", d.minus_n}, {"plus_n", d.plus_n}});
    ojson concepts = ojson::object();
    for (const auto& [cls, names] : r.intervention_concepts) concepts[std::to_string(cls)] = names;
    ojson j = {
        {"mode", r.mode},
        {"gamma", r.gamma},
        {"q", r.q},
        {"q_bar", r.q_bar},
        {"n_test", r.n_test},
        {"pre_acc", r.pre_acc},
        {"post_acc", r.post_acc},
        {"pre_gamma_acc", r.pre_gamma_acc},
        {"post_gamma_acc", r.post_gamma_acc},
        {"pre_non_gamma_acc", r.pre_non_gamma_acc},
        {"post_non_gamma_acc", r.post_non_gamma_acc},
        {"pre_correct", r.pre_correct},
        {"post_correct", r.post_correct},
        {"corrected", r.corrected},
        {"newly_broken", r.newly_broken},
        {"coverage", r.coverage},
        {"per_class", per_class},
        {"intervention_concepts", concepts},
        {"cbm_fidelity_val", r.cbm_fidelity_val},
        {"cbm_fidelity_test", r.cbm_fidelity_test},
        {"approx_bias_test", r.approx_bias_test},
        {"cbm_gamma_acc_before", r.cbm_gamma_acc_before},
        {"cbm_gamma_acc_after", r.cbm_gamma_acc_after},
        {"loss_lp", r.loss_lp},
        {"loss_kt", r.loss_kt},
    };
    return j.dump(2) + "\n";
}

std::string report_to_text(const RunReport& r) {
    std::ostringstream out;
    char buf[256];
    out << "Intervention report (mode=" << r.mode << ", q=" << r.q << ", q_bar=" << r.q_bar << ")\n";
    out << "confused classes:";
    for (int c : r.gamma) out << ' ' << c;
    out << "\n\n";
    std::snprintf(buf, sizeof buf, "%-22s %10s %10s %8s\n", "accuracy (test)", "w/o INT", "w/ INT", "delta");
    out << buf;
    auto line = [&](const char* name, double pre, double post) {
        std::snprintf(buf, sizeof buf, "%-22s %9.2f%% %9.2f%% %+7.2f\n", name, 100 * pre, 100 * post, 100 * (post - pre));
        out << buf;
    };
    line("global", r.pre_acc, r.post_acc);
    line("confused classes", r.pre_gamma_acc, r.post_gamma_acc);
    line("other classes", r.pre_non_gamma_acc, r.post_non_gamma_acc);
    out << '\n';
    std::snprintf(buf, sizeof buf, "corrected %ld  coverage %ld  newly broken %ld  (of %zu test samples)\n", r.corrected,
                  r.coverage, r.newly_broken, r.n_test);
    out << buf;
    out << "per confused class (-n: fixed samples previously predicted as the class, +n: fixed samples of the class)\n";
    for (const auto& d : r.per_class) {
        std::snprintf(buf, sizeof buf, "  class %3d   -%ld  +%ld\n", d.cls, d.minus_n, d.plus_n);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "\nCBM fidelity val %.4f  test %.4f  approx bias %.4f\n", r.cbm_fidelity_val,
                  r.cbm_fidelity_test, r.approx_bias_test);
    out << buf;
    std::snprintf(buf, sizeof buf, "CBM confused-class accuracy (test) %.4f -> %.4f\n", r.cbm_gamma_acc_before,
                  r.cbm_gamma_acc_after);
    out << buf;
    out << "\nremoved concepts\n";
    for (const auto& [cls, names] : r.intervention_concepts) {
        out << "  class " << cls << ":";
        for (const auto& n : names) out << ' ' << n;
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------

std::vector<AblationRow> ablate_gamma_fraction(const RunConfig& cfg, std::span<const double> fractions,
                                               const fs::path& output_root) {
    std::vector<AblationRow> rows;
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw InvalidArgument("ablate: fractions must lie in (0, 1]");
        RunConfig c = cfg;
        c.max_fraction = f;
        Pipeline p(c, output_root);
        const std::size_t n_class = p.mine().record.n_class();
        (void)n_class;
        // Widen k_pairs so only the cap decides |Γ|.
        c.k_pairs = p.mine().record.pair_ranking.size();
        Pipeline wide(c, output_root);
        const RunReport& r = wide.evaluate();
        rows.push_back({f, r.gamma.size(), r.approx_bias_test, r.post_acc - r.pre_acc,
                        r.post_gamma_acc - r.pre_gamma_acc});
    }
    return rows;
}

std::string ablation_to_json(const std::vector<AblationRow>& rows) {
    ojson arr = ojson::array();
    for (const auto& r : rows)
        arr.push_back({{"fraction", r.fraction},
                       {"n_gamma", r.n_gamma},
                       {"approx_bias", r.approx_bias},
                       {"improvement", r.improvement},
                       {"gamma_improvement", r.gamma_improvement}});
    return arr.dump(2) + "\n";
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "fraction,n_gamma,approx_bias,improvement,gamma_improvement\n";
    for (const auto& r : rows)
        out << r.fraction << ',' << r.n_gamma << ',' << r.approx_bias << ',' << r.improvement << ','
            << r.gamma_improvement << '\n';
    return out.str();
}

}  // namespace cbmfix
