// Command-line driver for the staged intervention pipeline.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "cbmfix/pipeline.hpp"
#include "cbmfix/synth_benchmark.hpp"

namespace fs = std::filesystem;
using namespace cbmfix;

namespace {

struct Overrides {
    std::string config;
    std::string output_root;
    std::optional<std::size_t> k_pairs, n_visual, nmf_iters, q, cbm_epochs, cbm_batch, kt_epochs, kt_batch,
        q_bar_replace;
    std::optional<double> max_fraction, cbm_lr, kt_lr, t1, t2;
    std::optional<std::uint64_t> seed;
    std::string mode;
};

void add_run_options(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "Run config JSON (see `synth`, which writes one)")->required();
    cmd->add_option("-o,--output-root", o.output_root, "Stage output root (default: $CBMFIX_OUTPUT_ROOT or ./cbmfix_out)");
    cmd->add_option("--k-pairs", o.k_pairs, "Most-confused pairs forming the confused set");
    cmd->add_option("--max-fraction", o.max_fraction, "Cap on confused classes as a fraction of all classes");
    cmd->add_option("--n-visual", o.n_visual, "NMF visual concepts");
    cmd->add_option("--nmf-iters", o.nmf_iters, "NMF iterations");
    cmd->add_option("--q", o.q, "Concepts removed per confused class");
    cmd->add_option("--cbm-lr", o.cbm_lr);
    cmd->add_option("--cbm-epochs", o.cbm_epochs);
    cmd->add_option("--cbm-batch", o.cbm_batch);
    cmd->add_option("--kt-lr", o.kt_lr, "Transfer learning rate");
    cmd->add_option("--kt-epochs", o.kt_epochs, "Transfer epochs");
    cmd->add_option("--kt-batch", o.kt_batch);
    cmd->add_option("--t1", o.t1, "Temperature on intervened CBM logits");
    cmd->add_option("--t2", o.t2, "Temperature on head logits");
    cmd->add_option("--mode", o.mode, "gradient | random | replace | none");
    cmd->add_option("--q-bar-replace", o.q_bar_replace, "Concepts swapped in replace mode");
    cmd->add_option("--seed", o.seed);
}

RunConfig resolve(const Overrides& o) {
    RunConfig c = load_config(o.config);
    if (o.k_pairs) c.k_pairs = *o.k_pairs;
    if (o.max_fraction) c.max_fraction = *o.max_fraction;
    if (o.n_visual) c.n_visual = *o.n_visual;
    if (o.nmf_iters) c.nmf_iters = *o.nmf_iters;
    if (o.q) c.q = *o.q;
    if (o.cbm_lr) c.cbm.lr = *o.cbm_lr;
    if (o.cbm_epochs) c.cbm.epochs = *o.cbm_epochs;
    if (o.cbm_batch) c.cbm.batch = *o.cbm_batch;
    if (o.kt_lr) c.teacher.lr = *o.kt_lr;
    if (o.kt_epochs) c.teacher.epochs = *o.kt_epochs;
    if (o.kt_batch) c.teacher.batch = *o.kt_batch;
    if (o.t1) c.teacher.t1 = *o.t1;
    if (o.t2) c.teacher.t2 = *o.t2;
    if (!o.mode.empty()) c.mode = mode_from_string(o.mode);
    if (o.q_bar_replace) c.q_bar_replace = *o.q_bar_replace;
    if (o.seed) c.seed = *o.seed;
    c.validate();
    return c;
}

fs::path output_root(const Overrides& o) { return o.output_root.empty() ? default_output_root() : fs::path(o.output_root); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confusion-driven concept intervention for a black-box classifier head"};
    app.require_subcommand(1);

    std::string synth_dir, synth_spec_path;
    std::optional<std::uint64_t> synth_seed;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic benchmark and a matching config.json");
    synth->add_option("dir", synth_dir, "Destination directory")->required();
    synth->add_option("--spec", synth_spec_path, "SynthSpec JSON overriding the defaults");
    synth->add_option("--seed", synth_seed);

    Overrides o;
    const std::vector<std::string> stages = {"mine", "extract", "score", "approximate", "intervene", "transfer",
                                             "evaluate", "run"};
    std::map<std::string, CLI::App*> stage_cmds;
    for (const auto& s : stages) {
        auto* cmd = app.add_subcommand(s, s == "run" ? "Run every stage and print the report"
                                                     : "Run the pipeline up to the " + s + " stage");
        add_run_options(cmd, o);
        stage_cmds[s] = cmd;
    }
    std::vector<double> fractions = {0.1, 0.25, 0.5, 0.75, 1.0};
    std::string ablate_out;
    auto* ablate = app.add_subcommand("ablate", "Sweep the confused-class fraction");
    add_run_options(ablate, o);
    ablate->add_option("--fractions", fractions, "Fractions in (0, 1]")->delimiter(',');
    ablate->add_option("--csv", ablate_out, "Also write the rows as CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            SynthSpec spec = synth_spec_path.empty() ? SynthSpec{} : synth_spec_from_json(read_text(synth_spec_path));
            if (synth_seed) spec.seed = *synth_seed;
            const fs::path dir(synth_dir);
            write_synth(generate(spec), spec, dir);
            // Paths relative to the config file itself.
            RunConfig cfg = synth_run_config(".");
            cfg.seed = spec.seed;
            write_text(dir / "config.json", config_to_json(cfg));
            std::cout << (dir / "config.json").string() << "\n";
            return 0;
        }
        if (*ablate) {
            const auto rows = ablate_gamma_fraction(resolve(o), fractions, output_root(o));
            if (!ablate_out.empty()) write_text(ablate_out, ablation_to_csv(rows));
            std::cout << ablation_to_json(rows);
            return 0;
        }
        for (const auto& [name, cmd] : stage_cmds) {
            if (!*cmd) continue;
            Pipeline p(resolve(o), output_root(o));
            if (name == "mine") p.mine();
            else if (name == "extract") p.extract();
            else if (name == "score") p.score();
            else if (name == "approximate") p.approximate();
            else if (name == "intervene") p.intervene();
            else if (name == "transfer") p.transfer();
            else {
                const RunReport& r = p.evaluate();
                if (name == "run") std::cout << report_to_text(r);
                std::cout << (p.stage_dir("evaluate") / "report.json").string() << "\n";
                return 0;
            }
            std::cout << p.stage_dir(name).string() << "\n";
            return 0;
        }
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
