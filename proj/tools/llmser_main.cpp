#include "llmser/common.hpp"
#include "llmser/pipeline.hpp"
#include "llmser/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace {

llmser::PipelineConfig load_config(const std::string& config_path,
                                   const std::vector<std::string>& overrides,
                                   const llmser::AblationFlags& flags, bool emit_csv) {
    llmser::PipelineConfig cfg = llmser::PipelineConfig::from_file(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    cfg.ablation.no_ccg |= flags.no_ccg;
    cfg.ablation.no_snf |= flags.no_snf;
    cfg.ablation.no_arv |= flags.no_arv;
    cfg.ablation.no_rcs |= flags.no_rcs;
    cfg.ablation.no_reason |= flags.no_reason;
    cfg.ablation.no_wd |= flags.no_wd;
    cfg.emit_csv |= emit_csv;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"llmser: LLM-assisted data augmentation pipeline for sequential recommendation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string mode = "llmser";
    bool emit_csv = false;
    llmser::AblationFlags flags;

    auto add_common = [&](CLI::App* sub, bool with_mode = false) {
        sub->add_option("--config", config_path, "pipeline config file (JSON)")->required();
        sub->add_option("--set", overrides, "override config entries, e.g. --set backbone.epochs=10");
        sub->add_flag("--no-ccg", flags.no_ccg, "drop the collaborative candidate generator");
        sub->add_flag("--no-snf", flags.no_snf, "drop the semantic filter (top-M of the pool)");
        sub->add_flag("--no-arv", flags.no_arv, "skip validation; every alpha = 1");
        sub->add_flag("--no-rcs", flags.no_rcs, "drop the reason candidate selector");
        sub->add_flag("--no-reason", flags.no_reason, "masked prediction = reason-pool rank 1");
        sub->add_flag("--no-wd", flags.no_wd, "disable weight decay (alpha = omega)");
        sub->add_flag("--emit-csv", emit_csv, "also write CSV metric/histogram rows");
        if (with_mode) {
            sub->add_option("--mode", mode, "model variant: llmser or none")
                ->check(CLI::IsMember({"llmser", "none"}));
        }
    };

    std::vector<std::string> stage_names = {"ingest",  "stats",    "pretrain-ccg", "pretrain-rcs",
                                            "augment", "validate", "train",        "evaluate"};
    int min_interactions = -1;
    for (const auto& name : stage_names) {
        auto* sub = app.add_subcommand(name, "run the " + name + " stage");
        add_common(sub, name == "train" || name == "evaluate");
        if (name == "ingest") {
            sub->add_option("--min-interactions", min_interactions,
                            "drop users with fewer interactions (default 1)");
        }
    }
    auto* pipe = app.add_subcommand("pipeline", "run every stage and compare against the baseline");
    add_common(pipe);

    auto* synth = app.add_subcommand("synth", "write a synthetic demo corpus");
    std::string synth_out = "data/synthetic";
    llmser::SyntheticConfig synth_cfg;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--users", synth_cfg.num_users, "number of users");
    synth->add_option("--clusters", synth_cfg.num_clusters, "number of interest clusters");
    synth->add_option("--seed", synth_cfg.seed, "generator seed");
    synth->add_option("--tail-fraction", synth_cfg.tail_fraction, "fraction of truncated users");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            llmser::SyntheticData data = llmser::generate_synthetic(synth_cfg);
            llmser::write_synthetic(data, synth_out);
            std::cout << "wrote " << data.items.size() << " items, " << data.interactions.size()
                      << " interactions, truth.json under " << synth_out << "\n";
            return 0;
        }
        llmser::PipelineConfig cfg = load_config(config_path, overrides, flags, emit_csv);
        if (min_interactions >= 0) {
            cfg.min_interactions = static_cast<std::size_t>(min_interactions);
        }
        if (pipe->parsed()) {
            llmser::PipelineOutcome outcome = llmser::run_pipeline(cfg);
            std::cout << outcome.table;
            std::cout << "metrics: " << cfg.metrics_path("none") << ", "
                      << cfg.metrics_path("llmser") << "\n";
            return 0;
        }
        for (const auto& name : stage_names) {
            if (app.get_subcommand(name)->parsed()) {
                llmser::run_stage(cfg, name, mode);
                std::cout << name << ": ok (manifest "
                          << cfg.manifest_path(name == "train" ? "train-" + mode
                                               : name == "evaluate" ? "evaluate-" + mode
                                                                    : name)
                          << ")\n";
                return 0;
            }
        }
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const llmser::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const llmser::StageError& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
