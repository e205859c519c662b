// cva: simulate | dataset | train | eval | ablate | plot

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cva/pipeline.hpp"

namespace {

using cva::pipeline::RunConfig;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> model;
    std::optional<std::string> split;
    std::optional<std::string> condition;
    std::optional<std::string> encoder;
};

RunConfig resolve(const Overrides& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.out = *o.out;
    if (o.model) cfg.model = *o.model;
    if (o.split) cfg.dataset.split = *o.split;
    if (o.condition) cfg.eval.condition = *o.condition;
    if (o.encoder) {
        if (*o.encoder == "pretrained") {
            cfg.encoder = cva::encoder::EncoderConfig::pretrained_defaults();
        } else {
            // stub tokens come from the same rendered frames, downsampled
            cfg.encoder = cva::encoder::EncoderConfig{};
        }
    }
    cfg.validate();
    return cfg;
}

std::string config_help() {
    std::string s = "\nConfiguration fields (JSON file via --config; defaults shown):\n";
    for (const auto& line : cva::pipeline::describe_fields()) s += "  " + line + "\n";
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Goal-conditioned vision-action policy for catheter navigation: simulator, dataset, training and "
                 "evaluation"};
    app.footer(config_help());
    app.require_subcommand(1, 1);

    Overrides o;
    auto add_common = [&o](CLI::App* cmd) {
        cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
        cmd->add_option("--seed", o.seed, "global seed");
        cmd->add_option("--out", o.out, "output root");
        cmd->add_option("--model", o.model, "model kind")->check(CLI::IsMember({"cva", "lstm"}));
        cmd->add_option("--split", o.split, "split protocol")->check(CLI::IsMember({"episode", "scenario"}));
        cmd->add_option("--condition", o.condition, "evaluation condition")
            ->check(CLI::IsMember({"baseline", "false_goal", "no_goal", "no_vision", "no_states"}));
        cmd->add_option("--encoder", o.encoder, "vision backend")->check(CLI::IsMember({"pretrained", "stub"}));
    };

    auto* simulate = app.add_subcommand("simulate", "render the phantom and generate expert episodes");
    auto* dataset = app.add_subcommand("dataset", "build split manifests and training statistics");
    auto* trn = app.add_subcommand("train", "train a policy and write checkpoints");
    auto* evaluate = app.add_subcommand("eval", "evaluate the best checkpoint and emit metrics and plots");
    auto* ablate = app.add_subcommand("ablate", "evaluate all ablation conditions");
    auto* plot = app.add_subcommand("plot", "per-split state distribution plots");
    for (auto* cmd : {simulate, dataset, trn, evaluate, ablate, plot}) {
        add_common(cmd);
        cmd->footer(config_help());
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = resolve(o);
        if (simulate->parsed()) {
            const auto r = cva::pipeline::cmd_simulate(cfg);
            if (r.episodes == 0) {
                std::cerr << "error: no episode reached its target\n";
                return 3;
            }
        } else if (dataset->parsed()) {
            cva::pipeline::cmd_dataset(cfg);
        } else if (trn->parsed()) {
            const auto r = cva::pipeline::cmd_train(cfg);
            std::cout << r.run_dir.string() << '\n';
        } else if (evaluate->parsed()) {
            for (const auto& r : cva::pipeline::cmd_eval(cfg)) std::cout << r.to_json().dump() << '\n';
        } else if (ablate->parsed()) {
            for (const auto& r : cva::pipeline::cmd_ablate(cfg)) std::cout << r.to_json().dump() << '\n';
        } else if (plot->parsed()) {
            for (const auto& p : cva::pipeline::cmd_plot(cfg)) std::cout << p.string() << '\n';
        }
    } catch (const cva::train::NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return EXIT_SUCCESS;
}
