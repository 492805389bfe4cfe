// Command-line front end: train / eval / sweep / validate over experiment
// config files.  Flags only override config keys; the config file carries
// the experiment definition.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crossflow/experiment.hpp"

using namespace crossflow;

namespace {

struct Overrides {
    std::string output_dir;
    std::string seed;
    std::string rv_rate;
    std::string checkpoint;
    std::vector<std::string> sets;  // raw "key=value" pairs
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--output-dir", ov.output_dir, "override output_dir");
    cmd->add_option("--seed", ov.seed, "override seed");
    cmd->add_option("--rv-rate", ov.rv_rate, "override rv_rate");
    cmd->add_option("--checkpoint", ov.checkpoint, "override checkpoint path");
    cmd->add_option("--set", ov.sets, "override any key (key=value)")->take_all();
}

ExperimentConfig load_with_overrides(const std::string& path, const Overrides& ov) {
    ExperimentConfig cfg = parse_experiment_file(path);
    if (!ov.output_dir.empty()) cfg.keys["output_dir"] = ov.output_dir;
    if (!ov.seed.empty()) cfg.keys["seed"] = ov.seed;
    if (!ov.rv_rate.empty()) cfg.keys["rv_rate"] = ov.rv_rate;
    if (!ov.checkpoint.empty()) cfg.keys["checkpoint"] = ov.checkpoint;
    for (const auto& kv : ov.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.keys[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crossflow: mixed-traffic intersection simulator and RL harness"};
    app.require_subcommand(1);

    std::string train_cfg, eval_cfg, sweep_cfg, validate_path;
    Overrides train_ov, eval_ov, sweep_ov;

    auto* train_cmd = app.add_subcommand("train", "train a Stop/Go policy");
    train_cmd->add_option("config", train_cfg, "experiment config file")->required();
    add_override_flags(train_cmd, train_ov);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a controller");
    eval_cmd->add_option("config", eval_cfg, "experiment config file")->required();
    add_override_flags(eval_cmd, eval_ov);

    auto* sweep_cmd = app.add_subcommand("sweep", "train/evaluate across robot rates");
    sweep_cmd->add_option("config", sweep_cfg, "experiment config file")->required();
    add_override_flags(sweep_cmd, sweep_ov);

    auto* validate_cmd = app.add_subcommand("validate", "check a config or report csv");
    validate_cmd->add_option("path", validate_path, "config file or report .csv")->required();

    CLI11_PARSE(app, argc, argv);

    if (train_cmd->parsed())
        return run_guarded(
            [&] { return cmd_train(load_with_overrides(train_cfg, train_ov), std::cout); },
            std::cerr);
    if (eval_cmd->parsed())
        return run_guarded(
            [&] { return cmd_eval(load_with_overrides(eval_cfg, eval_ov), std::cout); },
            std::cerr);
    if (sweep_cmd->parsed())
        return run_guarded(
            [&] { return cmd_sweep(load_with_overrides(sweep_cfg, sweep_ov), std::cout); },
            std::cerr);
    return run_guarded([&] { return cmd_validate(validate_path, std::cout); }, std::cerr);
}
