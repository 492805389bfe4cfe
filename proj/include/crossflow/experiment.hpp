#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "crossflow/agent.hpp"

namespace crossflow {

/// Command exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitRuntime = 4;

/// Output root override; when set, output_dir is resolved beneath it.
inline constexpr const char* kOutputRootEnv = "CROSSFLOW_OUT_ROOT";

/// One experiment definition: a flat keyed config (include-expanded), plus
/// typed accessors.  The resolved key set round-trips through snapshots.
struct ExperimentConfig {
    std::map<std::string, std::string> keys;

    bool has(const std::string& k) const { return keys.count(k) > 0; }
    std::string get(const std::string& k, const std::string& fallback = "") const;
    double get_num(const std::string& k, double fallback) const;
    bool get_bool(const std::string& k, bool fallback) const;
    std::vector<double> get_num_list(const std::string& k) const;

    // derived pieces
    std::string network_source() const { return get("network", "builtin:fourway:1"); }
    std::string controller() const { return get("controller", "rl"); }
    double rv_rate() const { return get_num("rv_rate", 0.0); }
    std::string output_dir() const;  // honors the output-root env var
    std::uint64_t seed() const { return static_cast<std::uint64_t>(get_num("seed", 1)); }

    NetworkFile load_network_file() const;
    DemandSpec demand_for(const Network& net, double rv_rate) const;
    EpisodeConfig episode_for(const Network& net, double rv_rate, std::uint64_t episode_seed) const;
    ControllerSpec controller_for(const Network& net) const;
    RewardParams reward_params() const;
    TrainConfig train_config() const;  // throws when no train keys are present

    /// Canonical flat text: sorted keys, one per line.  Re-parsing the
    /// snapshot yields the same configuration.
    std::string snapshot() const;
};

/// Parses config text; `include <path>` lines are expanded relative to
/// base_dir, later keys override earlier ones.
ExperimentConfig parse_experiment_text(const std::string& text, const std::string& base_dir);
ExperimentConfig parse_experiment_file(const std::string& path);

/// Trains a policy; writes checkpoint.bin, curve.csv and
/// resolved_config.cfg under the output dir.
int cmd_train(const ExperimentConfig& cfg, std::ostream& log);

/// Evaluates the configured controller over eval_runs seeds; writes
/// report.csv (per-run + aggregate rows) and resolved_config.cfg.
int cmd_eval(const ExperimentConfig& cfg, std::ostream& log);

/// Trains (or loads) one policy per sweep rate, evaluates each plus the two
/// human-only baselines, and writes the combined sweep.csv.
int cmd_sweep(const ExperimentConfig& cfg, std::ostream& log);

/// Validates a config file, or a report CSV when the path ends in .csv.
int cmd_validate(const std::string& path, std::ostream& log);

/// Exception-to-exit-code wrapper used by every command.
int run_guarded(const std::function<int()>& body, std::ostream& log);

}  // namespace crossflow
