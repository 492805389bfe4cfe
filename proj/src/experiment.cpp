#include "crossflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "crossflow/util.hpp"

namespace crossflow {

namespace {

std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void parse_into(const std::string& text, const std::string& base_dir,
                std::map<std::string, std::string>& keys, int depth) {
    if (depth > 8) throw ConfigError("include depth exceeds 8 (include cycle?)");
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = strip(raw);
        if (line.empty()) continue;
        const auto sp = line.find_first_of(" \t");
        const std::string key = sp == std::string::npos ? line : line.substr(0, sp);
        const std::string value = sp == std::string::npos ? "" : strip(line.substr(sp + 1));
        if (key == "include") {
            if (value.empty()) throw ConfigError("include needs a path", lineno);
            std::filesystem::path p(value);
            if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
            parse_into(read_file(p.string()), p.parent_path().string(), keys, depth + 1);
        } else {
            if (value.empty()) throw ConfigError("key '" + key + "' has no value", lineno);
            keys[key] = value;  // later entries override
        }
    }
}

double to_num(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("key '" + key + "': trailing characters in '" + v + "'");
    return x;
}

}  // namespace

std::string ExperimentConfig::get(const std::string& k, const std::string& fallback) const {
    const auto it = keys.find(k);
    return it == keys.end() ? fallback : it->second;
}

double ExperimentConfig::get_num(const std::string& k, double fallback) const {
    const auto it = keys.find(k);
    return it == keys.end() ? fallback : to_num(k, it->second);
}

bool ExperimentConfig::get_bool(const std::string& k, bool fallback) const {
    const auto it = keys.find(k);
    if (it == keys.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key '" + k + "': expected true/false, got '" + it->second + "'");
}

std::vector<double> ExperimentConfig::get_num_list(const std::string& k) const {
    std::vector<double> out;
    const auto it = keys.find(k);
    if (it == keys.end()) return out;
    std::istringstream in(it->second);
    std::string tok;
    while (in >> tok) out.push_back(to_num(k, tok));
    return out;
}

std::string ExperimentConfig::output_dir() const {
    const std::string dir = get("output_dir", "out");
    const char* root = std::getenv(kOutputRootEnv);
    if (root && *root && std::filesystem::path(dir).is_relative())
        return (std::filesystem::path(root) / dir).string();
    return dir;
}

NetworkFile ExperimentConfig::load_network_file() const {
    return resolve_network_source(network_source());
}

DemandSpec ExperimentConfig::demand_for(const Network& net, double rate) const {
    NetworkFile nf = load_network_file();
    DemandSpec d;
    if (nf.demand) {
        d = *nf.demand;
        if (has("inflow_total")) {
            double current = 0;
            for (double v : d.inflow) current += v;
            const double want = get_num("inflow_total", current);
            const double scale = current > 0 ? want / current : 0.0;
            for (double& v : d.inflow) v *= scale;
        }
    } else {
        d = default_demand(net, get_num("inflow_total", 800.0), rate);
    }
    d.rv_rate = rate;
    d.validate(net);
    return d;
}

EpisodeConfig ExperimentConfig::episode_for(const Network& net, double rate,
                                            std::uint64_t episode_seed) const {
    EpisodeConfig e;
    e.horizon = get_num("horizon", 1000.0);
    e.dt = get_num("dt", 0.5);
    e.demand = demand_for(net, rate);
    e.seed = episode_seed;
    return e;
}

ControllerSpec ExperimentConfig::controller_for(const Network& net) const {
    const std::string c = controller();
    ControllerSpec spec;
    if (c == "rl") {
        spec.kind = ControllerKind::Rl;
    } else if (c == "signalized") {
        spec.kind = ControllerKind::Signalized;
        spec.plan = default_signal_plan(net, get_num("signal_green", 30.0),
                                        get_num("signal_yellow", 3.0));
    } else if (c == "unsignalized") {
        spec.kind = ControllerKind::Unsignalized;
    } else {
        throw ConfigError("unknown controller '" + c + "' (rl | signalized | unsignalized)");
    }
    return spec;
}

RewardParams ExperimentConfig::reward_params() const {
    RewardParams p;
    p.alpha = get_num("alpha", 0.2);
    return p;
}

TrainConfig ExperimentConfig::train_config() const {
    if (!has("train_iterations"))
        throw ConfigError("config has no train section (train_iterations is required)");
    TrainConfig t;
    t.iterations = static_cast<int>(get_num("train_iterations", 1000));
    t.learning_rate = get_num("train_lr", t.learning_rate);
    t.gamma = get_num("train_gamma", t.gamma);
    t.batch_size = static_cast<int>(get_num("train_batch", t.batch_size));
    t.replay_capacity = static_cast<std::size_t>(get_num("train_replay", 100000));
    t.warmup = static_cast<std::size_t>(get_num("train_warmup", 1000));
    t.target_sync_interval = static_cast<int>(get_num("train_target_sync", 500));
    t.eps_start = get_num("train_eps_start", t.eps_start);
    t.eps_end = get_num("train_eps_end", t.eps_end);
    t.eps_decay_steps = static_cast<std::uint64_t>(get_num("train_eps_decay", 200000));
    t.n_step = static_cast<int>(get_num("train_nstep", t.n_step));
    t.double_dqn = get_bool("train_double", true);
    t.dueling = get_bool("train_dueling", true);
    t.updates_per_step = static_cast<int>(get_num("train_updates_per_step", 1));
    t.checkpoint_every = static_cast<int>(get_num("train_checkpoint_every", 0));
    const auto hidden = get_num_list("train_hidden");
    if (!hidden.empty()) {
        t.hidden.clear();
        for (double h : hidden) t.hidden.push_back(static_cast<int>(h));
    }
    t.validate();
    return t;
}

std::string ExperimentConfig::snapshot() const {
    std::ostringstream out;
    out << "# resolved crossflow experiment config\n";
    for (const auto& [k, v] : keys) out << k << " " << v << "\n";
    return out.str();
}

ExperimentConfig parse_experiment_text(const std::string& text, const std::string& base_dir) {
    ExperimentConfig cfg;
    parse_into(text, base_dir, cfg.keys, 0);
    return cfg;
}

ExperimentConfig parse_experiment_file(const std::string& path) {
    const std::string dir = std::filesystem::path(path).parent_path().string();
    return parse_experiment_text(read_file(path), dir);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

EnvFactory make_factory(const ExperimentConfig& cfg, const Network& net, double rate,
                        ControllerKind kind, const SignalPlan* plan, std::uint64_t stream) {
    const RewardParams rp = cfg.reward_params();
    const double beta = cfg.get_num("beta", 1.0);
    const std::uint64_t base = cfg.seed();
    return [&cfg, &net, rate, kind, plan, rp, beta, base, stream](std::uint64_t episode_seed) {
        ControllerSpec spec;
        spec.kind = kind;
        if (plan) spec.plan = *plan;
        EpisodeConfig e =
            cfg.episode_for(net, rate, Rng(base).fork(stream).fork(episode_seed).next_u64());
        return std::make_unique<TrafficEnv>(net, e, spec, rp, beta);
    };
}

MetricsReport report_from_rollouts(const ExperimentConfig& cfg, const std::string& scope,
                                   double rate, const std::vector<EpisodeRollout>& runs,
                                   const std::vector<VehicleType>& types) {
    MetricsReport rep;
    std::vector<ReportRow> per_run;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto rows = summarize_run(std::to_string(r), rate, scope, runs[r].completed,
                                        runs[r].headways, types);
        per_run.insert(per_run.end(), rows.begin(), rows.end());
    }
    rep.rows = per_run;
    const auto agg = aggregate_rows(per_run);
    rep.rows.insert(rep.rows.end(), agg.begin(), agg.end());
    (void)cfg;
    return rep;
}

std::vector<EpisodeRollout> run_controller(const ExperimentConfig& cfg, const Network& net,
                                           double rate, ControllerKind kind,
                                           const SignalPlan* plan, const Checkpoint* policy,
                                           int runs, std::uint64_t stream) {
    const auto factory = make_factory(cfg, net, rate, kind, plan, stream);
    const double cadence = cfg.get_num("headway_cadence", 10.0);
    std::vector<EpisodeRollout> out;
    for (int r = 0; r < runs; ++r) {
        auto env = factory(static_cast<std::uint64_t>(r));
        out.push_back(run_episode(*env, policy, cadence));
    }
    return out;
}

std::string rate_tag(double rate) {
    std::ostringstream ss;
    ss << "rate_" << fmt_double(rate);
    return ss.str();
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    const TrainConfig tc = cfg.train_config();
    const NetworkFile nf = cfg.load_network_file();
    const Network& net = nf.network;
    const std::string outdir = cfg.output_dir();
    std::filesystem::create_directories(outdir);

    const auto factory =
        make_factory(cfg, net, cfg.rv_rate(), ControllerKind::Rl, nullptr, 0x7261696e);
    const TrainResult res = train(factory, tc, cfg.seed(), outdir);

    write_file(outdir + "/curve.csv", curve_to_csv(res.curve));
    write_file(outdir + "/resolved_config.cfg", cfg.snapshot());
    if (res.aborted_non_finite) {
        log << "training aborted: non-finite parameters (last good checkpoint kept)\n";
        return kExitRuntime;
    }
    log << "trained " << tc.iterations << " iterations; checkpoint at " << outdir
        << "/checkpoint.bin\n";
    return kExitOk;
}

int cmd_eval(const ExperimentConfig& cfg, std::ostream& log) {
    const NetworkFile nf = cfg.load_network_file();
    const Network& net = nf.network;
    const ControllerSpec spec = cfg.controller_for(net);
    const int runs = static_cast<int>(cfg.get_num("eval_runs", 10));
    if (runs <= 0) throw ConfigError("eval_runs must be > 0");
    const std::string outdir = cfg.output_dir();

    std::string scope;
    Checkpoint policy;
    const Checkpoint* policy_ptr = nullptr;
    double rate = cfg.rv_rate();
    if (spec.kind == ControllerKind::Rl) {
        const std::string path = cfg.get("checkpoint");
        if (path.empty()) throw ConfigError("rl controller needs a 'checkpoint' key");
        policy = load_checkpoint(path, 3 * net.direction_group_count() + 1);
        policy_ptr = &policy;
        scope = "RL";
    } else if (spec.kind == ControllerKind::Signalized) {
        scope = "HV-Signalized";
    } else {
        scope = "HV-Unsignalized";
    }

    const auto rollouts = run_controller(cfg, net, rate, spec.kind,
                                         spec.kind == ControllerKind::Signalized ? &spec.plan
                                                                                 : nullptr,
                                         policy_ptr, runs, 0x6576616c);
    const MetricsReport rep =
        report_from_rollouts(cfg, scope, rate, rollouts, builtin_vehicle_types());
    write_report(rep, outdir + "/report.csv");
    write_file(outdir + "/resolved_config.cfg", cfg.snapshot());
    log << scope << ": " << runs << " runs, overall W_avg ";
    for (const auto& row : rep.rows)
        if (row.run_id == "mean" && row.vehicle_type == "all")
            log << fmt_double(row.w_avg) << " s over n=" << row.n << "\n";
    return kExitOk;
}

int cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
    const auto rates = cfg.get_num_list("sweep_rates");
    if (rates.empty()) throw ConfigError("sweep needs a nonempty 'sweep_rates' list");
    for (double r : rates)
        if (r < 0 || r > 1) throw ConfigError("sweep rate out of [0, 1]");
    const NetworkFile nf = cfg.load_network_file();
    const Network& net = nf.network;
    const std::string outdir = cfg.output_dir();
    const int runs = static_cast<int>(cfg.get_num("eval_runs", 10));
    const std::string mode = cfg.get("sweep_mode", "train_eval");
    if (mode != "train_eval" && mode != "eval_only")
        throw ConfigError("sweep_mode must be train_eval or eval_only");

    // resolve checkpoints (training per rate when asked)
    std::map<double, Checkpoint> policies;
    std::vector<std::string> missing;
    for (double rate : rates) {
        if (mode == "train_eval") {
            const TrainConfig tc = cfg.train_config();
            const std::string dir = outdir + "/" + rate_tag(rate);
            std::filesystem::create_directories(dir);
            const auto factory = make_factory(cfg, net, rate, ControllerKind::Rl, nullptr,
                                              0x73770000 + static_cast<std::uint64_t>(rate * 1000));
            log << "training rate " << fmt_double(rate) << "...\n" << std::flush;
            const TrainResult res = train(factory, tc, cfg.seed(), dir);
            write_file(dir + "/curve.csv", curve_to_csv(res.curve));
            if (res.aborted_non_finite) {
                log << "training aborted at rate " << fmt_double(rate) << "\n";
                return kExitRuntime;
            }
            policies[rate] = res.checkpoint;
        } else {
            std::string pattern = cfg.get("sweep_checkpoint_pattern");
            if (pattern.empty())
                throw ConfigError("eval_only sweep needs 'sweep_checkpoint_pattern'");
            const auto at = pattern.find("{rate}");
            if (at != std::string::npos) pattern.replace(at, 6, fmt_double(rate));
            if (!std::filesystem::exists(pattern)) {
                missing.push_back(pattern);
                continue;
            }
            policies[rate] = load_checkpoint(pattern, 3 * net.direction_group_count() + 1);
        }
    }
    if (!missing.empty()) {
        std::string msg = "missing checkpoints for sweep rates:";
        for (const auto& m : missing) msg += " " + m;
        throw ConfigError(msg);
    }

    const SignalPlan plan =
        default_signal_plan(net, cfg.get_num("signal_green", 30.0), cfg.get_num("signal_yellow", 3.0));
    std::vector<ReportRow> per_run;
    auto add_rows = [&](const std::string& scope, double rate,
                        const std::vector<EpisodeRollout>& rollouts) {
        for (std::size_t r = 0; r < rollouts.size(); ++r) {
            const auto rows = summarize_run(std::to_string(r), rate, scope, rollouts[r].completed,
                                            rollouts[r].headways, builtin_vehicle_types());
            per_run.insert(per_run.end(), rows.begin(), rows.end());
        }
    };

    for (double rate : rates) {
        log << "evaluating rate " << fmt_double(rate) << "...\n" << std::flush;
        add_rows("RL", rate,
                 run_controller(cfg, net, rate, ControllerKind::Rl, nullptr, &policies[rate], runs,
                                0x65760000 + static_cast<std::uint64_t>(rate * 1000)));
    }
    log << "evaluating baselines...\n" << std::flush;
    add_rows("HV-Signalized", 0.0,
             run_controller(cfg, net, 0.0, ControllerKind::Signalized, &plan, nullptr, runs,
                            0x62617365));
    add_rows("HV-Unsignalized", 0.0,
             run_controller(cfg, net, 0.0, ControllerKind::Unsignalized, nullptr, nullptr, runs,
                            0x62617366));

    MetricsReport rep;
    rep.rows = aggregate_rows(per_run);
    write_report(rep, outdir + "/sweep.csv");
    MetricsReport detail;
    detail.rows = per_run;
    write_report(detail, outdir + "/sweep_runs.csv");
    write_file(outdir + "/resolved_config.cfg", cfg.snapshot());
    log << "sweep written to " << outdir << "/sweep.csv\n";
    return kExitOk;
}

int cmd_validate(const std::string& path, std::ostream& log) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        validate_report_csv(read_file(path));
        log << "report csv ok: " << path << "\n";
        return kExitOk;
    }
    const ExperimentConfig cfg = parse_experiment_file(path);
    const NetworkFile nf = cfg.load_network_file();
    nf.network.validate();
    cfg.demand_for(nf.network, cfg.rv_rate());
    cfg.controller_for(nf.network);
    if (cfg.has("train_iterations")) cfg.train_config();
    if (cfg.get_num("horizon", 1000.0) <= 0) throw ConfigError("horizon must be > 0");
    if (cfg.get_num("dt", 0.5) <= 0) throw ConfigError("dt must be > 0");
    log << "config ok: " << path << "\n";
    return kExitOk;
}

int run_guarded(const std::function<int()>& body, std::ostream& log) {
    try {
        return body();
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        log << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        log << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        log << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace crossflow
