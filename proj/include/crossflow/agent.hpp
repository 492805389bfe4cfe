#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crossflow/env.hpp"
#include "crossflow/qnetwork.hpp"

namespace crossflow {

/// Experience tuple with an n-step return head.  Observations are stored
/// raw; normalization is applied at batch time with the current statistics.
struct Transition {
    std::vector<double> obs;
    int action = 0;
    double reward_n = 0.0;  // discounted reward sum over `steps` decisions
    int steps = 1;          // bootstrap exponent (gamma^steps)
    std::vector<double> next_obs;  // empty when done
    bool done = false;
};

/// Fixed-capacity ring buffer, oldest-first eviction, uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(Transition t);
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& at(std::size_t i) const { return data_[i]; }
    /// Uniform sample of `k` indices (with replacement).
    std::vector<std::size_t> sample(std::size_t k, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t head_ = 0;  // next eviction slot once full
    std::vector<Transition> data_;
};

/// Per-component running mean/variance (Welford), frozen into checkpoints.
struct RunningNorm {
    std::vector<double> mean, m2;
    std::uint64_t count = 0;

    explicit RunningNorm(std::size_t dim = 0) : mean(dim, 0.0), m2(dim, 0.0) {}
    void update(std::span<const double> x);
    std::vector<double> normalize(std::span<const double> x) const;
    double stddev(std::size_t i) const;
};

struct TrainConfig {
    double learning_rate = 0.0005;
    double gamma = 0.99;
    int iterations = 1000;
    int batch_size = 32;
    std::size_t replay_capacity = 100000;
    std::size_t warmup = 1000;       // min buffer size before updates
    int target_sync_interval = 500;  // gradient updates between target syncs
    double eps_start = 1.0;
    double eps_end = 0.05;
    std::uint64_t eps_decay_steps = 200000;  // decisions
    int n_step = 3;
    bool double_dqn = true;
    bool dueling = true;
    std::vector<int> hidden = {512, 512, 512};
    int updates_per_step = 1;
    int checkpoint_every = 0;  // iterations between periodic saves; 0 = end only

    void validate() const;
    std::string fingerprint_text() const;
};

/// n-step TD targets: y = R_n + gamma^steps * Q_bootstrap(s') for live
/// transitions, y = R_n for terminal ones.  With double_dqn the bootstrap
/// action is argmax of the online net evaluated on the target net.
std::vector<double> td_targets(const ReplayBuffer& buffer, std::span<const std::size_t> idx,
                               const RunningNorm& norm, const QNetwork& online,
                               const QNetwork& target, double gamma, bool double_dqn);

/// Epsilon-greedy over two action values; ties resolve to Go.
Action select_action(const std::array<double, 2>& q, double epsilon, Rng& rng);

struct Checkpoint {
    QNetwork net;
    RunningNorm norm;
    std::uint64_t config_fingerprint = 0;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path,
                           std::optional<int> expected_input_dim = std::nullopt);

struct IterationStats {
    int iteration = 0;
    double mean_reward = 0.0;
    double mean_wait = 0.0;
    double epsilon = 0.0;
};

std::string curve_to_csv(std::span<const IterationStats> curve);

using EnvFactory = std::function<std::unique_ptr<TrafficEnv>(std::uint64_t episode_seed)>;

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<IterationStats> curve;
    bool aborted_non_finite = false;  // checkpoint then holds the last good parameters
};

/// Runs cfg.iterations episodes with one shared policy across every robot;
/// transitions from all robots feed one replay buffer.  Deterministic for a
/// fixed (factory, cfg, seed).
TrainResult train(const EnvFactory& factory, const TrainConfig& cfg, std::uint64_t seed,
                  const std::string& checkpoint_dir = "");

struct EpisodeRollout {
    std::vector<CompletedRecord> completed;
    std::vector<HeadwayObservation> headways;
    double mean_reward = 0.0;   // 0 for baseline controllers
    std::size_t decisions = 0;
    std::size_t conflicts = 0;
    std::size_t safety_flags = 0;
};

/// Runs one episode to its horizon.  With a checkpoint the greedy policy
/// drives the robots; without one the env's controller must be a baseline.
EpisodeRollout run_episode(TrafficEnv& env, const Checkpoint* policy,
                           double headway_cadence_s = 10.0);

struct EvalResult {
    std::vector<EpisodeRollout> runs;
};

/// Greedy evaluation over `runs` seeded episodes (seed + run index).
EvalResult evaluate(const Checkpoint& c, const EnvFactory& factory, int runs,
                    double headway_cadence_s = 10.0);

}  // namespace crossflow
