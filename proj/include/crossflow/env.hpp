#pragma once

#include <map>
#include <memory>
#include <set>
#include <vector>

#include "crossflow/dynamics.hpp"

namespace crossflow {

/// Per-robot view of the intersection: queue length, mean waiting time and
/// box occupancy per direction group, plus the robot's own distance to the
/// stop line.  Flattened layout: [l_0..l_{K-1}, w_0..w_{K-1}, o_0..o_{K-1}, d_int].
struct Observation {
    std::vector<int> queue_lengths;
    std::vector<double> wait_times;
    std::vector<int> occupancy;  // 0/1
    double d_int = 0.0;

    std::size_t dim() const { return 3 * queue_lengths.size() + 1; }
    std::vector<double> flatten() const;
};

struct RewardParams {
    double alpha = 0.2;            // local-reward weight
    double conflict_penalty = -1.0;
};

/// r = alpha * (+w_k if Go, -w_k if Stop) + conflict penalty if flagged.
double compute_reward(Action action, double w_k, bool conflict, const RewardParams& p);

/// Observation for one robot currently inside the control zone.
Observation build_observation(const SimState& sim, const GroupStats& stats, VehicleId rv);

struct ArbitrationCandidate {
    VehicleId id = 0;
    int movement = -1;
    double score = 0.0;  // w_k + beta * l_k
};

/// Greedy priority grants: candidates by (score desc, id asc); each is
/// granted unless its movement conflicts with an occupied movement or an
/// earlier grant.  `occupied` is updated with granted movements.
std::vector<VehicleId> arbitrate(const Network& net, std::vector<ArbitrationCandidate> cands,
                                 std::vector<bool>& occupied);

struct EpisodeConfig {
    double horizon = 1000.0;  // s
    double dt = 0.5;          // s
    DemandSpec demand;
    std::uint64_t seed = 1;
};

enum class ControllerKind { Rl, Signalized, Unsignalized };

struct ControllerSpec {
    ControllerKind kind = ControllerKind::Unsignalized;
    SignalPlan plan;  // Signalized only
};

struct EnvStepResult {
    std::map<VehicleId, Observation> observations;       // robots awaiting a decision
    std::map<VehicleId, double> rewards;                 // robots that acted this step
    std::map<VehicleId, double> trailing_penalties;      // committed robots in conflict
    StepEvents events;
    bool done = false;
};

/// Episode wrapper around the simulator: builds observations, arbitrates
/// Stop/Go commands, computes rewards, and advances one decision interval
/// (= one sim step) per env_step.  Baseline controllers take the same path
/// with an empty action map.
class TrafficEnv {
public:
    TrafficEnv(const Network& net, EpisodeConfig cfg, ControllerSpec controller,
               RewardParams reward = {}, double arbitration_beta = 1.0);

    /// Fresh, seeded episode; returns the (normally empty) initial
    /// observation set.
    std::map<VehicleId, Observation> reset();

    /// Applies actions for exactly the awaiting robots and advances dt.
    EnvStepResult env_step(const std::map<VehicleId, Action>& actions);

    const std::set<VehicleId>& awaiting() const { return awaiting_; }
    bool done() const;
    double time() const { return sim_->time; }
    int observation_dim() const { return 3 * net_->direction_group_count() + 1; }

    const SimState& sim() const { return *sim_; }
    SimState& sim_mutable() { return *sim_; }
    const EpisodeConfig& config() const { return cfg_; }

private:
    std::map<VehicleId, Observation> observe_awaiting();

    const Network* net_;
    EpisodeConfig cfg_;
    ControllerSpec controller_;
    RewardParams reward_;
    double beta_;
    std::unique_ptr<SimState> sim_;
    std::set<VehicleId> awaiting_;
    GroupStats last_stats_;  // stats behind the observations the agent acted on
};

}  // namespace crossflow
