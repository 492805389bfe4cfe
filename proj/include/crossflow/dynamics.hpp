#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crossflow/metrics.hpp"
#include "crossflow/rng.hpp"
#include "crossflow/topology.hpp"
#include "crossflow/vehicle.hpp"

namespace crossflow {

/// A vehicle "waits" while slower than this (m/s).
inline constexpr double kWaitSpeedEps = 0.1;
/// IDM desired time headway (s) and acceleration exponent, all types.
inline constexpr double kIdmHeadwayTime = 1.0;
inline constexpr double kIdmDelta = 4.0;
/// Emergency braking = this factor times the type's comfortable decel.
inline constexpr double kEmergencyFactor = 2.0;
/// Human drivers at an uncontrolled stop line claim right of way only after
/// standing within this distance (m) of the line, below this speed (m/s),
/// for at least the dwell time (s) a driver needs to stop and check the box.
/// Connected robots can be cleared while moving anywhere in the control zone.
inline constexpr double kHumanGrantWindow = 8.0;
inline constexpr double kStopEntrySpeed = 0.5;
inline constexpr double kStopDwell = 2.0;
/// Without a signal, human drivers inch across the box watching for cross
/// traffic; this caps their speed inside the intersection (m/s).
inline constexpr double kCautiousCrossSpeed = 4.0;

/// Car-following acceleration.  `gap` is bumper-to-bumper distance to the
/// leader (+inf for none), `dv` the closing speed (v - v_leader).  Result is
/// clamped to [-2*max_decel, max_accel]; a nonpositive gap returns the
/// emergency value.
double idm_accel(double v, double v_desired, double gap, double dv, const VehicleType& p,
                 double headway_time = kIdmHeadwayTime);

/// Constant-deceleration stop: -u^2 / (2 d_int), clamped at -2*max_decel.
/// d_int <= 0 with u > 0 cannot stop in time and returns the clamp value.
double rv_stop_accel(double u, double d_int, double max_decel);

enum class LightState : std::uint8_t { Green, Yellow, Red };

struct SignalPhase {
    std::vector<int> green_movements;
    double green = 30.0;
    double yellow = 3.0;
};

/// Cyclic fixed-time plan.  Yellow counts as red for entry permission.
struct SignalPlan {
    std::vector<SignalPhase> phases;

    double cycle_length() const;
    void validate(const Network& net) const;
};

/// Per-movement light state at absolute time t (cyclic lookup).
std::vector<LightState> fixed_time_signal(const SignalPlan& plan, const Network& net, double t);

/// One phase per entry approach (movements from one approach never conflict
/// with each other), standard 30 s green + 3 s yellow.
SignalPlan default_signal_plan(const Network& net, double green = 30.0, double yellow = 3.0);

struct PendingSpawn {
    int movement = -1;
    int type = 0;
    Role role = Role::Human;
};

struct StepEvents {
    std::vector<VehicleId> spawned;
    std::vector<VehicleId> entered_box;
    std::vector<CompletedRecord> exited;
    std::vector<std::pair<VehicleId, VehicleId>> conflicts;  // id-ordered pairs
    std::vector<VehicleId> safety_flags;
    int deferred = 0;  // spawns still waiting for entry room after this step
};

/// Whole simulation state for one intersection.  Single-threaded; step() is
/// the only mutator.  Independent instances may run concurrently.
struct SimState {
    double time = 0.0;
    const Network* net = nullptr;
    std::vector<VehicleType> types;
    EmissionModel emissions;
    Rng rng;

    std::map<VehicleId, VehicleState> vehicles;
    // Segment occupancy, each deque ordered front-of-queue first (highest pos).
    std::vector<std::deque<VehicleId>> approach_lane;  // [lane_index(a, lane)]
    std::vector<std::deque<VehicleId>> inside;         // [movement]
    std::vector<std::deque<VehicleId>> exit_lane;      // [lane_index(a, lane)]
    std::vector<PendingSpawn> deferred;
    std::vector<CompletedRecord> completed;

    VehicleId next_id = 1;
    std::uint64_t entered_total = 0;   // vehicles that entered the network
    std::uint64_t spawn_draws = 0;     // arrival draws that fired

    SimState(const Network& network, std::uint64_t seed,
             std::vector<VehicleType> vehicle_types = builtin_vehicle_types(),
             EmissionModel em = EmissionModel::builtin_defaults());

    int lane_index(int approach, int lane) const;
    int exit_lane_of(const Movement& m) const;
    /// Front-bumper distance to the stop line (approach phase only).
    double dist_to_line(const VehicleState& v) const;
    double v_desired(const VehicleState& v) const;
    const VehicleType& type_of(const VehicleState& v) const { return types[v.type]; }
    /// True while any part of the vehicle is within the intersection box.
    bool occupies_box(const VehicleState& v) const;
};

/// Draws arrivals for every approach and injects vehicles where entry room
/// permits; blocked arrivals queue in sim.deferred and retry next call.
void spawn(SimState& sim, const DemandSpec& demand, double dt, StepEvents* events = nullptr);

/// A lane-head vehicle eligible to be granted stop-line entry this step.
struct EntryCandidate {
    VehicleId id = 0;
    int movement = -1;
    Role role = Role::Human;
    double arrival = 0.0;  // time it reached the head of its lane near the line
    int approach = 0;
    int lane = 0;
    double dist_to_line = 0.0;
    double speed = 0.0;
};

/// Lane-head approach vehicles within `window` of the line (or, when a stop
/// is not required, crossing it within dt at current speed), optionally
/// restricted to one role.  With require_stop, only vehicles slower than
/// kStopEntrySpeed qualify.
std::vector<EntryCandidate> entry_candidates(const SimState& sim, double window, double dt,
                                             std::optional<Role> role_filter = std::nullopt,
                                             bool require_stop = false);

/// movement -> occupied by a vehicle whose body is in the box, or reserved
/// by a granted vehicle still rolling toward the line.
std::vector<bool> occupied_movement_mask(const SimState& sim);

/// Greedy first-come-first-serve: candidates ordered by (arrival, approach,
/// lane, id).  Uncoordinated drivers cannot verify path compatibility, so a
/// candidate is granted only when no movement other than its own is occupied
/// or reserved.  Grants update `occupied` and persist as reservations until
/// the vehicle enters the box.
void grant_fcfs(SimState& sim, std::vector<EntryCandidate> cands, std::vector<bool>& occupied,
                std::set<VehicleId>& grants);

/// Entry grants for the uncontrolled baseline: reservations held from earlier
/// steps plus FCFS over lane heads stopped at the line (all-way-stop
/// discipline, one conservative turn at a time).
std::set<VehicleId> unsignalized_right_of_way(SimState& sim, double dt);

/// Per-step control inputs.  Exactly one of signal/grants drives entry
/// permission; rv_actions carries robot commands (RL mode).
struct StepControl {
    const SignalPlan* signal = nullptr;
    const std::set<VehicleId>* grants = nullptr;
    const std::map<VehicleId, Action>* rv_actions = nullptr;
};

/// Advances the world by dt: acceleration per vehicle, semi-implicit
/// integration, stop-line/exit transitions, waiting and emission accounting.
StepEvents step(SimState& sim, double dt, const StepControl& control);

/// Unordered pairs of box-resident vehicles on conflicting movements.
std::vector<std::pair<VehicleId, VehicleId>> detect_conflicts(const SimState& sim);

/// Queue length, mean waiting time and box occupancy per direction group.
struct GroupStats {
    std::vector<int> queue_len;      // l_k
    std::vector<double> mean_wait;   // w_k, 0 when the group is empty
    std::vector<bool> occupied;      // o_k
};
GroupStats group_stats(const SimState& sim);

/// Same-lane leader-follower pairs on approach lanes (for headway sampling).
std::vector<HeadwayObservation> collect_headway_pairs(const SimState& sim);

/// Versioned line format for the optional event log.
std::string event_log_header();
void append_event_lines(const SimState& sim, const StepEvents& ev, std::string& out);

}  // namespace crossflow
