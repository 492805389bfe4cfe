#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crossflow/rng.hpp"

namespace crossflow {

enum class Role : std::uint8_t { Human, Robot };
enum class Phase : std::uint8_t { Approach, Inside, Exit };
enum class Action : std::uint8_t { Stop = 0, Go = 1 };

/// Kinematic/dynamic envelope of one vehicle class.
struct VehicleType {
    std::string name;
    double length = 0;     // m
    double width = 0;      // m
    double height = 0;     // m
    double mass = 0;       // kg
    double min_gap = 0;    // m, standstill bumper-to-bumper gap
    double max_accel = 0;  // m/s^2
    double max_decel = 0;  // m/s^2, positive magnitude of comfortable braking
    double max_speed = 0;  // m/s
    std::string emission_class;
};

enum class TypeIndex : int { PassengerCar = 0, Pickup = 1, Van = 2, SemiTrailer = 3, Truck = 4 };
inline constexpr int kNumVehicleTypes = 5;

/// The five stock vehicle classes.  Index order matches TypeIndex.
const std::vector<VehicleType>& builtin_vehicle_types();

/// Spawn-mix weights (percent) for a robot-vehicle penetration rate.
/// Index 0 is the robot share (always passenger cars); 1..5 are the human
/// shares in TypeIndex order.  Tabulated rates 0.1..0.9 use the stock rows
/// verbatim; other rates reduce the human passenger-car share first and then
/// scale the remaining classes proportionally.
std::array<double, 6> type_mix_for_rv_rate(double rv_rate);

/// Draws (type, role) from the mix for rv_rate.  Robots are passenger cars.
std::pair<TypeIndex, Role> sample_vehicle(double rv_rate, Rng& rng);

using VehicleId = std::uint64_t;

/// Mutable per-vehicle simulation state.  `pos` is the front-bumper offset
/// within the current phase segment; a vehicle occupies [pos-length, pos].
struct VehicleState {
    VehicleId id = 0;
    int type = 0;  // index into SimState::types
    Role role = Role::Human;
    int movement = -1;  // the single route element
    Phase phase = Phase::Approach;
    double pos = 0;     // m within phase
    double speed = 0;   // m/s
    double accel = 0;   // last commanded accel, m/s^2
    double spawn_time = 0;
    double waiting_time = 0;  // accumulated seconds below the waiting threshold
    bool has_action = false;
    Action action = Action::Go;   // robot command, valid when has_action
    bool entry_granted = false;   // holds a stop-line reservation
    double zone_arrival = -1;     // time the vehicle became an entry candidate
    double last_moving_time = 0;  // last time the vehicle was above the stop threshold
    double co2_mg = 0;            // integrated emission
    double fuel_ml = 0;           // integrated fuel
};

}  // namespace crossflow
