#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossflow {

/// Thrown for malformed network/experiment config text.  Carries the line
/// number when one is known.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct Approach {
    std::string id;
    double length = 0.0;      // m, entry to stop line
    int lane_count = 1;
    double speed_limit = 15;  // m/s

    bool operator==(const Approach&) const = default;
};

/// One permitted path through the intersection box.
struct Movement {
    std::string id;
    int entry_approach = -1;  // index into Network::approaches
    int entry_lane = 0;
    int exit_approach = -1;
    int direction_group = 0;     // k in [0, K)
    double internal_length = 0;  // m, path length across the box

    bool operator==(const Movement&) const = default;
};

/// A single intersection: approach links feeding movements whose pairwise
/// incompatibility is captured by a symmetric conflict matrix.  Immutable
/// after construction; safe to share across concurrent simulations.
struct Network {
    std::vector<Approach> approaches;
    std::vector<Movement> movements;
    std::vector<std::vector<bool>> conflict_matrix;  // symmetric, false diagonal
    double control_zone = 30.0;                      // m before the stop line

    int direction_group_count() const {
        int k = 0;
        for (const auto& m : movements) k = std::max(k, m.direction_group + 1);
        return k;
    }

    int approach_index(const std::string& id) const;
    int movement_index(const std::string& id) const;

    /// Validates every structural invariant; throws ConfigError on violation.
    void validate() const;

    bool operator==(const Network&) const = default;
};

/// Traffic demand: per-approach inflow, per-approach turning split over that
/// approach's movements, and the robot-vehicle penetration rate.
struct DemandSpec {
    std::vector<double> inflow;  // vehicles/hour, one per approach
    /// turning_fractions[a][m] = probability that a vehicle entering approach
    /// a takes movement index m (zero for movements not leaving a).
    std::vector<std::vector<double>> turning_fractions;
    double rv_rate = 0.0;  // fraction in [0, 1]

    void validate(const Network& net) const;

    bool operator==(const DemandSpec&) const = default;
};

/// conflict_matrix lookup by movement id, with self-conflicts defined false.
bool conflicts(const Network& net, const std::string& a, const std::string& b);
bool conflicts(const Network& net, int a, int b);

/// Result of parsing a network config file: the network plus the optional
/// [demand] section.
struct NetworkFile {
    Network network;
    std::optional<DemandSpec> demand;
};

/// Parses the line-oriented network config format (see docs/formats.md).
NetworkFile parse_network_config(const std::string& text);

/// Convenience wrapper returning only the validated Network.
Network load_network(const std::string& config_text);

/// Serializes to config text.  parse(serialize(x)) == x.
std::string serialize_network(const Network& net,
                              const DemandSpec* demand = nullptr);

/// Standard 4-way intersection with through/left/right movements per
/// approach, conflicts derived from straight center-line paths (crossing or
/// merging paths conflict), and 8 direction groups (through+right and left
/// per approach).
Network builtin_fourway(int lanes_per_approach);

/// Uniform demand over a network: total_inflow split evenly across
/// approaches; per-approach turning fractions 0.5 through (split over lanes),
/// 0.25 left, 0.25 right when those kinds exist, else uniform per movement.
DemandSpec default_demand(const Network& net, double total_inflow, double rv_rate);

/// Resolves "builtin:fourway:N" or a file path into a network + demand.
NetworkFile resolve_network_source(const std::string& source);

}  // namespace crossflow
