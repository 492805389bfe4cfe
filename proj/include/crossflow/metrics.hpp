#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossflow/vehicle.hpp"

namespace crossflow {

/// Record of a vehicle that completed its trip through the network.
struct CompletedRecord {
    VehicleId id = 0;
    int type = 0;
    Role role = Role::Human;
    int movement = -1;
    double spawn_time = 0;
    double exit_time = 0;
    double waiting_time = 0;
    double co2_mg = 0;   // integrated over the trip
    double fuel_ml = 0;  // integrated over the trip

    double travel_time() const { return exit_time - spawn_time; }
    double co2_rate() const { return travel_time() > 0 ? co2_mg / travel_time() : 0.0; }
    double fuel_rate() const { return travel_time() > 0 ? fuel_ml / travel_time() : 0.0; }
};

/// Instantaneous-rate coefficients for one emission class.
/// rate(v, a) = max(0, c0 + c1*v + c2*v^2 + c3*v^3 + c4*v*a + c5*v*a^2)
struct EmissionClassCoeffs {
    std::string class_id;
    std::array<double, 6> co2{};   // mg/s
    std::array<double, 6> fuel{};  // ml/s
};

double emission_rate(const EmissionClassCoeffs& c, double v, double a);
double fuel_rate(const EmissionClassCoeffs& c, double v, double a);

/// Lookup table of emission classes, loadable from the coefficients file.
class EmissionModel {
public:
    static EmissionModel builtin_defaults();
    static EmissionModel from_config(const std::string& text);
    std::string to_config() const;

    const EmissionClassCoeffs& coeffs(const std::string& class_id) const;
    double co2_rate(const std::string& class_id, double v, double a) const;
    double fuel_rate(const std::string& class_id, double v, double a) const;

private:
    std::map<std::string, EmissionClassCoeffs> classes_;
};

/// Mean with sample count, so an empty input is distinguishable from a true
/// zero mean.
struct MeanResult {
    double value = 0.0;
    std::size_t n = 0;
};

/// Arithmetic mean of waiting times, optionally restricted to one type index.
MeanResult avg_waiting_time(std::span<const CompletedRecord> records,
                            std::optional<int> type_filter = std::nullopt);

/// One sampled leader-follower pair: front-bumper distance attributed to the
/// follower's type.
struct HeadwayObservation {
    int follower_type = 0;
    double headway = 0.0;  // m
};

/// Extracts pairs from one lane snapshot: positions are front-bumper offsets
/// on a common axis, types aligned with positions.  Lanes with fewer than two
/// vehicles contribute nothing.
std::vector<HeadwayObservation> headways_from_lane(std::span<const double> positions,
                                                   std::span<const int> types);

MeanResult avg_space_headway(std::span<const HeadwayObservation> samples,
                             std::optional<int> type_filter = std::nullopt);

/// One output row of the evaluation report.
struct ReportRow {
    std::string run_id;       // "0".."N-1" or "mean"
    double rv_rate = 0.0;
    std::string scope;        // "HV-Signalized" | "HV-Unsignalized" | "RL"
    std::string vehicle_type; // type name or "all"
    double w_avg = 0.0;       // s
    double co2_mg_s = 0.0;
    double fuel_ml_s = 0.0;
    double headway_m = 0.0;
    std::size_t n = 0;        // vehicles behind w_avg / emission means
};

struct MetricsReport {
    std::vector<ReportRow> rows;
};

/// Per-type + overall rows for one run.
std::vector<ReportRow> summarize_run(const std::string& run_id, double rv_rate,
                                     const std::string& scope,
                                     std::span<const CompletedRecord> completed,
                                     std::span<const HeadwayObservation> headways,
                                     const std::vector<VehicleType>& types);

/// Count-weighted aggregate of per-run rows, labeled run_id = "mean".
std::vector<ReportRow> aggregate_rows(std::span<const ReportRow> per_run_rows);

std::string report_to_csv(const MetricsReport& report);
MetricsReport report_from_csv(const std::string& csv);
void write_report(const MetricsReport& report, const std::string& path);

/// Schema check for report CSVs (column set, numeric fields, value ranges).
/// Throws ConfigError with a description on the first violation.
void validate_report_csv(const std::string& csv);

}  // namespace crossflow
