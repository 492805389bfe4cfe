#include "crossflow/vehicle.hpp"

#include <cmath>
#include <stdexcept>

namespace crossflow {

const std::vector<VehicleType>& builtin_vehicle_types() {
    static const std::vector<VehicleType> types = {
        //        name           len   wid  hgt   mass  gap  acc  dec  vmax   class
        VehicleType{"passenger_car", 5.0, 1.8, 1.5, 1500, 2.5, 2.6, 4.5, 55.56, "light_gasoline"},
        VehicleType{"pickup",        5.8, 2.0, 1.9, 2500, 2.5, 2.6, 4.5, 33.33, "light_gasoline"},
        VehicleType{"van",           5.5, 2.0, 2.1, 3000, 2.5, 2.6, 4.5, 27.78, "light_gasoline"},
        VehicleType{"semi_trailer", 16.5, 2.55, 4.0, 15000, 2.5, 1.0, 4.0, 36.11, "heavy_diesel"},
        VehicleType{"truck",         7.1, 2.4, 2.4, 12000, 2.5, 1.3, 4.0, 36.11, "heavy_diesel"},
    };
    return types;
}

namespace {

// Stock mix rows, percent: {rv_car, hv_car, pickup, van, semi, truck}.
struct MixRow {
    double rate;
    std::array<double, 6> w;
};
constexpr std::array<MixRow, 9> kMixRows = {{
    {0.1, {10, 60, 3, 15, 11, 1}},
    {0.2, {20, 50, 3, 15, 11, 1}},
    {0.3, {30, 40, 3, 15, 11, 1}},
    {0.4, {40, 30, 3, 15, 11, 1}},
    {0.5, {50, 20, 3, 15, 11, 1}},
    {0.6, {60, 10, 3, 15, 11, 1}},
    {0.7, {70, 0, 3, 15, 11, 1}},
    {0.8, {80, 0, 2, 10, 7.3, 0.7}},
    {0.9, {90, 0, 1, 5, 3.7, 0.3}},
}};

// Base composition of human traffic, percent per TypeIndex.
constexpr std::array<double, 5> kBaseMix = {70, 3, 15, 11, 1};

}  // namespace

std::array<double, 6> type_mix_for_rv_rate(double rv_rate) {
    if (rv_rate < 0.0 || rv_rate > 1.0)
        throw std::invalid_argument("type_mix_for_rv_rate: rv_rate must be in [0, 1]");
    for (const auto& row : kMixRows)
        if (std::abs(rv_rate - row.rate) < 1e-9) return row.w;

    const double rv_pct = 100.0 * rv_rate;
    std::array<double, 6> w{};
    w[0] = rv_pct;
    if (rv_pct <= kBaseMix[0]) {
        // shrink the human passenger-car share first
        w[1] = kBaseMix[0] - rv_pct;
        for (int i = 1; i < kNumVehicleTypes; ++i) w[i + 1] = kBaseMix[i];
    } else {
        // passenger cars exhausted: scale the other classes to fill the rest
        const double rest = 100.0 - kBaseMix[0];
        const double scale = (100.0 - rv_pct) / rest;
        w[1] = 0.0;
        for (int i = 1; i < kNumVehicleTypes; ++i) w[i + 1] = kBaseMix[i] * scale;
    }
    return w;
}

std::pair<TypeIndex, Role> sample_vehicle(double rv_rate, Rng& rng) {
    const auto w = type_mix_for_rv_rate(rv_rate);
    const std::size_t slot = rng.pick_weighted(std::span<const double>(w.data(), w.size()));
    if (slot == 0) return {TypeIndex::PassengerCar, Role::Robot};
    return {static_cast<TypeIndex>(slot - 1), Role::Human};
}

}  // namespace crossflow
