#include "crossflow/rng.hpp"

#include <cmath>

namespace crossflow {

double Rng::gaussian(double mean, double stddev) {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    return mean + z * stddev;
}

}  // namespace crossflow
