// Shared small utilities: angle wrapping, (eta, phi) distances, error type.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace jetjepa {

inline constexpr double kPi = 3.14159265358979323846;

// All user-facing failures funnel through this; the CLI turns it into
// "error: <what>" on stderr and a non-zero exit code.
class JetJepaError : public std::runtime_error {
public:
    explicit JetJepaError(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw JetJepaError(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// Wrap an angle to (-pi, pi].
inline double wrap_phi(double phi) {
    double w = std::fmod(phi, 2.0 * kPi);
    if (w <= -kPi) w += 2.0 * kPi;
    else if (w > kPi) w -= 2.0 * kPi;
    return w;
}

// Signed azimuthal difference a - b, wrapped to (-pi, pi].
inline double delta_phi(double a, double b) { return wrap_phi(a - b); }

// Angular distance in the (eta, phi) plane with periodic phi.
inline double delta_r(double eta_a, double phi_a, double eta_b, double phi_b) {
    const double de = eta_a - eta_b;
    const double dp = delta_phi(phi_a, phi_b);
    return std::sqrt(de * de + dp * dp);
}

inline bool approx_rel(double a, double b, double rel, double abs_floor = 0.0) {
    const double diff = std::fabs(a - b);
    const double scale = std::max({std::fabs(a), std::fabs(b), abs_floor});
    return diff <= rel * scale || diff <= abs_floor;
}

} // namespace jetjepa
