#include "povid/noiser.hpp"

#include <cmath>

#include "json.hpp"

namespace povid {

NoiseSchedule NoiseSchedule::build(int steps) {
    if (steps < 1) throw InvalidStepCount("noise schedule needs at least one step");
    NoiseSchedule s;
    s.rate_.resize(static_cast<std::size_t>(steps));
    s.retention_.resize(static_cast<std::size_t>(steps));
    constexpr double kLo = 1e-5;
    constexpr double kHi = 0.5e-2;
    double cumulative = 1.0;
    for (int k = 0; k < steps; ++k) {
        const double l = steps == 1 ? -6.0 : -6.0 + 12.0 * k / (steps - 1);
        const double rate = 1.0 / (1.0 + std::exp(-l)) * (kHi - kLo) + kLo;
        cumulative *= 1.0 - rate;
        s.rate_[static_cast<std::size_t>(k)] = rate;
        s.retention_[static_cast<std::size_t>(k)] = cumulative;
    }
    return s;
}

double NoiseSchedule::rate(int k) const {
    if (k < 0 || k >= steps()) throw StepOutOfRange("rate index out of range");
    return rate_[static_cast<std::size_t>(k)];
}

double NoiseSchedule::retention(int k) const {
    if (k == -1) return 1.0;
    if (k < -1 || k >= steps()) throw StepOutOfRange("retention index out of range");
    return retention_[static_cast<std::size_t>(k)];
}

std::string NoiseSchedule::to_json() const {
    nlohmann::ordered_json j;
    j["T"] = steps();
    j["rate"] = rate_;
    j["retention"] = retention_;
    return j.dump();
}

}  // namespace povid
