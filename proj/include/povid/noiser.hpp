#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "povid/errors.hpp"
#include "povid/rng.hpp"
#include "povid/types.hpp"

namespace povid {

// Forward-corruption schedule. rate[k] is the per-step noise rate, retention[k]
// the cumulative signal-keep factor prod_{i<=k}(1 - rate[i]); retention of
// "no noise" (step -1) is 1.
class NoiseSchedule {
public:
    static constexpr int kDefaultSteps = 500;

    // Rates follow sigmoid(l) * (0.5e-2 - 1e-5) + 1e-5 with l linearly spaced
    // over [-6, 6] across the T steps.
    static NoiseSchedule build(int steps);

    int steps() const { return static_cast<int>(rate_.size()); }
    double rate(int k) const;
    double retention(int k) const;  // retention(-1) == 1
    const std::vector<double>& rates() const { return rate_; }
    const std::vector<double>& retentions() const { return retention_; }

    std::string to_json() const;

private:
    std::vector<double> rate_;
    std::vector<double> retention_;
};

// x(k) = sqrt(retention[k]) * x + sqrt(1 - retention[k]) * eps with the noise
// matrix supplied by the caller (test hook for forcing eps).
template <class Scalar>
ImageFeatures<Scalar> add_noise_with(const NoiseSchedule& schedule, const ImageFeatures<Scalar>& x,
                                     int k, const ImageFeatures<Scalar>& eps) {
    if (k < 0 || k >= schedule.steps())
        throw StepOutOfRange("noise step " + std::to_string(k) + " outside [0, " +
                             std::to_string(schedule.steps()) + ")");
    if (eps.rows() != x.rows() || eps.cols() != x.cols())
        throw ConfigError("noise matrix shape mismatch");
    const Scalar keep = static_cast<Scalar>(std::sqrt(schedule.retention(k)));
    const Scalar mixin = static_cast<Scalar>(std::sqrt(1.0 - schedule.retention(k)));
    return keep * x + mixin * eps;
}

// Same with eps drawn i.i.d. standard normal from the seed.
template <class Scalar>
ImageFeatures<Scalar> add_noise(const NoiseSchedule& schedule, const ImageFeatures<Scalar>& x,
                                int k, std::uint64_t seed) {
    CounterRng rng(seed);
    ImageFeatures<Scalar> eps(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            eps(r, c) = static_cast<Scalar>(rng.next_normal());
    return add_noise_with(schedule, x, k, eps);
}

}  // namespace povid
