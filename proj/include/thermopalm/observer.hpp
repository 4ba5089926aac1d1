#pragma once

#include <cstdint>
#include <random>

#include "thermopalm/staircase.hpp"

namespace thermopalm {

/// Psychometric stand-in for a participant.
struct ObserverModel {
    double threshold_mu = 2.5;  // degC
    double slope_sigma = 0.8;   // degC; 0 gives a step at threshold_mu
    double lapse_rate = 0.0;
    double guess_rate = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
};

/// guess + (1 - guess - lapse) * Phi((delta - mu) / sigma). With sigma = 0
/// the core is 1 above mu, 0.5 at mu, 0 below.
double p_different(const ObserverModel& m, double delta);

/// Smallest delta >= 0 with p_different >= p (bisection). Throws
/// InvalidArgument when p is outside (guess, 1 - lapse).
double delta_at_probability(const ObserverModel& m, double p);

class SimulatedObserver {
public:
    explicit SimulatedObserver(const ObserverModel& m);

    /// delta >= 0 is the magnitude of the perceived difference.
    Response respond(double delta);
    double uniform();
    const ObserverModel& model() const { return model_; }

private:
    ObserverModel model_;
    std::mt19937_64 rng_;
};

}  // namespace thermopalm
