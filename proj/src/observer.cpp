#include "thermopalm/observer.hpp"

#include <cmath>

#include "thermopalm/errors.hpp"

namespace thermopalm {

void ObserverModel::validate() const {
    if (!(slope_sigma >= 0) || !std::isfinite(slope_sigma)) throw InvalidArgument("observer: sigma must be >= 0");
    if (!(lapse_rate >= 0 && lapse_rate <= 0.1)) throw InvalidArgument("observer: lapse_rate must be in [0, 0.1]");
    if (!(guess_rate >= 0 && guess_rate <= 0.1)) throw InvalidArgument("observer: guess_rate must be in [0, 0.1]");
    if (!std::isfinite(threshold_mu)) throw InvalidArgument("observer: threshold must be finite");
}

double p_different(const ObserverModel& m, double delta) {
    if (!(delta >= 0)) throw InvalidArgument("observer: delta must be >= 0");
    double core;
    if (m.slope_sigma == 0.0) {
        core = delta > m.threshold_mu ? 1.0 : (delta == m.threshold_mu ? 0.5 : 0.0);
    } else {
        core = 0.5 * std::erfc(-(delta - m.threshold_mu) / (m.slope_sigma * std::sqrt(2.0)));
    }
    return m.guess_rate + (1.0 - m.guess_rate - m.lapse_rate) * core;
}

double delta_at_probability(const ObserverModel& m, double p) {
    if (!(p > m.guess_rate && p < 1.0 - m.lapse_rate))
        throw InvalidArgument("observer: probability outside (guess, 1 - lapse)");
    if (p_different(m, 0.0) >= p) return 0.0;
    double lo = 0.0, hi = std::max(1.0, m.threshold_mu);
    while (p_different(m, hi) < p) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
        const double mid = 0.5 * (lo + hi);
        (p_different(m, mid) < p ? lo : hi) = mid;
    }
    return hi;
}

SimulatedObserver::SimulatedObserver(const ObserverModel& m) : model_(m), rng_(m.seed) { m.validate(); }

double SimulatedObserver::uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

Response SimulatedObserver::respond(double delta) {
    return uniform() < p_different(model_, delta) ? Response::different : Response::same;
}

}  // namespace thermopalm
