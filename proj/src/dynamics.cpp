#include "extcbf/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace extcbf {

VehicleState step(const VehicleState& state, ControlInput u, double dt)
{
    if (!std::isfinite(state.x) || !std::isfinite(state.v) || !std::isfinite(u.u) || !std::isfinite(dt))
        throw std::invalid_argument("step: non-finite input");
    if (dt <= 0.0)
        throw std::invalid_argument("step: dt must be positive");
    return {state.x + state.v * dt, state.v + u.u * dt};
}

bool clamp_speed(VehicleState& state, double v_min, double v_max)
{
    const double clamped = std::clamp(state.v, v_min, v_max);
    if (clamped == state.v)
        return false;
    state.v = clamped;
    return true;
}

std::size_t step_count(double t0, double t1, double dt)
{
    if (!(t1 > t0) || !(dt > 0.0))
        throw std::invalid_argument("step_count: need t1 > t0 and dt > 0");
    // tolerate round-off when dt divides the interval
    const double n = (t1 - t0) / dt;
    return static_cast<std::size_t>(std::ceil(n - 1e-9));
}

Trajectory integrate(const VehicleState& state0, const ControlPolicy& controller, double t0, double t1,
                     double dt)
{
    const std::size_t n = step_count(t0, t1, dt);
    Trajectory traj;
    traj.reserve(n + 1);

    VehicleState s = state0;
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = (k == n) ? t1 : t0 + static_cast<double>(k) * dt;
        ControlInput u;
        try {
            u = controller(t, s);
        } catch (const std::exception& e) {
            throw IntegrationError(k, e.what());
        }
        if (!std::isfinite(u.u))
            throw IntegrationError(k, "non-finite control");
        traj.push_back({t, s, u.u});
        if (k == n)
            break;
        const double h = (k + 1 == n) ? t1 - t : dt;
        s = step(s, u, h);
    }
    return traj;
}

}  // namespace extcbf
