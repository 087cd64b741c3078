#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace extcbf {

// Longitudinal state of one agent on its current road segment.
struct VehicleState {
    double x = 0.0;  // position along segment [m]
    double v = 0.0;  // speed [m/s]

    bool operator==(const VehicleState&) const = default;
};

struct ControlInput {
    double u = 0.0;  // acceleration [m/s^2]
};

// Explicit Euler step of the double integrator x' = v, v' = u.
VehicleState step(const VehicleState& state, ControlInput u, double dt);

// Clamp v into [v_min, v_max]. Returns true when the clamp changed the state.
bool clamp_speed(VehicleState& state, double v_min, double v_max);

struct TrajectorySample {
    double t = 0.0;
    VehicleState state;
    double u = 0.0;
};

using Trajectory = std::vector<TrajectorySample>;
using ControlPolicy = std::function<ControlInput(double t, const VehicleState&)>;

class IntegrationError : public std::runtime_error {
public:
    IntegrationError(std::size_t step_index, const std::string& what)
        : std::runtime_error("controller failed at step " + std::to_string(step_index) + ": " + what),
          step_index_(step_index) {}
    std::size_t step_index() const { return step_index_; }

private:
    std::size_t step_index_;
};

// Number of Euler steps covering [t0, t1] with nominal step dt; the last step
// is shortened so the final sample lands on t1.
std::size_t step_count(double t0, double t1, double dt);

/// Integrates the closed loop from t0 to t1. The returned trajectory has
/// step_count(t0, t1, dt) + 1 samples; sample k holds the state at t_k and the
/// control applied on [t_k, t_{k+1}) (the last sample holds the policy output
/// at t1, which is not applied).
Trajectory integrate(const VehicleState& state0, const ControlPolicy& controller, double t0, double t1,
                     double dt);

}  // namespace extcbf
