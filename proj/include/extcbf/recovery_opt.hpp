#pragma once

#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "extcbf/barrier.hpp"

namespace extcbf {

// Closed-loop plant whose barrier is driven along a recovery profile.
class TrackingPlant {
public:
    virtual ~TrackingPlant() = default;
    virtual std::unique_ptr<TrackingPlant> clone() const = 0;
    virtual BarrierEval barrier() const = 0;
    virtual void advance(double u, double dt) = 0;
    virtual double speed() const = 0;
    // Plant-specific running cost, integrated by weighted objectives.
    virtual double running_cost(double /*u*/) const { return 0.0; }
    // State constraints the plant must respect besides the input box.
    virtual bool admissible() const { return true; }
};

struct ProfileObjective {
    enum class Kind { control_effort, terminal_speed_deviation, weighted };

    Kind kind = Kind::control_effort;
    double effort_weight = 1.0;
    double terminal_weight = 0.0;
    double running_weight = 0.0;
    double target_speed = 0.0;

    static ProfileObjective control_effort();
    static ProfileObjective terminal_speed(double target);
    static ProfileObjective weighted(double effort, double terminal, double running, double target);
};

struct InputBounds {
    double u_min = -std::numeric_limits<double>::infinity();
    double u_max = std::numeric_limits<double>::infinity();
};

struct TrackingSettings {
    double dt = 1e-3;
    InputBounds bounds;
    ClassK alpha = ClassK::linear(1.0);
};

struct ProfileEvaluation {
    double cost = 0.0;
    bool feasible = true;
    double max_abs_u = 0.0;
    // largest distance of the required control outside the input box
    double max_bound_excess = 0.0;
    std::string limiting_constraint;
    double max_tracking_error = 0.0;
    double terminal_speed = 0.0;
};

/// Simulates the plant with the recovery row held tight (exact tracking with
/// class-K feedback on the shifted barrier) over the profile window and scores
/// the resulting control sequence. Feasible iff the required control stays in
/// the input box and the plant stays admissible at every step.
ProfileEvaluation evaluate_profile(const RecoveryProfile& profile, const TrackingPlant& plant,
                                   const ProfileObjective& objective, const TrackingSettings& settings);

enum class KernelFamily { linear, quadratic, exponential };

std::string family_name(KernelFamily family);

struct ProfileSearchSpec {
    KernelFamily family = KernelFamily::quadratic;
    // one shape parameter per grid point (ignored for the linear family)
    std::vector<double> grid;
    double t0 = 0.0;
    double horizon = 1.0;
    TrackingSettings settings;

    static std::vector<double> default_grid(KernelFamily family, int points = 37);
};

RecoveryProfile make_profile(KernelFamily family, double parameter, double b0, double t0, double horizon);

struct GridPointReport {
    double parameter = 0.0;
    ProfileEvaluation evaluation;
};

struct OptimizationResult {
    RecoveryProfile profile;
    double parameter = 0.0;
    double cost = 0.0;
    std::vector<GridPointReport> report;
    double infeasible_fraction = 0.0;
};

class NoFeasibleProfile : public std::runtime_error {
public:
    NoFeasibleProfile(const std::string& what, OptimizationResult partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const OptimizationResult& partial() const { return partial_; }

private:
    OptimizationResult partial_;
};

// Exhaustive search over the grid; returns the feasible point of least cost
// (ties broken by the smaller parameter).
OptimizationResult optimize_profile(const ProfileSearchSpec& spec, const TrackingPlant& plant,
                                    const ProfileObjective& objective);

// CSV with columns: parameter, cost, feasible, max_abs_u
std::string report_csv(const OptimizationResult& result);

}  // namespace extcbf
