#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "extcbf/barrier.hpp"
#include "extcbf/recovery_opt.hpp"

namespace extcbf {

struct AccState {
    double z = 20.0;    // gap to the lead vehicle [m]
    double v = 20.0;    // ego speed [m/s]
    double v_p = 15.0;  // lead speed, constant [m/s]
};

struct AccConfig {
    double phi = 1.8;       // headway [s]
    double horizon = 15.0;  // prescribed recovery horizon T [s]
    double dt = 1e-3;
    double duration = 20.0;
    InputBounds bounds;  // unbounded by default
    RecoveryLaw controller = law::CbfOnly{};
    ClassK alpha = ClassK::linear(1.0);
    double slack_weight = 100.0;
    AccState initial;
};

void validate(const AccConfig& config);

BarrierEval acc_barrier(const AccState& state, double phi);

// Convergence time of b' = p (-b)^q from b0 < 0.
double clbf_nominal_time(double b0, double p, double q);

struct AccSample {
    double t = 0.0;
    AccState state;
    double u = 0.0;
    double b = 0.0;
    double gamma = 0.0;  // NaN outside an active recovery window
    double slack = 0.0;
};

struct AccSummary {
    std::string controller;
    std::optional<double> recovery_time;
    double effort = 0.0;          // sum u^2 dt
    double terminal_speed = 0.0;  // v at t0 + T
    double peak_abs_u = 0.0;
    double first_u = 0.0;
    double max_tracking_error = 0.0;  // ExT only
    double max_slack = 0.0;
    double min_b_after_recovery = 0.0;
    std::size_t infeasible_steps = 0;
};

struct AccRun {
    std::vector<AccSample> trajectory;
    AccSummary summary;
};

AccRun run_acc(const AccConfig& config);

// Plant adapter used to select the ExT profile.
class AccPlant : public TrackingPlant {
public:
    AccPlant(AccState state, double phi) : state_(state), phi_(phi) {}

    std::unique_ptr<TrackingPlant> clone() const override { return std::make_unique<AccPlant>(*this); }
    BarrierEval barrier() const override { return acc_barrier(state_, phi_); }
    void advance(double u, double dt) override;
    double speed() const override { return state_.v; }
    bool admissible() const override { return state_.v >= 0.0; }

    const AccState& state() const { return state_; }

private:
    AccState state_;
    double phi_;
};

struct ComparisonRow {
    std::string controller;
    std::optional<double> recovery_time;
    double effort = 0.0;
    double terminal_speed = 0.0;
    double peak_abs_u = 0.0;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    std::vector<AccRun> runs;  // same order as rows: cbf, clbf, fxt, ext
    OptimizationResult ext_selection;

    const ComparisonRow& row(const std::string& controller) const;
    const AccRun& run(const std::string& controller) const;
};

ProfileSearchSpec default_acc_search(const AccConfig& base);

// CLBF decay parameters and the FxT-CBF exponent; FxT uses c1 = c2 = mu pi / (2 T).
struct AccBaselines {
    double clbf_p = 0.766;
    double clbf_q = 0.2;
    double fxt_mu = 2.0;
};

/// Runs CBF-only, CLBF, FxT-CBF and ExT-CBF from the same initial state. The
/// ExT profile is chosen by optimize_profile under the given objective.
ComparisonTable compare_acc(const ProfileObjective& objective, const AccConfig& base = {},
                            std::optional<ProfileSearchSpec> search = std::nullopt, const AccBaselines& baselines = {});

std::string comparison_csv(const ComparisonTable& table);
std::string trajectory_csv(const AccRun& run);

}  // namespace extcbf
