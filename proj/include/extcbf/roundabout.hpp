#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "extcbf/barrier.hpp"
#include "extcbf/dynamics.hpp"
#include "extcbf/metrics.hpp"

namespace extcbf {

enum class SegmentKind { entry, arc, exit };

struct Segment {
    SegmentKind kind = SegmentKind::entry;
    int index = 0;  // entry/exit k, or arc k running from M_k to M_{k+1}
    double length = 0.0;
    double curvature = 0.0;
};

// Three entries, three circulating arcs and three exits. Segment ids:
// entries 0..2, arcs 3..5, exits 6..8. Entry k and arc k-1 meet at M_k.
struct RoundaboutGeometry {
    double entry_length = 60.0;
    double arc_length = 60.0;
    double exit_length = 60.0;

    static constexpr int kEntries = 3;
    static int entry_id(int k) { return k; }
    static int arc_id(int k) { return 3 + k; }
    static int exit_id(int k) { return 6 + k; }

    double radius() const;
    double kappa_max() const { return 1.0 / radius(); }
    Segment segment(int id) const;
    // entry, arcs entry..exit-1, exit
    std::vector<int> route(int entry, int exit) const;
    // Merging point crossed between two consecutive route segments when the
    // vehicle stays on the ring (or joins it), else -1.
    static int merge_between(int from, int to);

    bool operator==(const RoundaboutGeometry&) const = default;
};

void validate(const RoundaboutGeometry& g);

// 0 on straight segments, 1/R on arcs. Throws std::domain_error for d outside [0, L].
double curvature(const RoundaboutGeometry& g, int segment, double d);

struct LateralParams {
    double h = 1.5;
    double w_h = 0.9;
    double g = 9.81;

    bool operator==(const LateralParams&) const = default;
};

struct Problem2Weights {
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double lambda3 = 100.0;
    double v_d = 15.0;

    bool operator==(const Problem2Weights&) const = default;
};

enum class TrafficProfile { balanced, unbalanced, heavy };
enum class Method { cbf, clbf, fxt, ext };

std::string traffic_name(TrafficProfile p);
TrafficProfile parse_traffic(const std::string& s);
std::string method_name(Method m);
Method parse_method(const std::string& s);
std::array<double, 3> traffic_rates(TrafficProfile p);
const std::vector<Method>& all_methods();
const std::vector<TrafficProfile>& all_profiles();

struct ScenarioConfig {
    RoundaboutGeometry geometry;
    LateralParams lateral;
    Problem2Weights weights;
    TrafficProfile traffic = TrafficProfile::balanced;
    std::optional<std::array<double, 3>> rates;  // overrides the profile rates
    double v_min = 0.0;
    double v_max = 20.0;
    double u_min = -4.0;
    double u_max = 4.0;
    double phi = 1.8;
    double delta = 0.0;
    double alpha = 1.0;    // linear class-K gain shared by all rows
    double preview = 1.0;  // speed preview in the QP cost [s]
    double v_eps = 0.1;
    double min_spawn_gap = 10.0;
    double dt = 0.05;
    double horizon = 1500.0;  // hard stop [s]
    int vehicle_cap = 100;
    Method method = Method::ext;
    std::uint64_t seed = 1;
    double clbf_q = 0.2;
    // CLBF nominal convergence time as a fraction of the recovery horizon
    double clbf_margin = 0.8;
    double fxt_mu = 2.0;
    int ext_grid_points = 37;
    bool record_trajectories = false;

    std::array<double, 3> arrival_rates() const { return rates ? *rates : traffic_rates(traffic); }
    double lateral_speed_limit() const;

    bool operator==(const ScenarioConfig&) const = default;
};

void validate(const ScenarioConfig& c);

// --- barriers ---------------------------------------------------------------

BarrierEval speed_max_barrier(double v, double v_max);
BarrierEval speed_min_barrier(double v, double v_min);
BarrierEval lateral_barrier(double kappa, double v, const LateralParams& lat);
// gap is the path distance from the ego to its predecessor
BarrierEval rear_end_barrier(double gap, double v_i, double v_ip, double phi, double delta);

struct MergeGeometry {
    double L_i = 60.0;
    double x_i = 0.0;
    double v_i = 0.0;
    double L_im = 60.0;
    double x_im = 0.0;
    double v_im = 0.0;
};

// b5 = (L_i - x_i) - (L_im - x_im) - (phi / L_im) x_im v_i - delta. With h > 0
// the control coefficient uses the conflicting position one step ahead, which
// makes the Euler update of b5 exactly affine in u.
BarrierEval merge_barrier(const MergeGeometry& m, double phi, double delta, double h = 0.0);

// Active tracking row for a sampled-data loop: gamma_dot is replaced by the
// secant over [t, t + h], so b(t + h) - gamma(t + h) = (1 - kappa h)(b - gamma).
ConstraintRow sampled_tracking_row(const BarrierEval& eval, const RecoveryProfile& profile, double kappa, double t,
                                   double h, SlackChannel slack);

// --- rows -------------------------------------------------------------------

struct NamedRow {
    std::string name;
    ConstraintRow row;
};

struct RowContext {
    VehicleState self;
    double kappa_constraint = 0.0;  // curvature used by the lateral row
    std::optional<BarrierEval> rear_end;
    std::optional<BarrierEval> merge;
};

// v_max, v_min, lateral (when curved), rear_end and merge rows, as present.
std::vector<NamedRow> build_rows(const RowContext& ctx, const ScenarioConfig& c);

// --- conflict pairing ------------------------------------------------------

struct Approacher {
    int id = 0;
    int approach = 0;  // 0 entry, 1 ring
    double remaining = 0.0;
    double speed = 0.0;
};

// FIFO by estimated arrival. A vehicle is paired with the vehicle just ahead
// of it in the merged arrival order when that one comes from the other
// approach; a same-approach predecessor is left to the rear-end constraint.
// ETAs are made monotone along each approach; ties break on id.
std::map<int, std::optional<int>> assign_conflict(const std::vector<Approacher>& approachers, double v_eps);

struct Activation {
    double b0 = 0.0;
    double t0 = 0.0;
    double horizon = 0.0;
    bool degenerate_speed = false;  // v_im below v_eps
    bool clamped = false;           // horizon raised to 2 dt
};

// Recovery horizon is the conflicting vehicle's nominal time to the merging point.
std::optional<Activation> activate_recovery(double b5_now, double L_im, double x_im, double v_im,
                                            const ScenarioConfig& c, double t0);

// Problem-1 shape for an activation: grid search over the quadratic family
// minimizing the Problem-2 running cost with the conflicting vehicle held at
// constant speed. Falls back to the least-violating shape.
double select_shape(const MergeGeometry& m, const Activation& a, double kappa_cost, const ScenarioConfig& c);

// --- Problem 2 --------------------------------------------------------------

// Per-step cost at the current state.
double problem2_cost(const ScenarioConfig& c, double u, double v, double kappa, double slack);

enum class StepStatus { optimal, infeasible };

struct StepOutcome {
    double u = 0.0;
    double slack = 0.0;
    StepStatus status = StepStatus::optimal;
};

/// Solves Problem 2 for one vehicle. With a tracking row the QP first asks for
/// exact tracking and only relaxes it with the penalized slack when exact
/// tracking conflicts with the remaining rows. Infeasible problems fall back
/// to the strongest admissible braking.
StepOutcome step_vehicle(const std::vector<NamedRow>& rows, const std::optional<ConstraintRow>& tracking,
                         double v, double kappa_cost, const ScenarioConfig& c);

double fallback_control(double v, const ScenarioConfig& c);

// --- simulation -------------------------------------------------------------

struct RecoveryEvent {
    int vehicle = 0;
    int conflicting = 0;
    int merge = 0;
    double t0 = 0.0;
    double horizon = 0.0;
    double b0 = 0.0;
    double shape = 0.0;
    bool feasible_tracking = true;  // no slack above 1e-6 and no fallback in the window
    std::optional<double> b5_at_end;
    bool ended_early = false;  // conflicting vehicle crossed before t0 + Tr
    bool clamped = false;
};

struct TracePoint {
    double t = 0.0;
    int segment = 0;
    double x = 0.0;
    double v = 0.0;
    double u = 0.0;
    double b5 = 0.0;     // NaN without a conflicting vehicle
    double gamma = 0.0;  // NaN outside a recovery window
};

struct RunSummary {
    int spawned = 0;
    int exited = 0;
    int active = 0;
    bool completed = false;
    double end_time = 0.0;
    double min_b4 = 0.0;
    double min_b3_arc = 0.0;
    double min_v = 0.0;
    double max_v = 0.0;
    double min_u = 0.0;
    double max_u = 0.0;
    int order_violations = 0;  // vehicle crossed its merge before its conflicting vehicle
    int conservation_failures = 0;
    std::vector<RecoveryEvent> recoveries;
    std::vector<std::string> diagnostics;
};

struct ScenarioResult {
    std::vector<MetricsRecord> records;  // exited vehicles, ordered by id
    RunSummary summary;
    std::map<int, std::vector<TracePoint>> traces;
};

ScenarioResult run_scenario(const ScenarioConfig& config);

struct Arrival {
    double time = 0.0;
    int entry = 0;
    int exit = 0;
};

std::vector<Arrival> generate_arrivals(const ScenarioConfig& c);

}  // namespace extcbf
