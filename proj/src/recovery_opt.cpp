#include "extcbf/recovery_opt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "extcbf/dynamics.hpp"

namespace extcbf {

ProfileObjective ProfileObjective::control_effort()
{
    return {Kind::control_effort, 1.0, 0.0, 0.0, 0.0};
}

ProfileObjective ProfileObjective::terminal_speed(double target)
{
    return {Kind::terminal_speed_deviation, 0.0, 1.0, 0.0, target};
}

ProfileObjective ProfileObjective::weighted(double effort, double terminal, double running, double target)
{
    if (effort < 0.0 || terminal < 0.0 || running < 0.0)
        throw std::invalid_argument("objective weights must be non-negative");
    return {Kind::weighted, effort, terminal, running, target};
}

ProfileEvaluation evaluate_profile(const RecoveryProfile& profile, const TrackingPlant& plant,
                                   const ProfileObjective& objective, const TrackingSettings& settings)
{
    const auto check = validate_profile(profile);
    if (!check.ok())
        throw std::invalid_argument("evaluate_profile: " + check.messages.front());

    auto sim = plant.clone();
    const std::size_t n = step_count(profile.t0, profile.t1(), settings.dt);
    const double tol = 1e-9;

    ProfileEvaluation out;
    double effort = 0.0, running = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = profile.t0 + static_cast<double>(k) * settings.dt;
        const double h = (k + 1 == n) ? profile.t1() - t : settings.dt;
        const BarrierEval e = sim->barrier();
        out.max_tracking_error = std::max(out.max_tracking_error, std::abs(shifted_barrier(e.value, profile, t)));

        const auto row = ext_tracking_row(e, profile, settings.alpha, t, SlackChannel::none);
        double u = 0.0;
        if (row.coeff_u == 0.0) {
            // no control authority over the barrier rate
            if (row.rhs != 0.0) {
                out.feasible = false;
                if (out.limiting_constraint.empty())
                    out.limiting_constraint = "zero control authority";
            }
        } else {
            u = row.rhs / row.coeff_u;
        }
        const double excess = std::max(settings.bounds.u_min - u, u - settings.bounds.u_max);
        if (excess > tol) {
            out.feasible = false;
            if (excess > out.max_bound_excess) {
                out.max_bound_excess = excess;
                out.limiting_constraint = u < settings.bounds.u_min ? "u_min" : "u_max";
            }
        }
        out.max_abs_u = std::max(out.max_abs_u, std::abs(u));
        effort += u * u * h;
        running += sim->running_cost(u) * h;
        sim->advance(u, h);
        if (!sim->admissible()) {
            out.feasible = false;
            if (out.limiting_constraint.empty())
                out.limiting_constraint = "state bounds";
        }
    }
    const BarrierEval last = sim->barrier();
    out.max_tracking_error = std::max(out.max_tracking_error, std::abs(shifted_barrier(last.value, profile, profile.t1())));
    out.terminal_speed = sim->speed();

    const double dv = out.terminal_speed - objective.target_speed;
    out.cost = objective.effort_weight * effort + objective.terminal_weight * dv * dv + objective.running_weight * running;
    return out;
}

std::string family_name(KernelFamily family)
{
    switch (family) {
    case KernelFamily::linear:
        return "linear";
    case KernelFamily::quadratic:
        return "quadratic";
    case KernelFamily::exponential:
        return "exponential";
    }
    return "unknown";
}

std::vector<double> ProfileSearchSpec::default_grid(KernelFamily family, int points)
{
    if (points < 1)
        throw std::invalid_argument("grid needs at least one point");
    std::vector<double> grid;
    auto linspace = [&](double lo, double hi) {
        for (int i = 0; i < points; ++i)
            grid.push_back(points == 1 ? lo : lo + (hi - lo) * i / (points - 1));
    };
    switch (family) {
    case KernelFamily::linear:
        grid.push_back(0.0);
        break;
    case KernelFamily::quadratic:
        linspace(-0.9, 0.9);
        break;
    case KernelFamily::exponential:
        linspace(0.25, 9.25);
        break;
    }
    return grid;
}

RecoveryProfile make_profile(KernelFamily family, double parameter, double b0, double t0, double horizon)
{
    RecoveryProfile p;
    p.b0 = b0;
    p.t0 = t0;
    p.horizon = horizon;
    switch (family) {
    case KernelFamily::linear:
        p.kernel = kernel::Linear{};
        break;
    case KernelFamily::quadratic:
        p.kernel = kernel::Quadratic{parameter};
        break;
    case KernelFamily::exponential:
        p.kernel = kernel::Exponential{parameter};
        break;
    }
    return p;
}

OptimizationResult optimize_profile(const ProfileSearchSpec& spec, const TrackingPlant& plant,
                                    const ProfileObjective& objective)
{
    if (spec.grid.empty())
        throw std::invalid_argument("optimize_profile: empty parameter grid");
    if (!(spec.settings.dt > 0.0) || !(spec.horizon > 0.0))
        throw std::invalid_argument("optimize_profile: dt and horizon must be positive");

    const double b0 = plant.barrier().value;
    OptimizationResult result;
    bool found = false;
    std::size_t infeasible = 0;
    const GridPointReport* closest = nullptr;

    for (double theta : spec.grid) {
        const auto profile = make_profile(spec.family, theta, b0, spec.t0, spec.horizon);
        const auto check = validate_profile(profile);
        if (!check.ok())
            throw std::invalid_argument("optimize_profile: grid point " + std::to_string(theta) + ": " +
                                        check.messages.front());
        result.report.push_back({theta, evaluate_profile(profile, plant, objective, spec.settings)});
    }
    for (const auto& point : result.report) {
        const auto& ev = point.evaluation;
        if (!ev.feasible) {
            ++infeasible;
            if (!closest || ev.max_bound_excess < closest->evaluation.max_bound_excess)
                closest = &point;
            continue;
        }
        if (!found || ev.cost < result.cost || (ev.cost == result.cost && point.parameter < result.parameter)) {
            found = true;
            result.cost = ev.cost;
            result.parameter = point.parameter;
        }
    }
    result.infeasible_fraction = static_cast<double>(infeasible) / static_cast<double>(result.report.size());
    if (!found) {
        std::ostringstream os;
        os << "no feasible " << family_name(spec.family) << " recovery profile; tightest constraint "
           << (closest->evaluation.limiting_constraint.empty() ? "unknown" : closest->evaluation.limiting_constraint)
           << " (closest parameter " << closest->parameter << ", excess " << closest->evaluation.max_bound_excess
           << ")";
        result.parameter = closest->parameter;
        result.cost = closest->evaluation.cost;
        result.profile = make_profile(spec.family, closest->parameter, b0, spec.t0, spec.horizon);
        throw NoFeasibleProfile(os.str(), std::move(result));
    }
    result.profile = make_profile(spec.family, result.parameter, b0, spec.t0, spec.horizon);
    return result;
}

std::string report_csv(const OptimizationResult& result)
{
    std::ostringstream os;
    os.precision(17);
    os << "parameter,cost,feasible,max_abs_u\n";
    for (const auto& p : result.report)
        os << p.parameter << ',' << p.evaluation.cost << ',' << (p.evaluation.feasible ? 1 : 0) << ','
           << p.evaluation.max_abs_u << '\n';
    return os.str();
}

}  // namespace extcbf
