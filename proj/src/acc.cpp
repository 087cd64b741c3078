#include "extcbf/acc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "extcbf/dynamics.hpp"
#include "extcbf/qp.hpp"

namespace extcbf {

void validate(const AccConfig& c)
{
    if (!(c.phi > 0.0))
        throw std::invalid_argument("acc: phi must be > 0");
    if (!(c.horizon > 0.0))
        throw std::invalid_argument("acc: horizon must be > 0");
    if (!(c.dt > 0.0) || !(c.duration > 0.0))
        throw std::invalid_argument("acc: dt and duration must be > 0");
    if (!(c.bounds.u_min <= c.bounds.u_max))
        throw std::invalid_argument("acc: u_min must not exceed u_max");
    if (!(c.slack_weight > 0.0))
        throw std::invalid_argument("acc: slack weight must be > 0");
    validate_law(c.controller);
}

BarrierEval acc_barrier(const AccState& s, double phi)
{
    return {s.z - phi * s.v, s.v_p - s.v, -phi};
}

double clbf_nominal_time(double b0, double p, double q)
{
    if (!(b0 < 0.0))
        throw std::invalid_argument("clbf_nominal_time: b0 must be negative");
    if (!(p > 0.0))
        throw std::invalid_argument("clbf_nominal_time: p must be positive");
    if (!(q > 0.0 && q < 1.0))
        throw std::invalid_argument("clbf_nominal_time: requires 0 < q < 1");
    return std::pow(-b0, 1.0 - q) / (p * (1.0 - q));
}

void AccPlant::advance(double u, double dt)
{
    state_.z += dt * (state_.v_p - state_.v);
    state_.v += dt * u;
}

namespace {

struct StepResult {
    double u = 0.0;
    double slack = 0.0;
    bool feasible = true;
};

qp::Problem base_problem(const AccConfig& c, int dim)
{
    qp::Problem p;
    p.dim = dim;
    p.lower[0] = c.bounds.u_min;
    p.upper[0] = c.bounds.u_max;
    if (dim == 2) {
        p.quad[1] = 2.0 * c.slack_weight;
        p.lower[1] = 0.0;
    }
    return p;
}

StepResult fallback(const AccConfig& c, const ConstraintRow& row)
{
    double u = row.coeff_u != 0.0 ? row.rhs / row.coeff_u : 0.0;
    u = std::clamp(u, c.bounds.u_min, c.bounds.u_max);
    return {u, 0.0, false};
}

// Exact tracking first; the penalized slack only enters when exact tracking
// is infeasible under the input bounds.
StepResult solve_tracking(const AccConfig& c, const BarrierEval& e, const law::ExtCbf& ext, double t)
{
    auto p1 = base_problem(c, 1);
    const auto exact = ext_tracking_row(e, ext.profile, c.alpha, t, SlackChannel::none);
    p1.add_row(exact);
    if (auto s = qp::solve(p1); s.optimal())
        return {s.values[0], 0.0, true};
    auto p2 = base_problem(c, 2);
    p2.add_row(ext_tracking_row(e, ext.profile, c.alpha, t, SlackChannel::attached));
    if (auto s = qp::solve(p2); s.optimal())
        return {s.values[0], s.values[1], true};
    return fallback(c, exact);
}

StepResult solve_inequality(const AccConfig& c, const ConstraintRow& row)
{
    auto p = base_problem(c, 1);
    p.add_row(row);
    if (auto s = qp::solve(p); s.optimal())
        return {s.values[0], 0.0, true};
    return fallback(c, row);
}

}  // namespace

AccRun run_acc(const AccConfig& config)
{
    validate(config);
    const std::size_t n = step_count(0.0, config.duration, config.dt);
    const auto* ext = std::get_if<law::ExtCbf>(&config.controller);

    AccRun run;
    run.trajectory.reserve(n + 1);
    auto& sum = run.summary;
    sum.controller = law_name(config.controller);
    sum.min_b_after_recovery = std::numeric_limits<double>::infinity();

    const std::size_t terminal_index =
        std::min(n, static_cast<std::size_t>(std::llround(config.horizon / config.dt)));

    AccPlant plant(config.initial, config.phi);
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = std::min(static_cast<double>(k) * config.dt, config.duration);
        const BarrierEval e = plant.barrier();

        AccSample s;
        s.t = t;
        s.state = plant.state();
        s.b = e.value;
        s.gamma = std::numeric_limits<double>::quiet_NaN();

        const bool in_window = ext && t >= ext->profile.t0 && t <= ext->profile.t1() + 1e-9;
        if (in_window) {
            s.gamma = gamma_value(ext->profile, t);
            sum.max_tracking_error = std::max(sum.max_tracking_error, std::abs(e.value - s.gamma));
        }
        if (!sum.recovery_time && e.value >= 0.0)
            sum.recovery_time = t;
        if (sum.recovery_time)
            sum.min_b_after_recovery = std::min(sum.min_b_after_recovery, e.value);
        if (k == terminal_index)
            sum.terminal_speed = s.state.v;

        if (k < n) {
            StepResult r;
            if (ext && ext_window_active(*ext, t))
                r = solve_tracking(config, e, *ext, t);
            else if (e.value < 0.0 && !ext && !std::holds_alternative<law::CbfOnly>(config.controller))
                r = solve_inequality(config, recovery_row(config.controller, e, config.alpha, t));
            else
                r = solve_inequality(config, standard_cbf_row(e, config.alpha));
            if (!r.feasible)
                ++sum.infeasible_steps;
            s.u = r.u;
            s.slack = r.slack;
            const double h = (k + 1 == n) ? config.duration - t : config.dt;
            plant.advance(r.u, h);
            sum.effort += r.u * r.u * h;
            sum.peak_abs_u = std::max(sum.peak_abs_u, std::abs(r.u));
            sum.max_slack = std::max(sum.max_slack, std::abs(r.slack));
            if (k == 0)
                sum.first_u = r.u;
        } else if (!run.trajectory.empty()) {
            s.u = run.trajectory.back().u;
        }
        run.trajectory.push_back(s);
    }
    if (!sum.recovery_time)
        sum.min_b_after_recovery = 0.0;
    return run;
}

const ComparisonRow& ComparisonTable::row(const std::string& controller) const
{
    for (const auto& r : rows)
        if (r.controller == controller)
            return r;
    throw std::out_of_range("no comparison row for " + controller);
}

const AccRun& ComparisonTable::run(const std::string& controller) const
{
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].controller == controller)
            return runs[i];
    throw std::out_of_range("no run for " + controller);
}

ProfileSearchSpec default_acc_search(const AccConfig& base)
{
    ProfileSearchSpec spec;
    spec.family = KernelFamily::quadratic;
    spec.grid = ProfileSearchSpec::default_grid(spec.family);
    spec.t0 = 0.0;
    spec.horizon = base.horizon;
    spec.settings.dt = base.dt;
    spec.settings.bounds = base.bounds;
    spec.settings.alpha = base.alpha;
    return spec;
}

ComparisonTable compare_acc(const ProfileObjective& objective, const AccConfig& base,
                            std::optional<ProfileSearchSpec> search, const AccBaselines& baselines)
{
    ComparisonTable table;
    const AccPlant plant(base.initial, base.phi);
    table.ext_selection = optimize_profile(search ? *search : default_acc_search(base), plant, objective);

    const double c = baselines.fxt_mu * std::numbers::pi / (2.0 * base.horizon);
    const std::vector<RecoveryLaw> laws = {law::CbfOnly{}, law::Clbf{baselines.clbf_p, baselines.clbf_q},
                                           law::FxtCbf{c, c, baselines.fxt_mu},
                                           law::ExtCbf{table.ext_selection.profile}};
    for (const auto& l : laws) {
        AccConfig cfg = base;
        cfg.controller = l;
        auto run = run_acc(cfg);
        const auto& s = run.summary;
        table.rows.push_back({s.controller, s.recovery_time, s.effort, s.terminal_speed, s.peak_abs_u});
        table.runs.push_back(std::move(run));
    }
    return table;
}

std::string comparison_csv(const ComparisonTable& table)
{
    std::ostringstream os;
    os.precision(10);
    os << "controller,recovery_time,effort,terminal_speed,peak_abs_u\n";
    for (const auto& r : table.rows) {
        os << r.controller << ',';
        if (r.recovery_time)
            os << *r.recovery_time;
        os << ',' << r.effort << ',' << r.terminal_speed << ',' << r.peak_abs_u << '\n';
    }
    return os.str();
}

std::string trajectory_csv(const AccRun& run)
{
    std::ostringstream os;
    os.precision(10);
    os << "t,z,v,u,b,gamma,slack\n";
    for (const auto& s : run.trajectory) {
        os << s.t << ',' << s.state.z << ',' << s.state.v << ',' << s.u << ',' << s.b << ',';
        if (!std::isnan(s.gamma))
            os << s.gamma;
        os << ',' << s.slack << '\n';
    }
    return os.str();
}

}  // namespace extcbf
