#include "extcbf/roundabout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "extcbf/qp.hpp"
#include "extcbf/recovery_opt.hpp"

namespace extcbf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

double RoundaboutGeometry::radius() const
{
    return kEntries * arc_length / (2.0 * std::numbers::pi);
}

Segment RoundaboutGeometry::segment(int id) const
{
    if (id < 0 || id >= 3 * kEntries)
        throw std::out_of_range("segment id " + std::to_string(id));
    const int k = id % kEntries;
    switch (id / kEntries) {
    case 0:
        return {SegmentKind::entry, k, entry_length, 0.0};
    case 1:
        return {SegmentKind::arc, k, arc_length, 1.0 / radius()};
    default:
        return {SegmentKind::exit, k, exit_length, 0.0};
    }
}

std::vector<int> RoundaboutGeometry::route(int entry, int exit) const
{
    if (entry < 0 || entry >= kEntries || exit < 0 || exit >= kEntries || entry == exit)
        throw std::invalid_argument("route: entry and exit must be distinct indices in [0, 3)");
    std::vector<int> r{entry_id(entry)};
    for (int j = entry; j != exit; j = (j + 1) % kEntries)
        r.push_back(arc_id(j));
    r.push_back(exit_id(exit));
    return r;
}

int RoundaboutGeometry::merge_between(int from, int to)
{
    if (from >= 0 && from < kEntries && to == arc_id(from))
        return from;
    if (from >= kEntries && from < 2 * kEntries && to >= kEntries && to < 2 * kEntries) {
        const int j = from - kEntries;
        if (to - kEntries == (j + 1) % kEntries)
            return (j + 1) % kEntries;
    }
    return -1;
}

void validate(const RoundaboutGeometry& g)
{
    if (!(g.entry_length > 0.0) || !(g.arc_length > 0.0) || !(g.exit_length > 0.0))
        throw std::invalid_argument("geometry: segment lengths must be > 0");
}

double curvature(const RoundaboutGeometry& g, int segment, double d)
{
    const Segment s = g.segment(segment);
    const double tol = 1e-9 * s.length;
    if (!(d >= -tol && d <= s.length + tol))
        throw std::domain_error("curvature: position " + std::to_string(d) + " outside segment");
    return s.curvature;
}

std::string traffic_name(TrafficProfile p)
{
    switch (p) {
    case TrafficProfile::balanced:
        return "balanced";
    case TrafficProfile::unbalanced:
        return "unbalanced";
    case TrafficProfile::heavy:
        return "heavy";
    }
    return "?";
}

TrafficProfile parse_traffic(const std::string& s)
{
    for (auto p : all_profiles())
        if (traffic_name(p) == s)
            return p;
    throw std::invalid_argument("unknown traffic profile '" + s + "' (balanced|unbalanced|heavy)");
}

std::string method_name(Method m)
{
    switch (m) {
    case Method::cbf:
        return "cbf";
    case Method::clbf:
        return "clbf";
    case Method::fxt:
        return "fxt";
    case Method::ext:
        return "ext";
    }
    return "?";
}

Method parse_method(const std::string& s)
{
    for (auto m : all_methods())
        if (method_name(m) == s)
            return m;
    throw std::invalid_argument("unknown method '" + s + "' (cbf|clbf|fxt|ext)");
}

std::array<double, 3> traffic_rates(TrafficProfile p)
{
    switch (p) {
    case TrafficProfile::balanced:
        return {0.10, 0.10, 0.10};
    case TrafficProfile::unbalanced:
        return {0.18, 0.06, 0.06};
    case TrafficProfile::heavy:
        return {0.15, 0.15, 0.15};
    }
    return {0, 0, 0};
}

const std::vector<Method>& all_methods()
{
    static const std::vector<Method> m{Method::cbf, Method::clbf, Method::fxt, Method::ext};
    return m;
}

const std::vector<TrafficProfile>& all_profiles()
{
    static const std::vector<TrafficProfile> p{TrafficProfile::balanced, TrafficProfile::unbalanced,
                                               TrafficProfile::heavy};
    return p;
}

double ScenarioConfig::lateral_speed_limit() const
{
    return std::sqrt(lateral.w_h * lateral.g / (geometry.kappa_max() * lateral.h));
}

void validate(const ScenarioConfig& c)
{
    validate(c.geometry);
    auto need = [](bool ok, const std::string& what) {
        if (!ok)
            throw std::invalid_argument(what);
    };
    need(c.lateral.h > 0.0 && c.lateral.w_h > 0.0 && c.lateral.g > 0.0, "lateral: h, w_h and g must be > 0");
    need(c.weights.lambda1 >= 0.0 && c.weights.lambda2 >= 0.0, "weights: lambda1, lambda2 must be >= 0");
    need(c.weights.lambda3 > 0.0, "weights: lambda3 must be > 0");
    need(c.v_min >= 0.0 && c.v_max > c.v_min, "speed bounds: need 0 <= v_min < v_max");
    need(c.u_min < 0.0, "u_min must be < 0");
    need(c.u_max > 0.0, "u_max must be > 0");
    need(c.phi > 0.0, "phi must be > 0");
    need(c.delta >= 0.0, "delta must be >= 0");
    need(c.alpha > 0.0 && c.alpha * c.dt <= 1.0, "alpha must be > 0 with alpha * dt <= 1");
    need(c.preview >= 0.0, "preview must be >= 0");
    need(c.v_eps > 0.0, "v_eps must be > 0");
    need(c.min_spawn_gap >= 0.0, "min_spawn_gap must be >= 0");
    need(c.dt > 0.0 && c.horizon > 0.0, "dt and horizon must be > 0");
    need(c.vehicle_cap >= 0, "vehicle_cap must be >= 0");
    need(c.clbf_q > 0.0 && c.clbf_q < 1.0, "clbf_q: requires 0 < q < 1");
    need(c.clbf_margin > 0.0 && c.clbf_margin <= 1.0, "clbf_margin must be in (0, 1]");
    need(c.fxt_mu > 1.0, "fxt_mu must be > 1");
    need(c.ext_grid_points >= 1, "ext_grid_points must be >= 1");
    for (double r : c.arrival_rates())
        need(r >= 0.0 && std::isfinite(r), "arrival rates must be finite and >= 0");
}

BarrierEval speed_max_barrier(double v, double v_max)
{
    return {v_max - v, 0.0, -1.0};
}

BarrierEval speed_min_barrier(double v, double v_min)
{
    return {v - v_min, 0.0, 1.0};
}

BarrierEval lateral_barrier(double kappa, double v, const LateralParams& lat)
{
    return {lat.w_h * lat.g - kappa * v * v * lat.h, 0.0, -2.0 * kappa * lat.h * v};
}

BarrierEval rear_end_barrier(double gap, double v_i, double v_ip, double phi, double delta)
{
    return {gap - phi * v_i - delta, v_ip - v_i, -phi};
}

BarrierEval merge_barrier(const MergeGeometry& m, double phi, double delta, double h)
{
    const double c = phi / m.L_im;
    BarrierEval e;
    e.value = (m.L_i - m.x_i) - (m.L_im - m.x_im) - c * m.x_im * m.v_i - delta;
    e.lie_f = m.v_im - m.v_i - c * m.v_im * m.v_i;
    e.lie_g = -c * (m.x_im + h * m.v_im);
    return e;
}

ConstraintRow sampled_tracking_row(const BarrierEval& eval, const RecoveryProfile& profile, double kappa, double t,
                                   double h, SlackChannel slack)
{
    if (!(h > 0.0))
        throw std::invalid_argument("sampled_tracking_row: h must be > 0");
    const double t_next = std::min(t + h, profile.t1());
    const double g0 = gamma_value(profile, t);
    const double secant = (gamma_value(profile, t_next) - g0) / h;
    ConstraintRow r;
    r.coeff_u = eval.lie_g;
    r.coeff_slack = slack == SlackChannel::attached ? -1.0 : 0.0;
    r.rhs = secant - kappa * (eval.value - g0) - eval.lie_f;
    r.sense = Sense::equal;
    return r;
}

std::vector<NamedRow> build_rows(const RowContext& ctx, const ScenarioConfig& c)
{
    const ClassK alpha = ClassK::linear(c.alpha);
    std::vector<NamedRow> rows;
    rows.push_back({"v_max", standard_cbf_row(speed_max_barrier(ctx.self.v, c.v_max), alpha)});
    rows.push_back({"v_min", standard_cbf_row(speed_min_barrier(ctx.self.v, c.v_min), alpha)});
    if (ctx.kappa_constraint > 0.0)
        rows.push_back({"lateral", standard_cbf_row(lateral_barrier(ctx.kappa_constraint, ctx.self.v, c.lateral), alpha)});
    if (ctx.rear_end)
        rows.push_back({"rear_end", standard_cbf_row(*ctx.rear_end, alpha)});
    if (ctx.merge)
        rows.push_back({"merge", standard_cbf_row(*ctx.merge, alpha)});
    return rows;
}

std::map<int, std::optional<int>> assign_conflict(const std::vector<Approacher>& approachers, double v_eps)
{
    struct Key {
        double eta;
        int id;
        int approach;
        bool operator<(const Key& o) const { return std::tie(eta, id) < std::tie(o.eta, o.id); }
    };
    std::vector<Key> keys;
    for (int a = 0; a < 2; ++a) {
        std::vector<const Approacher*> lane;
        for (const auto& p : approachers)
            if (p.approach == a)
                lane.push_back(&p);
        std::sort(lane.begin(), lane.end(), [](const Approacher* x, const Approacher* y) {
            return std::tie(x->remaining, x->id) < std::tie(y->remaining, y->id);
        });
        double floor_eta = -kInf;
        for (const auto* p : lane) {
            const double eta = std::max(p->remaining / std::max(p->speed, v_eps), floor_eta);
            floor_eta = eta;
            keys.push_back({eta, p->id, a});
        }
    }
    std::sort(keys.begin(), keys.end());
    std::map<int, std::optional<int>> out;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const bool cross = i > 0 && keys[i - 1].approach != keys[i].approach;
        out[keys[i].id] = cross ? std::optional<int>(keys[i - 1].id) : std::nullopt;
    }
    return out;
}

std::optional<Activation> activate_recovery(double b5_now, double L_im, double x_im, double v_im,
                                            const ScenarioConfig& c, double t0)
{
    if (!(b5_now < 0.0))
        return std::nullopt;
    Activation a;
    a.b0 = b5_now;
    a.t0 = t0;
    a.degenerate_speed = v_im < c.v_eps;
    a.horizon = std::max(L_im - x_im, 0.0) / std::max(v_im, c.v_eps);
    if (a.horizon < 2.0 * c.dt) {
        a.horizon = 2.0 * c.dt;
        a.clamped = true;
    }
    return a;
}

double problem2_cost(const ScenarioConfig& c, double u, double v, double kappa, double slack)
{
    const double u2 = std::max(c.u_max * c.u_max, c.u_min * c.u_min);
    const double dv = c.v_max - c.v_min;
    const double k = c.geometry.kappa_max() * c.v_max * c.v_max;
    const auto& w = c.weights;
    return 0.5 * u * u / u2 + w.lambda1 * (v - w.v_d) * (v - w.v_d) / (dv * dv) + w.lambda2 * kappa * v * v / k +
           w.lambda3 * slack * slack;
}

namespace {

// Problem-2 plant: ego with the conflicting vehicle at constant speed.
class MergePlant : public TrackingPlant {
public:
    MergePlant(MergeGeometry m, double kappa, const ScenarioConfig& c) : m_(m), kappa_(kappa), c_(&c) {}

    std::unique_ptr<TrackingPlant> clone() const override { return std::make_unique<MergePlant>(*this); }
    BarrierEval barrier() const override { return merge_barrier(m_, c_->phi, c_->delta); }
    void advance(double u, double dt) override
    {
        m_.x_i += dt * m_.v_i;
        m_.v_i += dt * u;
        m_.x_im += dt * m_.v_im;
    }
    double speed() const override { return m_.v_i; }
    double running_cost(double u) const override { return problem2_cost(*c_, u, m_.v_i, kappa_, 0.0); }
    bool admissible() const override { return m_.v_i >= c_->v_min - 1e-9 && m_.v_i <= c_->v_max + 1e-9; }

private:
    MergeGeometry m_;
    double kappa_;
    const ScenarioConfig* c_;
};

qp::Problem problem2(const ScenarioConfig& c, double v, double kappa, int dim)
{
    const double u2 = std::max(c.u_max * c.u_max, c.u_min * c.u_min);
    const double dv2 = (c.v_max - c.v_min) * (c.v_max - c.v_min);
    const double k = c.geometry.kappa_max() * c.v_max * c.v_max;
    const double tp = c.preview;
    const auto& w = c.weights;
    qp::Problem p;
    p.dim = dim;
    p.quad[0] = 1.0 / u2 + 2.0 * w.lambda1 * tp * tp / dv2 + 2.0 * w.lambda2 * kappa * tp * tp / k;
    p.lin[0] = 2.0 * w.lambda1 * tp * (v - w.v_d) / dv2 + 2.0 * w.lambda2 * kappa * tp * v / k;
    p.lower[0] = c.u_min;
    p.upper[0] = c.u_max;
    if (dim == 2) {
        p.quad[1] = 2.0 * w.lambda3;
        p.lin[1] = 0.0;
        p.lower[1] = 0.0;
    }
    return p;
}

}  // namespace

double select_shape(const MergeGeometry& m, const Activation& a, double kappa_cost, const ScenarioConfig& c)
{
    ProfileSearchSpec spec;
    spec.family = KernelFamily::quadratic;
    spec.grid = ProfileSearchSpec::default_grid(spec.family, c.ext_grid_points);
    spec.t0 = 0.0;
    spec.horizon = a.horizon;
    spec.settings.dt = c.dt;
    spec.settings.bounds = {c.u_min, c.u_max};
    spec.settings.alpha = ClassK::linear(c.alpha);
    const MergePlant plant(m, kappa_cost, c);
    try {
        return optimize_profile(spec, plant, ProfileObjective::weighted(0.0, 0.0, 1.0, 0.0)).parameter;
    } catch (const NoFeasibleProfile& e) {
        return e.partial().parameter;
    }
}

double fallback_control(double v, const ScenarioConfig& c)
{
    return std::min(c.u_max, std::max(c.u_min, (c.v_min - v) / c.dt));
}

StepOutcome step_vehicle(const std::vector<NamedRow>& rows, const std::optional<ConstraintRow>& tracking, double v,
                         double kappa_cost, const ScenarioConfig& c)
{
    // solver output can sit an ulp outside the box
    auto clip = [&](double u) { return std::clamp(u, c.u_min, c.u_max); };
    auto with_rows = [&](int dim) {
        auto p = problem2(c, v, kappa_cost, dim);
        for (const auto& r : rows)
            p.add_row(r.row);
        return p;
    };
    if (tracking) {
        auto exact = with_rows(1);
        ConstraintRow t = *tracking;
        t.coeff_slack = 0.0;
        exact.add_row(t);
        if (auto s = qp::solve(exact); s.optimal())
            return {clip(s.values[0]), 0.0, StepStatus::optimal};
        auto relaxed = with_rows(2);
        t.coeff_slack = -1.0;
        relaxed.add_row(t);
        if (auto s = qp::solve(relaxed); s.optimal())
            return {clip(s.values[0]), s.values[1], StepStatus::optimal};
    } else if (auto s = qp::solve(with_rows(1)); s.optimal()) {
        return {clip(s.values[0]), 0.0, StepStatus::optimal};
    }
    return {fallback_control(v, c), 0.0, StepStatus::infeasible};
}

std::vector<Arrival> generate_arrivals(const ScenarioConfig& c)
{
    const auto rates = c.arrival_rates();
    std::vector<Arrival> all;
    for (int k = 0; k < RoundaboutGeometry::kEntries; ++k) {
        if (rates[k] <= 0.0)
            continue;
        std::seed_seq seq{static_cast<std::uint32_t>(c.seed & 0xffffffffu), static_cast<std::uint32_t>(c.seed >> 32),
                          static_cast<std::uint32_t>(k)};
        std::mt19937_64 eng(seq);
        std::exponential_distribution<double> gap(rates[k]);
        std::uniform_int_distribution<int> pick(1, RoundaboutGeometry::kEntries - 1);
        double t = 0.0;
        for (int n = 0; n < c.vehicle_cap; ++n) {
            t += gap(eng);
            all.push_back({t, k, (k + pick(eng)) % RoundaboutGeometry::kEntries});
        }
    }
    std::sort(all.begin(), all.end(),
              [](const Arrival& a, const Arrival& b) { return std::tie(a.time, a.entry) < std::tie(b.time, b.entry); });
    if (static_cast<int>(all.size()) > c.vehicle_cap)
        all.resize(static_cast<std::size_t>(c.vehicle_cap));
    return all;
}

namespace {

enum class Mode { standard, ext, clbf, fxt, blocked };

struct Agent {
    int id = 0;
    std::vector<int> route;
    std::size_t pos = 0;
    VehicleState st;
    double spawn_time = 0.0;

    std::optional<int> im;
    int merge = -1;
    double cz_entry = 0.0;

    Mode mode = Mode::standard;
    RecoveryProfile profile;
    long start_step = 0;
    long window = 0;
    double p = 0.0, q = 0.0, c1 = 0.0, c2 = 0.0;
    int event = -1;

    double cost_sum = 0.0;
    long steps = 0;
    MetricsRecord rec;

    int segment() const { return route[pos]; }
    bool has_next() const { return pos + 1 < route.size(); }
    int approaching_merge() const
    {
        return has_next() ? RoundaboutGeometry::merge_between(route[pos], route[pos + 1]) : -1;
    }
};

class Simulation {
public:
    explicit Simulation(const ScenarioConfig& c) : c_(c), g_(c.geometry) {}

    ScenarioResult run();

private:
    const ScenarioConfig& c_;
    const RoundaboutGeometry& g_;
    std::map<int, Agent> agents_;
    std::map<std::tuple<double, double, double, double, double, double, double>, double> shape_cache_;
    ScenarioResult out_;
    int next_id_ = 0;

    double seg_length(int s) const { return g_.segment(s).length; }
    double time_of(long n) const { return static_cast<double>(n) * c_.dt; }

    struct Lead {
        const Agent* agent;
        double gap;
    };
    std::optional<Lead> predecessor(const Agent& a) const;
    MergeGeometry merge_geometry(const Agent& a, const Agent& im) const;
    void recompute_pairing(int k, long n);
    void on_pair_change(Agent& a, long n);
    void close_event(Agent& a, bool early);
    void control_and_record(Agent& a, long n, std::map<int, double>& u_out);
    void spawn(std::vector<std::vector<Arrival>>& queues, long n, std::vector<int>& dirty);
    double cached_shape(const MergeGeometry& m, const Activation& act, double kappa);
};

std::optional<Simulation::Lead> Simulation::predecessor(const Agent& a) const
{
    const Agent* best = nullptr;
    for (const auto& [id, b] : agents_)
        if (id != a.id && b.segment() == a.segment() &&
            (b.st.x > a.st.x || (b.st.x == a.st.x && b.id < a.id)) && (!best || b.st.x < best->st.x))
            best = &b;
    if (best)
        return Lead{best, best->st.x - a.st.x};
    if (!a.has_next())
        return std::nullopt;
    const int next = a.route[a.pos + 1];
    for (const auto& [id, b] : agents_)
        if (b.segment() == next && (!best || b.st.x < best->st.x))
            best = &b;
    if (best)
        return Lead{best, seg_length(a.segment()) - a.st.x + best->st.x};
    return std::nullopt;
}

MergeGeometry Simulation::merge_geometry(const Agent& a, const Agent& im) const
{
    return {seg_length(a.segment()), a.st.x, a.st.v, seg_length(im.segment()), im.st.x, im.st.v};
}

double Simulation::cached_shape(const MergeGeometry& m, const Activation& act, double kappa)
{
    const auto key = std::make_tuple(m.L_i - m.x_i, m.v_i, m.L_im, m.x_im, m.v_im, act.horizon, kappa);
    if (auto it = shape_cache_.find(key); it != shape_cache_.end())
        return it->second;
    const double s = select_shape(m, act, kappa, c_);
    shape_cache_.emplace(key, s);
    return s;
}

void Simulation::close_event(Agent& a, bool early)
{
    if (a.event >= 0 && early) {
        auto& ev = out_.summary.recoveries[a.event];
        if (!ev.b5_at_end)
            ev.ended_early = true;
    }
    a.event = -1;
    a.mode = Mode::standard;
}

void Simulation::on_pair_change(Agent& a, long n)
{
    close_event(a, true);
    if (!a.im)
        return;
    const Agent& im = agents_.at(*a.im);
    const auto mg = merge_geometry(a, im);
    const double b5 = merge_barrier(mg, c_.phi, c_.delta).value;
    const auto act = activate_recovery(b5, mg.L_im, mg.x_im, mg.v_im, c_, time_of(n));
    if (!act)
        return;
    if (act->degenerate_speed || act->clamped) {
        std::ostringstream os;
        os << "t=" << time_of(n) << " vehicle " << a.id << ": degenerate recovery horizon " << act->horizon;
        out_.summary.diagnostics.push_back(os.str());
    }

    RecoveryEvent ev;
    ev.vehicle = a.id;
    ev.conflicting = im.id;
    ev.merge = a.merge;
    ev.t0 = act->t0;
    ev.horizon = act->horizon;
    ev.b0 = act->b0;
    ev.clamped = act->clamped;
    a.rec.recovery = true;
    a.start_step = n;
    const double kappa = g_.segment(a.segment()).curvature;
    switch (c_.method) {
    case Method::cbf:
        // no recovery window: blocked until b5 >= 0 or the pairing ends
        a.mode = Mode::blocked;
        a.window = 0;
        ev.feasible_tracking = false;
        break;
    case Method::clbf:
        a.mode = Mode::clbf;
        a.q = c_.clbf_q;
        a.p = std::pow(-act->b0, 1.0 - a.q) / ((1.0 - a.q) * c_.clbf_margin * act->horizon);
        a.window = std::max(2L, static_cast<long>(std::floor(act->horizon / c_.dt + 1e-9)));
        break;
    case Method::fxt:
        a.mode = Mode::fxt;
        a.c1 = a.c2 = c_.fxt_mu * std::numbers::pi / (2.0 * act->horizon);
        a.window = std::max(2L, static_cast<long>(std::floor(act->horizon / c_.dt + 1e-9)));
        break;
    case Method::ext: {
        a.mode = Mode::ext;
        a.window = std::max(2L, static_cast<long>(std::floor(act->horizon / c_.dt + 1e-9)));
        Activation q = *act;
        q.horizon = static_cast<double>(a.window) * c_.dt;
        ev.shape = cached_shape(mg, q, kappa);
        a.profile.b0 = act->b0;
        a.profile.t0 = act->t0;
        a.profile.horizon = q.horizon;
        a.profile.kernel = kernel::Quadratic{ev.shape};
        break;
    }
    }
    a.event = static_cast<int>(out_.summary.recoveries.size());
    out_.summary.recoveries.push_back(ev);
}

void Simulation::recompute_pairing(int k, long n)
{
    std::vector<Approacher> list;
    for (const auto& [id, a] : agents_)
        if (a.approaching_merge() == k) {
            const Segment s = g_.segment(a.segment());
            list.push_back({id, s.kind == SegmentKind::entry ? 0 : 1, s.length - a.st.x, a.st.v});
        }
    for (const auto& [id, im] : assign_conflict(list, c_.v_eps)) {
        Agent& a = agents_.at(id);
        if (a.im == im)
            continue;
        a.im = im;
        a.merge = im ? k : -1;
        on_pair_change(a, n);
    }
}

void Simulation::control_and_record(Agent& a, long n, std::map<int, double>& u_out)
{
    const double t = time_of(n);
    const Segment seg = g_.segment(a.segment());
    const double kappa_cost = seg.curvature;
    // straight entries carry the curvature of the arc they lead onto
    const double kappa_con = seg.kind == SegmentKind::exit ? 0.0 : g_.kappa_max();

    RowContext ctx;
    ctx.self = a.st;
    ctx.kappa_constraint = kappa_con;
    const auto lead = predecessor(a);
    if (lead)
        ctx.rear_end = rear_end_barrier(lead->gap, a.st.v, lead->agent->st.v, c_.phi, c_.delta);

    std::optional<ConstraintRow> tracking;
    std::optional<ConstraintRow> decay;
    bool blocked = false;
    double b5 = kNaN, gamma = kNaN;
    if (a.im) {
        const Agent& im = agents_.at(*a.im);
        const auto e = merge_barrier(merge_geometry(a, im), c_.phi, c_.delta, c_.dt);
        b5 = e.value;
        if (a.mode != Mode::standard && !(e.value < 0.0))
            a.mode = Mode::standard;
        switch (a.mode) {
        case Mode::ext:
            tracking = sampled_tracking_row(e, a.profile, c_.alpha, t, c_.dt, SlackChannel::none);
            gamma = gamma_value(a.profile, t);
            break;
        case Mode::clbf:
            decay = clbf_row(e, a.p, a.q);
            break;
        case Mode::fxt:
            decay = fxt_row(e, a.c1, a.c2, c_.fxt_mu);
            break;
        case Mode::blocked:
            blocked = true;
            break;
        case Mode::standard:
            ctx.merge = e;
            break;
        }
    }
    auto rows = build_rows(ctx, c_);
    if (decay)
        rows.push_back({"merge_recovery", *decay});

    StepOutcome r;
    if (blocked)
        r = {fallback_control(a.st.v, c_), 0.0, StepStatus::infeasible};
    else
        r = step_vehicle(rows, tracking, a.st.v, kappa_cost, c_);

    if (a.event >= 0 && n < a.start_step + a.window) {
        auto& ev = out_.summary.recoveries[a.event];
        if (r.status == StepStatus::infeasible || std::abs(r.slack) > 1e-6)
            ev.feasible_tracking = false;
    }

    auto& s = out_.summary;
    if (lead) {
        s.min_b4 = std::min(s.min_b4, ctx.rear_end->value);
        if (ctx.rear_end->value < -1e-2 && s.diagnostics.size() < 200) {
            std::ostringstream os;
            os << "t=" << t << " vehicle " << a.id << " rear-end barrier " << ctx.rear_end->value << " behind "
               << lead->agent->id << " (segments " << a.segment() << "->" << lead->agent->segment() << ", v "
               << a.st.v << " vs " << lead->agent->st.v << ", gap " << lead->gap << ", mode "
               << static_cast<int>(a.mode) << ", status " << static_cast<int>(r.status) << ")";
            s.diagnostics.push_back(os.str());
        }
    }
    if (seg.kind == SegmentKind::arc)
        s.min_b3_arc = std::min(s.min_b3_arc, lateral_barrier(seg.curvature, a.st.v, c_.lateral).value);
    s.min_v = std::min(s.min_v, a.st.v);
    s.max_v = std::max(s.max_v, a.st.v);
    s.min_u = std::min(s.min_u, r.u);
    s.max_u = std::max(s.max_u, r.u);

    a.cost_sum += problem2_cost(c_, r.u, a.st.v, kappa_cost, r.slack);
    ++a.steps;
    a.rec.energy += 0.5 * r.u * r.u * c_.dt;
    a.rec.discomfort += kappa_cost * a.st.v * a.st.v * c_.dt;
    if (r.u <= c_.u_min + 1e-9 || r.status == StepStatus::infeasible)
        a.rec.hard_decel = true;
    if (r.status == StepStatus::infeasible)
        a.rec.infeasible = true;
    a.rec.max_slack = std::max(a.rec.max_slack, std::abs(r.slack));

    if (c_.record_trajectories)
        out_.traces[a.id].push_back({t, a.segment(), a.st.x, a.st.v, r.u, b5, gamma});
    u_out[a.id] = r.u;
}

void Simulation::spawn(std::vector<std::vector<Arrival>>& queues, long n, std::vector<int>& dirty)
{
    const double t = time_of(n);
    for (int k = 0; k < RoundaboutGeometry::kEntries; ++k) {
        auto& q = queues[k];
        if (q.empty() || q.front().time > t + 1e-12)
            continue;
        const int entry = RoundaboutGeometry::entry_id(k);
        double gap = kInf, v_lead = 0.0;
        for (const auto& [id, b] : agents_) {
            double d = kInf;
            if (b.segment() == entry)
                d = b.st.x;
            else if (b.segment() == RoundaboutGeometry::arc_id(k))
                d = g_.entry_length + b.st.x;
            if (d < gap) {
                gap = d;
                v_lead = b.st.v;
            }
        }
        if (gap < c_.min_spawn_gap)
            continue;
        const Arrival arr = q.front();
        q.erase(q.begin());
        Agent a;
        a.id = next_id_++;
        a.route = g_.route(arr.entry, arr.exit);
        a.spawn_time = t;
        a.cz_entry = t;
        // enter inside the rear-end set, slow enough that its row holds with zero input
        const double v_gap =
            std::isfinite(gap) ? std::max(0.0, std::min((gap - c_.delta) / c_.phi,
                                                         (v_lead + c_.alpha * (gap - c_.delta)) / (1.0 + c_.alpha * c_.phi)))
                               : kInf;
        a.st = {0.0, std::min({c_.weights.v_d, c_.lateral_speed_limit(), c_.v_max, v_gap})};
        a.st.v = std::max(a.st.v, c_.v_min);
        a.rec.vehicle = a.id;
        agents_.emplace(a.id, std::move(a));
        ++out_.summary.spawned;
        dirty.push_back(k);
    }
}

ScenarioResult Simulation::run()
{
    validate(c_);
    auto& s = out_.summary;
    s.min_b4 = s.min_b3_arc = s.min_v = s.min_u = kInf;
    s.max_v = s.max_u = -kInf;

    std::vector<std::vector<Arrival>> queues(RoundaboutGeometry::kEntries);
    const auto arrivals = generate_arrivals(c_);
    for (const auto& a : arrivals)
        queues[a.entry].push_back(a);
    const long max_steps = static_cast<long>(std::ceil(c_.horizon / c_.dt));

    long n = 0;
    std::vector<int> dirty;
    for (; n <= max_steps; ++n) {
        spawn(queues, n, dirty);
        std::sort(dirty.begin(), dirty.end());
        dirty.erase(std::unique(dirty.begin(), dirty.end()), dirty.end());
        for (int k : dirty)
            recompute_pairing(k, n);
        dirty.clear();

        for (auto& [id, a] : agents_)
            if (a.window == 0) {
                continue;
            } else if (a.event >= 0 && a.mode != Mode::standard && n == a.start_step + a.window) {
                auto& ev = s.recoveries[a.event];
                if (a.im)
                    ev.b5_at_end = merge_barrier(merge_geometry(a, agents_.at(*a.im)), c_.phi, c_.delta).value;
                a.mode = Mode::standard;
            } else if (a.event >= 0 && a.mode == Mode::standard && n == a.start_step + a.window && a.im) {
                s.recoveries[a.event].b5_at_end =
                    merge_barrier(merge_geometry(a, agents_.at(*a.im)), c_.phi, c_.delta).value;
            }

        const bool queues_empty =
            std::all_of(queues.begin(), queues.end(), [](const auto& q) { return q.empty(); });
        if (agents_.empty() && queues_empty) {
            s.completed = true;
            break;
        }
        if (n == max_steps)
            break;

        std::map<int, double> u;
        for (auto& [id, a] : agents_)
            control_and_record(a, n, u);
        for (auto& [id, a] : agents_) {
            a.st = step(a.st, {u.at(id)}, c_.dt);
            clamp_speed(a.st, c_.v_min, c_.v_max);
        }

        const double t_next = time_of(n + 1);
        std::vector<int> retired;
        for (auto& [id, a] : agents_) {
            while (a.st.x >= seg_length(a.segment())) {
                if (!a.has_next()) {
                    retired.push_back(id);
                    break;
                }
                const int k = a.approaching_merge();
                a.st.x -= seg_length(a.segment());
                ++a.pos;
                if (k >= 0) {
                    for (auto& [oid, o] : agents_)
                        if (o.im == id) {
                            close_event(o, true);
                            o.im.reset();
                            o.merge = -1;
                        }
                    if (a.im) {
                        ++s.order_violations;
                        close_event(a, true);
                        a.im.reset();
                        a.merge = -1;
                    }
                }
                if (const int next = a.approaching_merge(); next >= 0) {
                    a.cz_entry = t_next;
                    dirty.push_back(next);
                }
            }
        }
        for (int id : retired) {
            Agent& a = agents_.at(id);
            for (auto& [oid, o] : agents_)
                if (o.im == id) {
                    close_event(o, true);
                    o.im.reset();
                }
            a.rec.travel_time = t_next - a.spawn_time;
            a.rec.objective = a.steps > 0 ? a.cost_sum / static_cast<double>(a.steps) : 0.0;
            out_.records.push_back(a.rec);
            agents_.erase(id);
            ++s.exited;
        }
        if (s.spawned != static_cast<int>(agents_.size()) + s.exited)
            ++s.conservation_failures;
    }
    s.end_time = time_of(n);
    s.active = static_cast<int>(agents_.size());
    if (s.spawned == 0) {
        s.min_b4 = s.min_b3_arc = s.min_v = s.max_v = s.min_u = s.max_u = 0.0;
    }
    std::sort(out_.records.begin(), out_.records.end(),
              [](const MetricsRecord& x, const MetricsRecord& y) { return x.vehicle < y.vehicle; });
    return std::move(out_);
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config)
{
    Simulation sim(config);
    return sim.run();
}

}  // namespace extcbf
