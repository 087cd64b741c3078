#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "extcbf/acc.hpp"
#include "extcbf/config.hpp"
#include "extcbf/io.hpp"
#include "extcbf/metrics.hpp"
#include "extcbf/recovery_opt.hpp"
#include "extcbf/roundabout.hpp"

using namespace extcbf;

namespace {

struct Common {
    std::string config;
    std::string output;
    bool plots = false;
};

struct RunOpts {
    std::optional<int> seeds;
    std::optional<int> vehicles;
    std::optional<double> dt;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("-c,--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("-o,--output", c.output, "output directory (overrides config and " + std::string(kOutputDirEnv) + ")");
    app->add_flag("--plots", c.plots, "also write SVG plots");
}

void add_run_opts(CLI::App* app, RunOpts& r)
{
    app->add_option("--seeds", r.seeds, "number of seeds, 1..N (default: seed list from config)")
        ->check(CLI::Range(1, 100000));
    app->add_option("--vehicles", r.vehicles, "vehicles per run cap")->check(CLI::Range(0, 1000000));
    app->add_option("--dt", r.dt, "time step [s]");
}

RunSpec base_spec(const Common& c)
{
    RunSpec spec;
    if (!c.config.empty()) {
        spec = load(c.config);
    } else if (const char* dir = std::getenv(kOutputDirEnv); dir && *dir) {
        spec.output_dir = dir;
    }
    if (!c.output.empty())
        spec.output_dir = c.output;
    if (c.plots)
        spec.emit_plots = true;
    return spec;
}

void apply_run_opts(RunSpec& spec, const RunOpts& r)
{
    if (r.seeds) {
        spec.seeds.clear();
        for (int s = 1; s <= *r.seeds; ++s)
            spec.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (r.vehicles)
        spec.roundabout.vehicle_cap = *r.vehicles;
    if (r.dt)
        spec.roundabout.dt = *r.dt;
}

std::string join(const std::string& dir, const std::string& name)
{
    return dir + "/" + name;
}

class Writer {
public:
    Writer(std::string dir, Manifest& m) : dir_(std::move(dir)), manifest_(m) {}

    void put(const std::string& rel, const std::string& kind, const std::string& content,
             std::optional<std::uint64_t> seed = std::nullopt)
    {
        write_atomic(join(dir_, rel), content);
        manifest_.add(rel, kind, seed);
    }

    void finish() { write_atomic(join(dir_, "manifest.json"), manifest_.to_json()); }

private:
    std::string dir_;
    Manifest& manifest_;
};

std::vector<ScenarioResult> run_batch(const std::vector<ScenarioConfig>& configs)
{
    std::vector<ScenarioResult> out(configs.size());
    std::atomic<std::size_t> next{0};
    const unsigned n = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                       static_cast<unsigned>(configs.size())));
    std::vector<std::exception_ptr> errors(configs.size());
    auto work = [&]() {
        for (std::size_t i; (i = next++) < configs.size();) {
            try {
                out[i] = run_scenario(configs[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < n; ++k)
        pool.emplace_back(work);
    for (auto& t : pool)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return out;
}

std::string run_name(Method m, TrafficProfile p, std::uint64_t seed)
{
    return method_name(m) + "_" + traffic_name(p) + "_seed" + std::to_string(seed);
}

std::string safety_csv(const std::vector<std::uint64_t>& seeds, const std::vector<ScenarioResult>& results)
{
    std::ostringstream os;
    os.precision(10);
    os << "seed,spawned,exited,completed,end_time,min_b4,min_v,max_v,min_u,max_u,recoveries,order_violations\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const auto& s = results[i].summary;
        os << seeds[i] << ',' << s.spawned << ',' << s.exited << ',' << (s.completed ? 1 : 0) << ',' << s.end_time
           << ',' << s.min_b4 << ',' << s.min_v << ',' << s.max_v << ',' << s.min_u << ',' << s.max_u << ','
           << s.recoveries.size() << ',' << s.order_violations << '\n';
    }
    return os.str();
}

// b5 and gamma of the vehicle with the first recovery event.
std::optional<std::string> recovery_plot(const ScenarioResult& r, const std::string& title)
{
    if (r.summary.recoveries.empty())
        return std::nullopt;
    const auto& ev = r.summary.recoveries.front();
    const auto it = r.traces.find(ev.vehicle);
    if (it == r.traces.end())
        return std::nullopt;
    Series b{"b5", {}, false}, g{"gamma", {}, true};
    for (const auto& p : it->second) {
        if (p.t < ev.t0 - 1.0 || p.t > ev.t0 + ev.horizon + 2.0)
            continue;
        b.points.emplace_back(p.t, p.b5);
        g.points.emplace_back(p.t, p.gamma);
    }
    return svg_line_plot(title + ", vehicle " + std::to_string(ev.vehicle), "t [s]", "b5 [m]", {b, g});
}

int cmd_acc(RunSpec spec, const std::optional<std::string>& objective, const std::optional<double>& target,
            const std::optional<double>& shape)
{
    spec.scenario = ScenarioKind::acc;
    if (objective)
        spec.acc.objective = *objective;
    if (target)
        spec.acc.target_speed = *target;
    if (shape)
        spec.acc.b_shape = *shape;
    validate(spec);

    const AccConfig base = to_acc_config(spec.acc);
    auto search = default_acc_search(base);
    search.grid = spec.acc.b_shape ? std::vector<double>{*spec.acc.b_shape}
                                   : ProfileSearchSpec::default_grid(search.family, spec.acc.grid_points);
    const auto table = compare_acc(to_objective(spec.acc), base, search, to_acc_baselines(spec.acc));

    Manifest manifest("acc", config_hash(spec));
    Writer w(join(spec.output_dir, "acc"), manifest);
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        w.put("trajectory_" + table.rows[i].controller + ".csv", "trajectory", trajectory_csv(table.runs[i]));
    w.put("summary.csv", "summary", comparison_csv(table));
    w.put("profile_report.csv", "profile_report", report_csv(table.ext_selection));
    if (spec.emit_plots) {
        std::vector<Series> series;
        const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.05 / base.dt)));
        for (std::size_t i = 0; i < table.runs.size(); ++i) {
            Series s{"b " + table.rows[i].controller, {}, false};
            for (std::size_t k = 0; k < table.runs[i].trajectory.size(); k += stride)
                s.points.emplace_back(table.runs[i].trajectory[k].t, table.runs[i].trajectory[k].b);
            series.push_back(std::move(s));
        }
        Series g{"gamma ext", {}, true};
        const auto& ext = table.run("ext").trajectory;
        for (std::size_t k = 0; k < ext.size(); k += stride)
            g.points.emplace_back(ext[k].t, ext[k].gamma);
        series.push_back(std::move(g));
        w.put("b_gamma.svg", "plot", svg_line_plot("ACC barrier recovery", "t [s]", "b [m]", series));
    }
    w.finish();

    for (const auto& r : table.rows)
        std::cout << r.controller << ": recovery " << (r.recovery_time ? std::to_string(*r.recovery_time) : "none")
                  << ", effort " << r.effort << '\n';
    return 0;
}

int cmd_roundabout(RunSpec spec, Method method, TrafficProfile traffic)
{
    spec.scenario = ScenarioKind::roundabout;
    spec.methods = {method};
    spec.traffic = {traffic};
    validate(spec);

    std::vector<ScenarioConfig> configs;
    for (auto seed : spec.seeds) {
        ScenarioConfig c = spec.roundabout;
        c.method = method;
        c.traffic = traffic;
        c.seed = seed;
        c.record_trajectories = spec.emit_plots && configs.empty();
        configs.push_back(c);
    }
    const auto results = run_batch(configs);

    Manifest manifest("roundabout", config_hash(spec));
    Writer w(join(spec.output_dir, "roundabout"), manifest);
    std::vector<std::vector<MetricsRecord>> runs;
    for (std::size_t i = 0; i < results.size(); ++i) {
        w.put("runs/" + run_name(method, traffic, spec.seeds[i]) + ".csv", "run", records_csv(results[i].records),
              spec.seeds[i]);
        runs.push_back(results[i].records);
    }
    const auto row = aggregate(runs, method_name(method), traffic_name(traffic));
    w.put("aggregate_" + traffic_name(traffic) + ".csv", "aggregate", aggregate_csv({row}));
    w.put("safety_" + method_name(method) + "_" + traffic_name(traffic) + ".csv", "safety",
          safety_csv(spec.seeds, results));
    if (spec.emit_plots)
        if (auto svg = recovery_plot(results.front(), method_name(method) + " " + traffic_name(traffic)))
            w.put("b5_gamma_seed" + std::to_string(spec.seeds.front()) + ".svg", "plot", *svg, spec.seeds.front());
    w.finish();

    std::cout << aggregate_csv({row});
    return 0;
}

int cmd_compare(RunSpec spec, const std::vector<std::string>& methods, const std::vector<std::string>& traffic)
{
    spec.scenario = ScenarioKind::roundabout;
    if (!methods.empty()) {
        spec.methods.clear();
        for (const auto& m : methods)
            spec.methods.push_back(parse_method(m));
    }
    if (!traffic.empty()) {
        spec.traffic.clear();
        for (const auto& t : traffic)
            spec.traffic.push_back(parse_traffic(t));
    }
    validate(spec);

    Manifest manifest("compare", config_hash(spec));
    Writer w(join(spec.output_dir, "compare"), manifest);
    for (auto profile : spec.traffic) {
        std::vector<ScenarioConfig> configs;
        for (auto m : spec.methods)
            for (auto seed : spec.seeds) {
                ScenarioConfig c = spec.roundabout;
                c.method = m;
                c.traffic = profile;
                c.seed = seed;
                configs.push_back(c);
            }
        const auto results = run_batch(configs);
        std::vector<SummaryRow> rows;
        std::size_t i = 0;
        for (auto m : spec.methods) {
            std::vector<std::vector<MetricsRecord>> runs;
            for (auto seed : spec.seeds) {
                w.put("runs/" + run_name(m, profile, seed) + ".csv", "run", records_csv(results[i].records), seed);
                runs.push_back(results[i++].records);
            }
            rows.push_back(aggregate(runs, method_name(m), traffic_name(profile)));
        }
        const std::string p = traffic_name(profile);
        w.put("aggregate_" + p + ".csv", "aggregate", aggregate_csv(rows));
        const bool has_baseline = std::find(spec.methods.begin(), spec.methods.end(), Method::cbf) != spec.methods.end();
        if (has_baseline) {
            const auto norm = normalize(rows, method_name(Method::cbf));
            w.put("normalized_" + p + ".csv", "normalized", normalized_csv(norm));
            if (spec.emit_plots)
                w.put("metrics_" + p + ".svg", "plot", svg_metric_bars("Metrics relative to cbf, " + p, norm));
        }
        std::cout << "# " << p << '\n' << aggregate_csv(rows);
    }
    w.finish();
    return 0;
}

int cmd_optimize(RunSpec spec, const std::optional<std::string>& objective, const std::optional<double>& target,
                 const std::string& family, std::optional<int> points)
{
    spec.scenario = ScenarioKind::acc;
    if (objective)
        spec.acc.objective = *objective;
    if (target)
        spec.acc.target_speed = *target;
    if (points)
        spec.acc.grid_points = *points;
    validate(spec);

    const AccConfig base = to_acc_config(spec.acc);
    auto search = default_acc_search(base);
    search.family = family == "linear" ? KernelFamily::linear
                    : family == "exponential" ? KernelFamily::exponential
                                              : KernelFamily::quadratic;
    search.grid = ProfileSearchSpec::default_grid(search.family, spec.acc.grid_points);
    const AccPlant plant(base.initial, base.phi);
    const auto best = optimize_profile(search, plant, to_objective(spec.acc));

    Manifest manifest("optimize-profile", config_hash(spec));
    Writer w(join(spec.output_dir, "optimize-profile"), manifest);
    w.put("report_" + family + ".csv", "profile_report", report_csv(best));
    nlohmann::ordered_json sel;
    sel["family"] = family;
    sel["objective"] = spec.acc.objective;
    sel["parameter"] = best.parameter;
    sel["cost"] = best.cost;
    sel["infeasible_fraction"] = best.infeasible_fraction;
    sel["b0"] = best.profile.b0;
    sel["horizon"] = best.profile.horizon;
    w.put("selected_" + family + ".json", "selection", sel.dump(2) + "\n");
    w.finish();

    std::cout << family << ": parameter " << best.parameter << ", cost " << best.cost << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Exact-time recovery CBF simulations: ACC and roundabout merging"};
    app.require_subcommand(1);

    const std::vector<std::string> objectives{"effort", "speed"};
    const std::vector<std::string> method_names{"cbf", "clbf", "fxt", "ext"};
    const std::vector<std::string> profile_names{"balanced", "unbalanced", "heavy"};

    Common acc_c, rb_c, cmp_c, opt_c;
    RunOpts rb_r, cmp_r;
    std::optional<std::string> acc_objective, opt_objective;
    std::optional<double> acc_target, acc_shape, opt_target;
    std::string rb_method = "ext", rb_traffic = "balanced", opt_family = "quadratic";
    std::vector<std::string> cmp_methods, cmp_traffic;
    std::optional<int> opt_points;

    auto* acc = app.add_subcommand("acc", "ACC comparison of cbf, clbf, fxt and ext from one violated state");
    add_common(acc, acc_c);
    acc->add_option("--objective", acc_objective, "ExT profile objective")->check(CLI::IsMember(objectives));
    acc->add_option("--target-speed", acc_target, "terminal speed target for --objective speed [m/s]");
    acc->add_option("--b-shape", acc_shape, "fixed quadratic shape in (-1, 1), skips the search");

    auto* rb = app.add_subcommand("roundabout", "seeded roundabout runs for one method and traffic profile");
    add_common(rb, rb_c);
    add_run_opts(rb, rb_r);
    rb->add_option("--method", rb_method, "cbf | clbf | fxt | ext")->check(CLI::IsMember(method_names));
    rb->add_option("--traffic", rb_traffic, "balanced | unbalanced | heavy")->check(CLI::IsMember(profile_names));

    auto* cmp = app.add_subcommand("compare", "all methods over the traffic profiles, aggregate and normalized tables");
    add_common(cmp, cmp_c);
    add_run_opts(cmp, cmp_r);
    cmp->add_option("--methods", cmp_methods, "subset of methods")->check(CLI::IsMember(method_names));
    cmp->add_option("--traffic", cmp_traffic, "subset of profiles")->check(CLI::IsMember(profile_names));

    auto* opt = app.add_subcommand("optimize-profile", "grid search of the ACC recovery profile");
    add_common(opt, opt_c);
    opt->add_option("--objective", opt_objective, "effort | speed")->check(CLI::IsMember(objectives));
    opt->add_option("--target-speed", opt_target, "terminal speed target [m/s]");
    opt->add_option("--family", opt_family, "linear | quadratic | exponential")
        ->check(CLI::IsMember({"linear", "quadratic", "exponential"}));
    opt->add_option("--points", opt_points, "grid points")->check(CLI::Range(1, 100000));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (acc->parsed())
            return cmd_acc(base_spec(acc_c), acc_objective, acc_target, acc_shape);
        if (rb->parsed()) {
            auto spec = base_spec(rb_c);
            apply_run_opts(spec, rb_r);
            return cmd_roundabout(spec, parse_method(rb_method), parse_traffic(rb_traffic));
        }
        if (cmp->parsed()) {
            auto spec = base_spec(cmp_c);
            apply_run_opts(spec, cmp_r);
            return cmd_compare(spec, cmp_methods, cmp_traffic);
        }
        if (opt->parsed())
            return cmd_optimize(base_spec(opt_c), opt_objective, opt_target, opt_family, opt_points);
    } catch (const ConfigError& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
