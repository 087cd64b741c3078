#include "extcbf/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace extcbf {

using nlohmann::ordered_json;

std::string scenario_name(ScenarioKind k)
{
    return k == ScenarioKind::acc ? "acc" : "roundabout";
}

AccConfig to_acc_config(const AccSpec& s)
{
    AccConfig c;
    c.phi = s.phi;
    c.horizon = s.horizon;
    c.dt = s.dt;
    c.duration = s.duration;
    if (s.u_min)
        c.bounds.u_min = *s.u_min;
    if (s.u_max)
        c.bounds.u_max = *s.u_max;
    c.alpha = ClassK::linear(s.alpha);
    c.slack_weight = s.slack_weight;
    c.initial = {s.z0, s.v0, s.v_lead};
    return c;
}

AccBaselines to_acc_baselines(const AccSpec& s)
{
    return {s.clbf_p, s.clbf_q, s.fxt_mu};
}

ProfileObjective to_objective(const AccSpec& s)
{
    return s.objective == "speed" ? ProfileObjective::terminal_speed(s.target_speed)
                                  : ProfileObjective::control_effort();
}

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& constraint)
{
    throw ConfigError(key + ": " + constraint);
}

void need(bool ok, const std::string& key, const std::string& constraint)
{
    if (!ok)
        fail(key, constraint);
}

bool finite(double x)
{
    return std::isfinite(x);
}

// Pulls typed values out of one section and remembers which keys were read.
class Section {
public:
    Section(const ordered_json& root, std::string name) : name_(std::move(name))
    {
        if (!root.contains(name_))
            return;
        obj_ = &root.at(name_);
        if (!obj_->is_object())
            fail(name_, "must be an object");
    }

    void num(const char* key, double& out)
    {
        if (const auto* v = find(key)) {
            if (!v->is_number())
                fail(path(key), "expected a number");
            out = v->get<double>();
        }
    }

    void opt_num(const char* key, std::optional<double>& out)
    {
        if (const auto* v = find(key)) {
            if (v->is_null())
                out.reset();
            else if (v->is_number())
                out = v->get<double>();
            else
                fail(path(key), "expected a number or null");
        }
    }

    void integer(const char* key, int& out)
    {
        if (const auto* v = find(key)) {
            if (!v->is_number_integer())
                fail(path(key), "expected an integer");
            out = v->get<int>();
        }
    }

    void boolean(const char* key, bool& out)
    {
        if (const auto* v = find(key)) {
            if (!v->is_boolean())
                fail(path(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void str(const char* key, std::string& out)
    {
        if (const auto* v = find(key)) {
            if (!v->is_string())
                fail(path(key), "expected a string");
            out = v->get<std::string>();
        }
    }

    const ordered_json* find(const char* key)
    {
        seen_.insert(key);
        if (!obj_ || !obj_->contains(key))
            return nullptr;
        return &obj_->at(key);
    }

    std::string path(const std::string& key) const { return name_ + "." + key; }

    void reject_unknown() const
    {
        if (!obj_)
            return;
        for (const auto& [k, v] : obj_->items())
            if (!seen_.count(k))
                fail(path(k), "unknown key");
    }

private:
    std::string name_;
    const ordered_json* obj_ = nullptr;
    std::set<std::string> seen_;
};

template <class T, class Parse>
void read_list(Section& s, const char* key, std::vector<T>& out, Parse parse)
{
    const auto* v = s.find(key);
    if (!v)
        return;
    if (!v->is_array())
        fail(s.path(key), "expected a list");
    out.clear();
    for (const auto& item : *v)
        out.push_back(parse(item));
}

void read_run(const ordered_json& root, RunSpec& spec)
{
    Section s(root, "run");
    std::string scenario = scenario_name(spec.scenario);
    s.str("scenario", scenario);
    if (scenario == "acc")
        spec.scenario = ScenarioKind::acc;
    else if (scenario == "roundabout")
        spec.scenario = ScenarioKind::roundabout;
    else
        fail("run.scenario", "must be acc or roundabout");

    read_list(s, "methods", spec.methods, [](const ordered_json& j) {
        if (!j.is_string())
            fail("run.methods", "expected method names");
        try {
            return parse_method(j.get<std::string>());
        } catch (const std::invalid_argument&) {
            fail("run.methods", "each entry must be one of cbf, clbf, fxt, ext");
        }
    });
    read_list(s, "seeds", spec.seeds, [](const ordered_json& j) {
        if (!j.is_number_unsigned())
            fail("run.seeds", "expected non-negative integers");
        return j.get<std::uint64_t>();
    });
    read_list(s, "traffic", spec.traffic, [](const ordered_json& j) {
        if (!j.is_string())
            fail("run.traffic", "expected profile names");
        try {
            return parse_traffic(j.get<std::string>());
        } catch (const std::invalid_argument&) {
            fail("run.traffic", "each entry must be one of balanced, unbalanced, heavy");
        }
    });
    s.str("output_dir", spec.output_dir);
    s.boolean("emit_plots", spec.emit_plots);
    s.reject_unknown();
}

void read_acc(const ordered_json& root, AccSpec& a)
{
    Section s(root, "acc");
    s.num("phi", a.phi);
    s.num("horizon", a.horizon);
    s.num("dt", a.dt);
    s.num("duration", a.duration);
    s.opt_num("u_min", a.u_min);
    s.opt_num("u_max", a.u_max);
    s.num("alpha", a.alpha);
    s.num("slack_weight", a.slack_weight);
    s.num("z0", a.z0);
    s.num("v0", a.v0);
    s.num("v_lead", a.v_lead);
    s.num("clbf_p", a.clbf_p);
    s.num("clbf_q", a.clbf_q);
    s.num("fxt_mu", a.fxt_mu);
    s.str("objective", a.objective);
    s.num("target_speed", a.target_speed);
    s.opt_num("b_shape", a.b_shape);
    s.integer("grid_points", a.grid_points);
    s.reject_unknown();
}

void read_roundabout(const ordered_json& root, ScenarioConfig& c)
{
    Section s(root, "roundabout");
    s.num("entry_length", c.geometry.entry_length);
    s.num("arc_length", c.geometry.arc_length);
    s.num("exit_length", c.geometry.exit_length);
    s.num("cg_height", c.lateral.h);
    s.num("half_track", c.lateral.w_h);
    s.num("gravity", c.lateral.g);
    s.num("lambda1", c.weights.lambda1);
    s.num("lambda2", c.weights.lambda2);
    s.num("lambda3", c.weights.lambda3);
    s.num("v_d", c.weights.v_d);
    if (const auto* v = s.find("rates")) {
        if (v->is_null()) {
            c.rates.reset();
        } else {
            if (!v->is_array() || v->size() != 3)
                fail("roundabout.rates", "expected null or three numbers");
            std::array<double, 3> r{};
            for (std::size_t k = 0; k < 3; ++k) {
                if (!(*v)[k].is_number())
                    fail("roundabout.rates", "expected null or three numbers");
                r[k] = (*v)[k].get<double>();
            }
            c.rates = r;
        }
    }
    s.num("v_min", c.v_min);
    s.num("v_max", c.v_max);
    s.num("u_min", c.u_min);
    s.num("u_max", c.u_max);
    s.num("phi", c.phi);
    s.num("delta", c.delta);
    s.num("alpha", c.alpha);
    s.num("preview", c.preview);
    s.num("v_eps", c.v_eps);
    s.num("min_spawn_gap", c.min_spawn_gap);
    s.num("dt", c.dt);
    s.num("horizon", c.horizon);
    s.integer("vehicle_cap", c.vehicle_cap);
    s.num("clbf_q", c.clbf_q);
    s.num("clbf_margin", c.clbf_margin);
    s.num("fxt_mu", c.fxt_mu);
    s.integer("ext_grid_points", c.ext_grid_points);
    s.reject_unknown();
}

void check_acc(const AccSpec& a)
{
    need(finite(a.phi) && a.phi > 0.0, "acc.phi", "must be > 0");
    need(finite(a.horizon) && a.horizon > 0.0, "acc.horizon", "recovery horizon Tr must be > 0");
    need(finite(a.dt) && a.dt > 0.0, "acc.dt", "must be > 0");
    need(finite(a.duration) && a.duration >= a.horizon, "acc.duration", "must be >= acc.horizon");
    if (a.u_min)
        need(*a.u_min < 0.0, "acc.u_min", "must be < 0 (u_min < 0)");
    if (a.u_max)
        need(*a.u_max > 0.0, "acc.u_max", "must be > 0");
    need(finite(a.alpha) && a.alpha > 0.0, "acc.alpha", "must be > 0");
    need(finite(a.slack_weight) && a.slack_weight > 0.0, "acc.slack_weight", "must be > 0");
    need(finite(a.z0) && a.z0 >= 0.0, "acc.z0", "must be >= 0");
    need(finite(a.v0) && a.v0 >= 0.0, "acc.v0", "must be >= 0");
    need(finite(a.v_lead) && a.v_lead >= 0.0, "acc.v_lead", "must be >= 0");
    need(a.z0 - a.phi * a.v0 < 0.0, "acc.z0", "initial state must violate the headway (z0 < phi v0)");
    need(finite(a.clbf_p) && a.clbf_p > 0.0, "acc.clbf_p", "must be > 0");
    need(a.clbf_q > 0.0 && a.clbf_q < 1.0, "acc.clbf_q", "requires 0 < q < 1");
    need(finite(a.fxt_mu) && a.fxt_mu > 1.0, "acc.fxt_mu", "must be > 1");
    need(a.objective == "effort" || a.objective == "speed", "acc.objective", "must be effort or speed");
    need(finite(a.target_speed) && a.target_speed >= 0.0, "acc.target_speed", "must be >= 0");
    if (a.b_shape)
        need(*a.b_shape > -1.0 && *a.b_shape < 1.0, "acc.b_shape", "requires -1 < b_shape < 1");
    need(a.grid_points >= 1, "acc.grid_points", "must be >= 1");
}

void check_roundabout(const ScenarioConfig& c)
{
    const auto& g = c.geometry;
    need(finite(g.entry_length) && g.entry_length > 0.0, "roundabout.entry_length", "must be > 0");
    need(finite(g.arc_length) && g.arc_length > 0.0, "roundabout.arc_length", "must be > 0");
    need(finite(g.exit_length) && g.exit_length > 0.0, "roundabout.exit_length", "must be > 0");
    need(c.lateral.h > 0.0, "roundabout.cg_height", "must be > 0");
    need(c.lateral.w_h > 0.0, "roundabout.half_track", "must be > 0");
    need(c.lateral.g > 0.0, "roundabout.gravity", "must be > 0");
    need(c.weights.lambda1 >= 0.0, "roundabout.lambda1", "must be >= 0");
    need(c.weights.lambda2 >= 0.0, "roundabout.lambda2", "must be >= 0");
    need(c.weights.lambda3 > 0.0, "roundabout.lambda3", "must be > 0");
    need(finite(c.weights.v_d) && c.weights.v_d >= 0.0, "roundabout.v_d", "must be >= 0");
    if (c.rates)
        for (double r : *c.rates)
            need(finite(r) && r >= 0.0, "roundabout.rates", "must be finite and >= 0");
    need(c.v_min >= 0.0, "roundabout.v_min", "must be >= 0");
    need(finite(c.v_max) && c.v_max > c.v_min, "roundabout.v_max", "must be > v_min");
    need(c.u_min < 0.0, "roundabout.u_min", "must be < 0 (u_min < 0)");
    need(c.u_max > 0.0, "roundabout.u_max", "must be > 0");
    need(c.phi > 0.0, "roundabout.phi", "must be > 0");
    need(c.delta >= 0.0, "roundabout.delta", "must be >= 0");
    need(c.dt > 0.0, "roundabout.dt", "must be > 0");
    need(c.alpha > 0.0 && c.alpha * c.dt <= 1.0, "roundabout.alpha", "must be > 0 with alpha * dt <= 1");
    need(c.preview >= 0.0, "roundabout.preview", "must be >= 0");
    need(c.v_eps > 0.0, "roundabout.v_eps", "must be > 0");
    need(c.min_spawn_gap >= 0.0, "roundabout.min_spawn_gap", "must be >= 0");
    need(c.horizon > 0.0, "roundabout.horizon", "must be > 0");
    need(c.vehicle_cap >= 0, "roundabout.vehicle_cap", "must be >= 0");
    need(c.clbf_q > 0.0 && c.clbf_q < 1.0, "roundabout.clbf_q", "requires 0 < q < 1");
    need(c.clbf_margin > 0.0 && c.clbf_margin <= 1.0, "roundabout.clbf_margin", "must be in (0, 1]");
    need(c.fxt_mu > 1.0, "roundabout.fxt_mu", "must be > 1");
    need(c.ext_grid_points >= 1, "roundabout.ext_grid_points", "must be >= 1");
}

ordered_json opt_json(const std::optional<double>& v)
{
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

}  // namespace

void validate(const RunSpec& spec)
{
    need(spec.schema_version == kSchemaVersion, "schema_version", "must be " + std::to_string(kSchemaVersion));
    need(!spec.methods.empty(), "run.methods", "must not be empty");
    need(!spec.seeds.empty(), "run.seeds", "must not be empty");
    need(!spec.traffic.empty(), "run.traffic", "must not be empty");
    need(!spec.output_dir.empty(), "run.output_dir", "must not be empty");
    check_acc(spec.acc);
    check_roundabout(spec.roundabout);
    try {
        validate(to_acc_config(spec.acc));
        validate(spec.roundabout);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

RunSpec parse_run_spec(const std::string& text)
{
    RunSpec spec;
    if (std::all_of(text.begin(), text.end(), [](unsigned char ch) { return std::isspace(ch); })) {
        validate(spec);
        return spec;
    }
    ordered_json root;
    try {
        root = ordered_json::parse(text, nullptr, true, true);
    } catch (const ordered_json::parse_error& e) {
        throw ConfigError(std::string("parse error: ") + e.what());
    }
    if (!root.is_object())
        throw ConfigError("config: top level must be an object");
    for (const auto& [k, v] : root.items())
        if (k != "schema_version" && k != "run" && k != "acc" && k != "roundabout")
            fail(k, "unknown key");
    if (root.contains("schema_version")) {
        const auto& v = root.at("schema_version");
        if (!v.is_number_integer())
            fail("schema_version", "expected an integer");
        spec.schema_version = v.get<int>();
        need(spec.schema_version == kSchemaVersion, "schema_version",
             "must be " + std::to_string(kSchemaVersion));
    }
    read_run(root, spec);
    read_acc(root, spec.acc);
    read_roundabout(root, spec.roundabout);
    validate(spec);
    return spec;
}

std::string serialize(const RunSpec& spec)
{
    ordered_json root;
    root["schema_version"] = spec.schema_version;

    auto& run = root["run"];
    run["scenario"] = scenario_name(spec.scenario);
    run["methods"] = ordered_json::array();
    for (auto m : spec.methods)
        run["methods"].push_back(method_name(m));
    run["seeds"] = spec.seeds;
    run["traffic"] = ordered_json::array();
    for (auto t : spec.traffic)
        run["traffic"].push_back(traffic_name(t));
    run["output_dir"] = spec.output_dir;
    run["emit_plots"] = spec.emit_plots;

    const auto& a = spec.acc;
    auto& acc = root["acc"];
    acc["phi"] = a.phi;
    acc["horizon"] = a.horizon;
    acc["dt"] = a.dt;
    acc["duration"] = a.duration;
    acc["u_min"] = opt_json(a.u_min);
    acc["u_max"] = opt_json(a.u_max);
    acc["alpha"] = a.alpha;
    acc["slack_weight"] = a.slack_weight;
    acc["z0"] = a.z0;
    acc["v0"] = a.v0;
    acc["v_lead"] = a.v_lead;
    acc["clbf_p"] = a.clbf_p;
    acc["clbf_q"] = a.clbf_q;
    acc["fxt_mu"] = a.fxt_mu;
    acc["objective"] = a.objective;
    acc["target_speed"] = a.target_speed;
    acc["b_shape"] = opt_json(a.b_shape);
    acc["grid_points"] = a.grid_points;

    const auto& c = spec.roundabout;
    auto& r = root["roundabout"];
    r["entry_length"] = c.geometry.entry_length;
    r["arc_length"] = c.geometry.arc_length;
    r["exit_length"] = c.geometry.exit_length;
    r["cg_height"] = c.lateral.h;
    r["half_track"] = c.lateral.w_h;
    r["gravity"] = c.lateral.g;
    r["lambda1"] = c.weights.lambda1;
    r["lambda2"] = c.weights.lambda2;
    r["lambda3"] = c.weights.lambda3;
    r["v_d"] = c.weights.v_d;
    r["rates"] = c.rates ? ordered_json(*c.rates) : ordered_json(nullptr);
    r["v_min"] = c.v_min;
    r["v_max"] = c.v_max;
    r["u_min"] = c.u_min;
    r["u_max"] = c.u_max;
    r["phi"] = c.phi;
    r["delta"] = c.delta;
    r["alpha"] = c.alpha;
    r["preview"] = c.preview;
    r["v_eps"] = c.v_eps;
    r["min_spawn_gap"] = c.min_spawn_gap;
    r["dt"] = c.dt;
    r["horizon"] = c.horizon;
    r["vehicle_cap"] = c.vehicle_cap;
    r["clbf_q"] = c.clbf_q;
    r["clbf_margin"] = c.clbf_margin;
    r["fxt_mu"] = c.fxt_mu;
    r["ext_grid_points"] = c.ext_grid_points;
    return root.dump(2) + "\n";
}

RunSpec load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError(path + ": cannot open");
    std::ostringstream buf;
    buf << in.rdbuf();
    RunSpec spec = parse_run_spec(buf.str());
    if (const char* dir = std::getenv(kOutputDirEnv); dir && *dir)
        spec.output_dir = dir;
    return spec;
}

std::uint64_t fnv1a(const std::string& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const RunSpec& spec)
{
    RunSpec keyed = spec;
    keyed.output_dir.clear();
    keyed.emit_plots = false;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(serialize(keyed))));
    return buf;
}

}  // namespace extcbf
