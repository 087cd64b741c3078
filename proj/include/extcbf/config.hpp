#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "extcbf/acc.hpp"
#include "extcbf/roundabout.hpp"

namespace extcbf {

enum class ScenarioKind { acc, roundabout };

std::string scenario_name(ScenarioKind k);

// ACC parameters as plain values; bounds left empty are unbounded.
struct AccSpec {
    double phi = 1.8;
    double horizon = 15.0;
    double dt = 1e-3;
    double duration = 20.0;
    std::optional<double> u_min;
    std::optional<double> u_max;
    double alpha = 1.0;
    double slack_weight = 100.0;
    double z0 = 20.0;
    double v0 = 20.0;
    double v_lead = 15.0;
    double clbf_p = 0.766;
    double clbf_q = 0.2;
    double fxt_mu = 2.0;
    std::string objective = "effort";  // effort | speed
    double target_speed = 15.0;
    std::optional<double> b_shape;  // fixed quadratic shape, skips the grid search
    int grid_points = 37;

    bool operator==(const AccSpec&) const = default;
};

AccConfig to_acc_config(const AccSpec& s);
AccBaselines to_acc_baselines(const AccSpec& s);
ProfileObjective to_objective(const AccSpec& s);

struct RunSpec {
    int schema_version = 1;
    ScenarioKind scenario = ScenarioKind::roundabout;
    std::vector<Method> methods = all_methods();
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<TrafficProfile> traffic = {TrafficProfile::balanced};
    std::string output_dir = "out";
    bool emit_plots = false;
    AccSpec acc;
    ScenarioConfig roundabout;  // method, seed and traffic are taken from the lists above

    bool operator==(const RunSpec&) const = default;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputDirEnv = "EXTCBF_OUTPUT_DIR";

// Throws ConfigError naming the key and the constraint.
void validate(const RunSpec& spec);

// Empty or whitespace-only text yields the defaults.
RunSpec parse_run_spec(const std::string& text);
std::string serialize(const RunSpec& spec);

// Reads, parses and validates; EXTCBF_OUTPUT_DIR overrides output_dir.
RunSpec load(const std::string& path);

std::uint64_t fnv1a(const std::string& bytes);
std::string config_hash(const RunSpec& spec);  // 16 hex digits of fnv1a(serialize(spec)); output_dir and emit_plots excluded

}  // namespace extcbf
