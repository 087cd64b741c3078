#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace extcbf {

struct MetricsRecord {
    int vehicle = 0;
    double objective = 0.0;  // time average of the per-step cost
    double energy = 0.0;     // sum 0.5 u^2 dt
    double travel_time = 0.0;
    double discomfort = 0.0;  // sum kappa v^2 dt
    bool hard_decel = false;
    bool infeasible = false;
    bool recovery = false;
    double max_slack = 0.0;
};

struct SummaryRow {
    std::string method;
    std::string profile;
    double avg_obj = 0.0;
    double avg_energy = 0.0;
    double avg_time = 0.0;
    double avg_discomfort = 0.0;
    double avg_hard_decel = 0.0;  // vehicles per run
    double avg_infeasible = 0.0;  // vehicles per run
    std::size_t runs = 0;
    std::size_t vehicles = 0;
};

class EmptySummary : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// One entry per run; each run holds its per-vehicle records.
SummaryRow aggregate(const std::vector<std::vector<MetricsRecord>>& runs, const std::string& method,
                     const std::string& profile);

struct NormalizedRow {
    std::string method;
    std::string profile;
    // metric name -> ratio to the baseline; empty when the baseline value is zero
    std::map<std::string, std::optional<double>> ratios;
};

inline const std::vector<std::string>& metric_names()
{
    static const std::vector<std::string> names{"avg_obj",        "avg_energy",     "avg_time",
                                                "avg_discomfort", "avg_hard_decel", "avg_infeasible"};
    return names;
}

double metric_value(const SummaryRow& row, const std::string& name);

// Rows are normalized against the baseline method of the same profile.
std::vector<NormalizedRow> normalize(const std::vector<SummaryRow>& rows, const std::string& baseline_method);

// Columns: method, avg_obj, avg_energy, avg_time, avg_discomfort, avg_hard_decel,
// avg_infeasible. One file per traffic profile.
std::string aggregate_csv(const std::vector<SummaryRow>& rows);
std::string normalized_csv(const std::vector<NormalizedRow>& rows);
std::string records_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> parse_records_csv(const std::string& text);

}  // namespace extcbf
