#include "extcbf/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace extcbf {

namespace {

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

SummaryRow aggregate(const std::vector<std::vector<MetricsRecord>>& runs, const std::string& method,
                     const std::string& profile)
{
    SummaryRow row;
    row.method = method;
    row.profile = profile;
    row.runs = runs.size();
    double hard = 0.0, infeasible = 0.0;
    for (const auto& run : runs)
        for (const auto& r : run) {
            ++row.vehicles;
            row.avg_obj += r.objective;
            row.avg_energy += r.energy;
            row.avg_time += r.travel_time;
            row.avg_discomfort += r.discomfort;
            hard += r.hard_decel ? 1.0 : 0.0;
            infeasible += r.infeasible ? 1.0 : 0.0;
        }
    if (row.vehicles == 0)
        throw EmptySummary("aggregate: no records for " + method + "/" + profile);
    const double n = static_cast<double>(row.vehicles);
    row.avg_obj /= n;
    row.avg_energy /= n;
    row.avg_time /= n;
    row.avg_discomfort /= n;
    row.avg_hard_decel = hard / static_cast<double>(row.runs);
    row.avg_infeasible = infeasible / static_cast<double>(row.runs);
    return row;
}

double metric_value(const SummaryRow& row, const std::string& name)
{
    if (name == "avg_obj")
        return row.avg_obj;
    if (name == "avg_energy")
        return row.avg_energy;
    if (name == "avg_time")
        return row.avg_time;
    if (name == "avg_discomfort")
        return row.avg_discomfort;
    if (name == "avg_hard_decel")
        return row.avg_hard_decel;
    if (name == "avg_infeasible")
        return row.avg_infeasible;
    throw std::invalid_argument("unknown metric " + name);
}

std::vector<NormalizedRow> normalize(const std::vector<SummaryRow>& rows, const std::string& baseline_method)
{
    std::vector<NormalizedRow> out;
    for (const auto& r : rows) {
        const SummaryRow* base = nullptr;
        for (const auto& b : rows)
            if (b.method == baseline_method && b.profile == r.profile)
                base = &b;
        if (!base)
            throw std::invalid_argument("normalize: no " + baseline_method + " baseline for profile " + r.profile);
        NormalizedRow n{r.method, r.profile, {}};
        for (const auto& name : metric_names()) {
            const double den = metric_value(*base, name);
            if (den == 0.0)
                n.ratios[name] = std::nullopt;
            else
                n.ratios[name] = metric_value(r, name) / den;
        }
        out.push_back(std::move(n));
    }
    return out;
}

std::string aggregate_csv(const std::vector<SummaryRow>& rows)
{
    std::ostringstream os;
    os << "method,avg_obj,avg_energy,avg_time,avg_discomfort,avg_hard_decel,avg_infeasible\n";
    for (const auto& r : rows)
        os << r.method << ',' << fmt(r.avg_obj) << ',' << fmt(r.avg_energy) << ','
           << fmt(r.avg_time) << ',' << fmt(r.avg_discomfort) << ',' << fmt(r.avg_hard_decel) << ','
           << fmt(r.avg_infeasible) << '\n';
    return os.str();
}

std::string normalized_csv(const std::vector<NormalizedRow>& rows)
{
    std::ostringstream os;
    os << "method,profile";
    for (const auto& name : metric_names())
        os << ',' << name;
    os << '\n';
    for (const auto& r : rows) {
        os << r.method << ',' << r.profile;
        for (const auto& name : metric_names()) {
            os << ',';
            const auto& v = r.ratios.at(name);
            os << (v ? fmt(*v) : "nan");
        }
        os << '\n';
    }
    return os.str();
}

std::string records_csv(const std::vector<MetricsRecord>& records)
{
    std::ostringstream os;
    os << "vehicle,objective,energy,travel_time,discomfort,hard_decel,infeasible,recovery,max_slack\n";
    for (const auto& r : records)
        os << r.vehicle << ',' << fmt(r.objective) << ',' << fmt(r.energy) << ',' << fmt(r.travel_time) << ','
           << fmt(r.discomfort) << ',' << int(r.hard_decel) << ',' << int(r.infeasible) << ',' << int(r.recovery)
           << ',' << fmt(r.max_slack) << '\n';
    return os.str();
}

std::vector<MetricsRecord> parse_records_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("vehicle,", 0) != 0)
        throw std::invalid_argument("records csv: missing header");
    std::vector<MetricsRecord> out;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream ls(line);
        std::string f[9];
        for (auto& s : f)
            if (!std::getline(ls, s, ','))
                throw std::invalid_argument("records csv: short row: " + line);
        MetricsRecord r;
        r.vehicle = std::stoi(f[0]);
        r.objective = std::stod(f[1]);
        r.energy = std::stod(f[2]);
        r.travel_time = std::stod(f[3]);
        r.discomfort = std::stod(f[4]);
        r.hard_decel = f[5] == "1";
        r.infeasible = f[6] == "1";
        r.recovery = f[7] == "1";
        r.max_slack = std::stod(f[8]);
        out.push_back(r);
    }
    return out;
}

}  // namespace extcbf
