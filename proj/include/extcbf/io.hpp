#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "extcbf/metrics.hpp"

namespace extcbf {

// Writes to a sibling temporary file, then renames over the target. Creates
// missing parent directories. Throws std::runtime_error on I/O failure.
void write_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

struct ManifestEntry {
    std::string path;  // relative to the output directory
    std::string kind;
    std::optional<std::uint64_t> seed;
};

class Manifest {
public:
    Manifest(std::string verb, std::string config_hash) : verb_(std::move(verb)), hash_(std::move(config_hash)) {}

    void add(std::string path, std::string kind, std::optional<std::uint64_t> seed = std::nullopt);
    const std::vector<ManifestEntry>& entries() const { return entries_; }
    std::string to_json() const;

private:
    std::string verb_;
    std::string hash_;
    std::vector<ManifestEntry> entries_;
};

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
    bool dashed = false;
};

// Static line chart; NaN y values break the polyline.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

// Grouped bars: one group per metric, one bar per normalized row.
std::string svg_metric_bars(const std::string& title, const std::vector<NormalizedRow>& rows);

}  // namespace extcbf
