#include "extcbf/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <json.hpp>

namespace extcbf {

namespace fs = std::filesystem;

void write_atomic(const std::string& path, const std::string& content)
{
    const fs::path target(path);
    if (target.has_parent_path())
        fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out)
            throw std::runtime_error("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("rename " + tmp.string() + " -> " + path + ": " + ec.message());
    }
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void Manifest::add(std::string path, std::string kind, std::optional<std::uint64_t> seed)
{
    entries_.push_back({std::move(path), std::move(kind), seed});
}

std::string Manifest::to_json() const
{
    nlohmann::ordered_json root;
    root["verb"] = verb_;
    root["config_hash"] = hash_;
    root["artifacts"] = nlohmann::ordered_json::array();
    for (const auto& e : entries_) {
        nlohmann::ordered_json a;
        a["path"] = e.path;
        a["kind"] = e.kind;
        a["seed"] = e.seed ? nlohmann::ordered_json(*e.seed) : nlohmann::ordered_json(nullptr);
        a["config_hash"] = hash_;
        root["artifacts"].push_back(a);
    }
    return root.dump(2) + "\n";
}

namespace {

constexpr double kW = 720, kH = 420, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string header(const std::string& title)
{
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << num(kW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
    return os.str();
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series)
{
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y))
                continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (!std::isfinite(x0)) {
        x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    }
    if (x1 == x0)
        x1 = x0 + 1;
    if (y1 == y0)
        y1 = y0 + 1;
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };

    std::ostringstream os;
    os << header(title);
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 16) << "\" text-anchor=\"middle\">" << tick(xv)
           << "</text>\n";
        os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
           << "</text>\n";
    }
    if (y0 < 0 && y1 > 0)
        os << "<line x1=\"" << kLeft << "\" y1=\"" << num(py(0)) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\""
           << num(py(0)) << "\" stroke=\"#999\" stroke-dasharray=\"2,3\"/>\n";
    os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kH - 12) << "\" text-anchor=\"middle\">"
       << escape(x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % 6];
        std::string pts;
        auto flush = [&]() {
            if (pts.empty())
                return;
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
               << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"" << pts << "\"/>\n";
            pts.clear();
        };
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) {
                flush();
                continue;
            }
            if (!pts.empty())
                pts += ' ';
            pts += num(px(x)) + "," + num(py(y));
        }
        flush();
        const double ly = kTop + 14 + 18 * static_cast<double>(k);
        os << "<line x1=\"" << num(kW - kRight + 12) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(kW - kRight + 36)
           << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\""
           << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
        os << "<text x=\"" << num(kW - kRight + 42) << "\" y=\"" << num(ly) << "\">" << escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_metric_bars(const std::string& title, const std::vector<NormalizedRow>& rows)
{
    const auto& names = metric_names();
    double top = 1.0;
    for (const auto& r : rows)
        for (const auto& [k, v] : r.ratios)
            if (v && std::isfinite(*v))
                top = std::max(top, *v);
    top *= 1.1;
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    const double group = pw / static_cast<double>(names.size());
    const double bar = rows.empty() ? 0.0 : 0.8 * group / static_cast<double>(rows.size());
    auto py = [&](double y) { return kTop + (1.0 - y / top) * ph; };

    std::ostringstream os;
    os << header(title);
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << num(py(1)) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\"" << num(py(1))
       << "\" stroke=\"#999\" stroke-dasharray=\"2,3\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = top * i / 4.0;
        os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
           << "</text>\n";
    }
    for (std::size_t m = 0; m < names.size(); ++m) {
        const double gx = kLeft + group * static_cast<double>(m);
        os << "<text x=\"" << num(gx + group / 2) << "\" y=\"" << num(kTop + ph + 16) << "\" text-anchor=\"middle\">"
           << escape(names[m].substr(4)) << "</text>\n";
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto it = rows[r].ratios.find(names[m]);
            if (it == rows[r].ratios.end() || !it->second)
                continue;
            const double v = *it->second;
            const double x = gx + 0.1 * group + bar * static_cast<double>(r);
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(py(v)) << "\" width=\"" << num(bar) << "\" height=\""
               << num(py(0) - py(v)) << "\" fill=\"" << kPalette[r % 6] << "\"/>\n";
        }
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double ly = kTop + 14 + 18 * static_cast<double>(r);
        os << "<rect x=\"" << num(kW - kRight + 12) << "\" y=\"" << num(ly - 10) << "\" width=\"12\" height=\"12\" fill=\""
           << kPalette[r % 6] << "\"/>\n";
        os << "<text x=\"" << num(kW - kRight + 30) << "\" y=\"" << num(ly) << "\">" << escape(rows[r].method)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace extcbf
