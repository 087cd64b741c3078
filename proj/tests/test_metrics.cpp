#include "doctest.h"

#include <algorithm>
#include <random>

#include "extcbf/metrics.hpp"

using namespace extcbf;
using doctest::Approx;

namespace {

MetricsRecord rec(int id, double energy, bool hard = false, bool infeasible = false)
{
    MetricsRecord r;
    r.vehicle = id;
    r.objective = 0.1 * id + 0.05;
    r.energy = energy;
    r.travel_time = 16.0 + 0.25 * id;
    r.discomfort = 3.0 + id;
    r.hard_decel = hard;
    r.infeasible = infeasible;
    return r;
}

SummaryRow row(const std::string& method, double energy, double infeasible, const std::string& profile = "balanced")
{
    SummaryRow r;
    r.method = method;
    r.profile = profile;
    r.avg_obj = 1.0;
    r.avg_energy = energy;
    r.avg_time = 16.4;
    r.avg_discomfort = 2.0;
    r.avg_hard_decel = 1.0;
    r.avg_infeasible = infeasible;
    return r;
}

std::vector<std::vector<MetricsRecord>> random_runs(std::mt19937_64& rng, int runs, int per_run)
{
    std::uniform_real_distribution<double> u(0.0, 5.0);
    std::bernoulli_distribution coin(0.3);
    std::vector<std::vector<MetricsRecord>> out(runs);
    int id = 0;
    for (auto& r : out)
        for (int k = 0; k < per_run; ++k) {
            MetricsRecord m = rec(id++, u(rng), coin(rng), coin(rng));
            m.objective = u(rng);
            m.travel_time = 10.0 + u(rng);
            r.push_back(m);
        }
    return out;
}

}  // namespace

TEST_CASE("aggregate of one record equals the record")
{
    const auto r = rec(3, 1.7, true, false);
    const auto s = aggregate({{r}}, "ext", "balanced");
    CHECK(s.avg_obj == r.objective);
    CHECK(s.avg_energy == r.energy);
    CHECK(s.avg_time == r.travel_time);
    CHECK(s.avg_discomfort == r.discomfort);
    CHECK(s.avg_hard_decel == 1.0);
    CHECK(s.avg_infeasible == 0.0);
    CHECK(s.runs == 1);
    CHECK(s.vehicles == 1);
}

TEST_CASE("aggregate means and per-run counts")
{
    CHECK(aggregate({{rec(0, 1.0), rec(1, 3.0)}}, "cbf", "balanced").avg_energy == Approx(2.0));

    // flags T, F over the first run and F, T over the second: one vehicle per run
    const auto s = aggregate({{rec(0, 1.0, true, true), rec(1, 1.0)}, {rec(2, 1.0), rec(3, 1.0, true, true)}}, "cbf",
                             "balanced");
    CHECK(s.avg_hard_decel == Approx(1.0));
    CHECK(s.avg_infeasible == Approx(1.0));
    CHECK(s.vehicles == 4);
}

TEST_CASE("aggregate rejects empty input")
{
    CHECK_THROWS_AS(aggregate({}, "ext", "heavy"), EmptySummary);
    CHECK_THROWS_AS(aggregate({{}, {}}, "ext", "heavy"), EmptySummary);
}

TEST_CASE("normalize against the per-profile baseline")
{
    const std::vector<SummaryRow> rows{row("cbf", 2.293, 0.536), row("ext", 1.866, 0.161),
                                       row("cbf", 4.0, 2.0, "heavy"), row("ext", 1.0, 1.0, "heavy")};
    const auto n = normalize(rows, "cbf");
    REQUIRE(n.size() == 4);
    for (const auto& name : metric_names())
        CHECK(*n[0].ratios.at(name) == 1.0);
    CHECK(*n[1].ratios.at("avg_energy") == Approx(0.814).epsilon(5e-4 / 0.814));
    CHECK(*n[1].ratios.at("avg_infeasible") == Approx(0.300).epsilon(5e-4 / 0.3));
    CHECK(*n[3].ratios.at("avg_energy") == Approx(0.25));
    CHECK(*n[3].ratios.at("avg_infeasible") == Approx(0.5));
}

TEST_CASE("zero baseline metric is not normalizable")
{
    auto base = row("cbf", 2.0, 0.0);
    const auto n = normalize({base, row("ext", 1.0, 0.3)}, "cbf");
    CHECK_FALSE(n[1].ratios.at("avg_infeasible").has_value());
    CHECK(n[1].ratios.at("avg_energy").has_value());
    CHECK(normalized_csv(n).find("nan") != std::string::npos);
}

TEST_CASE("missing baseline throws")
{
    CHECK_THROWS_AS(normalize({row("ext", 1.0, 1.0)}, "cbf"), std::invalid_argument);
    CHECK_THROWS_AS(normalize({row("cbf", 1.0, 1.0), row("ext", 1.0, 1.0, "heavy")}, "cbf"), std::invalid_argument);
}

TEST_CASE("normalized energy is invariant to scaling raw energies")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_runs(rng, 3, 5), b = random_runs(rng, 3, 5);
        const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
        auto scale = [c](std::vector<std::vector<MetricsRecord>> runs) {
            for (auto& r : runs)
                for (auto& m : r)
                    m.energy *= c;
            return runs;
        };
        const auto plain = normalize({aggregate(a, "cbf", "p"), aggregate(b, "ext", "p")}, "cbf");
        const auto scaled = normalize({aggregate(scale(a), "cbf", "p"), aggregate(scale(b), "ext", "p")}, "cbf");
        CHECK(*scaled[1].ratios.at("avg_energy") == Approx(*plain[1].ratios.at("avg_energy")).epsilon(1e-12));
    }
}

TEST_CASE("aggregate is permutation invariant")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto runs = random_runs(rng, 4, 6);
        const auto ref = aggregate(runs, "ext", "p");
        for (auto& r : runs)
            std::shuffle(r.begin(), r.end(), rng);
        std::shuffle(runs.begin(), runs.end(), rng);
        const auto s = aggregate(runs, "ext", "p");
        for (const auto& name : metric_names())
            CHECK(metric_value(s, name) == Approx(metric_value(ref, name)).epsilon(1e-12));
    }
}

TEST_CASE("csv column contract and record round trip")
{
    const auto csv = aggregate_csv({row("cbf", 2.0, 1.0), row("ext", 1.0, 0.5)});
    CHECK(csv.rfind("method,avg_obj,avg_energy,avg_time,avg_discomfort,avg_hard_decel,avg_infeasible\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    std::vector<MetricsRecord> records{rec(0, 1.25, true, false), rec(7, 0.5, false, true)};
    records[1].recovery = true;
    records[1].max_slack = 0.125;
    const auto back = parse_records_csv(records_csv(records));
    REQUIRE(back.size() == 2);
    CHECK(back[1].vehicle == 7);
    CHECK(back[1].infeasible);
    CHECK(back[1].recovery);
    CHECK(back[1].max_slack == 0.125);
    CHECK(back[0].hard_decel);
    CHECK(back[0].energy == 1.25);
    CHECK_THROWS_AS(parse_records_csv("bad header\n"), std::invalid_argument);
}
