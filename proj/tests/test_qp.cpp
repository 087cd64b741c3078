#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "extcbf/qp.hpp"
#include "random_qp.hpp"

using namespace extcbf;
using doctest::Approx;

namespace {

qp::Problem effort_problem()
{
    qp::Problem p;
    p.dim = 1;
    p.quad[0] = 1.0;
    return p;
}

// KKT residual check for an optimal solution: stationarity with the reported
// multipliers plus bound multipliers inferred from the residual sign.
void check_kkt(const qp::Problem& p, const qp::Solution& s)
{
    for (int i = 0; i < p.dim; ++i) {
        double g = p.quad[i] * s.values[i] + p.lin[i];
        for (std::size_t k = 0; k < p.rows.size(); ++k)
            g -= p.rows[k].coeffs[i] * s.multipliers[k];
        const bool at_lower = std::abs(s.values[i] - p.lower[i]) < 1e-9;
        const bool at_upper = std::abs(s.values[i] - p.upper[i]) < 1e-9;
        if (at_lower)
            CHECK(g >= -1e-7);
        else if (at_upper)
            CHECK(g <= 1e-7);
        else
            CHECK(std::abs(g) <= 1e-7);
    }
    for (std::size_t k = 0; k < p.rows.size(); ++k) {
        const auto& r = p.rows[k];
        double lhs = 0.0;
        for (int i = 0; i < p.dim; ++i)
            lhs += r.coeffs[i] * s.values[i];
        if (r.sense == Sense::equal) {
            CHECK(std::abs(lhs - r.rhs) <= 1e-9 * std::max(1.0, std::abs(r.rhs)));
        } else {
            CHECK(lhs >= r.rhs - 1e-9 * std::max(1.0, std::abs(r.rhs)));
            // complementary slackness
            CHECK(s.multipliers[k] >= -1e-10);
            if (lhs > r.rhs + 1e-7)
                CHECK(s.multipliers[k] == 0.0);
        }
    }
}

}  // namespace

TEST_CASE("unconstrained minimum")
{
    const auto s = qp::solve(effort_problem());
    REQUIRE(s.optimal());
    CHECK(s.values[0] == 0.0);
    CHECK(s.objective == 0.0);
}

TEST_CASE("active bound from the ExT row")
{
    auto p = effort_problem();
    // u <= -3.370 written as -u >= 3.370
    p.add_row(qp::Row{{-1.0}, 3.370, Sense::greater_equal});
    const auto s = qp::solve(p);
    REQUIRE(s.optimal());
    CHECK(s.values[0] == Approx(-3.370));
    CHECK(s.objective == Approx(5.678).epsilon(1e-3));
    check_kkt(p, s);
}

TEST_CASE("two-variable tracking problem with nonnegative slack")
{
    // minimize u^2/2 + 100 d^2  s.t.  -1.8 u - d = 6.0667, d >= 0
    qp::Problem p;
    p.dim = 2;
    p.quad = {1.0, 200.0};
    p.lower = {-10.0, 0.0};
    p.upper = {10.0, qp::kInf};
    p.add_row(qp::Row{{-1.8, -1.0}, 6.0667, Sense::equal});
    const auto s = qp::solve(p);
    REQUIRE(s.optimal());
    const auto oracle = qp::brute_force_solve(p, 1e-4);
    REQUIRE(oracle.optimal());
    CHECK(std::abs(s.values[0] - oracle.values[0]) <= 1e-3);
    CHECK(std::abs(s.values[1] - oracle.values[1]) <= 1e-3);
    CHECK(std::abs(s.objective - oracle.objective) <= 1e-3);
    // the interior stationary point has d < 0, so the bound is active
    CHECK(s.values[1] == Approx(0.0));
    CHECK(s.values[0] == Approx(-6.0667 / 1.8));
}

TEST_CASE("free slack relaxes an equality that the box forbids")
{
    qp::Problem p;
    p.dim = 2;
    p.quad = {1.0, 200.0};
    p.lower = {-3.0, -qp::kInf};
    p.upper = {3.0, qp::kInf};
    p.add_row(qp::Row{{-1.8, -1.0}, 6.0667, Sense::equal});
    const auto s = qp::solve(p);
    REQUIRE(s.optimal());
    CHECK(s.values[0] == Approx(-3.0));
    CHECK(s.values[1] == Approx(5.4 - 6.0667));
}

TEST_CASE("infeasible problems")
{
    auto p = effort_problem();
    p.lower[0] = -5;
    p.upper[0] = 5;
    p.add_row(qp::Row{{-1.0}, 1.0, Sense::greater_equal});  // u <= -1
    p.add_row(qp::Row{{1.0}, 1.0, Sense::greater_equal});   // u >= 1
    CHECK(qp::solve(p).status == qp::Status::infeasible);
    CHECK(qp::brute_force_solve(p, 1e-3).status == qp::Status::infeasible);
}

TEST_CASE("invalid problems")
{
    auto p = effort_problem();
    p.quad[0] = -1.0;
    CHECK_THROWS_AS(qp::solve(p), std::invalid_argument);
    qp::Problem big;
    big.dim = 3;
    big.lower = {-1, -1, -1};
    big.upper = {1, 1, 1};
    CHECK_THROWS_AS(qp::brute_force_solve(big, 0.1), std::invalid_argument);
    auto unbounded = effort_problem();
    CHECK_THROWS_AS(qp::brute_force_solve(unbounded, 0.1), std::invalid_argument);
}

TEST_CASE("zero weight is regularized")
{
    qp::Problem p;
    p.dim = 2;
    p.quad = {1.0, 0.0};
    p.lin = {0.0, 0.0};
    p.lower = {-1.0, -1.0};
    p.upper = {1.0, 1.0};
    p.add_row(qp::Row{{1.0, 1.0}, 0.5, Sense::greater_equal});
    const auto s = qp::solve(p);
    REQUIRE(s.optimal());
    CHECK(s.values[0] == Approx(0.0).epsilon(1e-6));
    CHECK(s.values[1] == Approx(0.5).epsilon(1e-6));
}

TEST_CASE("one-variable randomized equivalence with the grid oracle")
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int feasible = 0;
    for (int trial = 0; trial < 200; ++trial) {
        qp::Problem p;
        p.dim = 1;
        p.quad[0] = 0.5 + unit(rng);
        p.lin[0] = -1.0 + 2.0 * unit(rng);
        p.lower[0] = -4.0;
        p.upper[0] = 4.0;
        // a single feasible bound row u >= c or u <= c
        const double c = -3.0 + 6.0 * unit(rng);
        p.add_row(unit(rng) < 0.5 ? qp::Row{{1.0}, c} : qp::Row{{-1.0}, -c});
        const double res = 1e-3;
        const auto s = qp::solve(p);
        const auto o = qp::brute_force_solve(p, res);
        REQUIRE(s.optimal());
        REQUIRE(o.optimal());
        ++feasible;
        CHECK(std::abs(s.values[0] - o.values[0]) <= res);
        check_kkt(p, s);
    }
    CHECK(feasible == 200);
}

TEST_CASE("random 1-2 variable problems satisfy KKT and match the oracle")
{
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 150; ++trial) {
        const auto p = testing_support::random_problem(rng);
        const auto s = qp::solve(p);
        const auto o = qp::brute_force_solve(p, 1e-3);
        CHECK(s.optimal() == o.optimal());
        if (s.optimal() && o.optimal()) {
            check_kkt(p, s);
            CHECK(std::abs(s.objective - o.objective) <= 1e-2);
        }
    }
}

TEST_CASE("solve is deterministic")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = testing_support::random_problem(rng);
        const auto a = qp::solve(p);
        const auto b = qp::solve(p);
        CHECK(a.values == b.values);
        CHECK(a.status == b.status);
    }
}
