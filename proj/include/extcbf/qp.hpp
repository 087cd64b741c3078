#pragma once

#include <array>
#include <limits>
#include <vector>

#include "extcbf/barrier.hpp"

namespace extcbf::qp {

inline constexpr int kMaxDim = 4;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

using Vec = std::array<double, kMaxDim>;

// coeffs . x {>=, =} rhs
struct Row {
    Vec coeffs{};
    double rhs = 0.0;
    Sense sense = Sense::greater_equal;
};

// minimize 0.5 * sum(quad_i x_i^2) + sum(lin_i x_i)
// subject to rows and lower <= x <= upper.
struct Problem {
    int dim = 1;
    Vec quad{1.0, 1.0, 1.0, 1.0};
    Vec lin{};
    Vec lower{-kInf, -kInf, -kInf, -kInf};
    Vec upper{kInf, kInf, kInf, kInf};
    std::vector<Row> rows;

    void add_row(const Row& r) { rows.push_back(r); }
    // Variable 0 is u, variable 1 is the slack channel.
    void add_row(const ConstraintRow& r);
    double objective(const Vec& x) const;
};

enum class Status { optimal, infeasible };

struct Solution {
    Vec values{};
    double objective = 0.0;
    Status status = Status::infeasible;
    // one multiplier per problem row (0 when inactive); bounds are not reported
    std::vector<double> multipliers;

    bool optimal() const { return status == Status::optimal; }
};

// Exact minimizer of a small strictly convex QP by enumeration of active sets
// (each candidate set solved in closed form through its KKT system).
Solution solve(const Problem& problem);

// Grid oracle for dim <= 2. Variable 0 is scanned on a grid of the given
// resolution inside its (finite) box; for dim == 2 variable 1 is minimized
// exactly on the feasible interval left by each grid value.
Solution brute_force_solve(const Problem& problem, double resolution);

}  // namespace extcbf::qp
