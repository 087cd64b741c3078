#include "extcbf/qp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace extcbf::qp {

namespace {

constexpr double kRegularization = 1e-10;

struct Constraint {
    Vec a{};
    double r = 0.0;
    bool equality = false;
    int row = -1;  // index into Problem::rows, -1 for box bounds
};

double dot(const Vec& a, const Vec& b, int n)
{
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        s += a[i] * b[i];
    return s;
}

double feasibility_tol(const Constraint& c, const Vec& x, int n)
{
    double scale = std::max(1.0, std::abs(c.r));
    for (int i = 0; i < n; ++i)
        scale = std::max(scale, std::abs(c.a[i] * x[i]));
    return 1e-9 * scale;
}

bool satisfies(const Constraint& c, const Vec& x, int n)
{
    const double g = dot(c.a, x, n) - c.r;
    const double tol = feasibility_tol(c, x, n);
    return c.equality ? std::abs(g) <= tol : g >= -tol;
}

// Solves M y = b in place for m <= kMaxDim with partial pivoting.
bool solve_dense(std::array<std::array<double, kMaxDim>, kMaxDim> M, Vec b, int m, Vec& y)
{
    double scale = 0.0;
    for (int i = 0; i < m; ++i)
        scale = std::max(scale, std::abs(M[i][i]));
    if (scale == 0.0)
        return m == 0;
    for (int col = 0; col < m; ++col) {
        int piv = col;
        for (int r = col + 1; r < m; ++r)
            if (std::abs(M[r][col]) > std::abs(M[piv][col]))
                piv = r;
        if (std::abs(M[piv][col]) <= 1e-12 * scale)
            return false;
        std::swap(M[piv], M[col]);
        std::swap(b[piv], b[col]);
        for (int r = col + 1; r < m; ++r) {
            const double f = M[r][col] / M[col][col];
            for (int c = col; c < m; ++c)
                M[r][c] -= f * M[col][c];
            b[r] -= f * b[col];
        }
    }
    for (int r = m - 1; r >= 0; --r) {
        double s = b[r];
        for (int c = r + 1; c < m; ++c)
            s -= M[r][c] * y[c];
        y[r] = s / M[r][r];
    }
    return true;
}

void validate(const Problem& p)
{
    if (p.dim < 1 || p.dim > kMaxDim)
        throw std::invalid_argument("qp: dimension must be in [1, 4]");
    for (int i = 0; i < p.dim; ++i) {
        if (!(p.quad[i] >= 0.0) || !std::isfinite(p.quad[i]))
            throw std::invalid_argument("qp: quadratic weights must be finite and non-negative");
        if (!std::isfinite(p.lin[i]))
            throw std::invalid_argument("qp: linear cost must be finite");
        if (std::isnan(p.lower[i]) || std::isnan(p.upper[i]))
            throw std::invalid_argument("qp: bounds must not be NaN");
    }
    for (const auto& r : p.rows) {
        for (int i = 0; i < p.dim; ++i)
            if (!std::isfinite(r.coeffs[i]))
                throw std::invalid_argument("qp: non-finite row coefficient");
        if (!std::isfinite(r.rhs))
            throw std::invalid_argument("qp: non-finite row right-hand side");
    }
}

Vec regularized(const Problem& p)
{
    Vec h{};
    for (int i = 0; i < p.dim; ++i)
        h[i] = p.quad[i] > 0.0 ? p.quad[i] : kRegularization;
    return h;
}

}  // namespace

void Problem::add_row(const ConstraintRow& r)
{
    Row row;
    row.coeffs[0] = r.coeff_u;
    row.coeffs[1] = r.coeff_slack;
    row.rhs = r.rhs;
    row.sense = r.sense;
    rows.push_back(row);
}

double Problem::objective(const Vec& x) const
{
    double f = 0.0;
    for (int i = 0; i < dim; ++i)
        f += 0.5 * quad[i] * x[i] * x[i] + lin[i] * x[i];
    return f;
}

Solution solve(const Problem& problem)
{
    validate(problem);
    const int n = problem.dim;
    const Vec h = regularized(problem);

    std::vector<Constraint> cons;
    cons.reserve(problem.rows.size() + 2 * n);
    for (std::size_t k = 0; k < problem.rows.size(); ++k) {
        const auto& r = problem.rows[k];
        cons.push_back({r.coeffs, r.rhs, r.sense == Sense::equal, static_cast<int>(k)});
    }
    for (int i = 0; i < n; ++i) {
        if (problem.lower[i] > problem.upper[i])
            return {};
        if (std::isfinite(problem.lower[i])) {
            Constraint c;
            c.a[i] = 1.0;
            c.r = problem.lower[i];
            cons.push_back(c);
        }
        if (std::isfinite(problem.upper[i])) {
            Constraint c;
            c.a[i] = -1.0;
            c.r = -problem.upper[i];
            cons.push_back(c);
        }
    }

    std::vector<int> eq, ineq;
    for (int k = 0; k < static_cast<int>(cons.size()); ++k)
        (cons[k].equality ? eq : ineq).push_back(k);
    if (static_cast<int>(eq.size()) > n)
        return {};  // over-determined equalities are treated as infeasible

    Solution result;
    result.multipliers.assign(problem.rows.size(), 0.0);

    // Candidate active set: all equalities plus a subset of inequalities.
    std::vector<int> active;
    Vec x{}, lambda{};

    auto try_active_set = [&]() -> bool {
        const int m = static_cast<int>(active.size());
        std::array<std::array<double, kMaxDim>, kMaxDim> M{};
        Vec rhs{};
        for (int i = 0; i < m; ++i) {
            const auto& ci = cons[active[i]];
            for (int j = 0; j < m; ++j) {
                const auto& cj = cons[active[j]];
                double s = 0.0;
                for (int d = 0; d < n; ++d)
                    s += ci.a[d] * cj.a[d] / h[d];
                M[i][j] = s;
            }
            double s = ci.r;
            for (int d = 0; d < n; ++d)
                s += ci.a[d] * problem.lin[d] / h[d];
            rhs[i] = s;
        }
        Vec y{};
        if (!solve_dense(M, rhs, m, y))
            return false;
        for (int i = 0; i < m; ++i)
            if (!cons[active[i]].equality && y[i] < -1e-10 * std::max(1.0, std::abs(y[i])))
                return false;
        Vec cand{};
        for (int d = 0; d < n; ++d) {
            double s = -problem.lin[d];
            for (int i = 0; i < m; ++i)
                s += cons[active[i]].a[d] * y[i];
            cand[d] = s / h[d];
        }
        for (const auto& c : cons)
            if (!satisfies(c, cand, n))
                return false;
        x = cand;
        lambda = y;
        return true;
    };

    const int max_extra = n - static_cast<int>(eq.size());
    const int n_ineq = static_cast<int>(ineq.size());
    std::vector<int> pick;
    // Enumerate inequality subsets by size, then lexicographically, so the
    // lowest-indexed active set wins ties.
    for (int size = 0; size <= std::min(max_extra, n_ineq); ++size) {
        pick.resize(size);
        for (int i = 0; i < size; ++i)
            pick[i] = i;
        while (true) {
            active = eq;
            for (int i : pick)
                active.push_back(ineq[i]);
            if (try_active_set()) {
                result.status = Status::optimal;
                result.values = x;
                result.objective = problem.objective(x);
                for (std::size_t i = 0; i < active.size(); ++i)
                    if (cons[active[i]].row >= 0)
                        result.multipliers[cons[active[i]].row] = lambda[i];
                return result;
            }
            int i = size - 1;
            while (i >= 0 && pick[i] == n_ineq - size + i)
                --i;
            if (i < 0)
                break;
            ++pick[i];
            for (int j = i + 1; j < size; ++j)
                pick[j] = pick[j - 1] + 1;
        }
    }
    result.status = Status::infeasible;
    return result;
}

namespace {

Solution grid_scan(const Problem& problem, double resolution);

}  // namespace

Solution brute_force_solve(const Problem& problem, double resolution)
{
    validate(problem);
    if (problem.dim > 2)
        throw std::invalid_argument("brute_force_solve: only dim <= 2 is supported");
    if (problem.dim == 2 && std::isfinite(problem.lower[1]) && std::isfinite(problem.upper[1])) {
        // Scan the variable that an equality row pins least steeply, so each
        // grid step moves the other variable by at most one resolution.
        for (const auto& r : problem.rows) {
            if (r.sense != Sense::equal)
                continue;
            if (std::abs(r.coeffs[1]) < std::abs(r.coeffs[0])) {
                Problem swapped = problem;
                auto flip = [](Vec& v) { std::swap(v[0], v[1]); };
                flip(swapped.quad);
                flip(swapped.lin);
                flip(swapped.lower);
                flip(swapped.upper);
                for (auto& row : swapped.rows)
                    flip(row.coeffs);
                Solution s = grid_scan(swapped, resolution);
                std::swap(s.values[0], s.values[1]);
                return s;
            }
            break;
        }
    }
    return grid_scan(problem, resolution);
}

namespace {

Solution grid_scan(const Problem& problem, double resolution)
{
    if (!(resolution > 0.0))
        throw std::invalid_argument("brute_force_solve: resolution must be positive");
    const double lo = problem.lower[0], hi = problem.upper[0];
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("brute_force_solve: variable 0 needs a finite box");

    const Vec h = regularized(problem);
    Solution best;
    best.multipliers.assign(problem.rows.size(), 0.0);
    best.objective = kInf;

    const auto steps = static_cast<long long>(std::floor((hi - lo) / resolution + 1e-9));
    for (long long k = 0; k <= steps; ++k) {
        Vec x{};
        x[0] = lo + static_cast<double>(k) * resolution;
        bool ok = true;
        double l1 = problem.dim == 2 ? problem.lower[1] : 0.0;
        double u1 = problem.dim == 2 ? problem.upper[1] : 0.0;
        for (const auto& r : problem.rows) {
            const double a0 = r.coeffs[0];
            const double a1 = problem.dim == 2 ? r.coeffs[1] : 0.0;
            const double rest = r.rhs - a0 * x[0];
            if (a1 == 0.0) {
                if (r.sense == Sense::equal)
                    ok = std::abs(rest) <= 0.5 * std::abs(a0) * resolution + 1e-12;
                else
                    ok = rest <= 1e-12;
            } else if (r.sense == Sense::equal) {
                l1 = std::max(l1, rest / a1);
                u1 = std::min(u1, rest / a1);
            } else if (a1 > 0.0) {
                l1 = std::max(l1, rest / a1);
            } else {
                u1 = std::min(u1, rest / a1);
            }
            if (!ok)
                break;
        }
        if (!ok)
            continue;
        if (problem.dim == 2) {
            if (l1 > u1 + 1e-12 * std::max(1.0, std::abs(u1)))
                continue;
            x[1] = std::clamp(-problem.lin[1] / h[1], std::min(l1, u1), u1);
        }
        const double f = problem.objective(x);
        if (f < best.objective) {
            best.objective = f;
            best.values = x;
            best.status = Status::optimal;
        }
    }
    if (best.status != Status::optimal)
        best.objective = 0.0;
    return best;
}

}  // namespace

}  // namespace extcbf::qp
