#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace extcbf {

// Barrier value with its Lie derivatives: b_dot = lie_f + lie_g * u.
struct BarrierEval {
    double value = 0.0;
    double lie_f = 0.0;
    double lie_g = 0.0;
};

// Extended class-K function: linear kappa*s, or power p*|s|^q*sign(s).
class ClassK {
public:
    enum class Kind { linear, power };

    static ClassK linear(double kappa);
    static ClassK power(double p, double q);

    double operator()(double s) const;

    Kind kind() const { return kind_; }
    double gain() const { return gain_; }
    double exponent() const { return exponent_; }

private:
    ClassK(Kind kind, double gain, double exponent) : kind_(kind), gain_(gain), exponent_(exponent) {}

    Kind kind_;
    double gain_;
    double exponent_;
};

namespace kernel {
struct Linear {};
// phi(tau) = 1 - (1 - shape) tau - shape tau^2; shape in (-1, 1)
struct Quadratic {
    double shape = 0.0;
};
// phi(tau) = (exp(-k tau) - exp(-k)) / (1 - exp(-k)); k > 0
struct Exponential {
    double k = 1.0;
};
// Solution of gamma_dot = p (-gamma)^q; its horizon is the nominal
// convergence time |b0|^(1-q) / (p (1-q)).
struct PowerDecay {
    double p = 1.0;
    double q = 0.5;
};
}  // namespace kernel

using RecoveryKernel = std::variant<kernel::Linear, kernel::Quadratic, kernel::Exponential, kernel::PowerDecay>;

// Recovery function gamma(t) = b0 * phi((t - t0) / horizon).
struct RecoveryProfile {
    double b0 = -1.0;
    double t0 = 0.0;
    double horizon = 1.0;
    RecoveryKernel kernel = kernel::Linear{};

    double t1() const { return t0 + horizon; }
};

RecoveryProfile power_decay_profile(double b0, double t0, double p, double q);

std::string kernel_name(const RecoveryKernel& k);

double gamma_value(const RecoveryProfile& profile, double t);
double gamma_dot(const RecoveryProfile& profile, double t);
double shifted_barrier(double b_val, const RecoveryProfile& profile, double t);

struct ProfileReport {
    enum class Failure { initial_not_violated, nonpositive_horizon, start_value, end_value, not_increasing };
    std::vector<Failure> failures;
    std::vector<std::string> messages;

    bool ok() const { return failures.empty(); }
    bool has(Failure f) const;
};

ProfileReport validate_profile(const RecoveryProfile& profile);

enum class Sense { greater_equal, equal };

// coeff_u * u + coeff_slack * slack {>=, =} rhs
struct ConstraintRow {
    double coeff_u = 0.0;
    double coeff_slack = 0.0;
    double rhs = 0.0;
    Sense sense = Sense::greater_equal;

    bool satisfied(double u, double slack, double tol = 1e-9) const;
};

ConstraintRow standard_cbf_row(const BarrierEval& eval, const ClassK& alpha);

// Time-varying recovery condition lie_f + lie_g u - gamma_dot + alpha(b - gamma) >= 0.
ConstraintRow ext_cbf_row(const BarrierEval& eval, const RecoveryProfile& profile, const ClassK& alpha, double t);

enum class SlackChannel { none, attached };

// Active (equality) form of the recovery condition. With an attached slack the
// row reads lie_f + lie_g u - gamma_dot + alpha(b - gamma) = slack.
ConstraintRow ext_tracking_row(const BarrierEval& eval, const RecoveryProfile& profile, const ClassK& alpha, double t,
                               SlackChannel slack);

// lie_f + lie_g u >= p (-b)^q, only defined for b < 0.
ConstraintRow clbf_row(const BarrierEval& eval, double p, double q);

// With V = -b: lie_f + lie_g u >= c1 V^(1 + 1/mu) + c2 V^(1 - 1/mu), only for b < 0.
ConstraintRow fxt_row(const BarrierEval& eval, double c1, double c2, double mu);

namespace law {
struct CbfOnly {};
struct Clbf {
    double p = 0.766;
    double q = 0.2;
};
struct FxtCbf {
    double c1 = 1.0;
    double c2 = 1.0;
    double mu = 2.0;
};
struct ExtCbf {
    RecoveryProfile profile;
};
}  // namespace law

using RecoveryLaw = std::variant<law::CbfOnly, law::Clbf, law::FxtCbf, law::ExtCbf>;

std::string law_name(const RecoveryLaw& law);
void validate_law(const RecoveryLaw& law);

// Row the given law imposes at (eval, t). ExtCbf yields the tracking row inside
// its window and the standard row outside; Clbf and FxtCbf yield their decay
// rows while b < 0.
ConstraintRow recovery_row(const RecoveryLaw& law, const BarrierEval& eval, const ClassK& alpha, double t,
                           SlackChannel slack = SlackChannel::none);

bool ext_window_active(const law::ExtCbf& ext, double t);

}  // namespace extcbf
