#include "extcbf/barrier.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace extcbf {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double normalized_time(const RecoveryProfile& profile, double t)
{
    const double slack = 1e-9 * std::max(1.0, profile.horizon);
    if (!(t >= profile.t0 - slack && t <= profile.t1() + slack)) {
        std::ostringstream os;
        os << "time " << t << " outside recovery window [" << profile.t0 << ", " << profile.t1() << "]";
        throw std::domain_error(os.str());
    }
    const double tau = (t - profile.t0) / profile.horizon;
    return std::clamp(tau, 0.0, 1.0);
}

double power_decay_inner(const RecoveryProfile& profile, const kernel::PowerDecay& k, double t)
{
    const double base = std::pow(-profile.b0, 1.0 - k.q) - k.p * (1.0 - k.q) * (t - profile.t0);
    return std::max(base, 0.0);
}

}  // namespace

ClassK ClassK::linear(double kappa)
{
    if (!(kappa > 0.0) || !std::isfinite(kappa))
        throw std::invalid_argument("class-K linear gain must be positive");
    return ClassK(Kind::linear, kappa, 1.0);
}

ClassK ClassK::power(double p, double q)
{
    if (!(p > 0.0) || !(q > 0.0) || !std::isfinite(p) || !std::isfinite(q))
        throw std::invalid_argument("class-K power function needs p > 0 and q > 0");
    return ClassK(Kind::power, p, q);
}

double ClassK::operator()(double s) const
{
    if (kind_ == Kind::linear)
        return gain_ * s;
    const double mag = gain_ * std::pow(std::abs(s), exponent_);
    return s < 0.0 ? -mag : mag;
}

RecoveryProfile power_decay_profile(double b0, double t0, double p, double q)
{
    if (!(b0 < 0.0))
        throw std::invalid_argument("power decay profile needs b0 < 0");
    if (!(p > 0.0) || !(q > 0.0 && q < 1.0))
        throw std::invalid_argument("power decay profile needs p > 0 and 0 < q < 1");
    RecoveryProfile profile;
    profile.b0 = b0;
    profile.t0 = t0;
    profile.horizon = std::pow(-b0, 1.0 - q) / (p * (1.0 - q));
    profile.kernel = kernel::PowerDecay{p, q};
    return profile;
}

std::string kernel_name(const RecoveryKernel& k)
{
    return std::visit(overloaded{[](const kernel::Linear&) { return std::string("linear"); },
                                 [](const kernel::Quadratic&) { return std::string("quadratic"); },
                                 [](const kernel::Exponential&) { return std::string("exponential"); },
                                 [](const kernel::PowerDecay&) { return std::string("power_decay"); }},
                      k);
}

double gamma_value(const RecoveryProfile& profile, double t)
{
    const double tau = normalized_time(profile, t);
    return std::visit(
        overloaded{[&](const kernel::Linear&) { return profile.b0 * (1.0 - tau); },
                   [&](const kernel::Quadratic& k) {
                       const double a = 1.0 - k.shape;
                       return profile.b0 * (1.0 - a * tau - k.shape * tau * tau);
                   },
                   [&](const kernel::Exponential& k) {
                       const double ek = std::exp(-k.k);
                       return profile.b0 * (std::exp(-k.k * tau) - ek) / (1.0 - ek);
                   },
                   [&](const kernel::PowerDecay& k) {
                       return -std::pow(power_decay_inner(profile, k, t), 1.0 / (1.0 - k.q));
                   }},
        profile.kernel);
}

double gamma_dot(const RecoveryProfile& profile, double t)
{
    const double tau = normalized_time(profile, t);
    const double rate = -profile.b0 / profile.horizon;
    return std::visit(overloaded{[&](const kernel::Linear&) { return rate; },
                                 [&](const kernel::Quadratic& k) { return rate * ((1.0 - k.shape) + 2.0 * k.shape * tau); },
                                 [&](const kernel::Exponential& k) {
                                     return rate * k.k * std::exp(-k.k * tau) / (1.0 - std::exp(-k.k));
                                 },
                                 [&](const kernel::PowerDecay& k) {
                                     const double g = std::pow(power_decay_inner(profile, k, t), 1.0 / (1.0 - k.q));
                                     return k.p * std::pow(g, k.q);
                                 }},
                      profile.kernel);
}

double shifted_barrier(double b_val, const RecoveryProfile& profile, double t)
{
    return b_val - gamma_value(profile, t);
}

bool ProfileReport::has(Failure f) const
{
    for (auto x : failures)
        if (x == f)
            return true;
    return false;
}

ProfileReport validate_profile(const RecoveryProfile& profile)
{
    ProfileReport report;
    auto fail = [&](ProfileReport::Failure f, std::string msg) {
        report.failures.push_back(f);
        report.messages.push_back(std::move(msg));
    };

    if (!(profile.b0 < 0.0) || !std::isfinite(profile.b0))
        fail(ProfileReport::Failure::initial_not_violated, "b0 must be negative");
    if (!(profile.horizon > 0.0) || !std::isfinite(profile.horizon) || !std::isfinite(profile.t0))
        fail(ProfileReport::Failure::nonpositive_horizon, "recovery horizon must be positive and finite");
    if (!report.ok())
        return report;

    std::visit(overloaded{[](const kernel::Linear&) {},
                          [&](const kernel::Quadratic& k) {
                              // gamma_dot ~ (1 - shape) + 2 shape tau, positive on [0,1) iff |shape| < 1
                              if (!(k.shape > -1.0 && k.shape < 1.0))
                                  fail(ProfileReport::Failure::not_increasing,
                                       "quadratic shape must lie in (-1, 1); gamma_dot changes sign on [0, 1)");
                          },
                          [&](const kernel::Exponential& k) {
                              if (!(k.k > 0.0) || !std::isfinite(k.k))
                                  fail(ProfileReport::Failure::not_increasing, "exponential rate k must be positive");
                          },
                          [&](const kernel::PowerDecay& k) {
                              if (!(k.p > 0.0) || !(k.q > 0.0 && k.q < 1.0)) {
                                  fail(ProfileReport::Failure::not_increasing, "power decay needs p > 0, 0 < q < 1");
                                  return;
                              }
                              const double nominal = std::pow(-profile.b0, 1.0 - k.q) / (k.p * (1.0 - k.q));
                              if (std::abs(nominal - profile.horizon) > 1e-9 * nominal)
                                  fail(ProfileReport::Failure::end_value,
                                       "power decay reaches zero at its nominal time, not at the horizon");
                          }},
               profile.kernel);
    if (!report.ok())
        return report;

    const double scale = 1e-12 * std::abs(profile.b0);
    if (std::abs(gamma_value(profile, profile.t0) - profile.b0) > scale)
        fail(ProfileReport::Failure::start_value, "gamma(t0) != b0");
    if (std::abs(gamma_value(profile, profile.t1())) > scale)
        fail(ProfileReport::Failure::end_value, "gamma(t1) != 0");
    return report;
}

bool ConstraintRow::satisfied(double u, double slack, double tol) const
{
    const double lhs = coeff_u * u + coeff_slack * slack;
    const double t = tol * std::max(1.0, std::abs(rhs));
    if (sense == Sense::equal)
        return std::abs(lhs - rhs) <= t;
    return lhs >= rhs - t;
}

ConstraintRow standard_cbf_row(const BarrierEval& eval, const ClassK& alpha)
{
    return {eval.lie_g, 0.0, -eval.lie_f - alpha(eval.value), Sense::greater_equal};
}

ConstraintRow ext_cbf_row(const BarrierEval& eval, const RecoveryProfile& profile, const ClassK& alpha, double t)
{
    const double s = shifted_barrier(eval.value, profile, t);
    return {eval.lie_g, 0.0, gamma_dot(profile, t) - eval.lie_f - alpha(s), Sense::greater_equal};
}

ConstraintRow ext_tracking_row(const BarrierEval& eval, const RecoveryProfile& profile, const ClassK& alpha, double t,
                               SlackChannel slack)
{
    ConstraintRow row = ext_cbf_row(eval, profile, alpha, t);
    row.sense = Sense::equal;
    row.coeff_slack = slack == SlackChannel::attached ? -1.0 : 0.0;
    return row;
}

ConstraintRow clbf_row(const BarrierEval& eval, double p, double q)
{
    if (!(p > 0.0) || !(q > 0.0 && q < 1.0))
        throw std::invalid_argument("clbf_row: need p > 0 and 0 < q < 1");
    if (!(eval.value < 0.0))
        throw std::domain_error("clbf_row: barrier is not violated, use the standard CBF row");
    return {eval.lie_g, 0.0, p * std::pow(-eval.value, q) - eval.lie_f, Sense::greater_equal};
}

ConstraintRow fxt_row(const BarrierEval& eval, double c1, double c2, double mu)
{
    if (!(c1 > 0.0) || !(c2 > 0.0) || !(mu > 1.0))
        throw std::invalid_argument("fxt_row: need c1, c2 > 0 and mu > 1");
    if (!(eval.value < 0.0))
        throw std::domain_error("fxt_row: barrier is not violated, use the standard CBF row");
    const double V = -eval.value;
    const double rate = c1 * std::pow(V, 1.0 + 1.0 / mu) + c2 * std::pow(V, 1.0 - 1.0 / mu);
    return {eval.lie_g, 0.0, rate - eval.lie_f, Sense::greater_equal};
}

std::string law_name(const RecoveryLaw& law)
{
    return std::visit(overloaded{[](const law::CbfOnly&) { return std::string("cbf"); },
                                 [](const law::Clbf&) { return std::string("clbf"); },
                                 [](const law::FxtCbf&) { return std::string("fxt"); },
                                 [](const law::ExtCbf&) { return std::string("ext"); }},
                      law);
}

void validate_law(const RecoveryLaw& law)
{
    std::visit(overloaded{[](const law::CbfOnly&) {},
                          [](const law::Clbf& c) {
                              if (!(c.p > 0.0))
                                  throw std::invalid_argument("clbf: p must be positive");
                              if (!(c.q > 0.0 && c.q < 1.0))
                                  throw std::invalid_argument("clbf: 0 < q < 1 required");
                          },
                          [](const law::FxtCbf& f) {
                              if (!(f.c1 > 0.0) || !(f.c2 > 0.0))
                                  throw std::invalid_argument("fxt: c1, c2 must be positive");
                              if (!(f.mu > 1.0))
                                  throw std::invalid_argument("fxt: mu > 1 required");
                          },
                          [](const law::ExtCbf& e) {
                              const auto report = validate_profile(e.profile);
                              if (!report.ok())
                                  throw std::invalid_argument("ext: " + report.messages.front());
                          }},
               law);
}

bool ext_window_active(const law::ExtCbf& ext, double t)
{
    const double eps = 1e-9 * std::max(1.0, ext.profile.horizon);
    return t >= ext.profile.t0 - eps && t < ext.profile.t1() - eps;
}

ConstraintRow recovery_row(const RecoveryLaw& law, const BarrierEval& eval, const ClassK& alpha, double t,
                           SlackChannel slack)
{
    return std::visit(overloaded{[&](const law::CbfOnly&) { return standard_cbf_row(eval, alpha); },
                                 [&](const law::Clbf& c) {
                                     return eval.value < 0.0 ? clbf_row(eval, c.p, c.q) : standard_cbf_row(eval, alpha);
                                 },
                                 [&](const law::FxtCbf& f) {
                                     return eval.value < 0.0 ? fxt_row(eval, f.c1, f.c2, f.mu)
                                                             : standard_cbf_row(eval, alpha);
                                 },
                                 [&](const law::ExtCbf& e) {
                                     return ext_window_active(e, t) ? ext_tracking_row(eval, e.profile, alpha, t, slack)
                                                                    : standard_cbf_row(eval, alpha);
                                 }},
                      law);
}

}  // namespace extcbf
