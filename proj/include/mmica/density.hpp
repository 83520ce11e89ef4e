#pragma once

#include <string>
#include <string_view>

namespace mmica {

enum class DensityKind { huber, student, logcosh };

/// Super-Gaussian source model in variational form.
///
/// G(y) = -log d(y) (normalizing constants dropped) can be written as
/// G(y) = min_{u >= 0} u y^2 / 2 + f(u), attained at the unique u*(y).
/// For all three models u* takes values in (0, 1], which is the domain
/// accepted by eval_f.
struct DensityModel {
    DensityKind kind = DensityKind::huber;

    bool has_closed_form_f() const { return kind != DensityKind::logcosh; }
};

DensityModel parse_density(std::string_view name);
std::string to_string(DensityKind kind);

double eval_G(const DensityModel& model, double y);

// G'(y).
double eval_dG(const DensityModel& model, double y);

// G'(y) / y, continuously extended with u*(0) = 1.
double eval_ustar(const DensityModel& model, double y);

// Conjugate f(u) for u in (0, 1]. Throws UnsupportedConjugate for log-cosh.
double eval_f(const DensityModel& model, double u);

struct UstarPair {
    double u;
    double fu;
};

// (u*(y), f(u*(y))) computed as (u*, G(y) - u* y^2 / 2); valid for every model.
UstarPair eval_f_at_ustar(const DensityModel& model, double y);

} // namespace mmica
