#include "mmica/density.hpp"

#include <cmath>

#include "mmica/errors.hpp"

namespace mmica {

DensityModel parse_density(std::string_view name) {
    if (name == "huber") return {DensityKind::huber};
    if (name == "student") return {DensityKind::student};
    if (name == "logcosh") return {DensityKind::logcosh};
    throw InvalidConfig("unknown density '" + std::string(name) + "' (expected huber|student|logcosh)");
}

std::string to_string(DensityKind kind) {
    switch (kind) {
    case DensityKind::huber: return "huber";
    case DensityKind::student: return "student";
    case DensityKind::logcosh: return "logcosh";
    }
    return "?";
}

namespace {

// log cosh without overflow for large |y|.
double log_cosh(double y) {
    const double a = std::abs(y);
    return a + std::log1p(std::exp(-2.0 * a)) - M_LN2;
}

} // namespace

double eval_G(const DensityModel& model, double y) {
    switch (model.kind) {
    case DensityKind::huber: {
        const double a = std::abs(y);
        return a < 1.0 ? 0.5 * y * y : a - 0.5;
    }
    case DensityKind::student:
        return 0.5 * std::log1p(y * y);
    case DensityKind::logcosh:
        return log_cosh(y);
    }
    return 0.0;
}

double eval_dG(const DensityModel& model, double y) {
    switch (model.kind) {
    case DensityKind::huber:
        if (std::abs(y) < 1.0) return y;
        return y > 0.0 ? 1.0 : -1.0;
    case DensityKind::student:
        return y / (1.0 + y * y);
    case DensityKind::logcosh:
        return std::tanh(y);
    }
    return 0.0;
}

double eval_ustar(const DensityModel& model, double y) {
    const double a = std::abs(y);
    switch (model.kind) {
    case DensityKind::huber:
        return a < 1.0 ? 1.0 : 1.0 / a;
    case DensityKind::student:
        return 1.0 / (1.0 + y * y);
    case DensityKind::logcosh:
        // tanh(y)/y = 1 - y^2/3 + 2y^4/15 - ...
        if (a < 1e-4) return 1.0 - a * a / 3.0;
        return std::tanh(a) / a;
    }
    return 1.0;
}

double eval_f(const DensityModel& model, double u) {
    if (!model.has_closed_form_f()) {
        throw UnsupportedConjugate("conjugate f has no closed form for the " + to_string(model.kind) +
                                   " density; carry f(u*(y)) values instead");
    }
    if (!(u > 0.0 && u <= 1.0)) {
        throw DomainError("conjugate f is defined on (0, 1], got u = " + std::to_string(u));
    }
    if (model.kind == DensityKind::huber) {
        return 0.5 / u - 0.5;
    }
    return -0.5 * std::log(u) - 0.5 * (1.0 - u);
}

UstarPair eval_f_at_ustar(const DensityModel& model, double y) {
    const double u = eval_ustar(model, y);
    return {u, eval_G(model, y) - 0.5 * u * y * y};
}

} // namespace mmica
