// SPDX-License-Identifier: MIT
#pragma once

#include "vinn/core.hpp"

#include <cmath>
#include <functional>
#include <utility>

namespace vinn::dual {

/// Utility families for the investment-stopping application.
///
/// power(gamma):  U(x) = x^gamma / gamma, 0 < gamma < 1
/// non_hara:      U(x) = H(x)^-3 / 3 + H(x)^-1 + x H(x),
///                H(x) = sqrt(2) (-1 + sqrt(1+4x))^{-1/2}
/// custom:        caller supplies U and U'; conjugates fall back to a
///                golden-section search.
enum class UtilityKind { power, non_hara, custom };

class UtilityFamily {
public:
    static UtilityFamily power(double gamma) {
        if (!(gamma > 0.0 && gamma < 1.0))
            throw parameter_error("power utility requires 0 < gamma < 1, got " + std::to_string(gamma));
        UtilityFamily u;
        u.kind_ = UtilityKind::power;
        u.gamma_ = gamma;
        return u;
    }

    static UtilityFamily non_hara() {
        UtilityFamily u;
        u.kind_ = UtilityKind::non_hara;
        return u;
    }

    static UtilityFamily custom(std::function<double(double)> value,
                                std::function<double(double)> derivative) {
        UtilityFamily u;
        u.kind_ = UtilityKind::custom;
        u.value_ = std::move(value);
        u.deriv_ = std::move(derivative);
        return u;
    }

    UtilityKind kind() const { return kind_; }
    double gamma() const { return gamma_; }

    double value(double x) const {
        switch (kind_) {
        case UtilityKind::power: return std::pow(x, gamma_) / gamma_;
        case UtilityKind::non_hara: {
            const double h = hfun(x);
            return 1.0 / (3.0 * h * h * h) + 1.0 / h + x * h;
        }
        case UtilityKind::custom: return value_(x);
        }
        return 0.0;
    }

    /// U'(x).  For non-HARA, U' = H exactly.
    double marginal(double x) const {
        switch (kind_) {
        case UtilityKind::power: return std::pow(x, gamma_ - 1.0);
        case UtilityKind::non_hara: return hfun(x);
        case UtilityKind::custom: return deriv_(x);
        }
        return 0.0;
    }

    /// Inverse marginal I(y) = (U')^{-1}(y), the conjugate's first-order
    /// condition.  Closed form for both named families.
    double inverse_marginal(double y) const {
        switch (kind_) {
        case UtilityKind::power: return std::pow(y, 1.0 / (gamma_ - 1.0));
        case UtilityKind::non_hara: {
            const double y2 = 1.0 / (y * y);
            return y2 + y2 * y2;
        }
        case UtilityKind::custom: {
            // Bisection on the decreasing U'; bracket grows geometrically.
            double lo = 1e-12, hi = 1.0;
            while (deriv_(hi) > y && hi < 1e12) hi *= 2.0;
            while (deriv_(lo) < y && lo > 1e-300) lo *= 0.5;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                (deriv_(mid) > y ? lo : hi) = mid;
            }
            return 0.5 * (lo + hi);
        }
        }
        return 0.0;
    }

    static double hfun(double x) {
        return std::sqrt(2.0) / std::sqrt(-1.0 + std::sqrt(1.0 + 4.0 * x));
    }

private:
    UtilityKind kind_ = UtilityKind::power;
    double gamma_ = 0.5;
    std::function<double(double)> value_, deriv_;
};

/// Conjugate dual utility with wealth floor K:
///   U~_K(y) = sup_{x>K} [ U(x-K) - x y ],  y > 0.
/// Maximizer x*(y) = K + I(y); named families substitute I in closed form.
inline double dual_utility(const UtilityFamily& u, double floor_k, double y) {
    if (!(y > 0.0))
        throw domain_error("dual_utility requires y > 0, got " + std::to_string(y));
    switch (u.kind()) {
    case UtilityKind::power: {
        const double g = u.gamma();
        // U~_K(y) = (1/g - 1) y^{g/(g-1)} - K y
        return (1.0 / g - 1.0) * std::pow(y, g / (g - 1.0)) - floor_k * y;
    }
    case UtilityKind::non_hara:
        // U~_K(y) = y^-3/3 + y^-1 - K y
        return 1.0 / (3.0 * y * y * y) + 1.0 / y - floor_k * y;
    case UtilityKind::custom: {
        const double xs = floor_k + u.inverse_marginal(y);
        return u.value(xs - floor_k) - xs * y;
    }
    }
    return 0.0;
}

/// d/dy of the conjugate.  By the envelope theorem this is -x*(y).
inline double dual_utility_derivative(const UtilityFamily& u, double floor_k, double y) {
    if (!(y > 0.0))
        throw domain_error("dual_utility_derivative requires y > 0");
    return -(floor_k + u.inverse_marginal(y));
}

/// Direct numeric sup over x of [U(x-K) - x y] by golden-section search.
/// Reference route for the closed forms; also the custom-family fallback.
inline double dual_utility_numeric(const UtilityFamily& u, double floor_k, double y,
                                   double x_hi = 1e6, double tol = 1e-12) {
    if (!(y > 0.0)) throw domain_error("dual_utility_numeric requires y > 0");
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    auto obj = [&](double x) { return u.value(x - floor_k) - x * y; };
    double a = floor_k + 1e-14, b = floor_k + x_hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = obj(c), fd = obj(d);
    while (b - a > tol * (1.0 + std::abs(a))) {
        if (fc > fd) {
            b = d; d = c; fd = fc;
            c = b - phi * (b - a); fc = obj(c);
        } else {
            a = c; c = d; fc = fd;
            d = a + phi * (b - a); fd = obj(d);
        }
    }
    return std::max(fc, fd);
}

} // namespace vinn::dual
