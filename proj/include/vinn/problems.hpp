// SPDX-License-Identifier: MIT
#pragma once

#include "vinn/core.hpp"
#include "vinn/utility.hpp"

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace vinn::problems {

/// Axis-aligned truncation box in R^d.
struct Box {
    Vec lo, hi;

    int dim() const { return static_cast<int>(lo.size()); }

    double volume() const {
        double v = 1.0;
        for (int i = 0; i < dim(); ++i) v *= hi[i] - lo[i];
        return v;
    }

    bool contains(const Vec& x, double tol = 0.0) const {
        for (int i = 0; i < dim(); ++i)
            if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
        return true;
    }

    void validate() const {
        if (lo.size() != hi.size() || lo.size() == 0)
            throw domain_error("box bounds must be non-empty and of equal dimension");
        for (int i = 0; i < dim(); ++i)
            if (!(lo[i] < hi[i]))
                throw domain_error("box has non-positive width along axis " + std::to_string(i));
    }
};

/// Scalar field g(t,x) with first spatial derivatives (obstacles, targets).
struct ScalarField {
    std::function<double(double, const Vec&)> value;
    std::function<Vec(double, const Vec&)> gradient;

    double operator()(double t, const Vec& x) const { return value(t, x); }
};

/// Time-sign convention for the first-order time term.
enum class TimeSign { forward, backward };

/// Linear parabolic operator
///   G[u] = s * du/dt - sum_ij a_ij d2u/dx_i dx_j + sum_i b_i du/dx_i + c u,
/// s = +1 (forward clock) or -1 (backward source form).
struct ParabolicOperator {
    int dim = 1;
    std::function<Mat(double, const Vec&)> second_order; // symmetric d x d
    std::function<Vec(double, const Vec&)> first_order;
    std::function<double(double, const Vec&)> zeroth_order;
    TimeSign time_sign = TimeSign::forward;

    static ParabolicOperator constant_coeff(Mat a, Vec b, double c,
                                            TimeSign sign = TimeSign::forward) {
        ParabolicOperator op;
        op.dim = static_cast<int>(b.size());
        op.second_order = [a](double, const Vec&) { return a; };
        op.first_order = [b](double, const Vec&) { return b; };
        op.zeroth_order = [c](double, const Vec&) { return c; };
        op.time_sign = sign;
        return op;
    }
};

/// Derivative data of a scalar field at one space-time point.
struct PointJet {
    double value = 0.0;
    double time_deriv = 0.0;
    Vec space_grad;   // d
    Mat hessian;      // d x d, symmetric
};

inline double apply_operator(const ParabolicOperator& op, double t, const Vec& x,
                             const PointJet& jet) {
    const int d = op.dim;
    if (jet.space_grad.size() != d || jet.hessian.rows() != d || jet.hessian.cols() != d)
        throw contract_error("apply_operator: jet dimension mismatch");
    const Mat a = op.second_order(t, x);
    const Vec b = op.first_order(t, x);
    const double c = op.zeroth_order(t, x);
    double r = (op.time_sign == TimeSign::forward ? 1.0 : -1.0) * jet.time_deriv;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            r -= a(i, j) * jet.hessian(i, j);
    r += b.dot(jet.space_grad) + c * jet.value;
    if (!std::isfinite(r)) {
        throw evaluation_error("apply_operator: non-finite residual at t=" + std::to_string(t));
    }
    return r;
}

/// A parabolic obstacle problem on a truncated box with a forward
/// initial-value clock.  boundary_target equals the obstacle on the
/// parabolic boundary for both built-in problem families.
struct VIProblem {
    ParabolicOperator op;
    ScalarField obstacle;
    ScalarField boundary_target;
    Box domain;
    double horizon = 1.0;

    int dim() const { return domain.dim(); }

    void validate() const {
        domain.validate();
        if (!(horizon > 0.0)) throw domain_error("VIProblem horizon must be > 0");
        if (op.dim != domain.dim()) throw contract_error("operator/domain dimension mismatch");
    }
};

/// Sampled uniform-parabolicity diagnostic: smallest eigenvalue of a(t,x)
/// over n random points must stay at or above lambda.
struct ParabolicityReport {
    bool passed = false;
    double worst_eigenvalue = 0.0;
    double worst_t = 0.0;
    Vec worst_x;
};

inline ParabolicityReport check_uniform_parabolicity(const VIProblem& p, double lambda,
                                                     int n_samples = 256,
                                                     std::uint64_t seed = 0) {
    auto rng = make_rng(seed, 0x9a7ab01);
    std::uniform_real_distribution<double> ut(0.0, p.horizon);
    ParabolicityReport rep;
    rep.worst_eigenvalue = std::numeric_limits<double>::infinity();
    const int d = p.dim();
    Vec x(d);
    for (int s = 0; s < n_samples; ++s) {
        const double t = ut(rng);
        for (int i = 0; i < d; ++i) {
            std::uniform_real_distribution<double> ux(p.domain.lo[i], p.domain.hi[i]);
            x[i] = ux(rng);
        }
        Mat a = p.op.second_order(t, x);
        if (!a.isApprox(a.transpose(), 1e-10))
            throw evaluation_error("second-order coefficient not symmetric at sampled point");
        Eigen::SelfAdjointEigenSolver<Mat> es(a);
        const double ev = es.eigenvalues().minCoeff();
        if (ev < rep.worst_eigenvalue) {
            rep.worst_eigenvalue = ev;
            rep.worst_t = t;
            rep.worst_x = x;
        }
    }
    rep.passed = rep.worst_eigenvalue >= lambda - 1e-12;
    return rep;
}

/// Market and utility data of the investment-stopping dual problem, plus
/// the derived transform constants
///   theta = (mu - r)/sigma, rho = 2 beta/theta^2,
///   kappa = (2r - 2 beta)/theta^2 + 1, tau_max = theta^2 T / 2.
struct DualProblemSpec {
    dual::UtilityFamily utility = dual::UtilityFamily::power(0.5);
    double r = 0.05;
    double mu = 0.1;
    double sigma = 0.3;
    double beta = 0.1;
    double floor_k = 1.0;
    double maturity = 1.0;
    double z_lo = -6.0, z_hi = 4.0;

    double theta() const { return (mu - r) / sigma; }
    double rho() const { return 2.0 * beta / (theta() * theta()); }
    double kappa() const { return (2.0 * r - 2.0 * beta) / (theta() * theta()) + 1.0; }
    double tau_max() const { return theta() * theta() * maturity / 2.0; }

    void validate() const {
        if (!(sigma > 0.0)) throw parameter_error("sigma must be > 0");
        if (!(beta > 0.0)) throw parameter_error("beta must be > 0");
        if (!(maturity > 0.0)) throw parameter_error("maturity must be > 0");
        if (mu == r)
            throw parameter_error("mu == r makes theta = 0; the dual transform is undefined");
        if (!(z_lo < z_hi)) throw domain_error("z_lo must be < z_hi");
        if (!std::isfinite(z_lo) || !std::isfinite(z_hi))
            throw domain_error("z box must be finite");
    }
};

/// Transformed dual VI on (tau, z):
///   min{ d v/d tau - v_zz + kappa v_z + rho v,  v - U~_K(e^z) } = 0,
///   v(0,z) = U~_K(e^z),  Dirichlet target U~_K(e^z) on the truncated sides.
inline VIProblem build_dual_investment_problem(const DualProblemSpec& spec) {
    spec.validate();
    VIProblem p;
    Mat a(1, 1); a(0, 0) = 1.0;
    Vec b(1); b[0] = spec.kappa();
    p.op = ParabolicOperator::constant_coeff(a, b, spec.rho());
    const auto util = spec.utility;
    const double k = spec.floor_k;
    p.obstacle.value = [util, k](double, const Vec& z) {
        return dual::dual_utility(util, k, std::exp(z[0]));
    };
    p.obstacle.gradient = [util, k](double, const Vec& z) {
        const double y = std::exp(z[0]);
        Vec g(1);
        g[0] = dual::dual_utility_derivative(util, k, y) * y;
        return g;
    };
    p.boundary_target = p.obstacle;
    p.domain.lo = Vec::Constant(1, spec.z_lo);
    p.domain.hi = Vec::Constant(1, spec.z_hi);
    p.horizon = spec.tau_max();
    p.validate();
    return p;
}

/// American put on the product of d GBM assets.
struct AmericanPutSpec {
    int d = 1;
    double strike = 1.0;
    double maturity = 1.0;
    double rate = 0.05;
    Vec dividend;       // d
    Vec sigma;          // d
    Mat correlation;    // d x d
    Vec s0;             // d
    Box x_box;          // log-price truncation; empty => default 4-sigma box

    static AmericanPutSpec symmetric(int d, double strike, double maturity, double rate,
                                     double div, double vol, double corr, double spot) {
        AmericanPutSpec s;
        s.d = d;
        s.strike = strike;
        s.maturity = maturity;
        s.rate = rate;
        s.dividend = Vec::Constant(d, div);
        s.sigma = Vec::Constant(d, vol);
        s.correlation = Mat::Constant(d, d, corr);
        s.correlation.diagonal().setOnes();
        s.s0 = Vec::Constant(d, spot);
        return s;
    }

    void validate() const {
        if (d < 1) throw parameter_error("asset count must be >= 1");
        if (!(strike > 0.0)) throw parameter_error("strike must be > 0");
        if (!(maturity > 0.0)) throw parameter_error("maturity must be > 0");
        if (dividend.size() != d || sigma.size() != d || s0.size() != d ||
            correlation.rows() != d || correlation.cols() != d)
            throw contract_error("AmericanPutSpec: field dimensions must match d");
        for (int i = 0; i < d; ++i) {
            if (!(sigma[i] > 0.0)) throw parameter_error("all sigma_i must be > 0");
            if (!(s0[i] > 0.0)) throw parameter_error("all s0_i must be > 0");
            if (std::abs(correlation(i, i) - 1.0) > 1e-12)
                throw parameter_error("correlation matrix must have unit diagonal");
        }
        if (!correlation.isApprox(correlation.transpose(), 1e-10))
            throw parameter_error("correlation matrix must be symmetric");
        Eigen::SelfAdjointEigenSolver<Mat> es(correlation);
        if (es.eigenvalues().minCoeff() < -1e-10)
            throw parameter_error("correlation matrix must be positive semidefinite");
    }

    Box default_x_box() const {
        Box b;
        b.lo = Vec(d); b.hi = Vec(d);
        const double st = std::sqrt(maturity);
        for (int i = 0; i < d; ++i) {
            const double c = std::log(s0[i]);
            b.lo[i] = c - 4.0 * sigma[i] * st;
            b.hi[i] = c + 4.0 * sigma[i] * st;
        }
        return b;
    }
};

/// Log-price put VI on the forward clock tau' = T - t:
///   min{ du/dtau' - L_x u + r u, u - g } = 0,  u(0,.) = g,
///   g(x) = (K - exp(sum_i x_i))^+,
///   L_x u = 1/2 sum_ij sigma_i sigma_j rho_ij u_ij + sum_i (r - delta_i - sigma_i^2/2) u_i.
inline VIProblem build_american_put_problem(const AmericanPutSpec& spec) {
    spec.validate();
    VIProblem p;
    const int d = spec.d;
    Mat a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            a(i, j) = 0.5 * spec.sigma[i] * spec.sigma[j] * spec.correlation(i, j);
    Vec b(d);
    for (int i = 0; i < d; ++i)
        b[i] = -(spec.rate - spec.dividend[i] - 0.5 * spec.sigma[i] * spec.sigma[i]);
    p.op = ParabolicOperator::constant_coeff(a, b, spec.rate);
    const double k = spec.strike;
    p.obstacle.value = [k](double, const Vec& x) {
        return std::max(k - std::exp(x.sum()), 0.0);
    };
    p.obstacle.gradient = [k, d](double, const Vec& x) {
        const double prod = std::exp(x.sum());
        return (k - prod > 0.0) ? Vec::Constant(d, -prod).eval() : Vec::Zero(d).eval();
    };
    p.boundary_target = p.obstacle;
    p.domain = spec.x_box.lo.size() == d ? spec.x_box : spec.default_x_box();
    p.horizon = spec.maturity;
    p.validate();
    return p;
}

} // namespace vinn::problems
