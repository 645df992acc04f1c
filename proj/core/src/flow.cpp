#include "kolmoparam/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kolmoparam {

namespace {

/// One RK4 step of x' = f(u, x) from u with increment h (sign carries direction).
template <typename F>
Vec rk4_step(const F& f, double u, double h, const Vec& x) {
    const Vec k1 = f(u, x);
    const Vec k2 = f(u + 0.5 * h, x + (0.5 * h) * k1);
    const Vec k3 = f(u + 0.5 * h, x + (0.5 * h) * k2);
    const Vec k4 = f(u + h, x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vec integrate_drift(const ChainModel& model, double from, double to, Vec x,
                    const FlowOptions& opts) {
    if (from == to) return x;
    const int steps = opts.steps_for(std::abs(to - from));
    const double h = (to - from) / steps;
    const auto f = [&model](double u, const Vec& v) { return model.drift_full(u, v); };
    double u = from;
    for (int k = 0; k < steps; ++k) {
        x = rk4_step(f, u, h, x);
        u = from + (k + 1) * h;
        if (!x.allFinite()) throw NumericError("flow integration left the finite range");
    }
    return x;
}

/// Cubic Lagrange interpolation on a uniform grid, one-sided at the ends.
/// Exact node hits return the cached value bit for bit.
template <typename T>
T interp4(const std::vector<T>& values, double t_lo, double step, double u) {
    const int m = static_cast<int>(values.size()) - 1;
    double pos = (u - t_lo) / step;
    const double snap = std::round(pos);
    if (std::abs(pos - snap) < 1e-9 && snap >= 0.0 && snap <= m)
        return values[static_cast<size_t>(snap)];
    if (pos < -1e-9 || pos > m + 1e-9)
        throw std::invalid_argument("interpolation query outside the cached span");
    pos = std::clamp(pos, 0.0, static_cast<double>(m));
    int base = static_cast<int>(std::floor(pos)) - 1;
    base = std::clamp(base, 0, m - 3);
    const double s = pos - base;
    const double w0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0;
    const double w1 = s * (s - 2.0) * (s - 3.0) / 2.0;
    const double w2 = -s * (s - 1.0) * (s - 3.0) / 2.0;
    const double w3 = s * (s - 1.0) * (s - 2.0) / 6.0;
    return w0 * values[static_cast<size_t>(base)] + w1 * values[static_cast<size_t>(base + 1)] +
           w2 * values[static_cast<size_t>(base + 2)] + w3 * values[static_cast<size_t>(base + 3)];
}

}  // namespace

int FlowOptions::steps_for(double span) const {
    const double raw = std::ceil(span * steps_per_unit);
    return static_cast<int>(std::clamp(raw, static_cast<double>(min_steps),
                                       static_cast<double>(max_steps)));
}

Vec forward_flow(const ChainModel& model, double s, double t, const Vec& x,
                 const FlowOptions& opts) {
    if (t < s) throw std::invalid_argument("forward_flow: need t >= s");
    return integrate_drift(model, s, t, x, opts);
}

Vec backward_flow(const ChainModel& model, double T, double s, const Vec& y,
                  const FlowOptions& opts) {
    if (s > T) throw std::invalid_argument("backward_flow: need s <= T");
    return integrate_drift(model, T, s, y, opts);
}

LinearizedSystem linearize(const ChainModel& model, double freeze_time, const Vec& freeze_point,
                           double t_lo, double t_hi, const FlowOptions& opts) {
    if (!(t_lo < t_hi)) throw std::invalid_argument("linearize: need t_lo < t_hi");
    if (freeze_point.size() != model.dim())
        throw std::invalid_argument("linearize: freeze point has wrong dimension");
    const double span = t_hi - t_lo;
    const double tol = 1e-12 * std::max(1.0, span);
    const bool anchored_right = std::abs(freeze_time - t_hi) <= tol;
    const bool anchored_left = std::abs(freeze_time - t_lo) <= tol;
    if (!anchored_right && !anchored_left)
        throw std::invalid_argument("linearize: anchor must sit at an end of the span");

    LinearizedSystem lin;
    lin.n = model.n;
    lin.d = model.d;
    lin.freeze_time = freeze_time;
    lin.freeze_point = freeze_point;
    lin.t_lo = t_lo;
    lin.t_hi = t_hi;

    const int steps = opts.steps_for(span);
    lin.step = span / steps;
    const auto node_time = [&](int j) { return t_lo + j * lin.step; };

    // Reference path integrated away from the anchor, one RK4 step per node.
    lin.theta.assign(static_cast<size_t>(steps + 1), Vec());
    const auto f = [&model](double u, const Vec& v) { return model.drift_full(u, v); };
    if (anchored_right) {
        lin.theta[static_cast<size_t>(steps)] = freeze_point;
        for (int j = steps; j > 0; --j)
            lin.theta[static_cast<size_t>(j - 1)] =
                rk4_step(f, node_time(j), -lin.step, lin.theta[static_cast<size_t>(j)]);
    } else {
        lin.theta[0] = freeze_point;
        for (int j = 0; j < steps; ++j)
            lin.theta[static_cast<size_t>(j + 1)] =
                rk4_step(f, node_time(j), lin.step, lin.theta[static_cast<size_t>(j)]);
    }
    for (const Vec& v : lin.theta)
        if (!v.allFinite()) throw NumericError("linearize: reference path left the finite range");

    const int nd = model.dim();
    lin.drift_ref.resize(lin.theta.size());
    lin.jac_ref.resize(lin.theta.size());
    lin.a_ref.resize(lin.theta.size());
    for (int j = 0; j <= steps; ++j) {
        const double u = node_time(j);
        const Vec& th = lin.theta[static_cast<size_t>(j)];
        lin.drift_ref[static_cast<size_t>(j)] = model.drift_full(u, th);
        lin.jac_ref[static_cast<size_t>(j)] = drift_jacobian(model, u, th);
        lin.a_ref[static_cast<size_t>(j)] = model.diffusion_a(u, th);
    }

    // Fundamental matrix by RK4 with the Jacobian interpolated at half nodes.
    lin.phi.assign(lin.theta.size(), Mat());
    lin.phi_inv.assign(lin.theta.size(), Mat());
    lin.phi[0] = Mat::Identity(nd, nd);
    for (int j = 0; j < steps; ++j) {
        const Mat& a0 = lin.jac_ref[static_cast<size_t>(j)];
        const Mat amid = interp4(lin.jac_ref, t_lo, lin.step, node_time(j) + 0.5 * lin.step);
        const Mat& a1 = lin.jac_ref[static_cast<size_t>(j + 1)];
        const Mat& p = lin.phi[static_cast<size_t>(j)];
        const double h = lin.step;
        const Mat k1 = a0 * p;
        const Mat k2 = amid * (p + (0.5 * h) * k1);
        const Mat k3 = amid * (p + (0.5 * h) * k2);
        const Mat k4 = a1 * (p + h * k3);
        lin.phi[static_cast<size_t>(j + 1)] = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    for (size_t j = 0; j < lin.phi.size(); ++j)
        lin.phi_inv[j] = lin.phi[j].partialPivLu().inverse();

    // Running integral of Phi^{-1} B a B^T Phi^{-T}: the core of every
    // covariance over a subinterval. Simpson per grid cell matches the RK4
    // order of the rest of the cache.
    const int d = model.d;
    const auto core_integrand = [&](double u) -> Mat {
        const Mat g = interp4(lin.phi_inv, t_lo, lin.step, u).leftCols(d);
        return g * interp4(lin.a_ref, t_lo, lin.step, u) * g.transpose();
    };
    lin.cov_core.assign(lin.theta.size(), Mat());
    lin.cov_core[0] = Mat::Zero(nd, nd);
    Mat right = lin.phi_inv[0].leftCols(d) * lin.a_ref[0] *
                lin.phi_inv[0].leftCols(d).transpose();
    for (int j = 0; j < steps; ++j) {
        const Mat left = right;
        const Mat mid = core_integrand(node_time(j) + 0.5 * lin.step);
        right = lin.phi_inv[static_cast<size_t>(j + 1)].leftCols(d) *
                lin.a_ref[static_cast<size_t>(j + 1)] *
                lin.phi_inv[static_cast<size_t>(j + 1)].leftCols(d).transpose();
        lin.cov_core[static_cast<size_t>(j + 1)] =
            lin.cov_core[static_cast<size_t>(j)] +
            (lin.step / 6.0) * (left + 4.0 * mid + right);
    }
    return lin;
}

LinearizedSystem linearize(const ChainModel& model, double freeze_time, const Vec& freeze_point,
                           double t_lo, const FlowOptions& opts) {
    return linearize(model, freeze_time, freeze_point, t_lo, freeze_time, opts);
}

Vec LinearizedSystem::theta_at(double u) const { return interp4(theta, t_lo, step, u); }
Vec LinearizedSystem::drift_at(double u) const { return interp4(drift_ref, t_lo, step, u); }
Mat LinearizedSystem::jac_at(double u) const { return interp4(jac_ref, t_lo, step, u); }
Mat LinearizedSystem::a_at(double u) const { return interp4(a_ref, t_lo, step, u); }
Mat LinearizedSystem::phi_at(double u) const { return interp4(phi, t_lo, step, u); }
Mat LinearizedSystem::phi_inv_at(double u) const { return interp4(phi_inv, t_lo, step, u); }
Mat LinearizedSystem::cov_core_at(double u) const { return interp4(cov_core, t_lo, step, u); }

Mat resolvent(const LinearizedSystem& lin, double t, double s) {
    if (t == s) return Mat::Identity(lin.n * lin.d, lin.n * lin.d);
    return lin.phi_at(t) * lin.phi_inv_at(s);
}

Vec linearized_flow(const LinearizedSystem& lin, double s, double t, const Vec& x) {
    if (x.size() != lin.n * lin.d)
        throw std::invalid_argument("linearized_flow: point has wrong dimension");
    if (t == s) return x;
    return lin.theta_at(t) + resolvent(lin, t, s) * (x - lin.theta_at(s));
}

FlowEquivalence flow_equivalence_constant(const ChainModel& model, double T,
                                          const std::vector<FlowGapTriple>& grid,
                                          const FlowOptions& opts) {
    FlowEquivalence out;
    for (const auto& triple : grid) {
        if (!(triple.t < T))
            throw std::invalid_argument("flow_equivalence_constant: need t < T");
        const double delta = T - triple.t;
        const TimeScaler scaler = model.scale(delta);
        const LinearizedSystem lin = linearize(model, T, triple.y, triple.t, opts);

        const Vec backward_gap = triple.x - lin.theta_at(triple.t);
        const Vec forward_gap = linearized_flow(lin, triple.t, T, triple.x) - triple.y;
        const double b = scaler.apply_inverse(backward_gap).norm();
        const double a = scaler.apply_inverse(forward_gap).norm();
        if (a < 1e-12 && b < 1e-12) continue;
        if (a < 1e-12 || b < 1e-12) {
            out.degenerate = true;
            continue;
        }
        const double ratio = a / b;
        out.constant = std::max({out.constant, ratio, 1.0 / ratio});
        ++out.used;
    }
    return out;
}

}  // namespace kolmoparam
