#pragma once

#include "kolmoparam/model.hpp"
#include "kolmoparam/types.hpp"

#include <vector>

namespace kolmoparam {

/// Fixed-step RK4 resolution for flows and cached linearizations.
struct FlowOptions {
    double steps_per_unit = 1000.0;
    int min_steps = 16;
    int max_steps = 4000000;

    int steps_for(double span) const;
};

/// Transport of x from time s to time t (t >= s) along dx/du = F(u, x).
Vec forward_flow(const ChainModel& model, double s, double t, const Vec& x,
                 const FlowOptions& opts = {});

/// Transport of y from time T backwards to time s <= T; the point whose
/// forward flow over [s, T] ends at y.
Vec backward_flow(const ChainModel& model, double T, double s, const Vec& y,
                  const FlowOptions& opts = {});

/// Dynamics frozen along the reference trajectory through (anchor_time,
/// anchor_point). Caches the reference path, drift, subdiagonal Jacobian,
/// diffusion coefficient and the fundamental matrix Phi(u) = R(u, t_lo) on a
/// uniform grid over [t_lo, t_hi]; intermediate times are served by cubic
/// interpolation. The anchor must be one of the span's endpoints.
struct LinearizedSystem {
    int n = 0;
    int d = 0;
    double freeze_time = 0.0;
    Vec freeze_point;
    double t_lo = 0.0;
    double t_hi = 0.0;
    double step = 0.0;

    std::vector<Vec> theta;      // reference path at nodes
    std::vector<Vec> drift_ref;  // F(u, theta(u))
    std::vector<Mat> jac_ref;    // DF(u, theta(u)), nd x nd subdiagonal
    std::vector<Mat> a_ref;      // sigma sigma^T at theta(u), d x d
    std::vector<Mat> phi;        // Phi(u) = R(u, t_lo)
    std::vector<Mat> phi_inv;
    std::vector<Mat> cov_core;   // int_{t_lo}^u Phi^{-1} B a B^T Phi^{-T}, Simpson on the grid

    int node_count() const { return static_cast<int>(theta.size()); }

    Vec theta_at(double u) const;
    Vec drift_at(double u) const;
    Mat jac_at(double u) const;
    Mat a_at(double u) const;
    Mat phi_at(double u) const;
    Mat phi_inv_at(double u) const;
    Mat cov_core_at(double u) const;
};

LinearizedSystem linearize(const ChainModel& model, double freeze_time, const Vec& freeze_point,
                           double t_lo, double t_hi, const FlowOptions& opts = {});

/// Span [t_lo, freeze_time] with the anchor at the right end: the backward
/// frozen system used by the kernel and density evaluations.
LinearizedSystem linearize(const ChainModel& model, double freeze_time, const Vec& freeze_point,
                           double t_lo, const FlowOptions& opts = {});

/// Resolvent R(t, s) of the frozen subdiagonal Jacobian: solves
/// dR/dt = DF(t, theta(t)) R with R(s, s) = I. Identity is exact at t == s.
Mat resolvent(const LinearizedSystem& lin, double t, double s);

/// Affine flow of the frozen dynamics: value at t of the solution through
/// (s, x). Coincides with theta(t) + R(t, s)(x - theta(s)).
Vec linearized_flow(const LinearizedSystem& lin, double s, double t, const Vec& x);

/// Empirical two-sided constant comparing the rescaled backward gap
/// |T_{T-t}^{-1}(x - theta_{t,T}(y))| with the rescaled affine forward gap
/// |T_{T-t}^{-1}(affine_{T,t}(x) - y)| over a grid of (t, x, y) triples.
struct FlowEquivalence {
    double constant = 1.0;  // max over the grid of max(ratio, 1/ratio)
    bool degenerate = false;  // one gap vanished while the other did not
    std::size_t used = 0;     // triples that entered the maximum
};

struct FlowGapTriple {
    double t;
    Vec x;
    Vec y;
};

FlowEquivalence flow_equivalence_constant(const ChainModel& model, double T,
                                          const std::vector<FlowGapTriple>& grid,
                                          const FlowOptions& opts = {});

}  // namespace kolmoparam
