#pragma once

#include "kolmoparam/types.hpp"

#include <cmath>
#include <stdexcept>

namespace kolmoparam {

/// Block-diagonal dilation acting on chain states: block i (1-based) of an
/// n*d vector is multiplied by t^i. Captures the intrinsic fluctuation order
/// of each level of the chain over a window of length t.
class TimeScaler {
public:
    TimeScaler(int n, int d, double t) : n_(n), d_(d), t_(t) {
        if (n < 1 || d < 1) throw std::invalid_argument("TimeScaler: n, d must be >= 1");
        if (!(t > 0.0)) throw std::invalid_argument("TimeScaler: t must be positive");
    }

    int n() const { return n_; }
    int d() const { return d_; }
    double t() const { return t_; }

    Vec apply(const Vec& v) const { return powers(v, +1); }
    Vec apply_inverse(const Vec& v) const { return powers(v, -1); }

    /// t * |T_t^{-1} v|^2, the squared norm in intrinsic coordinates.
    double rescaled_sqnorm(const Vec& v) const {
        const Vec w = apply_inverse(v);
        return t_ * w.squaredNorm();
    }

    /// Diagonal of the dilation as a vector (block i constant t^i).
    Vec diagonal() const {
        Vec diag(n_ * d_);
        double p = 1.0;
        for (int i = 0; i < n_; ++i) {
            p *= t_;
            diag.segment(i * d_, d_).setConstant(p);
        }
        return diag;
    }

private:
    Vec powers(const Vec& v, int sign) const {
        if (v.size() != n_ * d_)
            throw std::invalid_argument("TimeScaler: vector has wrong dimension");
        Vec out(v.size());
        double p = 1.0;
        for (int i = 0; i < n_; ++i) {
            p *= t_;
            const double f = sign > 0 ? p : 1.0 / p;
            out.segment(i * d_, d_) = v.segment(i * d_, d_) * f;
        }
        return out;
    }

    int n_;
    int d_;
    double t_;
};

}  // namespace kolmoparam
