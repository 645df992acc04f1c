#include "kolmoparam/gaussian.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace kolmoparam {

namespace {

constexpr double kIntervalFloor = 1e-10;
constexpr double kCachedCutoff = 1e-3;  // below this, fresh quadrature
constexpr double kLocalCutoff = 1e-5;   // below this, endpoint-frozen integrand
constexpr double kLog2Pi = 1.8378770664093454836;

struct GaussLegendreRule {
    std::vector<double> nodes;    // on (-1, 1)
    std::vector<double> weights;
};

/// Nodes by Newton iteration on the Legendre polynomial; cached per order.
const GaussLegendreRule& gauss_legendre(int order) {
    static std::mutex mutex;
    static std::map<int, GaussLegendreRule> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;
    if (order < 1 || order > 256)
        throw std::invalid_argument("gauss_legendre: order out of range");

    GaussLegendreRule rule;
    rule.nodes.resize(static_cast<size_t>(order));
    rule.weights.resize(static_cast<size_t>(order));
    const auto legendre = [order](double x, double& p, double& dp) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= order; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        p = p1;
        dp = order * (x * p1 - p0) / (x * x - 1.0);
    };
    for (int i = 0; i < order; ++i) {
        double x = order == 1 ? 0.0 : std::cos(M_PI * (i + 0.75) / (order + 0.5));
        double p = 0.0, dp = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            legendre(x, p, dp);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        legendre(x, p, dp);
        rule.nodes[static_cast<size_t>(i)] = x;
        rule.weights[static_cast<size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return cache.emplace(order, std::move(rule)).first->second;
}

void check_interval(const LinearizedSystem& lin, double s, double t) {
    if (!(s < t)) throw std::invalid_argument("covariance: need s < t");
    if (t - s < kIntervalFloor)
        throw NumericError("covariance: interval below the evaluation floor");
    const double tol = 1e-9 * std::max(1.0, lin.t_hi - lin.t_lo);
    if (s < lin.t_lo - tol || t > lin.t_hi + tol)
        throw std::invalid_argument("covariance: interval outside the cached span");
}

CovarianceOperator finalize(const LinearizedSystem& lin, double s, double t, Mat K) {
    CovarianceOperator cov;
    cov.s = s;
    cov.t = t;
    cov.n = lin.n;
    cov.d = lin.d;
    cov.raw = std::move(K);

    const double delta = t - s;
    const TimeScaler scaler(lin.n, lin.d, delta);
    cov.scale_diag = scaler.diagonal();
    const Vec inv_diag = cov.scale_diag.cwiseInverse();
    cov.rescaled = delta * inv_diag.asDiagonal() * cov.raw * inv_diag.asDiagonal();
    // Symmetrize away quadrature roundoff before factorizing.
    cov.rescaled = 0.5 * (cov.rescaled + cov.rescaled.transpose()).eval();

    cov.chol.compute(cov.rescaled);
    if (cov.chol.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Mat> es(cov.rescaled);
        throw NumericError("covariance: rescaled matrix not positive definite, min eigenvalue " +
                           std::to_string(es.eigenvalues().minCoeff()));
    }
    cov.log_det_rescaled = 0.0;
    const Mat& L = cov.chol.matrixLLT();
    for (Eigen::Index i = 0; i < L.rows(); ++i)
        cov.log_det_rescaled += 2.0 * std::log(L(i, i));
    return cov;
}

}  // namespace

double CovarianceOperator::log_det() const {
    // det K = det K_hat * (t-s)^{n^2 d}
    return log_det_rescaled +
           static_cast<double>(n) * n * d * std::log(interval());
}

double CovarianceOperator::quad_form(const Vec& u) const {
    const Vec uh = u.cwiseQuotient(scale_diag);
    const Mat& L = chol.matrixLLT();
    const Vec w = L.triangularView<Eigen::Lower>().solve(uh);
    return interval() * w.squaredNorm();
}

Vec CovarianceOperator::solve(const Vec& u) const {
    const Vec uh = u.cwiseQuotient(scale_diag);
    return interval() * chol.solve(uh).cwiseQuotient(scale_diag);
}

Mat CovarianceOperator::inverse() const {
    const Eigen::Index m = rescaled.rows();
    const Mat khat_inv = chol.solve(Mat::Identity(m, m));
    const Vec inv_diag = scale_diag.cwiseInverse();
    return interval() * inv_diag.asDiagonal() * khat_inv * inv_diag.asDiagonal();
}

Vec CovarianceOperator::sample(RngStream& rng) const {
    Vec xi(rescaled.rows());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
    const Mat& L = chol.matrixLLT();
    const Vec w = L.triangularView<Eigen::Lower>() * xi;
    return scale_diag.cwiseProduct(w) / std::sqrt(interval());
}

CovarianceOperator covariance(const LinearizedSystem& lin, double s, double t, int quad_order) {
    check_interval(lin, s, t);
    const GaussLegendreRule& rule = gauss_legendre(quad_order);
    const int nd = lin.n * lin.d;
    const int d = lin.d;

    // Very short intervals: assembling R(t,u) as phi(t) phi^{-1}(u) subtracts
    // O(1) quantities, and the interpolation noise then buries the
    // I + (t-u) J structure the rescaled matrix depends on.  Build the
    // integrand directly from the endpoint-frozen expansion instead: every
    // term is (t-u)-scaled, so nothing cancels, and the truncated
    // exponential series is exact to far below the O(t-s) freeze error.
    if (t - s < kLocalCutoff) {
        const Mat jac = lin.jac_at(t);
        const Mat a_mid = lin.a_at(0.5 * (s + t));
        Mat core = Mat::Zero(nd, nd);
        const double half = 0.5 * (t - s);
        const double mid = 0.5 * (s + t);
        for (size_t q = 0; q < rule.nodes.size(); ++q) {
            const double delta = t - (mid + half * rule.nodes[q]);
            Mat r = Mat::Identity(nd, nd);
            Mat pw = Mat::Identity(nd, nd);
            for (int m = 1; m <= lin.n + 2; ++m) {
                pw = (delta / m) * (jac * pw);
                r += pw;
            }
            const Mat g = r.leftCols(d);
            core.noalias() += (half * rule.weights[q]) * (g * a_mid * g.transpose());
        }
        return finalize(lin, s, t, core);
    }

    // Panels follow the cache grid so each panel sees a single polynomial
    // piece of the interpolants; order 8 and 16 then agree to roundoff.
    Mat core = Mat::Zero(nd, nd);
    const double eps = 1e-12 * std::max(1.0, lin.t_hi - lin.t_lo);
    int j_lo = static_cast<int>(std::ceil((s - lin.t_lo) / lin.step - 1e-9));
    int j_hi = static_cast<int>(std::floor((t - lin.t_lo) / lin.step + 1e-9));
    j_lo = std::clamp(j_lo, 0, lin.node_count() - 1);
    j_hi = std::clamp(j_hi, 0, lin.node_count() - 1);

    std::vector<std::pair<double, double>> panels;
    double cursor = s;
    for (int j = j_lo; j <= j_hi; ++j) {
        const double node = lin.t_lo + j * lin.step;
        if (node > cursor + eps && node < t - eps) {
            panels.emplace_back(cursor, node);
            cursor = node;
        }
    }
    panels.emplace_back(cursor, t);

    for (const auto& [a, b] : panels) {
        const double half = 0.5 * (b - a);
        const double mid = 0.5 * (a + b);
        for (size_t q = 0; q < rule.nodes.size(); ++q) {
            const double u = mid + half * rule.nodes[q];
            const Mat g = lin.phi_inv_at(u).leftCols(d);
            core.noalias() += (half * rule.weights[q]) * (g * lin.a_at(u) * g.transpose());
        }
    }
    const Mat pt = lin.phi_at(t);
    return finalize(lin, s, t, pt * core * pt.transpose());
}

CovarianceOperator covariance_cached(const LinearizedSystem& lin, double s, double t) {
    check_interval(lin, s, t);
    // The running-integral difference cancels catastrophically on short
    // intervals: the level-i block of the difference shrinks like
    // (t-s)^{2i-1} while the two core values stay O(1), so below the cutoff
    // the subtraction has no correct digits left and the rescaled matrix
    // loses positive definiteness.  Integrate freshly there instead.
    if (t - s < kCachedCutoff) return covariance(lin, s, t, 16);
    const Mat pt = lin.phi_at(t);
    const Mat core = lin.cov_core_at(t) - lin.cov_core_at(s);
    return finalize(lin, s, t, pt * core * pt.transpose());
}

double gsp_constant(const CovarianceOperator& cov) {
    Eigen::SelfAdjointEigenSolver<Mat> es(cov.rescaled);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0))
        throw NumericError("gsp_constant: rescaled covariance not positive definite");
    return std::max({hi, 1.0 / lo, 1.0});
}

double gaussian_density(const CovarianceOperator& cov, const Vec& mean, const Vec& z) {
    const double q = cov.quad_form(mean - z);
    const int nd = cov.n * cov.d;
    return std::exp(-0.5 * (nd * kLog2Pi + cov.log_det() + q));
}

DensityEstimate frozen_density(const LinearizedSystem& lin, double s, double t, const Vec& x,
                               const Vec& z, int quad_order) {
    if (t - s < kIntervalFloor)
        throw NumericError("frozen_density: interval below the evaluation floor");
    const CovarianceOperator cov =
        quad_order <= 0 ? covariance_cached(lin, s, t) : covariance(lin, s, t, quad_order);
    const Vec mean = linearized_flow(lin, s, t, x);
    DensityEstimate est;
    est.value = gaussian_density(cov, mean, z);
    est.std_error = 0.0;
    est.provenance = Provenance::ClosedForm;
    return est;
}

DensityDerivatives frozen_density_derivatives(const LinearizedSystem& lin, double s, double t,
                                              const Vec& x, const Vec& z, int quad_order) {
    if (t - s < kIntervalFloor)
        throw NumericError("frozen_density_derivatives: interval below the evaluation floor");
    const CovarianceOperator cov =
        quad_order <= 0 ? covariance_cached(lin, s, t) : covariance(lin, s, t, quad_order);
    const Vec mean = linearized_flow(lin, s, t, x);
    const Mat R = resolvent(lin, t, s);
    const Vec u = mean - z;
    const Vec w = cov.solve(u);          // K^{-1}(m - z)
    const double p = gaussian_density(cov, mean, z);

    DensityDerivatives out;
    out.value = p;
    out.gradient = -(R.transpose() * w) * p;
    const Mat r1 = R.leftCols(lin.d);    // first d columns: x_1 sensitivity
    const Vec rw = r1.transpose() * w;
    const Mat kinv_r1 = cov.inverse() * r1;
    out.hessian_block = (rw * rw.transpose() - r1.transpose() * kinv_r1) * p;
    return out;
}

double density_bound_constant(const ChainModel& model, double T,
                              const std::vector<DensityBoundPoint>& grid,
                              const FlowOptions& opts) {
    double constant = 1.0;
    for (const auto& pt : grid) {
        if (!(pt.t < T)) throw std::invalid_argument("density_bound_constant: need t < T");
        const double delta = T - pt.t;
        const LinearizedSystem lin = linearize(model, T, pt.y, pt.t, opts);
        const double p = frozen_density(lin, pt.t, T, pt.x, pt.y).value;
        const TimeScaler scaler = model.scale(delta);
        const double q = scaler.rescaled_sqnorm(pt.x - lin.theta_at(pt.t));
        const double target = p * std::pow(delta, model.n * model.n * model.d / 2.0);
        // C exp(-q / C) grows in C; the smallest admissible C per point.
        double lo = 1.0, hi = 1.0;
        const auto value = [q](double c) { return c * std::exp(-q / c); };
        if (value(1.0) < target) {
            hi = 2.0;
            while (value(hi) < target) {
                hi *= 2.0;
                if (hi > 1e12) throw NumericError("density_bound_constant: no finite constant");
            }
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                (value(mid) < target ? lo : hi) = mid;
            }
        }
        constant = std::max(constant, hi);
    }
    return constant;
}

DiagGaussian scaled_proposal(const Vec& center, int n, int d, double delta, double inflation) {
    DiagGaussian g;
    g.mean = center;
    g.sd.resize(n * d);
    double power = 1.0 / delta;  // builds delta^{2i-1} per block
    for (int i = 0; i < n; ++i) {
        power *= delta * delta;
        g.sd.segment(i * d, d).setConstant(std::sqrt(inflation * power));
    }
    return g;
}

}  // namespace kolmoparam
