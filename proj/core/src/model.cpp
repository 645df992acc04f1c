#include "kolmoparam/model.hpp"

#include "kolmoparam/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace kolmoparam {

namespace {

double param_or(const std::map<std::string, double>& params, const std::string& key,
                double fallback) {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

int int_param(const std::map<std::string, double>& params, const std::string& key, int fallback) {
    const double v = param_or(params, key, static_cast<double>(fallback));
    const int n = static_cast<int>(std::llround(v));
    if (std::abs(v - n) > 1e-9)
        throw std::invalid_argument("model parameter '" + key + "' must be an integer");
    return n;
}

ChainModel elliptic_preset(const std::map<std::string, double>& params, double eta) {
    ChainModel m;
    m.n = 1;
    m.d = int_param(params, "d", 1);
    if (m.d < 1) throw std::invalid_argument("elliptic: d must be >= 1");
    const double sigma0 = param_or(params, "sigma", 1.0);
    const double amp = param_or(params, "amp", 0.0);
    const double center = param_or(params, "center", 0.0);
    if (sigma0 < 0.0 || amp < 0.0) throw std::invalid_argument("elliptic: sigma, amp must be >= 0");
    m.name = "elliptic";
    const int d = m.d;
    m.drift.push_back([d](double, const Vec&) { return Vec::Zero(d); });
    // Scalar coefficient sigma0^2 + amp * min(1, |x - c|^eta): exactly
    // eta-Hoelder at the center point, bounded above by sigma0^2 + amp.
    m.sigma = [d, sigma0, amp, center, eta](double, const Vec& x) -> Mat {
        const double r = (x - Vec::Constant(x.size(), center)).norm();
        const double a = sigma0 * sigma0 + amp * std::min(1.0, std::pow(r, eta));
        return std::sqrt(a) * Mat::Identity(d, d);
    };
    m.jacobian.resize(1);
    return m;
}

ChainModel kolmogorov_preset(const std::map<std::string, double>& params) {
    ChainModel m;
    m.n = int_param(params, "n", 2);
    m.d = int_param(params, "d", 1);
    if (m.n < 2 || m.d < 1) throw std::invalid_argument("kolmogorov-chain: need n >= 2, d >= 1");
    const double sigma0 = param_or(params, "sigma", 1.0);
    if (sigma0 <= 0.0) throw std::invalid_argument("kolmogorov-chain: sigma must be positive");
    m.name = "kolmogorov-chain";
    const int d = m.d;
    m.drift.push_back([d](double, const Vec&) { return Vec::Zero(d); });
    for (int i = 1; i < m.n; ++i) {
        const int src = (i - 1) * d;
        m.drift.push_back([src, d](double, const Vec& x) { return x.segment(src, d).eval(); });
    }
    m.sigma = [d, sigma0](double, const Vec&) -> Mat { return sigma0 * Mat::Identity(d, d); };
    m.jacobian.resize(static_cast<size_t>(m.n));
    for (int i = 1; i < m.n; ++i)
        m.jacobian[static_cast<size_t>(i)] = [d](double, const Vec&) -> Mat {
            return Mat::Identity(d, d);
        };
    return m;
}

ChainModel langevin_preset(const std::map<std::string, double>& params) {
    ChainModel m;
    m.n = 2;
    m.d = int_param(params, "d", 1);
    if (m.d < 1) throw std::invalid_argument("langevin: d must be >= 1");
    const double gamma = param_or(params, "gamma", 1.0);
    const double omega = param_or(params, "omega", 1.0);
    const double sigma0 = param_or(params, "sigma", 1.0);
    if (sigma0 <= 0.0) throw std::invalid_argument("langevin: sigma must be positive");
    m.name = "langevin";
    const int d = m.d;
    // Velocity block feels friction and the restoring force, position block
    // integrates the velocity.
    m.drift.push_back([d, gamma, omega](double, const Vec& x) {
        return (-gamma * x.segment(0, d) - omega * omega * x.segment(d, d)).eval();
    });
    m.drift.push_back([d](double, const Vec& x) { return x.segment(0, d).eval(); });
    m.sigma = [d, sigma0](double, const Vec&) -> Mat { return sigma0 * Mat::Identity(d, d); };
    m.jacobian.resize(2);
    m.jacobian[1] = [d](double, const Vec&) -> Mat { return Mat::Identity(d, d); };
    return m;
}

ChainModel perturbed_chain_preset(const std::map<std::string, double>& params) {
    ChainModel m;
    m.n = int_param(params, "n", 2);
    m.d = int_param(params, "d", 1);
    if (m.n < 2 || m.d < 1) throw std::invalid_argument("perturbed-chain: need n >= 2, d >= 1");
    const double sigma0 = param_or(params, "sigma", 1.0);
    const double amp = param_or(params, "amp", 0.1);
    const double drift_amp = param_or(params, "drift_amp", 0.0);
    if (sigma0 <= 0.0) throw std::invalid_argument("perturbed-chain: sigma must be positive");
    if (amp < 0.0 || drift_amp < 0.0 || drift_amp >= 1.0)
        throw std::invalid_argument("perturbed-chain: need amp >= 0 and drift_amp in [0, 1)");
    m.name = "perturbed-chain";
    const int d = m.d;
    m.drift.push_back([d](double, const Vec&) { return Vec::Zero(d); });
    for (int i = 1; i < m.n; ++i) {
        const int src = (i - 1) * d;
        m.drift.push_back([src, d, drift_amp](double, const Vec& x) {
            Vec v = x.segment(src, d);
            if (drift_amp != 0.0)
                for (int l = 0; l < d; ++l) v[l] += drift_amp * std::sin(v[l]);
            return v;
        });
    }
    // Bounded smooth bump on top of the flat coefficient, 1 <= a/sigma0^2 <= 1 + amp.
    m.sigma = [d, sigma0, amp](double, const Vec& x) -> Mat {
        const double a = sigma0 * sigma0 + amp / (1.0 + x.squaredNorm());
        return std::sqrt(a) * Mat::Identity(d, d);
    };
    m.jacobian.resize(static_cast<size_t>(m.n));
    for (int i = 1; i < m.n; ++i) {
        const int src = (i - 1) * d;
        m.jacobian[static_cast<size_t>(i)] = [src, d, drift_amp](double, const Vec& x) -> Mat {
            Mat j = Mat::Identity(d, d);
            if (drift_amp != 0.0)
                for (int l = 0; l < d; ++l) j(l, l) += drift_amp * std::cos(x[src + l]);
            return j;
        };
    }
    return m;
}

}  // namespace

ChainModel build_model(const ModelSpec& spec) {
    const double eta = spec.eta.value_or(1.0);
    if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in (0, 1]");

    ChainModel m;
    if (spec.preset == "elliptic") {
        m = elliptic_preset(spec.params, eta);
    } else if (spec.preset == "kolmogorov-chain") {
        m = kolmogorov_preset(spec.params);
    } else if (spec.preset == "langevin") {
        m = langevin_preset(spec.params);
    } else if (spec.preset == "perturbed-chain") {
        m = perturbed_chain_preset(spec.params);
    } else {
        throw std::invalid_argument("unknown model preset '" + spec.preset + "'");
    }
    m.eta = eta;
    m.horizon = spec.horizon.value_or(1.0);
    if (!(m.horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    verify_structure(m);
    return m;
}

ChainModel build_model(const std::string& preset, const std::map<std::string, double>& params) {
    ModelSpec spec;
    spec.preset = preset;
    spec.params = params;
    return build_model(spec);
}

void verify_structure(const ChainModel& model) {
    if (model.n < 1 || model.d < 1) throw std::invalid_argument("model: n, d must be >= 1");
    if (static_cast<int>(model.drift.size()) != model.n)
        throw std::invalid_argument("model: expected one drift block per level");
    if (!model.sigma) throw std::invalid_argument("model: missing diffusion coefficient");

    const int nd = model.dim();
    RngStream rng(0x5EEDFACEull, 0);
    std::vector<Vec> probes;
    probes.push_back(Vec::Zero(nd));
    probes.push_back(Vec::Ones(nd));
    for (int k = 0; k < 3; ++k) {
        Vec x(nd);
        for (int j = 0; j < nd; ++j) x[j] = 2.0 * rng.normal();
        probes.push_back(x);
    }
    const double t_probe[] = {0.0, 0.37 * model.horizon, model.horizon};

    for (const Vec& x : probes) {
        for (double t : t_probe) {
            for (int i = 0; i < model.n; ++i) {
                const Vec base = model.drift[static_cast<size_t>(i)](t, x);
                if (base.size() != model.d)
                    throw std::invalid_argument("model: drift block has wrong dimension");
                if (!base.allFinite())
                    throw NumericError("model: drift produced a non-finite value");
                // Levels below i-1 must be invisible to F_{i+1}, bit for bit.
                for (int j = 0; j + 1 < i; ++j) {
                    Vec perturbed = x;
                    perturbed.segment(j * model.d, model.d).array() += 0.731 + j;
                    const Vec moved = model.drift[static_cast<size_t>(i)](t, perturbed);
                    if ((moved.array() != base.array()).any())
                        throw std::invalid_argument(
                            "model: drift of level " + std::to_string(i + 1) +
                            " reads level " + std::to_string(j + 1));
                }
            }
            const Mat s = model.sigma(t, x);
            if (s.rows() != model.d || s.cols() != model.d)
                throw std::invalid_argument("model: sigma has wrong dimensions");
            if (!s.allFinite()) throw NumericError("model: sigma produced a non-finite value");
        }
    }
}

Mat jacobian_block(const ChainModel& model, int level, double t, const Vec& x) {
    if (level < 2 || level > model.n)
        throw std::invalid_argument("jacobian_block: level must lie in [2, n]");
    const int i = level - 1;  // 0-based drift index
    if (model.jacobian.size() > static_cast<size_t>(i) && model.jacobian[static_cast<size_t>(i)])
        return model.jacobian[static_cast<size_t>(i)](t, x);

    const int d = model.d;
    const int base = (i - 1) * d;
    const double h = 1e-6 * std::max(1.0, x.segment(base, d).norm());
    Mat block(d, d);
    Vec xp = x, xm = x;
    for (int c = 0; c < d; ++c) {
        xp[base + c] += h;
        xm[base + c] -= h;
        block.col(c) = (model.drift[static_cast<size_t>(i)](t, xp) -
                        model.drift[static_cast<size_t>(i)](t, xm)) /
                       (2.0 * h);
        xp[base + c] = x[base + c];
        xm[base + c] = x[base + c];
    }
    return block;
}

Mat drift_jacobian(const ChainModel& model, double t, const Vec& x) {
    const int nd = model.dim();
    Mat full = Mat::Zero(nd, nd);
    for (int level = 2; level <= model.n; ++level) {
        full.block((level - 1) * model.d, (level - 2) * model.d, model.d, model.d) =
            jacobian_block(model, level, t, x);
    }
    return full;
}

AssumptionReport validate_assumptions(const ChainModel& model, uint64_t budget, uint64_t seed,
                                      double threshold) {
    if (budget < 100) throw std::invalid_argument("validate_assumptions: budget must be >= 100");
    AssumptionReport report;
    report.budget = budget;
    report.seed = seed;
    report.threshold = threshold;
    report.lipschitz.assign(static_cast<size_t>(model.n), 0.0);
    report.nd_min_singular.assign(static_cast<size_t>(std::max(0, model.n - 1)),
                                  std::numeric_limits<double>::infinity());
    report.lambda_min = std::numeric_limits<double>::infinity();
    report.lambda_max = 0.0;

    const int nd = model.dim();
    RngStream rng(seed, 0);
    // Scale sweep reaches down to 1e-3 so coefficients that degenerate near
    // the origin are caught, not just generic points.
    const double scales[] = {1e-3, 1e-1, 1.0, 3.0};
    bool finite = true;

    for (uint64_t k = 0; k < budget; ++k) {
        const double t = model.horizon * rng.uniform();
        const double scale = scales[k % 4];
        Vec x(nd);
        for (int j = 0; j < nd; ++j) x[j] = scale * rng.normal();

        Vec dir(nd);
        for (int j = 0; j < nd; ++j) dir[j] = rng.normal();
        const double dn = dir.norm();
        if (dn < 1e-300) continue;
        dir /= dn;
        const double r = std::pow(10.0, -3.0 + 4.0 * rng.uniform());  // log-uniform [1e-3, 10]
        const Vec y = x + r * dir;

        for (int i = 0; i < model.n; ++i) {
            const int lo = model.first_readable_level(i) * model.d;
            const double dist = (y - x).segment(lo, nd - lo).norm();
            if (dist < 1e-300) continue;
            const Vec df = model.drift[static_cast<size_t>(i)](t, y) -
                           model.drift[static_cast<size_t>(i)](t, x);
            const double ratio = df.norm() / dist;
            if (!std::isfinite(ratio)) finite = false;
            report.lipschitz[static_cast<size_t>(i)] =
                std::max(report.lipschitz[static_cast<size_t>(i)], ratio);
        }

        const Mat ax = model.diffusion_a(t, x);
        const Mat ay = model.diffusion_a(t, y);
        const double hratio =
            (ax - ay).norm() / std::pow((y - x).norm(), model.eta);
        if (!std::isfinite(hratio)) finite = false;
        report.holder = std::max(report.holder, hratio);

        Eigen::SelfAdjointEigenSolver<Mat> es(ax);
        report.lambda_min = std::min(report.lambda_min, es.eigenvalues().minCoeff());
        report.lambda_max = std::max(report.lambda_max, es.eigenvalues().maxCoeff());

        for (int level = 2; level <= model.n; ++level) {
            const Mat block = jacobian_block(model, level, t, x);
            Eigen::JacobiSVD<Mat> svd(block);
            report.nd_min_singular[static_cast<size_t>(level - 2)] =
                std::min(report.nd_min_singular[static_cast<size_t>(level - 2)],
                         svd.singularValues().minCoeff());
        }
    }

    report.pass_regularity = finite;
    report.pass_ue = std::isfinite(report.lambda_max) && report.lambda_min > threshold;
    report.pass_nd = true;
    for (double s : report.nd_min_singular)
        if (!(s > threshold)) report.pass_nd = false;
    return report;
}

}  // namespace kolmoparam
