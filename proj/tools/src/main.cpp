// Command-line front end: config-driven experiments over the parametrix
// library, each emitting a JSON report plus a CSV table.  Exit codes:
// 0 success, 1 numeric failure, 2 assumption-validation failure,
// 64 malformed config.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kolmoparam/flow.hpp"
#include "kolmoparam/gaussian.hpp"
#include "kolmoparam/model.hpp"
#include "kolmoparam/parallel.hpp"
#include "kolmoparam/parametrix.hpp"
#include "kolmoparam/rng.hpp"
#include "kolmoparam/simulate.hpp"
#include "kolmoparam/types.hpp"

using nlohmann::json;
using namespace kolmoparam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumeric = 1;
constexpr int kExitValidation = 2;
constexpr int kExitConfig = 64;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Vec to_vec(const json& arr, const std::string& name) {
    if (!arr.is_array() || arr.empty())
        throw ConfigError("config: '" + name + "' must be a nonempty number array");
    Vec v(static_cast<int>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw ConfigError("config: '" + name + "' must hold numbers");
        v[static_cast<int>(i)] = arr[i].get<double>();
    }
    return v;
}

json from_vec(const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

double need_number(const json& cfg, const std::string& key) {
    if (!cfg.contains(key) || !cfg[key].is_number())
        throw ConfigError("config: missing numeric field '" + key + "'");
    return cfg[key].get<double>();
}

std::uint64_t need_seed(const json& cfg, const std::optional<std::uint64_t>& cli_seed) {
    if (cli_seed) return *cli_seed;
    if (cfg.contains("seed") && cfg["seed"].is_number_unsigned())
        return cfg["seed"].get<std::uint64_t>();
    throw ConfigError("config: this command is stochastic and requires an explicit seed "
                      "(config field 'seed' or flag --seed)");
}

ChainModel parse_model(const json& cfg) {
    if (!cfg.contains("model") || !cfg["model"].is_object())
        throw ConfigError("config: missing 'model' object");
    const json& m = cfg["model"];
    ModelSpec spec;
    if (!m.contains("preset") || !m["preset"].is_string())
        throw ConfigError("config: model needs a 'preset' string");
    spec.preset = m["preset"].get<std::string>();
    if (m.contains("params")) {
        if (!m["params"].is_object()) throw ConfigError("config: model.params must be an object");
        for (const auto& [k, v] : m["params"].items()) {
            if (!v.is_number()) throw ConfigError("config: model.params values must be numbers");
            spec.params[k] = v.get<double>();
        }
    }
    if (m.contains("eta")) spec.eta = m["eta"].get<double>();
    if (m.contains("horizon")) spec.horizon = m["horizon"].get<double>();
    try {
        return build_model(spec);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

TimeSampling parse_sampling(const json& cfg) {
    const std::string mode = cfg.value("time_sampling", std::string("uniform"));
    if (mode == "uniform") return TimeSampling::Uniform;
    if (mode == "beta-warped") return TimeSampling::BetaWarped;
    throw ConfigError("config: time_sampling must be 'uniform' or 'beta-warped'");
}

StencilKind parse_stencil(const std::string& name) {
    if (name == "spherical") return StencilKind::Spherical;
    if (name == "axis-aligned") return StencilKind::AxisAligned;
    throw ConfigError("config: stencil must be 'spherical' or 'axis-aligned'");
}

/// (x, y) evaluation pairs: either a 'points' array of {x:[], y:[]} objects
/// or single top-level 'x'/'y' arrays.
std::vector<std::pair<Vec, Vec>> parse_points(const json& cfg, int dim) {
    std::vector<std::pair<Vec, Vec>> pts;
    if (cfg.contains("points")) {
        if (!cfg["points"].is_array() || cfg["points"].empty())
            throw ConfigError("config: 'points' must be a nonempty array");
        for (const json& p : cfg["points"])
            pts.emplace_back(to_vec(p.at("x"), "points[].x"), to_vec(p.at("y"), "points[].y"));
    } else {
        pts.emplace_back(to_vec(cfg.at("x"), "x"), to_vec(cfg.at("y"), "y"));
    }
    for (const auto& [px, py] : pts)
        if (px.size() != dim || py.size() != dim)
            throw ConfigError("config: point dimension does not match the model");
    return pts;
}

struct CommandResult {
    json results;
    std::string csv;
    int exit_code = kExitOk;
};

// ---------------------------------------------------------------- commands

CommandResult run_validate(const ChainModel& model, const json& cfg,
                           const std::optional<std::uint64_t>& cli_seed) {
    const std::uint64_t seed = need_seed(cfg, cli_seed);
    const auto budget = static_cast<std::uint64_t>(cfg.value("budget", 300.0));
    const double threshold = cfg.value("threshold", 1e-6);
    const AssumptionReport rep = validate_assumptions(model, budget, seed, threshold);

    CommandResult out;
    out.results = {{"lipschitz", rep.lipschitz},
                   {"holder", rep.holder},
                   {"lambda_min", rep.lambda_min},
                   {"lambda_max", rep.lambda_max},
                   {"nd_min_singular", rep.nd_min_singular},
                   {"pass_regularity", rep.pass_regularity},
                   {"pass_ue", rep.pass_ue},
                   {"pass_nd", rep.pass_nd},
                   {"all_pass", rep.all_pass()},
                   {"threshold", rep.threshold},
                   {"budget", rep.budget}};
    std::ostringstream csv;
    csv << "metric,value\n";
    for (std::size_t i = 0; i < rep.lipschitz.size(); ++i)
        csv << "lipschitz_" << (i + 1) << "," << fmt(rep.lipschitz[i]) << "\n";
    csv << "holder," << fmt(rep.holder) << "\n";
    csv << "lambda_min," << fmt(rep.lambda_min) << "\n";
    csv << "lambda_max," << fmt(rep.lambda_max) << "\n";
    for (std::size_t i = 0; i < rep.nd_min_singular.size(); ++i)
        csv << "nd_min_singular_" << (i + 2) << "," << fmt(rep.nd_min_singular[i]) << "\n";
    csv << "pass_regularity," << (rep.pass_regularity ? 1 : 0) << "\n";
    csv << "pass_ue," << (rep.pass_ue ? 1 : 0) << "\n";
    csv << "pass_nd," << (rep.pass_nd ? 1 : 0) << "\n";
    out.csv = csv.str();
    out.exit_code = rep.all_pass() ? kExitOk : kExitValidation;
    return out;
}

CommandResult run_density(const ChainModel& model, const json& cfg) {
    const double s = need_number(cfg, "s");
    const double t = need_number(cfg, "t");
    const int quad = static_cast<int>(cfg.value("quad_order", 16.0));
    const auto pts = parse_points(cfg, model.dim());

    CommandResult out;
    json rows = json::array();
    std::ostringstream csv;
    csv << "index,value,log_det,gsp\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& [x, y] = pts[i];
        const LinearizedSystem lin = linearize(model, t, y, s);
        const CovarianceOperator cov = covariance(lin, s, t, quad);
        const DensityEstimate est = frozen_density(lin, s, t, x, y, quad);
        rows.push_back({{"x", from_vec(x)},
                        {"y", from_vec(y)},
                        {"value", est.value},
                        {"provenance", provenance_name(est.provenance)},
                        {"log_det", cov.log_det()},
                        {"gsp", gsp_constant(cov)}});
        csv << i << "," << fmt(est.value) << "," << fmt(cov.log_det()) << ","
            << fmt(gsp_constant(cov)) << "\n";
    }
    out.results = {{"s", s}, {"t", t}, {"points", rows}};
    out.csv = csv.str();
    return out;
}

CommandResult run_series(const ChainModel& model, const json& cfg,
                         const std::optional<std::uint64_t>& cli_seed) {
    const std::uint64_t seed = need_seed(cfg, cli_seed);
    const double s = need_number(cfg, "s");
    const double t = need_number(cfg, "t");
    const Vec x = to_vec(cfg.at("x"), "x");
    const Vec y = to_vec(cfg.at("y"), "y");
    const int k_max = static_cast<int>(cfg.value("k_max", 2.0));
    const auto budget = static_cast<std::uint64_t>(cfg.value("budget", 100000.0));
    ConvolveOptions opts;
    opts.time_sampling = parse_sampling(cfg);

    const SeriesResult sr = series_partial_sum(model, s, t, x, y, k_max, budget, seed, opts);

    CommandResult out;
    json terms = json::array();
    std::ostringstream csv;
    csv << "order,value,stderr,budget\n";
    for (const SeriesTerm& term : sr.terms) {
        terms.push_back({{"order", term.order},
                         {"value", term.estimate.value},
                         {"stderr", term.estimate.std_error},
                         {"budget", term.budget}});
        csv << term.order << "," << fmt(term.estimate.value) << ","
            << fmt(term.estimate.std_error) << "," << term.budget << "\n";
    }
    out.results = {{"total", sr.total.value},
                   {"stderr", sr.total.std_error},
                   {"provenance", provenance_name(sr.total.provenance)},
                   {"k_max", k_max},
                   {"terms", terms}};
    out.csv = csv.str();
    return out;
}

CommandResult run_mc_compare(const ChainModel& model, const json& cfg,
                             const std::optional<std::uint64_t>& cli_seed) {
    const std::uint64_t seed = need_seed(cfg, cli_seed);
    const double s = need_number(cfg, "s");
    const double t = need_number(cfg, "t");
    const Vec x = to_vec(cfg.at("x"), "x");
    if (!cfg.contains("grid") || !cfg["grid"].is_array() || cfg["grid"].empty())
        throw ConfigError("config: mc-compare needs a nonempty 'grid' of y points");
    std::vector<Vec> grid;
    for (const json& g : cfg["grid"]) grid.push_back(to_vec(g, "grid[]"));
    const int k_max = static_cast<int>(cfg.value("k_max", 2.0));
    const auto series_budget = static_cast<std::uint64_t>(cfg.value("series_budget", 100000.0));
    const auto mc_budget = static_cast<std::uint64_t>(cfg.value("mc_budget", 1000000.0));
    const int n_steps = static_cast<int>(cfg.value("n_steps", 400.0));
    ConvolveOptions opts;
    opts.time_sampling = parse_sampling(cfg);

    const PathEnsemble ens =
        euler_paths(model, s, x, t, n_steps, mc_budget, derive_seed(seed, 1));

    CommandResult out;
    json rows = json::array();
    std::ostringstream csv;
    csv << "index,series_value,series_stderr,kde_value,kde_stderr,abs_diff,combined_stderr,"
           "within_3sigma\n";
    bool all_within = true;
    double max_z = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const SeriesResult sr = series_partial_sum(model, s, t, x, grid[j], k_max, series_budget,
                                                   derive_seed(seed, 100 + j), opts);
        const DensityEstimate kde = kde_density(ens, grid[j], model);
        const double diff = std::abs(sr.total.value - kde.value);
        const double comb = std::sqrt(sr.total.std_error * sr.total.std_error +
                                      kde.std_error * kde.std_error);
        const bool within = diff <= 3.0 * comb;
        all_within = all_within && within;
        if (comb > 0.0) max_z = std::max(max_z, diff / comb);
        rows.push_back({{"y", from_vec(grid[j])},
                        {"series_value", sr.total.value},
                        {"series_stderr", sr.total.std_error},
                        {"kde_value", kde.value},
                        {"kde_stderr", kde.std_error},
                        {"abs_diff", diff},
                        {"combined_stderr", comb},
                        {"within_3sigma", within}});
        csv << j << "," << fmt(sr.total.value) << "," << fmt(sr.total.std_error) << ","
            << fmt(kde.value) << "," << fmt(kde.std_error) << "," << fmt(diff) << ","
            << fmt(comb) << "," << (within ? 1 : 0) << "\n";
    }
    out.results = {{"rows", rows}, {"all_within_3sigma", all_within}, {"max_z", max_z}};
    out.csv = csv.str();
    return out;
}

CommandResult run_scaling_check(const ChainModel& model, const json& cfg) {
    const Vec y = to_vec(cfg.at("y"), "y");
    if (y.size() != model.dim()) throw ConfigError("config: y dimension mismatch");
    const double T = cfg.value("T", model.horizon);
    std::vector<double> deltas = {1e-3, 1e-2, 1e-1, 1.0};
    if (cfg.contains("deltas")) {
        deltas.clear();
        for (const json& d : cfg["deltas"]) deltas.push_back(d.get<double>());
    }

    CommandResult out;
    json rows = json::array();
    std::ostringstream csv;
    csv << "delta,gsp\n";
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double delta : deltas) {
        if (!(delta > 0.0) || delta > T)
            throw ConfigError("config: scaling-check deltas must lie in (0, T]");
        const LinearizedSystem lin = linearize(model, T, y, T - delta);
        const double g = gsp_constant(covariance(lin, T - delta, T));
        rows.push_back({{"delta", delta}, {"gsp", g}});
        csv << fmt(delta) << "," << fmt(g) << "\n";
        lo = std::min(lo, g);
        hi = std::max(hi, g);
    }
    out.results = {{"rows", rows},
                   {"spread", hi - lo},
                   {"constant_within_1e6", (hi - lo) <= 1e-6}};
    out.csv = csv.str();
    return out;
}

CommandResult run_kernel_profile(const ChainModel& model, const json& cfg) {
    const Vec y = to_vec(cfg.at("y"), "y");
    const Vec w = to_vec(cfg.at("w_offset"), "w_offset");
    const double T = need_number(cfg, "T");
    if (!cfg.contains("deltas") || !cfg["deltas"].is_array())
        throw ConfigError("config: kernel-profile needs a 'deltas' array");
    std::vector<double> deltas;
    for (const json& d : cfg["deltas"]) deltas.push_back(d.get<double>());

    const KernelProfile prof = kernel_exponent_profile(model, y, w, T, deltas);

    CommandResult out;
    json rows = json::array();
    std::ostringstream csv;
    csv << "delta,h_abs,envelope,ratio\n";
    for (const KernelProfileRow& r : prof.rows) {
        rows.push_back({{"delta", r.delta},
                        {"h_abs", r.h_abs},
                        {"envelope", r.envelope},
                        {"ratio", r.ratio}});
        csv << fmt(r.delta) << "," << fmt(r.h_abs) << "," << fmt(r.envelope) << ","
            << fmt(r.ratio) << "\n";
    }
    out.results = {{"rows", rows},
                   {"c_hat", prof.c_hat},
                   {"degenerate", prof.degenerate}};
    if (prof.degenerate)
        out.results["fitted_exponent"] = nullptr;
    else
        out.results["fitted_exponent"] = prof.fitted_exponent;
    out.csv = csv.str();
    return out;
}

CommandResult run_bounds_fit(const ChainModel& model, const json& cfg) {
    const double t = need_number(cfg, "t");
    const auto pts = parse_points(cfg, model.dim());

    std::vector<AronsonSample> samples;
    std::ostringstream csv;
    csv << "index,p,q\n";
    const TimeScaler scaler(model.n, model.d, t);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        AronsonSample sm;
        sm.x = pts[i].first;
        sm.y = pts[i].second;
        if (cfg.contains("values")) {
            sm.p = cfg["values"].at(i).get<double>();
        } else {
            const LinearizedSystem lin = linearize(model, t, sm.y, 0.0);
            sm.p = frozen_density(lin, 0.0, t, sm.x, sm.y).value;
        }
        samples.push_back(sm);
        const double q = scaler.rescaled_sqnorm(forward_flow(model, 0.0, t, sm.x) - sm.y);
        csv << i << "," << fmt(sm.p) << "," << fmt(q) << "\n";
    }
    const AronsonFit fit = aronson_fit(samples, model, t);
    CommandResult out;
    out.results = {{"c_lower", fit.c_lower}, {"c_upper", fit.c_upper}, {"t", t}};
    out.csv = csv.str();
    return out;
}

CommandResult run_uniqueness(const ChainModel& model, const json& cfg,
                             const std::optional<std::uint64_t>& cli_seed) {
    const std::uint64_t seed = need_seed(cfg, cli_seed);
    const double s = need_number(cfg, "s");
    const double t = need_number(cfg, "t");
    const Vec x = to_vec(cfg.at("x"), "x");
    if (!cfg.contains("radii") || !cfg.contains("grid"))
        throw ConfigError("config: uniqueness needs 'radii' and 'grid'");
    std::vector<double> radii;
    for (const json& r : cfg["radii"]) radii.push_back(r.get<double>());
    std::vector<Vec> grid;
    for (const json& g : cfg["grid"]) grid.push_back(to_vec(g, "grid[]"));
    const auto budget = static_cast<std::uint64_t>(cfg.value("budget", 100000.0));
    const int n_steps = static_cast<int>(cfg.value("n_steps", 200.0));
    const StencilKind fam_a = parse_stencil(cfg.value("family_a", std::string("spherical")));
    const StencilKind fam_b = parse_stencil(cfg.value("family_b", std::string("axis-aligned")));

    const UniquenessReport rep =
        uniqueness_experiment(model, fam_a, fam_b, radii, budget, grid, seed, s, x, t, n_steps);

    CommandResult out;
    json rows = json::array();
    for (const UniquenessRow& r : rep.rows)
        rows.push_back({{"radius", r.radius},
                        {"gap", r.gap},
                        {"combined_stderr", r.combined_stderr},
                        {"within_3sigma", r.within_3sigma}});
    out.results = {{"rows", rows}};
    std::ostringstream csv;
    csv << "radius,point,kde_a,se_a,kde_b,se_b\n";
    for (std::size_t i = 0; i < rep.points.size(); ++i) {
        const UniquenessPointRow& p = rep.points[i];
        csv << fmt(p.radius) << "," << (i % grid.size()) << "," << fmt(p.kde_a) << ","
            << fmt(p.se_a) << "," << fmt(p.kde_b) << "," << fmt(p.se_b) << "\n";
    }
    out.csv = csv.str();
    return out;
}

CommandResult run_xi_scan(const ChainModel& model, const json& cfg,
                          const std::optional<std::uint64_t>& cli_seed) {
    const std::uint64_t seed = need_seed(cfg, cli_seed);
    const double s = need_number(cfg, "s");
    const Vec x = to_vec(cfg.at("x"), "x");
    const TestFunction h = make_test_function(cfg.value("h", std::string("gaussian-bump")));
    if (!cfg.contains("eps") || !cfg["eps"].is_array())
        throw ConfigError("config: xi-scan needs an 'eps' array");
    std::vector<double> epss;
    for (const json& e : cfg["eps"]) epss.push_back(e.get<double>());
    const auto budget = static_cast<std::uint64_t>(cfg.value("budget", 100000.0));

    const double target = h.fn(s, x);
    CommandResult out;
    json rows = json::array();
    std::ostringstream csv;
    csv << "eps,value,stderr,abs_error\n";
    std::vector<double> errs;
    for (double eps : epss) {
        const XiEstimate xi = xi_epsilon(model, h, s, x, eps, budget, seed);
        const double err = std::abs(xi.value - target);
        errs.push_back(err);
        rows.push_back({{"eps", eps},
                        {"value", xi.value},
                        {"stderr", xi.std_error},
                        {"abs_error", err}});
        csv << fmt(eps) << "," << fmt(xi.value) << "," << fmt(xi.std_error) << "," << fmt(err)
            << "\n";
    }
    json ratios = json::array();
    for (std::size_t i = 1; i < errs.size(); ++i)
        ratios.push_back(errs[i - 1] > 0.0 ? errs[i] / errs[i - 1] : 0.0);
    out.results = {{"rows", rows}, {"target", target}, {"error_ratios", ratios}};
    out.csv = csv.str();
    return out;
}

CommandResult run_green_remainder(const ChainModel& model, const json& cfg,
                                  const std::optional<std::uint64_t>& cli_seed) {
    const std::uint64_t seed = need_seed(cfg, cli_seed);
    const double s = need_number(cfg, "s");
    const Vec x = to_vec(cfg.at("x"), "x");
    const TestFunction h = make_test_function(cfg.value("h", std::string("gaussian-bump")));
    if (!cfg.contains("spans") || !cfg["spans"].is_array())
        throw ConfigError("config: green-remainder needs a 'spans' array of T-s values");
    std::vector<double> spans;
    for (const json& sp : cfg["spans"]) spans.push_back(sp.get<double>());
    std::vector<double> epss = {0.0};
    if (cfg.contains("eps")) {
        epss.clear();
        if (cfg["eps"].is_array())
            for (const json& e : cfg["eps"]) epss.push_back(e.get<double>());
        else
            epss.push_back(cfg["eps"].get<double>());
    }
    const auto budget = static_cast<std::uint64_t>(cfg.value("budget", 100000.0));

    CommandResult out;
    json rows = json::array();
    std::ostringstream csv;
    csv << "span,eps,value,stderr,half_h_sup\n";
    std::vector<double> fit_spans, fit_vals;
    for (double span : spans) {
        for (double eps : epss) {
            const GreenRemainder gr =
                green_remainder(model, s, s + span, x, eps, h, budget, seed);
            rows.push_back({{"span", span},
                            {"eps", eps},
                            {"value", gr.value},
                            {"stderr", gr.std_error},
                            {"half_h_sup", 0.5 * gr.h_sup}});
            csv << fmt(span) << "," << fmt(eps) << "," << fmt(gr.value) << ","
                << fmt(gr.std_error) << "," << fmt(0.5 * gr.h_sup) << "\n";
            if (eps == epss.front() && std::abs(gr.value) > 0.0) {
                fit_spans.push_back(std::log(span));
                fit_vals.push_back(std::log(std::abs(gr.value)));
            }
        }
    }
    out.results = {{"rows", rows}};
    if (fit_spans.size() >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double m = static_cast<double>(fit_spans.size());
        for (std::size_t i = 0; i < fit_spans.size(); ++i) {
            sx += fit_spans[i];
            sy += fit_vals[i];
            sxx += fit_spans[i] * fit_spans[i];
            sxy += fit_spans[i] * fit_vals[i];
        }
        out.results["fitted_span_exponent"] = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    }
    out.csv = csv.str();
    return out;
}

// ---------------------------------------------------------------- driver

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Degenerate-chain parametrix toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> cli_seed;
    int threads = 0;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"validate", "check structural and ellipticity assumptions of a model"},
        {"density", "frozen Gaussian reference density on a point grid"},
        {"series", "partial sums of the correction series at a point"},
        {"mc-compare", "Euler-ensemble KDE against the series on a grid"},
        {"scaling-check", "covariance scaling constant across interval lengths"},
        {"kernel-profile", "fitted time exponent of the correction kernel"},
        {"bounds-fit", "two-sided Gaussian envelope constants from a KDE grid"},
        {"uniqueness", "mollified-coefficient density agreement probe"},
        {"xi-scan", "short-time smoothing functional over shrinking windows"},
        {"green-remainder", "martingale remainder of the approximate Green kernel"},
    };
    for (const auto& [name, blurb] : commands) {
        CLI::App* sub = app.add_subcommand(name, blurb);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory (default .)");
        std::uint64_t seed_slot = 0;
        sub->add_option("--seed", seed_slot, "seed override")
            ->each([&cli_seed, &seed_slot](const std::string&) { cli_seed = seed_slot; });
        sub->add_option("--threads", threads, "worker threads (0 = all cores)");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();
    if (threads > 0) set_thread_count(threads);

    json cfg;
    try {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file " + config_path);
        cfg = json::parse(is);
        if (!cfg.is_object()) throw ConfigError("config root must be a JSON object");
    } catch (const json::exception& e) {
        std::cerr << "error: malformed config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    json report = {{"command", command}, {"config", cfg}};
    const std::filesystem::path out(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(out, ec);

    const auto start = std::chrono::steady_clock::now();
    int code = kExitOk;
    CommandResult res;
    try {
        const ChainModel model = parse_model(cfg);
        if (command == "validate")
            res = run_validate(model, cfg, cli_seed);
        else if (command == "density")
            res = run_density(model, cfg);
        else if (command == "series")
            res = run_series(model, cfg, cli_seed);
        else if (command == "mc-compare")
            res = run_mc_compare(model, cfg, cli_seed);
        else if (command == "scaling-check")
            res = run_scaling_check(model, cfg);
        else if (command == "kernel-profile")
            res = run_kernel_profile(model, cfg);
        else if (command == "bounds-fit")
            res = run_bounds_fit(model, cfg);
        else if (command == "uniqueness")
            res = run_uniqueness(model, cfg, cli_seed);
        else if (command == "xi-scan")
            res = run_xi_scan(model, cfg, cli_seed);
        else if (command == "green-remainder")
            res = run_green_remainder(model, cfg, cli_seed);
        report["results"] = res.results;
        code = res.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const json::exception& e) {
        std::cerr << "error: malformed config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        report["error"] = e.what();
        code = kExitNumeric;
    }
    const auto stop = std::chrono::steady_clock::now();
    report["timings"] = {
        {"total_ms",
         std::chrono::duration_cast<std::chrono::microseconds>(stop - start).count() / 1000.0}};

    try {
        write_file(out / (command + "-report.json"), report.dump(2) + "\n");
        if (!res.csv.empty()) write_file(out / (command + ".csv"), res.csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    if (code == kExitNumeric)
        std::cerr << "error: numeric failure, partial report written\n";
    return code;
}
