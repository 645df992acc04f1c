#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Fresh working directory per test case, removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& stem) {
        path = fs::temp_directory_path() /
               ("kolmo-cli-" + stem + "-" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(KOLMO_CLI_BINARY) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

json read_report(const fs::path& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    return json::parse(is);
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("density command reproduces the closed-form chain value") {
    TempDir dir("density");
    const fs::path cfg = dir.path / "cfg.json";
    write_text(cfg, R"({
        "model": {"preset": "kolmogorov-chain"},
        "s": 0.0, "t": 1.0,
        "x": [0.0, 0.0], "y": [0.0, 0.0]
    })");
    const int code =
        run_cli("density --config " + cfg.string() + " --out " + dir.path.string());
    CHECK(code == 0);

    const json rep = read_report(dir.path / "density-report.json");
    CHECK(rep["command"] == "density");
    const json& pt = rep["results"]["points"][0];
    const double exact = std::sqrt(3.0) / 3.14159265358979323846;
    CHECK(std::abs(pt["value"].get<double>() - exact) < 1e-10);
    CHECK(std::abs(pt["log_det"].get<double>() + std::log(12.0)) < 1e-10);
    CHECK(std::abs(pt["gsp"].get<double>() - 15.211102550925755) < 1e-6);

    const std::string csv = slurp(dir.path / "density.csv");
    CHECK(csv.rfind("index,value,log_det,gsp\n", 0) == 0);
}

TEST_CASE("series order zero equals the frozen density") {
    TempDir dir("series0");
    const fs::path cfg = dir.path / "cfg.json";
    write_text(cfg, R"({
        "model": {"preset": "kolmogorov-chain"},
        "s": 0.0, "t": 0.25,
        "x": [0.0, 0.0], "y": [0.0, 0.0],
        "k_max": 0, "budget": 100, "seed": 1
    })");
    const int code =
        run_cli("series --config " + cfg.string() + " --out " + dir.path.string());
    CHECK(code == 0);
    const json rep = read_report(dir.path / "series-report.json");
    const json& t0 = rep["results"]["terms"][0];
    const double exact = 16.0 * std::sqrt(3.0) / 3.14159265358979323846;
    CHECK(std::abs(t0["value"].get<double>() - exact) < 1e-9 * exact);
    CHECK(t0["stderr"].get<double>() == 0.0);
    CHECK(std::abs(rep["results"]["total"].get<double>() - exact) < 1e-9 * exact);
}

TEST_CASE("malformed configs and missing seeds exit with the usage code") {
    TempDir dir("badcfg");
    const fs::path broken = dir.path / "broken.json";
    write_text(broken, "{ this is not json");
    CHECK(run_cli("density --config " + broken.string() + " --out " + dir.path.string()) == 64);

    const fs::path noseed = dir.path / "noseed.json";
    write_text(noseed, R"({
        "model": {"preset": "kolmogorov-chain"},
        "s": 0.0, "t": 0.25, "x": [0, 0], "y": [0, 0],
        "k_max": 1, "budget": 1000
    })");
    CHECK(run_cli("series --config " + noseed.string() + " --out " + dir.path.string()) == 64);
    // the command line can supply the missing seed
    CHECK(run_cli("series --config " + noseed.string() + " --out " + dir.path.string() +
                  " --seed 3") == 0);

    const fs::path unknown = dir.path / "unknown.json";
    write_text(unknown, R"({"model": {"preset": "no-such-model"}, "s": 0, "t": 1,
                            "x": [0], "y": [0]})");
    CHECK(run_cli("density --config " + unknown.string() + " --out " + dir.path.string()) == 64);

    CHECK(run_cli("density --config " + (dir.path / "absent.json").string()) == 64);
}

TEST_CASE("validate gates its exit code on the assumption checks") {
    TempDir dir("validate");
    const fs::path good = dir.path / "good.json";
    write_text(good, R"({"model": {"preset": "kolmogorov-chain"}, "budget": 200, "seed": 7})");
    CHECK(run_cli("validate --config " + good.string() + " --out " + dir.path.string()) == 0);
    CHECK(read_report(dir.path / "validate-report.json")["results"]["all_pass"] == true);

    const fs::path bad = dir.path / "bad.json";
    write_text(bad, R"({
        "model": {"preset": "elliptic",
                  "params": {"sigma": 0.0, "amp": 0.0}},
        "budget": 200, "seed": 7
    })");
    CHECK(run_cli("validate --config " + bad.string() + " --out " + dir.path.string()) == 2);
    CHECK(read_report(dir.path / "validate-report.json")["results"]["all_pass"] == false);
}

TEST_CASE("reports and tables are byte-stable across thread counts") {
    TempDir dir("threads");
    const fs::path cfg = dir.path / "cfg.json";
    write_text(cfg, R"({
        "model": {"preset": "kolmogorov-chain"},
        "s": 0.0, "t": 0.5,
        "x": [0.0, 0.0], "y": [0.0, 0.0],
        "k_max": 1, "budget": 20000, "seed": 11
    })");
    const fs::path a = dir.path / "a";
    const fs::path b = dir.path / "b";
    fs::create_directories(a);
    fs::create_directories(b);
    CHECK(run_cli("series --config " + cfg.string() + " --out " + a.string() +
                  " --threads 1") == 0);
    CHECK(run_cli("series --config " + cfg.string() + " --out " + b.string() +
                  " --threads 4") == 0);
    CHECK(slurp(a / "series.csv") == slurp(b / "series.csv"));
    json ra = read_report(a / "series-report.json");
    json rb = read_report(b / "series-report.json");
    ra.erase("timings");
    rb.erase("timings");
    CHECK(ra.dump() == rb.dump());
}

TEST_CASE("scaling check certifies the constant spectral proxy") {
    TempDir dir("scaling");
    const fs::path cfg = dir.path / "cfg.json";
    write_text(cfg, R"({"model": {"preset": "kolmogorov-chain"}, "y": [0.3, -0.2], "T": 1.0})");
    const int code =
        run_cli("scaling-check --config " + cfg.string() + " --out " + dir.path.string());
    CHECK(code == 0);
    const json rep = read_report(dir.path / "scaling-check-report.json");
    CHECK(rep["results"]["constant_within_1e6"] == true);
    CHECK(rep["results"]["rows"].size() >= 4);
}
