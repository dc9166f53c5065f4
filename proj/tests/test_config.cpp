#include <doctest.h>

#include <fstream>

#include "bhkle/config.hpp"
#include "bhkle/errors.hpp"
#include "oracles.hpp"

using namespace bhkle;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("defaults survive serialize and parse") {
    const RunConfig defaults;
    CHECK_NOTHROW(defaults.validate());
    CHECK(parse_config(serialize_config(defaults)) == defaults);
    CHECK(parse_config("") == defaults);
}

TEST_CASE("nondefault values round-trip exactly") {
    RunConfig c;
    c.model.ensemble_seed = 18446744073709551557ull;
    c.model.b_max = 0.1 + 0.2;
    c.model.shape.spread = 1.0 / 3.0;
    c.model.options.alpha = 2.5e-3;
    c.solver.options.tolerance = 3.7e-11;
    c.solver.patch_average = false;
    c.inversion.validation_currents = {451.25, 600.0, 1e3};
    c.inversion.swarm.inertia = 0.7298437881283576;
    c.inversion.swarm.seed = 123456789;
    c.paths.output_dir = "results/run 1";
    const auto text = serialize_config(c);
    const auto back = parse_config(text);
    CHECK(back == c);
    CHECK(serialize_config(back) == text);
}

TEST_CASE("partial files override only the keys they name") {
    const auto c = parse_config("[model]\nmodes = 3\n\n[inversion]\nseed = 9\nvalidation_currents = 470\n");
    CHECK(c.model.modes == 3);
    CHECK(c.inversion.swarm.seed == 9);
    CHECK(c.inversion.validation_currents == std::vector<double>{470.0});
    CHECK(c.model.specimens == 26);
}

TEST_CASE("unknown keys, sections and bad values are rejected") {
    CHECK(error_of("[model]\nmodez = 3\n").find("modez") != std::string::npos);
    CHECK(error_of("[solvers]\ntolerance = 1e-8\n").find("solvers") != std::string::npos);
    CHECK(error_of("[solver]\ntolerance = fast\n").find("tolerance") != std::string::npos);
    CHECK(error_of("[solver]\nmax_steps = 2.5\n").find("max_steps") != std::string::npos);
    CHECK(error_of("[solver]\npatch_average = maybe\n").find("patch_average") != std::string::npos);
    CHECK(error_of("[model]\nspecimens = -3\n").find("specimens") != std::string::npos);
    CHECK(error_of("stray = 1\n").find("stray") != std::string::npos);
}

TEST_CASE("values that parse but violate the invariants are rejected") {
    CHECK_FALSE(error_of("[model]\nmodes = 0\n").empty());
    CHECK_FALSE(error_of("[solver]\ntolerance = 0\n").empty());
    CHECK_FALSE(error_of("[solver]\ntolerance = -1e-8\n").empty());
    CHECK_FALSE(error_of("[inversion]\ntruth_low = 0.8\n").empty());
    CHECK_FALSE(error_of("[inversion]\nvalidation_currents = 300\n").empty());
    CHECK_FALSE(error_of("[inversion]\ncurrent_min = 500\n").empty());
    CHECK_FALSE(error_of("[geometry]\ngap_height = -0.01\n").empty());
    CHECK_FALSE(error_of("[model]\nreport_modes = 2\n").empty());
}

TEST_CASE("relative paths resolve against the config file's directory") {
    const auto dir = oracle::scratch_dir("config");
    std::filesystem::create_directories(dir / "data");
    std::ofstream(dir / "data" / "manifest.txt") << "";
    std::ofstream(dir / "run.ini") << "[paths]\nmanifest = data/manifest.txt\nmesh_cache = mesh.txt\n"
                                      "output_dir = out\n";
    const auto c = load_config(dir / "run.ini");
    CHECK(std::filesystem::path(c.paths.manifest) == (dir / "data" / "manifest.txt").lexically_normal());
    CHECK(std::filesystem::path(c.paths.output_dir) == (dir / "out").lexically_normal());
    CHECK(std::filesystem::path(c.paths.mesh_cache) == (dir / "mesh.txt").lexically_normal());

    std::ofstream(dir / "missing.ini") << "[paths]\nmanifest = nowhere.txt\n";
    try {
        load_config(dir / "missing.ini");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("missing.ini") != std::string::npos);
        CHECK(what.find("manifest") != std::string::npos);
    }
    CHECK_THROWS_AS(load_config(dir / "absent.ini"), ConfigError);
}
