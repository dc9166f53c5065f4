#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bhkle/errors.hpp"
#include "bhkle/pipeline.hpp"
#include "oracles.hpp"

using namespace bhkle;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        rows.push_back(fields);
    }
    return rows;
}

PipelineContext context(const std::string& name) {
    PipelineContext ctx;
    ctx.out = oracle::scratch_dir(name);
    ctx.config.paths.output_dir = ctx.out.string();
    ctx.config.paths.mesh_cache = (ctx.out / "mesh.txt").string();
    ctx.config.inversion.swarm.swarm_size = 6;
    ctx.config.inversion.swarm.iterations = 2;
    return ctx;
}

struct Run {
    PipelineContext ctx;
    ModelReport model;
    SensitivityReport sensitivity;
    DataReport data;
    IdentifyReport identified;
    ValidateReport validated;

    explicit Run(const std::string& name) : ctx(context(name)) {
        model = cmd_build_model(ctx);
        sensitivity = cmd_sensitivity(ctx);
        data = cmd_make_data(ctx);
        identified = cmd_identify(ctx);
        validated = cmd_validate(ctx);
    }
};

const Run& run() {
    static const Run r("pipeline_a");
    return r;
}

} // namespace

TEST_CASE("build-model writes the model, spectrum and modes") {
    const auto& r = run();
    const auto& out = r.ctx.out;
    for (const char* f : {"model.json", "eigenvalues.csv", "modes.csv"}) CHECK(std::filesystem::exists(out / f));
    REQUIRE(r.model.model.dimension() == 4);
    const auto ev = r.model.model.eigenvalues();
    for (std::size_t m = 0; m + 1 < ev.size(); ++m) CHECK(ev[m] > ev[m + 1]);

    const auto rows = csv_rows(out / "eigenvalues.csv");
    REQUIRE(rows.size() == r.model.spectrum.size() + 1);
    CHECK(rows[0] == std::vector<std::string>{"index", "lambda", "ratio_to_first"});
    double sum = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(std::stoul(rows[i][0]) == i);
        sum += std::stod(rows[i][1]);
        CHECK(std::stod(rows[i][2]) == doctest::Approx(std::stod(rows[i][1]) / std::stod(rows[1][1])));
    }
    // Trace of the sampled covariance by trapezoid quadrature, computed here.
    std::vector<MonotoneCurve> curves;
    for (const auto& t : synth_ensemble(7, 26, 28, 2.0)) curves.push_back(fit_monotone_spline(t));
    const auto grid = r.model.model.grid();
    std::vector<std::vector<double>> samples;
    for (const auto& c : curves) {
        samples.emplace_back();
        for (double s : grid) samples.back().push_back(c(s));
    }
    const auto cov = oracle::covariance(samples);
    const auto w = oracle::trapezoid(std::vector<double>(grid.begin(), grid.end()));
    const double trace = (cov.diagonal().array() * w.array()).sum();
    CHECK(sum == doctest::Approx(trace).epsilon(1e-8));
    CHECK(r.model.covariance_trace == doctest::Approx(trace).epsilon(1e-12));

    const auto modes = csv_rows(out / "modes.csv");
    CHECK(modes[0] == std::vector<std::string>{"B_T", "mean_Am", "mode1", "mode2", "mode3", "mode4"});
    CHECK(modes.size() == grid.size() + 1);
}

TEST_CASE("sensitivity writes one map column per mode and ranks probes in the gap") {
    const auto& r = run();
    const auto map = csv_rows(r.ctx.out / "sensitivity_map.csv");
    CHECK(map[0] == std::vector<std::string>{"x", "y", "dBy_mode1", "dBy_mode2", "dBy_mode3", "dBy_mode4"});
    const auto ranking = json::parse(slurp(r.ctx.out / "probe_ranking.json"));
    REQUIRE(ranking.at("probes").size() == 5);
    for (const auto& p : ranking["probes"])
        CHECK(r.ctx.config.geometry.in_gap_air({p.at("x").get<double>(), p.at("y").get<double>()}));
    CHECK(r.sensitivity.candidates == 315);
    const auto train = training_currents(r.ctx.config.inversion);
    CHECK(r.sensitivity.current == doctest::Approx(0.5 * (train[3] + train[4])));
    CHECK(r.ctx.config.geometry.distance_to_shim(r.sensitivity.ranking[0].point) <
          r.ctx.config.geometry.distance_to_shim({0.0, 0.0}));
}

TEST_CASE("make-data writes training, validation and ground truth") {
    const auto& r = run();
    const auto training = read_observations(r.ctx.out / "training.csv");
    const auto validation = read_observations(r.ctx.out / "validation.csv");
    CHECK(std::set<double>(training.currents.begin(), training.currents.end()).size() == 8);
    CHECK(training.probes.size() == 5);
    CHECK(validation.currents.back() > training.currents.back());
    CHECK(std::count_if(validation.currents.begin(), validation.currents.end(),
                        [&](double i) { return i > training.currents.back(); }) == 2);
    CHECK(validation.probes.size() == 9);
    for (const auto& p : validation.probes) CHECK(p.y == 0.0);

    // Gap-centre probe on the axis.
    const auto centre = std::find_if(validation.probes.begin(), validation.probes.end(),
                                     [](const Point& p) { return p.x == 0.0; });
    REQUIRE(centre != validation.probes.end());
    const auto c = centre - validation.probes.begin();
    for (Eigen::Index n = 1; n < validation.by.rows(); ++n) CHECK(validation.by(n, c) > validation.by(n - 1, c));

    const auto truth = json::parse(slurp(r.ctx.out / "ground_truth.json"));
    const auto y0 = truth.at("y0").get<std::vector<double>>();
    CHECK(y0 == r.data.y0);
    const auto& m = r.model.model;
    for (std::size_t i = 0; i < y0.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const double u = (y0[i] - m.y_mean()[k]) / (m.y_max()[k] - m.y_mean()[k]);
        CHECK(u >= 0.3 - 1e-12);
        CHECK(u <= 0.7 + 1e-12);
    }
}

TEST_CASE("identify and validate write their reports") {
    const auto& r = run();
    const auto& out = r.ctx.out;
    for (const char* f : {"identification.json", "e_rel.csv", "e_abs.csv", "summary.txt", "validation_report.json"})
        CHECK(std::filesystem::exists(out / f));
    const auto& res = r.identified.result;
    CHECK(r.identified.has_metrics);
    CHECK(res.evaluations == 6 * 3);
    CHECK(res.forward_solves + res.cache_hits == res.evaluations * 8);
    const auto summary = slurp(out / "summary.txt");
    CHECK(summary.find("forward solves:   " + std::to_string(res.forward_solves) + " = swarm 6 x rounds 3 x currents 8 - cache hits " +
                       std::to_string(res.cache_hits)) != std::string::npos);

    const auto ident = json::parse(slurp(out / "identification.json"));
    CHECK(ident.at("seed").get<std::uint64_t>() == 5);
    const auto y_hat = ident.at("y_hat").get<std::vector<double>>();
    for (std::size_t i = 0; i < y_hat.size(); ++i) CHECK(y_hat[i] == res.y_hat[static_cast<Eigen::Index>(i)]);

    const auto report = json::parse(slurp(out / "validation_report.json"));
    CHECK(report.at("passed").get<bool>() == r.validated.passed);
    CHECK(report.at("max_e_rel").get<double>() == r.validated.metrics.max_e_rel());
    CHECK(r.validated.passed ==
          (r.validated.metrics.max_e_rel() < 0.02 && r.validated.metrics.max_e_abs() < 5e-4));
    CHECK(r.validated.metrics.e_abs.rows() == 10);
    CHECK(r.validated.metrics.e_abs.cols() == 9);
    const auto e_abs = csv_rows(out / "e_abs.csv");
    CHECK(e_abs.size() == 1 + 10 * 9);
}

TEST_CASE("rerunning every stage reproduces the outputs byte for byte") {
    const auto& a = run();
    const Run b("pipeline_b");
    for (const char* f : {"model.json", "eigenvalues.csv", "modes.csv", "sensitivity_map.csv", "probe_ranking.json",
                          "training.csv", "validation.csv", "ground_truth.json", "identification.json", "e_rel.csv",
                          "e_abs.csv", "validation_report.json"})
        CHECK_MESSAGE(slurp(a.ctx.out / f) == slurp(b.ctx.out / f), f);
    CHECK(a.identified.result.y_hat == b.identified.result.y_hat);

    // Second pass in the same directory reads the cached mesh.
    auto ctx = a.ctx;
    ctx.out = oracle::scratch_dir("pipeline_c");
    std::filesystem::copy_file(a.ctx.out / "model.json", ctx.out / "model.json");
    const auto again = cmd_sensitivity(ctx);
    CHECK(slurp(ctx.out / "probe_ranking.json") == slurp(a.ctx.out / "probe_ranking.json"));
    CHECK(again.ranking[0].index == a.sensitivity.ranking[0].index);
}

TEST_CASE("an ensemble on disk gives the same model as the synthetic one") {
    const auto& a = run();
    auto ctx = context("pipeline_manifest");
    write_manifest(synth_ensemble(7, 26, 28, 2.0), ctx.out / "ensemble");
    ctx.config.paths.manifest = (ctx.out / "ensemble" / "manifest.txt").string();
    cmd_build_model(ctx);
    CHECK(slurp(ctx.out / "model.json") == slurp(a.ctx.out / "model.json"));
}

TEST_CASE("stages report missing prerequisites") {
    auto ctx = context("pipeline_empty");
    CHECK_THROWS_AS(cmd_sensitivity(ctx), InputError);
    CHECK_THROWS_AS(cmd_make_data(ctx), InputError);
    CHECK_THROWS_AS(cmd_identify(ctx), InputError);
    CHECK_THROWS_AS(cmd_validate(ctx), InputError);
}

TEST_CASE("axis probes and ground truth helpers") {
    InversionConfig c;
    DipoleGeometry g;
    const auto axis = axis_probes(c, g);
    REQUIRE(axis.size() == 9);
    CHECK(axis.front().x == doctest::Approx(-0.4 * g.pole_width));
    CHECK(axis.back().x == doctest::Approx(0.4 * g.pole_width));
    CHECK(axis[4].x == 0.0);
    const auto v = validation_currents(c);
    CHECK(v.size() == 10);
    CHECK(v[8] == 500.0);
    CHECK(v[9] == 550.0);
}
