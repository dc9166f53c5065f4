#include <doctest.h>

#include <fstream>

#include "bhkle/errors.hpp"
#include "bhkle/inversion.hpp"
#include "bhkle/sensitivity.hpp"
#include "oracles.hpp"

using namespace bhkle;

namespace {

struct Setup {
    DipoleGeometry geometry;
    std::shared_ptr<const MagnetostaticProblem> problem;
    std::shared_ptr<const MaterialModel> model;
    std::vector<double> currents{50.0, 200.0, 450.0};
    std::vector<Point> probes;
    std::vector<double> y0;
    ObservationSet obs;

    Setup() {
        auto mesh = std::make_shared<const Mesh>(generate_dipole_mesh(geometry, 0));
        problem = std::make_shared<const MagnetostaticProblem>(mesh, geometry.turns);
        std::vector<MonotoneCurve> curves;
        for (const auto& t : synth_ensemble(7, 26, 28, 2.0)) curves.push_back(fit_monotone_spline(t));
        const auto stats = estimate_statistics(curves, 200);
        model = std::make_shared<const MaterialModel>(build_model(stats, solve_eigenproblem(stats, 8), 4, curves));
        const auto grid = candidate_grid(geometry);
        probes = {grid.front(), grid[grid.size() / 2], grid.back()};
        for (std::size_t m = 0; m < 4; ++m) {
            const auto i = static_cast<Eigen::Index>(m);
            y0.push_back(model->y_mean()[i] + 0.5 * (model->y_max()[i] - model->y_mean()[i]));
        }
        obs = simulate_obs(y0, probes);
    }

    ForwardModel forward(std::vector<Point> p = {}, SolverOptions o = {}) const {
        return ForwardModel(problem, model, currents, p.empty() ? probes : std::move(p), o);
    }

    ObservationSet simulate_obs(const std::vector<double>& y, const std::vector<Point>& p) const {
        ObservationSet o;
        o.currents = currents;
        o.probes = p;
        o.by = forward(p).simulate(y);
        o.provenance = "synthetic";
        return o;
    }
};

const Setup& setup() {
    static const Setup s;
    return s;
}

} // namespace

TEST_CASE("objective vanishes at the generating parameters and grows away from them") {
    const auto& s = setup();
    const auto fwd = s.forward();
    const double g0 = objective(fwd, s.obs, s.y0);
    CHECK(g0 < 1e-12);
    auto y = s.y0;
    y[0] += 0.1 * 0.5 * (s.model->y_max()[0] - s.model->y_min()[0]);
    CHECK(objective(fwd, s.obs, y) > g0);
    CHECK_THROWS_AS(objective(fwd, s.simulate_obs(s.y0, {s.probes[0]}), s.y0), InputError);
}

TEST_CASE("duplicating every probe doubles the objective") {
    const auto& s = setup();
    auto doubled = s.probes;
    doubled.insert(doubled.end(), s.probes.begin(), s.probes.end());
    ObservationSet obs2 = s.obs;
    obs2.probes = doubled;
    obs2.by.resize(s.obs.by.rows(), 2 * s.obs.by.cols());
    obs2.by << s.obs.by, s.obs.by;
    const auto f1 = s.forward();
    const auto f2 = s.forward(doubled);
    std::vector<double> y(4, 0.0);
    y[1] = 0.5;
    const double g = objective(f1, s.obs, y);
    REQUIRE(g > 0.0);
    CHECK(objective(f2, obs2, y) == doctest::Approx(2.0 * g).epsilon(1e-14));
}

TEST_CASE("forward sweeps are cached by exact parameter bits") {
    const auto& s = setup();
    const auto fwd = s.forward();
    const auto a = fwd.simulate(s.y0);
    CHECK(fwd.forward_solves() == s.currents.size());
    const auto b = fwd.simulate(s.y0);
    CHECK(a == b);
    CHECK(fwd.cache_hits() == s.currents.size());
    auto y = s.y0;
    y[2] = std::nextafter(y[2], 10.0);
    fwd.simulate(y);
    CHECK(fwd.forward_solves() == 2 * s.currents.size());
    std::vector<double> outside(4, 0.0);
    outside[0] = s.model->y_max()[0] + 1.0;
    CHECK_THROWS_AS(fwd.simulate(outside), DomainError);
}

TEST_CASE("Mahalanobis penalty") {
    const auto& s = setup();
    const auto fwd = s.forward();
    std::vector<double> y(4, 0.3);
    CHECK(objective_regularized(fwd, s.obs, y, 0.0) == objective(fwd, s.obs, y));
    const Eigen::VectorXd mean = s.model->y_mean();
    CHECK(mahalanobis_penalty(mean, mean, s.model->y_cov()) == 0.0);
    const Eigen::Vector3d m(1.0, -2.0, 0.5);
    CHECK(mahalanobis_penalty(m + Eigen::Vector3d::UnitX(), m, Eigen::Matrix3d::Identity()) ==
          doctest::Approx(1.0).epsilon(1e-15));
    const Eigen::Matrix2d cov = Eigen::Vector2d(4.0, 0.25).asDiagonal();
    CHECK(mahalanobis_penalty(Eigen::Vector2d(2.0, 1.0), Eigen::Vector2d::Zero(), cov) ==
          doctest::Approx(1.0 + 4.0));
    // A singular covariance falls back to diagonal jitter.
    CHECK(mahalanobis_penalty(Eigen::Vector2d(1e-5, 0.0), Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()) ==
          doctest::Approx(1.0));
    const std::vector<double> ym(mean.data(), mean.data() + mean.size());
    const double penalty = mahalanobis_penalty(Eigen::Map<const Eigen::VectorXd>(y.data(), 4), mean, s.model->y_cov());
    CHECK(objective_regularized(fwd, s.obs, y, 2.0) ==
          doctest::Approx(objective(fwd, s.obs, y) + 2.0 * penalty).epsilon(1e-14));
    CHECK(objective_regularized(fwd, s.obs, ym, 3.0) == objective(fwd, s.obs, ym));
    CHECK_THROWS_AS(objective_regularized(fwd, s.obs, y, -1.0), InputError);
}

TEST_CASE("error metrics") {
    const auto& s = setup();
    const auto fwd = s.forward();
    const auto exact = error_metrics(s.y0, s.y0, *s.model, &s.obs, &fwd);
    CHECK(exact.b.size() == exact.e_rel.size());
    std::size_t defined = 0;
    for (int i = 1; i <= 100; ++i) defined += s.model->evaluate(s.y0, s.model->b_max() * i / 100.0) >= 10.0;
    CHECK(exact.b.size() == defined);
    CHECK(defined > 90);
    CHECK(exact.max_e_rel() == 0.0);
    CHECK(exact.max_e_abs() <= 1e-12);

    std::vector<double> y_hat = s.y0;
    y_hat[0] -= 0.2;
    y_hat[3] += 0.1;
    const auto m = error_metrics(y_hat, s.y0, *s.model, nullptr, nullptr);
    CHECK(m.e_abs.size() == 0);
    for (std::size_t i = 0; i < m.b.size(); ++i) {
        CHECK(m.b[i] > 0.0);
        CHECK(m.b[i] <= s.model->b_max());
        const double ref = s.model->evaluate(s.y0, m.b[i]);
        CHECK(ref >= 10.0);
        CHECK(m.e_rel[i] == doctest::Approx(std::abs(s.model->evaluate(y_hat, m.b[i]) - ref) / ref).epsilon(1e-12));
    }

    // Absolute error is symmetric in the roles of the two parameter vectors.
    const auto obs_hat = s.simulate_obs(y_hat, s.probes);
    const auto ab = error_metrics(y_hat, s.y0, *s.model, &s.obs, &fwd);
    const auto ba = error_metrics(s.y0, y_hat, *s.model, &obs_hat, &fwd);
    CHECK(ab.e_abs == ba.e_abs);
    CHECK(ab.max_e_abs() > 0.0);
}

TEST_CASE("observation CSV round trip and errors") {
    const auto& s = setup();
    const auto dir = oracle::scratch_dir("inversion");
    write_observations(s.obs, dir / "obs.csv");
    const auto back = read_observations(dir / "obs.csv");
    CHECK(back.currents == s.obs.currents);
    REQUIRE(back.probes.size() == s.obs.probes.size());
    for (std::size_t p = 0; p < back.probes.size(); ++p) {
        CHECK(back.probes[p].x == s.obs.probes[p].x);
        CHECK(back.probes[p].y == s.obs.probes[p].y);
    }
    CHECK(back.by == s.obs.by);
    CHECK_NOTHROW(back.validate(&s.geometry));

    auto write = [&](const std::string& text) {
        std::ofstream(dir / "bad.csv") << text;
        return dir / "bad.csv";
    };
    CHECK_THROWS_AS(read_observations(write("I,x,y,B\n1,0,0,0.1\n")), InputError);
    CHECK_THROWS_AS(read_observations(write("current_A,x_m,y_m,By_T\n1,0,0,0.1\n2,0,0,0.2\n2,0.01,0,0.2\n")),
                    InputError);
    CHECK_THROWS_AS(read_observations(write("current_A,x_m,y_m,By_T\n1,0,0,0.1\n1,0,0,0.2\n")), InputError);
    try {
        read_observations(write("current_A,x_m,y_m,By_T\n1,0,0,0.1\n2,0,0,abc\n"));
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(e.index() == 3); // line number
        CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
    }
    CHECK_THROWS_AS(read_observations(dir / "missing.csv"), InputError);

    ObservationSet outside = s.obs;
    outside.probes[0] = {0.0, 1.0};
    CHECK_THROWS_AS(outside.validate(&s.geometry), InputError);
    ObservationSet unordered = s.obs;
    std::swap(unordered.currents[0], unordered.currents[1]);
    CHECK_THROWS_AS(unordered.validate(), InputError);
}

TEST_CASE("log-spaced currents") {
    const auto c = log_spaced_currents(20.0, 450.0, 8);
    REQUIRE(c.size() == 8);
    CHECK(c.front() == 20.0);
    CHECK(c.back() == 450.0);
    const double ratio = std::pow(450.0 / 20.0, 1.0 / 7.0);
    for (std::size_t i = 1; i < c.size(); ++i) CHECK(c[i] / c[i - 1] == doctest::Approx(ratio).epsilon(1e-12));
    CHECK_THROWS_AS(log_spaced_currents(0.0, 10.0, 3), InputError);
    CHECK_THROWS_AS(log_spaced_currents(10.0, 5.0, 3), InputError);
    CHECK_THROWS_AS(log_spaced_currents(1.0, 5.0, 1), InputError);
}

TEST_CASE("small identification is deterministic, in the box, and accounts for every sweep") {
    const auto& s = setup();
    IdentifyOptions o;
    o.swarm.swarm_size = 8;
    o.swarm.iterations = 4;
    o.swarm.seed = 21;
    const auto f1 = s.forward(), f2 = s.forward();
    const auto a = identify(s.obs, f1, o);
    const auto b = identify(s.obs, f2, o);
    CHECK(a.y_hat == b.y_hat);
    CHECK(a.history == b.history);
    CHECK(a.seed == 21);
    CHECK((a.y_hat.array() >= s.model->y_min().array()).all());
    CHECK((a.y_hat.array() <= s.model->y_max().array()).all());
    for (std::size_t i = 1; i < a.history.size(); ++i) CHECK(a.history[i] <= a.history[i - 1]);
    CHECK(a.evaluations == 8 * 5);
    CHECK(a.sweeps_requested == a.evaluations * s.currents.size());
    CHECK(a.forward_solves + a.cache_hits == a.sweeps_requested);
    CHECK(a.divergent_evaluations == 0);
    CHECK(a.best_value < objective(f1, s.obs, std::vector<double>(4, 0.0)));
}

TEST_CASE("divergent forward solves become the sentinel, and an all-divergent swarm fails") {
    const auto& s = setup();
    SolverOptions one;
    one.max_steps = 1;
    const auto fwd = s.forward({}, one);
    CHECK(objective(fwd, s.obs, s.y0) == kDivergenceSentinel);
    CHECK(objective(fwd, s.obs, s.y0) == kDivergenceSentinel); // cached failure
    CHECK(fwd.divergent_sweeps() == 2);
    IdentifyOptions o;
    o.swarm.swarm_size = 4;
    o.swarm.iterations = 10;
    CHECK_THROWS_AS(identify(s.obs, fwd, o), IdentificationError);
}
