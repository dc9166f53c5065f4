#include <doctest.h>

#include <chrono>

#include "bhkle/curves.hpp"
#include "bhkle/errors.hpp"
#include "bhkle/kle.hpp"
#include "oracles.hpp"

using namespace bhkle;

namespace {

struct Fixture {
    std::vector<MonotoneCurve> curves;
    EnsembleStatistics stats;
    std::vector<Eigenpair> pairs;

    explicit Fixture(std::size_t n = 200) {
        for (const auto& t : synth_ensemble(7, 26, 28, 2.0)) curves.push_back(fit_monotone_spline(t));
        stats = estimate_statistics(curves, n);
        pairs = solve_eigenproblem(stats, n);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

// True when some box corner has a sampled slope at or below alpha on [0, 2 B_L].
bool corner_slope_below(const MaterialModel& model, double alpha) {
    const auto m = model.dimension();
    for (unsigned c = 0; c < (1u << m); ++c) {
        std::vector<double> y(m);
        for (std::size_t i = 0; i < m; ++i)
            y[i] = (c >> i) & 1 ? model.y_max()[static_cast<Eigen::Index>(i)]
                                : model.y_min()[static_cast<Eigen::Index>(i)];
        for (int k = 0; k <= 4000; ++k) {
            const double s = 2.0 * model.b_max() * k / 4000.0, h = 1e-5;
            const double slope = (model.evaluate(y, s + h) - model.evaluate(y, std::max(0.0, s - h))) /
                                 (s + h - std::max(0.0, s - h));
            if (slope <= alpha) return true;
        }
    }
    return false;
}

} // namespace

TEST_CASE("mean and covariance match the brute-force sample estimates") {
    const auto& f = fixture();
    std::vector<std::vector<double>> samples;
    for (const auto& c : f.curves) {
        std::vector<double> v;
        for (double s : f.stats.grid) v.push_back(c(s));
        samples.push_back(v);
    }
    const auto ref = oracle::covariance(samples);
    CHECK((f.stats.covariance - ref).norm() <= 1e-10 * ref.norm());
    for (std::size_t i = 0; i < f.stats.grid.size(); ++i) {
        double m = 0.0;
        for (const auto& s : samples) m += s[i];
        CHECK(f.stats.mean[static_cast<Eigen::Index>(i)] == doctest::Approx(m / 26.0).epsilon(1e-13).scale(1.0));
    }
    CHECK(f.stats.grid.front() == 0.0);
    CHECK(f.stats.grid.back() == 2.0);
    CHECK_THROWS_AS(estimate_statistics(std::span<const MonotoneCurve>(f.curves.data(), 1), 50), InputError);
}

TEST_CASE("eigenpairs agree with the Nystrom oracle") {
    const auto& f = fixture();
    const auto ref = oracle::nystrom(f.stats.grid, f.stats.covariance);
    for (std::size_t m = 0; m < 6; ++m) {
        CHECK(std::abs(f.pairs[m].value - ref[m].value) <= 1e-6 * ref[m].value);
        Eigen::VectorXd r = ref[m].mode;
        if (r.dot(f.pairs[m].mode) < 0) r = -r;
        CHECK(oracle::l2_trapezoid(f.stats.grid, f.pairs[m].mode - r) < 1e-4);
    }
}

TEST_CASE("modes are orthonormal and the spectrum sums to the trace") {
    const auto& f = fixture();
    const Eigen::VectorXd w = oracle::trapezoid(f.stats.grid);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            const double ip = (f.pairs[i].mode.array() * f.pairs[j].mode.array() * w.array()).sum();
            CHECK(std::abs(ip - (i == j ? 1.0 : 0.0)) < 1e-8);
        }
    double sum = 0.0;
    for (const auto& p : f.pairs) sum += p.value;
    const double trace = w.dot(f.stats.covariance.diagonal());
    CHECK(std::abs(sum - trace) <= 1e-8 * trace);
    for (const auto& p : f.pairs) CHECK(p.mode[p.mode.size() - 1] >= 0.0);
}

TEST_CASE("spectrum is strictly decreasing with fast decay") {
    const auto start = std::chrono::steady_clock::now();
    const Fixture f;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (std::size_t m = 0; m + 1 < 4; ++m) CHECK(f.pairs[m].value > f.pairs[m + 1].value);
    CHECK(f.pairs[3].value > 0.0);
    CHECK(f.pairs[3].value / f.pairs[0].value < 1e-3);
    CHECK(seconds < 10.0);
}

TEST_CASE("eigenvalues converge under grid refinement") {
    const Fixture coarse(100), mid(200), fine(400);
    for (std::size_t m = 0; m < 3; ++m) {
        const double d1 = std::abs(coarse.pairs[m].value - mid.pairs[m].value);
        const double d2 = std::abs(mid.pairs[m].value - fine.pairs[m].value);
        CHECK(d2 / fine.pairs[m].value < 1e-2);
        // Second-order quadrature: halving the spacing cuts the change by ~4.
        CHECK(d1 / d2 > 3.0);
    }
}

TEST_CASE("model curve is the truncated expansion and stays monotone on the box") {
    const auto& f = fixture();
    const auto model = build_model(f.stats, f.pairs, 4, f.curves);
    REQUIRE(model.dimension() == 4);
    CHECK(first_nonmonotone_corner(model) == -1);

    std::vector<double> y{0.3, -0.2, 0.1, 0.05};
    REQUIRE(model.in_box(y));
    for (std::size_t i = 0; i < f.stats.grid.size(); i += 7) {
        double ref = f.stats.mean[static_cast<Eigen::Index>(i)];
        for (std::size_t m = 0; m < 4; ++m)
            ref += std::sqrt(f.pairs[m].value) * y[m] * f.pairs[m].mode[static_cast<Eigen::Index>(i)];
        CHECK(model.evaluate(y, f.stats.grid[i]) == doctest::Approx(ref).epsilon(1e-12).scale(1.0));
    }

    // Every corner curve keeps its derivative above alpha up to 2 B_L.
    for (int c = 0; c < 16; ++c) {
        std::vector<double> corner(4);
        for (int m = 0; m < 4; ++m)
            corner[static_cast<std::size_t>(m)] =
                (c >> m) & 1 ? model.y_max()[m] : model.y_min()[m];
        const auto curve = model.curve(corner);
        double prev = curve(0.0);
        for (int i = 1; i <= 4000; ++i) {
            const double s = 4.0 * i / 4000.0;
            CHECK(curve(s) > prev);
            prev = curve(s);
        }
        CHECK(curve.min_derivative(4.0) > model.alpha());
    }

    std::vector<double> outside = y;
    outside[0] = model.y_max()[0] + 1.0;
    CHECK_THROWS_AS(model.curve(outside), DomainError);
    CHECK_NOTHROW(model.curve_unchecked(outside));
}

TEST_CASE("projections of the ensemble span the box and centre on zero") {
    const auto& f = fixture();
    const auto y = project_curves(f.stats, f.pairs, 4, f.curves);
    REQUIRE(y.rows() == 26);
    // Projections of centred data have zero mean and sample variance 1.
    for (Eigen::Index m = 0; m < 4; ++m) {
        CHECK(std::abs(y.col(m).mean()) < 1e-10);
        const double var = (y.col(m).array() - y.col(m).mean()).square().sum() / 25.0;
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("mode continuation ramps to zero over one B_L") {
    const auto& f = fixture();
    const auto model = build_model(f.stats, f.pairs, 4, f.curves);
    for (std::size_t m = 0; m < 4; ++m) {
        const auto& b = model.mode_curve(m);
        const double end = b(2.0);
        CHECK(end == doctest::Approx(f.pairs[m].mode[f.pairs[m].mode.size() - 1]));
        CHECK(b(2.5) == doctest::Approx(end * 0.75).scale(1.0));
        CHECK(b(3.0) == doctest::Approx(end * 0.5).scale(1.0));
        CHECK(b(4.0) == doctest::Approx(0.0).scale(1.0));
        CHECK(b(7.0) == doctest::Approx(0.0).scale(1.0));
    }
}

TEST_CASE("box shrinks about the mean until corners are monotone, or fails naming the corner") {
    const auto& f = fixture();
    const auto loose = build_model(f.stats, f.pairs, 4, f.curves);

    ModelOptions strict;
    strict.alpha = 0.95 * loose.mean_curve().hermite().min_derivative(4.0);
    REQUIRE(corner_slope_below(loose, strict.alpha));
    const auto shrunk = build_model(f.stats, f.pairs, 4, f.curves, strict);
    CHECK(first_nonmonotone_corner(shrunk) == -1);
    bool smaller = false;
    for (Eigen::Index m = 0; m < 4; ++m) {
        CHECK(shrunk.y_max()[m] - shrunk.y_min()[m] <= loose.y_max()[m] - loose.y_min()[m] + 1e-15);
        smaller |= shrunk.y_max()[m] - shrunk.y_min()[m] < loose.y_max()[m] - loose.y_min()[m];
    }
    CHECK(smaller);

    ModelOptions impossible;
    impossible.alpha = 0.99 * loose.mean_curve().hermite().min_derivative(4.0);
    impossible.max_shrink_iterations = 2;
    try {
        build_model(f.stats, f.pairs, 4, f.curves, impossible);
        FAIL("expected ModelError");
    } catch (const ModelError& e) {
        CHECK(std::string(e.what()).find("corner") != std::string::npos);
    }
}

TEST_CASE("model JSON round-trips byte for byte") {
    const auto& f = fixture();
    const auto model = build_model(f.stats, f.pairs, 4, f.curves);
    const auto text = model_to_json(model);
    const auto back = model_from_json(text);
    CHECK(model_to_json(back) == text);
    const std::vector<double> y{0.1, 0.2, -0.3, 0.0};
    for (double s : {0.0, 0.37, 1.5, 2.0, 2.6})
        CHECK(back.evaluate(y, s) == model.evaluate(y, s));
    CHECK_THROWS_AS(model_from_json("{\"format\": \"other\"}"), InputError);
}
