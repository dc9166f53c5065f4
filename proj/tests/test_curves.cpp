#include <doctest.h>

#include <fstream>

#include "bhkle/curves.hpp"
#include "bhkle/errors.hpp"
#include "oracles.hpp"

using namespace bhkle;

namespace {

// Monotone test data with a plateau, a steep rise and a saturating tail.
std::vector<double> xs() { return {0.0, 0.2, 0.5, 0.7, 0.9, 1.0, 1.3, 1.6, 1.8, 2.0}; }
std::vector<double> ys() { return {0.0, 40.0, 90.0, 90.0, 130.0, 400.0, 900.0, 3000.0, 9000.0, 30000.0}; }

} // namespace

TEST_CASE("permeameter table invariants report the offending index") {
    PermeameterTable t{"s", {{0.0, 0.0}, {0.5, 10.0}, {1.0, 30.0}}};
    CHECK_NOTHROW(t.validate());

    t.samples[0] = {0.1, 0.0};
    CHECK_THROWS_AS(t.validate(), InputError);

    t.samples = {{0.0, 0.0}, {0.5, 10.0}, {0.5, 30.0}};
    try {
        t.validate();
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(e.index() == 2);
    }

    t.samples = {{0.0, 0.0}, {0.5, 10.0}, {1.0, 10.0}};
    try {
        t.validate();
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(e.index() == 2);
    }
}

TEST_CASE("tangents agree with the reference Fritsch-Carlson transcription") {
    const auto x = xs(), y = ys();
    const auto lib = fritsch_carlson_tangents(x, y);
    const auto ref = oracle::fc_tangents(x, y);
    REQUIRE(lib.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(lib[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    // Flat segment between indices 2 and 3.
    CHECK(lib[2] == 0.0);
    CHECK(lib[3] == 0.0);
}

TEST_CASE("spline interpolates the samples exactly and matches the reference Hermite form") {
    const auto x = xs(), y = ys();
    const auto curve = fit_monotone_spline(x, y);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(curve(x[i]) == doctest::Approx(y[i]).epsilon(1e-14).scale(1.0));
    const auto m = oracle::fc_tangents(x, y);
    for (std::size_t k = 0; k + 1 < x.size(); ++k)
        for (double t : {0.13, 0.5, 0.91}) {
            const double s = x[k] + t * (x[k + 1] - x[k]);
            CHECK(curve(s) == doctest::Approx(oracle::hermite(x[k], x[k + 1], y[k], y[k + 1], m[k], m[k + 1], s))
                                  .epsilon(1e-13));
        }
}

TEST_CASE("spline is monotone under dense sampling") {
    const auto curve = fit_monotone_spline(xs(), ys());
    double prev = curve(0.0);
    for (int i = 1; i <= 100000; ++i) {
        const double v = curve(2.5 * i / 100000.0);
        REQUIRE(v >= prev);
        prev = v;
    }
    // Random monotone data with repeated values.
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x{0.0}, y{0.0};
        for (int i = 0; i < 12; ++i) {
            x.push_back(x.back() + 0.01 + (rng() % 1000) / 1000.0);
            y.push_back(y.back() + ((rng() % 4 == 0) ? 0.0 : std::exp((rng() % 1000) / 100.0)));
        }
        const auto c = fit_monotone_spline(x, y);
        double p = c(0.0);
        for (int i = 1; i <= 5000; ++i) {
            const double v = c(x.back() * i / 5000.0);
            REQUIRE(v >= p - 1e-12 * std::abs(p));
            p = v;
        }
    }
}

TEST_CASE("derivative matches central differences at 1000 points") {
    const auto curve = fit_monotone_spline(xs(), ys());
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const double s = 1e-3 + (2.4 - 2e-3) * i / 999.0;
        const double h = 1e-6;
        const double fd = (curve(s + h) - curve(s - h)) / (2 * h);
        const double d = curve.derivative(s);
        if (std::abs(d) < 1e-9) {
            CHECK(std::abs(fd) < 1e-3);
            continue;
        }
        CHECK(std::abs(fd - d) / std::abs(d) < 1e-6);
        ++checked;
    }
    CHECK(checked > 900);
}

TEST_CASE("linear extrapolation beyond the last sample uses the floored end slope") {
    const auto x = xs(), y = ys();
    const auto curve = fit_monotone_spline(x, y);
    const double slope = oracle::fc_tangents(x, y).back();
    CHECK(curve.extrapolation_slope() == doctest::Approx(slope));
    CHECK(curve(2.5) == doctest::Approx(y.back() + 0.5 * slope));
    CHECK(curve.derivative(3.0) == doctest::Approx(slope));

    // A flat end is floored at the given slope.
    const auto flat = fit_monotone_spline(std::vector<double>{0, 1, 2}, std::vector<double>{0, 5, 5}, 2.5);
    CHECK(flat.extrapolation_slope() == 2.5);
    CHECK(flat(3.0) == doctest::Approx(7.5));
    CHECK_THROWS_AS(flat(-0.1), DomainError);
}

TEST_CASE("integral agrees with Simpson quadrature") {
    const auto curve = fit_monotone_spline(xs(), ys());
    for (double b : {0.15, 0.7, 1.45, 2.0, 2.7}) {
        const double ref = oracle::simpson([&](double s) { return curve(s); }, 0.0, b, 4000);
        CHECK(curve.hermite().integral(b) == doctest::Approx(ref).epsilon(1e-9));
    }
}

TEST_CASE("minimum derivative is found inside segments") {
    // Tangents chosen so the cubic dips between the knots.
    HermiteCurve c({0.0, 1.0, 2.0}, {0.0, 1.0, 2.0}, {3.0, 3.0, 3.0}, CurveTail::linear(3.0));
    double brute = 1e300, where = 0.0;
    for (int i = 0; i <= 200000; ++i) {
        const double s = 2.0 * i / 200000.0;
        if (c.derivative(s) < brute) {
            brute = c.derivative(s);
            where = s;
        }
    }
    CHECK(c.min_derivative(2.0) == doctest::Approx(brute).epsilon(1e-8));
    CHECK(c.argmin_derivative(2.0) == doctest::Approx(where).epsilon(1e-4));
}

TEST_CASE("combining curves on a shared grid is linear") {
    const std::vector<double> x{0.0, 1.0, 2.0};
    HermiteCurve a(x, {0.0, 1.0, 4.0}, {0.0, 2.0, 4.0}, CurveTail::linear(4.0));
    HermiteCurve b(x, {0.0, 2.0, 3.0}, {1.0, 1.5, 1.0}, CurveTail{1.0, 2.0, 0.0});
    const HermiteCurve* parts[] = {&a, &b};
    const double w[] = {2.0, -0.5};
    const auto c = HermiteCurve::combine(parts, w);
    for (double s : {0.0, 0.3, 1.0, 1.7, 2.0, 2.5, 3.9, 5.0})
        CHECK(c(s) == doctest::Approx(2.0 * a(s) - 0.5 * b(s)).epsilon(1e-13).scale(1.0));
    HermiteCurve other({0.0, 1.5, 2.0}, {0.0, 1.0, 2.0}, {1.0, 1.0, 1.0}, CurveTail::linear(1.0));
    const HermiteCurve* bad[] = {&a, &other};
    CHECK_THROWS_AS(HermiteCurve::combine(bad, w), InputError);
}

TEST_CASE("synthetic ensemble is seeded, valid and varied") {
    const auto a = synth_ensemble(7, 26, 28, 2.0);
    const auto b = synth_ensemble(7, 26, 28, 2.0);
    const auto c = synth_ensemble(8, 26, 28, 2.0);
    REQUIRE(a.size() == 26);
    bool differs = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        REQUIRE(a[k].samples.size() == 28);
        CHECK_NOTHROW(a[k].validate());
        for (std::size_t l = 0; l < 28; ++l) {
            CHECK(a[k].samples[l].b == b[k].samples[l].b);
            CHECK(a[k].samples[l].h == b[k].samples[l].h);
            differs |= a[k].samples[l].h != c[k].samples[l].h;
        }
    }
    CHECK(differs);
    // Shared abscissae and strictly positive variance away from the origin.
    for (std::size_t l = 1; l < 28; ++l) {
        double mean = 0.0, var = 0.0;
        for (const auto& t : a) {
            CHECK(t.samples[l].b == a[0].samples[l].b);
            mean += t.samples[l].h / 26.0;
        }
        for (const auto& t : a) var += std::pow(t.samples[l].h - mean, 2) / 25.0;
        CHECK(var > 0.0);
    }
    CHECK_THROWS_AS(synth_ensemble(7, 1, 28, 2.0), InputError);
}

TEST_CASE("grid clusters points near the knee") {
    const auto g = knee_clustered_grid(28, 2.0);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 2.0);
    double knee_gap = 1e9, low_gap = 0.0;
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        const double mid = 0.5 * (g[i] + g[i + 1]), h = g[i + 1] - g[i];
        CHECK(h > 0.0);
        if (std::abs(mid - 1.5) < 0.1) knee_gap = std::min(knee_gap, h);
        if (mid < 0.5) low_gap = std::max(low_gap, h);
    }
    CHECK(knee_gap < 0.5 * low_gap);
}

TEST_CASE("CSV tables and manifests round-trip and report the failing row") {
    const auto dir = oracle::scratch_dir("curves_csv");
    const auto tables = synth_ensemble(3, 4, 10, 2.0);
    write_manifest(tables, dir);
    const auto back = read_manifest(dir / "manifest.txt");
    REQUIRE(back.size() == tables.size());
    for (std::size_t k = 0; k < tables.size(); ++k) {
        CHECK(back[k].specimen_id == tables[k].specimen_id);
        for (std::size_t l = 0; l < 10; ++l) {
            CHECK(back[k].samples[l].b == tables[k].samples[l].b);
            CHECK(back[k].samples[l].h == tables[k].samples[l].h);
        }
    }

    const auto bad = dir / "bad.csv";
    std::ofstream(bad) << "B_T,H_Am\n0,0\n0.5,10\n0.4,20\n";
    try {
        read_table_csv(bad);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        const std::string what = e.what();
        CHECK(what.find("bad.csv") != std::string::npos);
        CHECK(e.index() == 2);
    }
    std::ofstream(bad) << "B_T,H_Am\n0,0\n0.5,abc\n";
    try {
        read_table_csv(bad);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
    }
    std::ofstream(bad) << "B,H\n0,0\n";
    CHECK_THROWS_AS(read_table_csv(bad), InputError);
}
