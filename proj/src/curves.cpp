#include "bhkle/curves.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "bhkle/errors.hpp"
#include "text_util.hpp"

namespace bhkle {

void PermeameterTable::validate() const {
    const auto& s = samples;
    if (s.empty()) throw InputError("table '" + specimen_id + "' is empty", -1);
    if (s[0].b != 0.0 || s[0].h != 0.0)
        throw InputError("table '" + specimen_id + "' must start at (0, 0)", 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!std::isfinite(s[i].b) || !std::isfinite(s[i].h))
            throw InputError("table '" + specimen_id + "': non-finite sample at index " +
                                 std::to_string(i),
                             static_cast<std::ptrdiff_t>(i));
        if (i == 0) continue;
        if (!(s[i].b > s[i - 1].b))
            throw InputError("table '" + specimen_id +
                                 "': B not strictly increasing at index " + std::to_string(i),
                             static_cast<std::ptrdiff_t>(i));
        if (!(s[i].h > s[i - 1].h))
            throw InputError("table '" + specimen_id +
                                 "': H not strictly increasing at index " + std::to_string(i),
                             static_cast<std::ptrdiff_t>(i));
    }
}

// ---------------------------------------------------------------------------
// HermiteCurve

namespace {

struct Basis {
    double h00, h10, h01, h11;
};

inline Basis hermite_basis(double t) {
    const double t2 = t * t, t3 = t2 * t;
    return {2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2};
}

// Integral over [0, t] of each basis function, in units of t.
inline Basis hermite_basis_integral(double t) {
    const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
    return {t4 / 2 - t3 + t, t4 / 4 - 2 * t3 / 3 + t2 / 2, -t4 / 2 + t3, t4 / 4 - t3 / 3};
}

// Derivative of the segment cubic as a quadratic a t^2 + b t + c in t.
struct Quadratic {
    double a, b, c;
    double operator()(double t) const { return (a * t + b) * t + c; }
};

inline Quadratic segment_derivative(double y0, double y1, double m0, double m1, double h) {
    const double delta = (y1 - y0) / h;
    return {-6 * delta + 3 * m0 + 3 * m1, 6 * delta - 4 * m0 - 2 * m1, m0};
}

// Minimum of q over [0, t_end] and where it is attained.
inline std::pair<double, double> quadratic_min(const Quadratic& q, double t_end) {
    double best_t = 0.0, best = q(0.0);
    if (const double e = q(t_end); e < best) {
        best = e;
        best_t = t_end;
    }
    if (q.a > 0.0) {
        const double t = -q.b / (2 * q.a);
        if (t > 0.0 && t < t_end) {
            if (const double v = q(t); v < best) {
                best = v;
                best_t = t;
            }
        }
    }
    return {best, best_t};
}

} // namespace

HermiteCurve::HermiteCurve(std::vector<double> knots, std::vector<double> values,
                           std::vector<double> tangents, CurveTail tail)
    : knots_(std::move(knots)), values_(std::move(values)), tangents_(std::move(tangents)),
      tail_(tail) {
    const auto n = knots_.size();
    if (n < 2) throw InputError("Hermite curve needs at least two knots");
    if (values_.size() != n || tangents_.size() != n)
        throw InputError("Hermite curve: knots, values and tangents differ in length");
    for (std::size_t i = 1; i < n; ++i)
        if (!(knots_[i] > knots_[i - 1]))
            throw InputError("Hermite curve: knots not strictly increasing at index " +
                                 std::to_string(i),
                             static_cast<std::ptrdiff_t>(i));
    if (tail_.near_width < 0.0) throw InputError("Hermite curve: negative tail width");

    cumulative_.assign(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double h = knots_[i + 1] - knots_[i];
        cumulative_[i + 1] = cumulative_[i] + h * (values_[i] + values_[i + 1]) / 2 +
                             h * h * (tangents_[i] - tangents_[i + 1]) / 12;
    }

    const double step = knots_[1] - knots_[0];
    uniform_ = true;
    for (std::size_t i = 1; i + 1 < n && uniform_; ++i)
        uniform_ = std::abs((knots_[i + 1] - knots_[i]) - step) <= 1e-12 * step;
    inv_step_ = 1.0 / step;
}

void HermiteCurve::check_domain(double s) const {
    if (knots_.empty()) throw DomainError("evaluating an empty curve");
    if (!(s >= knots_.front()))
        throw DomainError("curve evaluated outside its domain at s = " + text::format_double(s));
}

std::size_t HermiteCurve::segment(double s) const {
    const std::size_t last = knots_.size() - 2;
    if (uniform_) {
        auto idx = static_cast<std::size_t>(std::max(0.0, (s - knots_[0]) * inv_step_));
        idx = std::min(idx, last);
        while (idx > 0 && s < knots_[idx]) --idx;
        while (idx < last && s > knots_[idx + 1]) ++idx;
        return idx;
    }
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), s);
    const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - knots_.begin() - 1));
    return std::min(idx, last);
}

double HermiteCurve::evaluate(double s) const {
    check_domain(s);
    if (s > knots_.back()) {
        const double d = s - knots_.back();
        return values_.back() + tail_.slope_near * std::min(d, tail_.near_width) +
               tail_.slope_far * std::max(0.0, d - tail_.near_width);
    }
    const auto i = segment(s);
    const double h = knots_[i + 1] - knots_[i];
    const double t = (s - knots_[i]) / h;
    const auto w = hermite_basis(t);
    // h00 = 1 - h01; the increment form is exact on flat segments.
    return values_[i] + w.h01 * (values_[i + 1] - values_[i]) +
           h * (w.h10 * tangents_[i] + w.h11 * tangents_[i + 1]);
}

double HermiteCurve::derivative(double s) const {
    check_domain(s);
    if (s > knots_.back()) {
        const double d = s - knots_.back();
        return d <= tail_.near_width ? tail_.slope_near : tail_.slope_far;
    }
    const auto i = segment(s);
    const double h = knots_[i + 1] - knots_[i];
    const double t = (s - knots_[i]) / h;
    return segment_derivative(values_[i], values_[i + 1], tangents_[i], tangents_[i + 1], h)(t);
}

double HermiteCurve::integral(double s) const {
    check_domain(s);
    if (s > knots_.back()) {
        const double d = s - knots_.back();
        const double w = tail_.near_width;
        const double near = d <= w ? d * d / 2 : w * w / 2 + w * (d - w);
        const double far = std::max(0.0, d - w);
        return cumulative_.back() + values_.back() * d + tail_.slope_near * near +
               tail_.slope_far * far * far / 2;
    }
    const auto i = segment(s);
    const double h = knots_[i + 1] - knots_[i];
    const double t = (s - knots_[i]) / h;
    const auto w = hermite_basis_integral(t);
    return cumulative_[i] + h * (w.h00 * values_[i] + w.h10 * h * tangents_[i] +
                                 w.h01 * values_[i + 1] + w.h11 * h * tangents_[i + 1]);
}

double HermiteCurve::min_derivative(double s_end) const {
    return derivative(argmin_derivative(s_end));
}

double HermiteCurve::argmin_derivative(double s_end) const {
    check_domain(s_end);
    double best = std::numeric_limits<double>::infinity();
    double where = knots_.front();
    for (std::size_t i = 0; i + 1 < knots_.size() && knots_[i] < s_end; ++i) {
        const double h = knots_[i + 1] - knots_[i];
        const double t_end = std::min(1.0, (s_end - knots_[i]) / h);
        const auto q = segment_derivative(values_[i], values_[i + 1], tangents_[i],
                                          tangents_[i + 1], h);
        const auto [v, t] = quadratic_min(q, t_end);
        if (v < best) {
            best = v;
            where = knots_[i] + t * h;
        }
    }
    const double d_end = s_end - knots_.back();
    if (d_end > 0.0) {
        const double d_near = std::min(d_end, tail_.near_width);
        if (d_near > 0.0 && tail_.slope_near < best) {
            best = tail_.slope_near;
            where = knots_.back() + d_near;
        }
        if (d_end > tail_.near_width && tail_.slope_far < best) {
            best = tail_.slope_far;
            where = s_end;
        }
    }
    return where;
}

HermiteCurve HermiteCurve::combine(std::span<const HermiteCurve* const> curves,
                                   std::span<const double> weights) {
    if (curves.empty() || curves.size() != weights.size())
        throw InputError("combine: curve and weight counts differ");
    const auto& ref = *curves.front();
    const auto n = ref.knots_.size();
    std::vector<double> values(n, 0.0), tangents(n, 0.0);
    double width = 0.0;
    CurveTail tail{0.0, 0.0, 0.0};
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const auto& curve = *curves[c];
        if (curve.knots_ != ref.knots_) throw InputError("combine: curves use different knots");
        const double w = weights[c];
        for (std::size_t i = 0; i < n; ++i) {
            values[i] += w * curve.values_[i];
            tangents[i] += w * curve.tangents_[i];
        }
        // A tail with equal slopes is indifferent to its break point.
        if (curve.tail_.slope_near != curve.tail_.slope_far) {
            if (width != 0.0 && width != curve.tail_.near_width)
                throw InputError("combine: curves use different tail widths");
            width = curve.tail_.near_width;
        }
        tail.slope_near += w * curve.tail_.slope_near;
        tail.slope_far += w * curve.tail_.slope_far;
    }
    tail.near_width = width;
    return HermiteCurve(ref.knots_, std::move(values), std::move(tangents), tail);
}

// ---------------------------------------------------------------------------
// Fritsch-Carlson

std::vector<double> fritsch_carlson_tangents(std::span<const double> x,
                                             std::span<const double> y) {
    const auto n = x.size();
    if (n < 2 || y.size() != n) throw InputError("monotone spline needs matching x/y, n >= 2");
    std::vector<double> delta(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (!(x[k + 1] > x[k]))
            throw InputError("abscissae not strictly increasing at index " + std::to_string(k + 1),
                             static_cast<std::ptrdiff_t>(k + 1));
        if (y[k + 1] < y[k])
            throw InputError("values decreasing at index " + std::to_string(k + 1),
                             static_cast<std::ptrdiff_t>(k + 1));
        delta[k] = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
    }

    std::vector<double> m(n);
    m.front() = delta.front();
    m.back() = delta.back();
    for (std::size_t k = 1; k + 1 < n; ++k)
        m[k] = (delta[k - 1] == 0.0 || delta[k] == 0.0) ? 0.0 : (delta[k - 1] + delta[k]) / 2;

    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (delta[k] == 0.0) {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        const double a = m[k] / delta[k];
        const double b = m[k + 1] / delta[k];
        const double r2 = a * a + b * b;
        if (r2 > 9.0) {
            const double tau = 3.0 / std::sqrt(r2);
            m[k] = tau * a * delta[k];
            m[k + 1] = tau * b * delta[k];
        }
    }
    return m;
}

MonotoneCurve fit_monotone_spline(std::span<const double> b, std::span<const double> h,
                                  double slope_floor) {
    if (b.size() < 3) throw InputError("monotone spline needs at least three samples");
    auto tangents = fritsch_carlson_tangents(b, h);
    const double slope = std::max(tangents.back(), slope_floor);
    return MonotoneCurve(HermiteCurve(std::vector<double>(b.begin(), b.end()),
                                      std::vector<double>(h.begin(), h.end()),
                                      std::move(tangents), CurveTail::linear(slope)));
}

MonotoneCurve fit_monotone_spline(const PermeameterTable& table, double slope_floor) {
    table.validate();
    std::vector<double> b, h;
    b.reserve(table.samples.size());
    h.reserve(table.samples.size());
    for (const auto& s : table.samples) {
        b.push_back(s.b);
        h.push_back(s.h);
    }
    return fit_monotone_spline(b, h, slope_floor);
}

// ---------------------------------------------------------------------------
// Synthetic ensemble

namespace {

constexpr double kMu0 = 4e-7 * std::numbers::pi;

// Saturating B(H) with initial relative permeability mu_r, saturation
// polarization js and knee exponent p.
struct SaturationLaw {
    double js, mu_r, p;

    double b_of_h(double h) const {
        const double x = kMu0 * (mu_r - 1.0) * h / js;
        return kMu0 * h + js * x / std::pow(1.0 + std::pow(x, p), 1.0 / p);
    }

    // Bisection to full double precision; B(H) >= mu0 H bounds the bracket.
    double h_of_b(double b) const {
        if (b <= 0.0) return 0.0;
        double lo = 0.0, hi = b / kMu0;
        for (int it = 0; it < 2000; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            (b_of_h(mid) < b ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }
};

// Uniform double in [-1, 1] from the raw generator; independent of the
// standard library's distribution implementations.
inline double symmetric_unit(std::mt19937_64& rng) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
}

} // namespace

std::vector<double> knee_clustered_grid(std::size_t count, double b_max) {
    if (count < 2 || !(b_max > 0.0)) throw InputError("grid needs count >= 2 and b_max > 0");
    // Point density 1 + 3 exp(-((B - B_knee)/w)^2), inverted through its CDF.
    const double knee = 0.75 * b_max, width = 0.15 * b_max;
    constexpr std::size_t fine = 4000;
    std::vector<double> s(fine + 1), cdf(fine + 1, 0.0);
    auto density = [&](double b) { return 1.0 + 3.0 * std::exp(-std::pow((b - knee) / width, 2)); };
    for (std::size_t i = 0; i <= fine; ++i) s[i] = b_max * static_cast<double>(i) / fine;
    for (std::size_t i = 1; i <= fine; ++i)
        cdf[i] = cdf[i - 1] + 0.5 * (density(s[i]) + density(s[i - 1])) * (s[i] - s[i - 1]);
    for (auto& c : cdf) c /= cdf.back();

    std::vector<double> grid(count);
    grid.front() = 0.0;
    grid.back() = b_max;
    for (std::size_t l = 1; l + 1 < count; ++l) {
        const double target = static_cast<double>(l) / static_cast<double>(count - 1);
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
        const auto j = static_cast<std::size_t>(it - cdf.begin());
        const double frac = (target - cdf[j - 1]) / (cdf[j] - cdf[j - 1]);
        grid[l] = s[j - 1] + frac * (s[j] - s[j - 1]);
    }
    return grid;
}

std::vector<PermeameterTable> synth_ensemble(std::uint64_t seed, std::size_t specimens,
                                             std::size_t points, double b_max,
                                             const EnsembleShape& shape) {
    if (specimens < 2) throw InputError("synthetic ensemble needs K >= 2");
    if (points < 5) throw InputError("synthetic ensemble needs L >= 5");
    if (!(b_max > 0.0)) throw InputError("synthetic ensemble needs B_max > 0");

    if (!(shape.js_factor > 1.0) || !(shape.mu_r > 1.0) || !(shape.knee > 0.0) ||
        !(shape.spread >= 0.0 && shape.spread < 0.5))
        throw InputError("invalid synthetic ensemble shape");
    const double spread = shape.spread;
    const double js0 = shape.js_factor * b_max, mu_r0 = shape.mu_r, p0 = shape.knee;
    const auto grid = knee_clustered_grid(points, b_max);

    std::mt19937_64 rng(seed);
    std::vector<PermeameterTable> tables;
    tables.reserve(specimens);
    for (std::size_t k = 0; k < specimens; ++k) {
        SaturationLaw law{};
        law.js = js0 * (1.0 + spread * symmetric_unit(rng));
        law.mu_r = mu_r0 * (1.0 + spread * symmetric_unit(rng));
        law.p = p0 * (1.0 + spread * symmetric_unit(rng));

        PermeameterTable table;
        table.specimen_id = "synthetic_" + std::to_string(k + 1);
        table.samples.reserve(points);
        for (const double b : grid) table.samples.push_back({b, law.h_of_b(b)});
        table.validate();
        tables.push_back(std::move(table));
    }
    return tables;
}

// ---------------------------------------------------------------------------
// CSV

PermeameterTable read_table_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open specimen file " + path.string());
    PermeameterTable table;
    table.specimen_id = path.stem().string();
    std::string line;
    std::size_t row = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++row;
        if (text::is_blank_or_comment(line)) continue;
        const auto where = path.string() + ":" + std::to_string(row);
        if (!header_seen) {
            if (text::trim(line) != "B_T,H_Am")
                throw InputError(where + ": expected header 'B_T,H_Am'",
                                 static_cast<std::ptrdiff_t>(row));
            header_seen = true;
            continue;
        }
        const auto fields = text::split(text::trim(line), ',');
        if (fields.size() != 2)
            throw InputError(where + ": expected two fields", static_cast<std::ptrdiff_t>(row));
        const auto b = text::parse_double(fields[0]);
        const auto h = text::parse_double(fields[1]);
        if (!b || !h)
            throw InputError(where + ": malformed number", static_cast<std::ptrdiff_t>(row));
        table.samples.push_back({*b, *h});
    }
    if (!header_seen) throw InputError(path.string() + ": missing header 'B_T,H_Am'");
    try {
        table.validate();
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what(), e.index());
    }
    return table;
}

void write_table_csv(const PermeameterTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "# specimen " << table.specimen_id << "\n";
    out << "B_T,H_Am\n";
    for (const auto& s : table.samples)
        out << text::format_double(s.b) << ',' << text::format_double(s.h) << '\n';
}

std::vector<PermeameterTable> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw InputError("cannot open manifest " + manifest.string());
    std::vector<PermeameterTable> tables;
    std::string line;
    while (std::getline(in, line)) {
        if (text::is_blank_or_comment(line)) continue;
        std::filesystem::path p(std::string(text::trim(line)));
        if (p.is_relative()) p = manifest.parent_path() / p;
        tables.push_back(read_table_csv(p));
    }
    if (tables.empty()) throw InputError("manifest " + manifest.string() + " lists no specimens");
    return tables;
}

void write_manifest(const std::vector<PermeameterTable>& tables,
                    const std::filesystem::path& directory,
                    const std::filesystem::path& manifest_name) {
    std::filesystem::create_directories(directory);
    std::ofstream out(directory / manifest_name);
    if (!out) throw InputError("cannot write manifest in " + directory.string());
    out << "# specimen tables\n";
    for (const auto& t : tables) {
        const auto file = t.specimen_id + ".csv";
        write_table_csv(t, directory / file);
        out << file << '\n';
    }
}

} // namespace bhkle
