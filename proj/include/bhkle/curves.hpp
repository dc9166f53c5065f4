#ifndef BHKLE_CURVES_HPP
#define BHKLE_CURVES_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bhkle {

// One permeameter reading.
struct BHSample {
    double b; // T
    double h; // A/m
};

// Discrete B -> H table of one specimen. Starts at the origin, strictly
// increasing in both coordinates.
struct PermeameterTable {
    std::string specimen_id;
    std::vector<BHSample> samples;

    // Throws InputError carrying the offending sample index.
    void validate() const;
};

// Continuation of a curve beyond its last knot, as a function of the
// distance d past that knot: slope_near on [0, near_width], slope_far after.
struct CurveTail {
    double slope_near = 0.0;
    double near_width = 0.0;
    double slope_far = 0.0;

    static CurveTail linear(double slope) { return {slope, 0.0, slope}; }
};

// Piecewise cubic Hermite curve on [knots.front(), knots.back()] with a
// piecewise linear tail. Values, first derivative and the antiderivative
// from the first knot are exact.
class HermiteCurve {
public:
    HermiteCurve() = default;
    HermiteCurve(std::vector<double> knots, std::vector<double> values,
                 std::vector<double> tangents, CurveTail tail);

    double operator()(double s) const { return evaluate(s); }
    double evaluate(double s) const;
    double derivative(double s) const;
    // Integral of the curve from knots.front() to s.
    double integral(double s) const;
    // Exact minimum of the derivative over [knots.front(), s_end].
    double min_derivative(double s_end) const;
    // Location of that minimum.
    double argmin_derivative(double s_end) const;

    std::span<const double> knots() const { return knots_; }
    std::span<const double> values() const { return values_; }
    std::span<const double> tangents() const { return tangents_; }
    const CurveTail& tail() const { return tail_; }
    double last_knot() const { return knots_.back(); }
    bool empty() const { return knots_.empty(); }

    // Sum of weights[i] * curves[i]; all curves must share knots and tail
    // width.
    static HermiteCurve combine(std::span<const HermiteCurve* const> curves,
                                std::span<const double> weights);

private:
    std::size_t segment(double s) const;
    void check_domain(double s) const;

    std::vector<double> knots_;
    std::vector<double> values_;
    std::vector<double> tangents_;
    std::vector<double> cumulative_; // integral up to each knot
    CurveTail tail_;
    bool uniform_ = false;
    double inv_step_ = 0.0;
};

// Monotone nondecreasing B -> H map on [0, B_L] with a linear continuation.
class MonotoneCurve {
public:
    MonotoneCurve() = default;
    explicit MonotoneCurve(HermiteCurve curve) : curve_(std::move(curve)) {}

    double evaluate(double s) const { return curve_.evaluate(s); }
    double operator()(double s) const { return curve_.evaluate(s); }
    double derivative(double s) const { return curve_.derivative(s); }
    double integral(double s) const { return curve_.integral(s); }

    std::span<const double> knots() const { return curve_.knots(); }
    std::span<const double> values() const { return curve_.values(); }
    std::span<const double> tangents() const { return curve_.tangents(); }
    double extrapolation_slope() const { return curve_.tail().slope_far; }
    double b_max() const { return curve_.last_knot(); }
    const HermiteCurve& hermite() const { return curve_; }

private:
    HermiteCurve curve_;
};

// Slope floor for linear continuation past the last sample, A/m per T.
inline constexpr double kDefaultSlopeFloor = 1.0;

// Fritsch-Carlson tangents for nondecreasing data on strictly increasing
// abscissae. Flat segments get zero tangents at both ends.
std::vector<double> fritsch_carlson_tangents(std::span<const double> x,
                                             std::span<const double> y);

MonotoneCurve fit_monotone_spline(std::span<const double> b,
                                  std::span<const double> h,
                                  double slope_floor = kDefaultSlopeFloor);
MonotoneCurve fit_monotone_spline(const PermeameterTable& table,
                                  double slope_floor = kDefaultSlopeFloor);

// Abscissa grid on [0, b_max] clustered around the saturation knee.
std::vector<double> knee_clustered_grid(std::size_t count, double b_max);

// Deterministic stand-in for a permeameter campaign: K specimens of a
// saturating material with three perturbed parameters, sampled on a
// shared grid.
struct EnsembleShape {
    double js_factor = 1.05; // saturation polarization / b_max
    double mu_r = 4000.0;
    double knee = 1.0;       // knee sharpness exponent
    double spread = 0.05;    // relative half-width of each perturbation

    bool operator==(const EnsembleShape&) const = default;
};

std::vector<PermeameterTable> synth_ensemble(std::uint64_t seed, std::size_t specimens,
                                             std::size_t points, double b_max,
                                             const EnsembleShape& shape = {});

// CSV ingestion. A specimen file has the header `B_T,H_Am`; a manifest
// lists one specimen path per line, relative to the manifest. Lines whose
// first non-blank character is '#' are comments.
PermeameterTable read_table_csv(const std::filesystem::path& path);
void write_table_csv(const PermeameterTable& table, const std::filesystem::path& path);
std::vector<PermeameterTable> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::vector<PermeameterTable>& tables,
                    const std::filesystem::path& directory,
                    const std::filesystem::path& manifest_name = "manifest.txt");

} // namespace bhkle

#endif // BHKLE_CURVES_HPP
