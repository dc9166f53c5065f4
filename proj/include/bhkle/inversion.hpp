#ifndef BHKLE_INVERSION_HPP
#define BHKLE_INVERSION_HPP

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bhkle/kle.hpp"
#include "bhkle/magnetostatics.hpp"
#include "bhkle/swarm.hpp"

namespace bhkle {

// B_y measured at every probe for every current.
struct ObservationSet {
    std::vector<double> currents; // strictly increasing, A
    std::vector<Point> probes;    // m
    Eigen::MatrixXd by;           // currents x probes, T
    std::string provenance = "external";

    // Throws InputError; with a geometry, also checks that probes lie in gap air.
    void validate(const DipoleGeometry* geometry = nullptr) const;
};

// CSV `current_A,x_m,y_m,By_T`; rows must cover the full current x probe grid.
ObservationSet read_observations(const std::filesystem::path& path);
void write_observations(const ObservationSet& obs, const std::filesystem::path& path);

// `count` currents spaced geometrically between lo and hi inclusive.
std::vector<double> log_spaced_currents(double lo, double hi, std::size_t count);

// Forward map y -> B_y(currents x probes). Each sweep runs the currents in
// increasing order, warm-starting from the scaled previous solution. Sweeps
// are cached by the exact bit pattern of y. Thread-safe.
class ForwardModel {
public:
    ForwardModel(std::shared_ptr<const MagnetostaticProblem> problem,
                 std::shared_ptr<const MaterialModel> model, std::vector<double> currents,
                 std::vector<Point> probes, SolverOptions options = {}, bool patch_average = true);

    // Throws DomainError outside the box, DivergenceError/NumericalError on
    // solver failure.
    Eigen::MatrixXd simulate(std::span<const double> y) const;
    // simulate() for an explicit material curve, bypassing the cache.
    Eigen::MatrixXd simulate_curve(const HermiteCurve& curve) const;

    std::span<const double> currents() const { return currents_; }
    std::span<const Point> probes() const { return probes_; }
    const MaterialModel& model() const { return *model_; }
    const MagnetostaticProblem& problem() const { return *problem_; }

    std::size_t forward_solves() const { return solves_.load(); }
    std::size_t cache_hits() const { return hits_.load(); }
    std::size_t divergent_sweeps() const { return divergent_.load(); }
    void note_divergence() const { ++divergent_; }
    void clear_cache();

private:
    std::shared_ptr<const MagnetostaticProblem> problem_;
    std::shared_ptr<const MaterialModel> model_;
    std::vector<double> currents_;
    std::vector<Point> probes_;
    std::vector<ProbeStencil> stencils_;
    SolverOptions options_;

    mutable std::mutex mutex_;
    mutable std::map<std::vector<std::uint64_t>, Eigen::MatrixXd> cache_;
    mutable std::atomic<std::size_t> solves_{0}, hits_{0}, divergent_{0};
};

inline constexpr double kDivergenceSentinel = 1e6; // T^2

// Sum of squared B_y mismatches, T^2. Returns the sentinel when a forward
// solve fails. The forward model must match the observation layout.
double objective(const ForwardModel& forward, const ObservationSet& obs, std::span<const double> y);

// objective + a (y - y_mean)^T Cov(Y)^-1 (y - y_mean).
double objective_regularized(const ForwardModel& forward, const ObservationSet& obs,
                             std::span<const double> y, double a);
double mahalanobis_penalty(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& cov);

struct ErrorMetrics {
    std::vector<double> b;     // grid points where E^rel is defined
    std::vector<double> e_rel; // |f(y_hat,B) - f(y0,B)| / f(y0,B)
    std::vector<double> currents;
    std::vector<Point> probes;
    Eigen::MatrixXd e_abs;     // currents x probes, T
    double max_e_rel() const;
    double max_e_abs() const;
};

// Relative curve error on 100 points over (0, B_L] (skipping f(y0) < 10 A/m)
// and absolute B_y error against the validation data.
ErrorMetrics error_metrics(std::span<const double> y_hat, std::span<const double> y0,
                           const MaterialModel& model, const ObservationSet* validation,
                           const ForwardModel* validation_forward);

struct IdentifyOptions {
    SwarmOptions swarm;
    double regularization = 0.0;
};

struct IdentificationResult {
    Eigen::VectorXd y_hat;
    double best_value = 0.0;
    std::vector<double> history;
    int iterations = 0;
    bool stalled = false;
    std::size_t evaluations = 0;    // objective calls
    std::size_t sweeps_requested = 0; // evaluations x currents
    std::size_t forward_solves = 0;
    std::size_t cache_hits = 0;
    std::size_t divergent_evaluations = 0;
    std::uint64_t seed = 0;
    std::optional<ErrorMetrics> errors;
};

IdentificationResult identify(const ObservationSet& obs, const ForwardModel& forward,
                              const IdentifyOptions& options);

} // namespace bhkle

#endif // BHKLE_INVERSION_HPP
