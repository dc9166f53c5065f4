#ifndef BHKLE_KLE_HPP
#define BHKLE_KLE_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bhkle/curves.hpp"

namespace bhkle {

// Sample mean and unbiased sample covariance of an ensemble of curves on a
// uniform grid over [0, B_L].
struct EnsembleStatistics {
    std::vector<double> grid;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

// Composite trapezoid weights on an ascending grid.
Eigen::VectorXd trapezoid_weights(std::span<const double> grid);

EnsembleStatistics estimate_statistics(std::span<const MonotoneCurve> curves,
                                       std::size_t grid_size = 200);

// Eigenpair of the covariance integral operator. `mode` holds nodal values
// on the statistics grid, L2-normalized under trapezoid quadrature.
struct Eigenpair {
    double value = 0.0;
    Eigen::VectorXd mode;
};

// Galerkin discretization with piecewise-linear hat functions and a
// trapezoid-lumped mass matrix. Returns at most max_modes pairs in
// decreasing eigenvalue order, each mode nonnegative at B_L.
std::vector<Eigenpair> solve_eigenproblem(const EnsembleStatistics& stats,
                                          std::size_t max_modes);

struct ModelOptions {
    double alpha = 1.0;         // derivative floor, A/m per T
    double shrink_factor = 0.9; // half-width multiplier per adjustment
    int max_shrink_iterations = 50;

    bool operator==(const ModelOptions&) const = default;
};

// Parameterized material curve f(y, s) = mean(s) + sum_m sqrt(lambda_m) y_m b_m(s)
// with an admissible box for y on which every curve is monotone.
class MaterialModel {
public:
    MaterialModel() = default;
    // Assembles a model from its stored data; used by build_model and the
    // JSON reader. Box values are taken as given.
    MaterialModel(std::vector<double> grid, Eigen::VectorXd mean, std::vector<double> eigenvalues,
                  Eigen::MatrixXd modes, Eigen::VectorXd y_min, Eigen::VectorXd y_max,
                  Eigen::MatrixXd y_samples, double alpha);

    std::size_t dimension() const { return eigenvalues_.size(); }
    double b_max() const { return grid_.back(); }
    double alpha() const { return alpha_; }

    std::span<const double> grid() const { return grid_; }
    const Eigen::VectorXd& mean_values() const { return mean_; }
    std::span<const double> eigenvalues() const { return eigenvalues_; }
    // Column m holds mode m+1 on the grid.
    const Eigen::MatrixXd& mode_values() const { return modes_; }
    const Eigen::VectorXd& y_min() const { return y_min_; }
    const Eigen::VectorXd& y_max() const { return y_max_; }
    const Eigen::MatrixXd& y_samples() const { return y_samples_; }
    const Eigen::VectorXd& y_mean() const { return y_mean_; }
    const Eigen::MatrixXd& y_cov() const { return y_cov_; }

    const MonotoneCurve& mean_curve() const { return mean_curve_; }
    // Continuous mode b_m (0-based index): C1 cubic through the grid values,
    // ramped to zero over [B_L, 2 B_L].
    const HermiteCurve& mode_curve(std::size_t m) const { return mode_curves_.at(m); }

    bool in_box(std::span<const double> y) const;
    // Material curve for y; throws DomainError when y leaves the box.
    HermiteCurve curve(std::span<const double> y) const;
    // Same expansion without the box check. Used for perturbation studies.
    HermiteCurve curve_unchecked(std::span<const double> y) const;

    double evaluate(std::span<const double> y, double s) const;

    // Replaces the box; callers use this for shrinking and for tests.
    void set_box(Eigen::VectorXd y_min, Eigen::VectorXd y_max);

private:
    void build_curves();

    std::vector<double> grid_;
    Eigen::VectorXd mean_;
    std::vector<double> eigenvalues_;
    Eigen::MatrixXd modes_;
    Eigen::VectorXd y_min_, y_max_;
    Eigen::MatrixXd y_samples_;
    Eigen::VectorXd y_mean_;
    Eigen::MatrixXd y_cov_;
    double alpha_ = 1.0;

    MonotoneCurve mean_curve_;
    std::vector<HermiteCurve> mode_curves_;
};

// Projections Y^k_m of each curve onto the first `count` modes.
Eigen::MatrixXd project_curves(const EnsembleStatistics& stats,
                               std::span<const Eigenpair> pairs, std::size_t count,
                               std::span<const MonotoneCurve> curves);

MaterialModel build_model(const EnsembleStatistics& stats, std::span<const Eigenpair> pairs,
                          std::size_t modes, std::span<const MonotoneCurve> curves,
                          const ModelOptions& options = {});

double evaluate_model(const MaterialModel& model, std::span<const double> y, double s);

// Checks every corner of the box; returns the index bitmask of the first
// corner whose curve has derivative <= alpha somewhere on [0, 2 B_L], or -1.
long long first_nonmonotone_corner(const MaterialModel& model);

std::string model_to_json(const MaterialModel& model);
MaterialModel model_from_json(const std::string& json);
void save_model(const MaterialModel& model, const std::filesystem::path& path);
MaterialModel load_model(const std::filesystem::path& path);

} // namespace bhkle

#endif // BHKLE_KLE_HPP
