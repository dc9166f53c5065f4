#ifndef BHKLE_SENSITIVITY_HPP
#define BHKLE_SENSITIVITY_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Sparse>

#include "bhkle/kle.hpp"
#include "bhkle/magnetostatics.hpp"
#include "bhkle/mesh.hpp"

namespace bhkle {

// Reluctivity perturbation nu~(s) = sqrt(lambda) * b(s) / s for one mode.
class ReluctivityPerturbation {
public:
    ReluctivityPerturbation(HermiteCurve mode, double eigenvalue, double first_positive_knot);

    double operator()(double s) const;
    // sqrt(lambda) * b(s), the perturbation of H at |B| = s.
    double h(double s) const { return scale_ * mode_.evaluate(s); }
    double energy(double s) const { return scale_ * mode_.integral(s); }
    double scale() const { return scale_; }
    const HermiteCurve& mode() const { return mode_; }

private:
    HermiteCurve mode_;
    double scale_;
    bool vanishes_at_zero_;
    double floor_; // below this |B| the limit value is used
};

// m is 1-based.
ReluctivityPerturbation mode_perturbation(const MaterialModel& model, int m);

struct SensitivityField {
    int mode = 0;                 // 1-based
    std::vector<double> a_prime;  // nodal, zero on Dirichlet nodes
    std::vector<Vec2> b_prime;    // per element
    std::uint64_t tangent_fingerprint = 0;
};

// Factorizes the tangent stored in a converged forward solution once and
// solves K A' = -r~ for any number of perturbations. solve() is const and
// may be called from several threads.
class GateauxSolver {
public:
    GateauxSolver(const MagnetostaticProblem& problem, const FieldSolution& nominal);

    // Right-hand side integral of nu~(|B|) B . curl v over iron.
    Eigen::VectorXd perturbation_load(const ReluctivityPerturbation& p) const;
    SensitivityField solve(const ReluctivityPerturbation& p, int mode) const;
    SensitivityField solve_load(const Eigen::VectorXd& load, int mode) const;
    std::uint64_t fingerprint() const { return fingerprint_; }

private:
    const MagnetostaticProblem& problem_;
    const FieldSolution& nominal_;
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
    std::uint64_t fingerprint_;
};

SensitivityField solve_gateaux(const MagnetostaticProblem& problem, const FieldSolution& nominal,
                               const MaterialModel& model, int m);

// All M modes against one factorization; `threads` > 1 runs modes in parallel.
std::vector<SensitivityField> solve_all_modes(const MagnetostaticProblem& problem,
                                              const FieldSolution& nominal,
                                              const MaterialModel& model, int threads = 1);

// Lattice of spacing gap/10 through the origin, restricted to gap air.
std::vector<Point> candidate_grid(const DipoleGeometry& geometry);

struct RankedProbe {
    Point point;
    std::size_t index = 0; // position in the candidate list
    double score = 0.0;    // sum over modes of |dBy|
    std::vector<double> per_mode;
};

// Scores every candidate and returns the first `count` in descending order
// (ties by input index). Throws InputError on an empty candidate list.
std::vector<RankedProbe> rank_probes(std::span<const SensitivityField> fields, const Mesh& mesh,
                                     std::span<const Point> candidates, std::size_t count = 5,
                                     bool patch_average = true);

// `x,y,dBy_mode1,...` at element centroids.
void write_sensitivity_csv(const Mesh& mesh, std::span<const SensitivityField> fields,
                           const std::filesystem::path& path);
void write_ranking_json(std::span<const RankedProbe> ranking, const DipoleGeometry& geometry,
                        const std::filesystem::path& path);

} // namespace bhkle

#endif // BHKLE_SENSITIVITY_HPP
