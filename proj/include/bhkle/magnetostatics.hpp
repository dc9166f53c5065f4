#ifndef BHKLE_MAGNETOSTATICS_HPP
#define BHKLE_MAGNETOSTATICS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "bhkle/curves.hpp"
#include "bhkle/mesh.hpp"

namespace bhkle {

inline constexpr double kMu0 = 4e-7 * std::numbers::pi;
inline constexpr double kNu0 = 1.0 / kMu0;

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Isotropic constitutive law H = h(|B|) B/|B| with its derivative and the
// stored-energy density w(b) = integral of h from 0 to b.
class MagneticLaw {
public:
    virtual ~MagneticLaw() = default;
    virtual double h(double b) const = 0;
    virtual double dh(double b) const = 0;
    virtual double energy(double b) const = 0;
    // nu(b) = h(b)/b, continued by h'(0) at the origin.
    double reluctivity(double b) const { return b > kTiny ? h(b) / b : dh(0.0); }

    static constexpr double kTiny = 1e-14;
};

class LinearLaw final : public MagneticLaw {
public:
    explicit LinearLaw(double nu) : nu_(nu) {}
    double h(double b) const override { return nu_ * b; }
    double dh(double) const override { return nu_; }
    double energy(double b) const override { return 0.5 * nu_ * b * b; }

private:
    double nu_;
};

// Material given by a B -> H curve (monotone, C1).
class CurveLaw final : public MagneticLaw {
public:
    explicit CurveLaw(HermiteCurve curve) : curve_(std::move(curve)) {}
    double h(double b) const override { return curve_.evaluate(b); }
    double dh(double b) const override { return curve_.derivative(b); }
    double energy(double b) const override { return curve_.integral(b); }
    const HermiteCurve& curve() const { return curve_; }

private:
    HermiteCurve curve_;
};

// Iron follows `iron`; air, gap and conductors use nu_air.
struct Materials {
    std::shared_ptr<const MagneticLaw> iron;
    double nu_air = kNu0;
};

enum class LinearSolverKind { SparseCholesky, ConjugateGradient };

struct SolverOptions {
    double tolerance = 1e-8; // relative residual ||r|| / ||f||
    int max_steps = 50;
    int max_halvings = 20;
    LinearSolverKind linear_solver = LinearSolverKind::SparseCholesky;
    double cg_tolerance = 1e-10;
    bool keep_tangent = false; // store the tangent at the converged state

    bool operator==(const SolverOptions&) const = default;
};

struct FieldSolution {
    std::vector<double> a; // nodal A_z, Wb/m
    std::vector<Vec2> b;   // per-element flux density, T
    double current = 0.0;  // A
    bool converged = false;
    int newton_steps = 0;
    std::vector<double> residual_history; // relative residual at each iterate
    std::vector<double> energy_history;   // energy functional at each iterate
    std::shared_ptr<const SparseMatrix> tangent;
    std::uint64_t tangent_fingerprint = 0;
};

std::uint64_t matrix_fingerprint(const SparseMatrix& m);

// Precomputed first-order triangle data and sparsity for one mesh, with
// homogeneous Dirichlet nodes eliminated. Immutable after construction and
// safe to share across threads.
class MagnetostaticProblem {
public:
    struct Element {
        double area;
        std::array<int, 3> nodes;
        std::array<Vec2, 3> curl; // curl(phi_k e_z), constant per element
        Region region;
    };

    MagnetostaticProblem(std::shared_ptr<const Mesh> mesh, int turns);

    const Mesh& mesh() const { return *mesh_; }
    int turns() const { return turns_; }
    std::size_t free_count() const { return free_nodes_.size(); }
    std::span<const Element> elements() const { return elements_; }
    // Free unknown index for each node, -1 for Dirichlet nodes.
    std::span<const int> dof() const { return dof_; }

    Eigen::VectorXd load(double current) const;
    Eigen::VectorXd to_free(std::span<const double> nodal) const;
    std::vector<double> to_nodal(const Eigen::VectorXd& free) const;
    std::vector<Vec2> flux_density(const Eigen::VectorXd& free) const;

    Eigen::VectorXd residual(const Materials& mat, double current, const Eigen::VectorXd& free) const;
    SparseMatrix tangent(const Materials& mat, const Eigen::VectorXd& free) const;
    double energy(const Materials& mat, double current, const Eigen::VectorXd& free) const;
    // Matrix of the linear problem with reluctivity `nu` everywhere in iron.
    SparseMatrix stiffness(double nu_iron, double nu_air = kNu0) const;

    // Newton iteration with energy backtracking. Throws DivergenceError
    // after max_steps, NumericalError on a singular tangent.
    FieldSolution solve(const Materials& mat, double current, const SolverOptions& options = {},
                        std::span<const double> initial = {}) const;

private:
    const MagneticLaw& law(const Materials& mat, Region r) const;
    void fill_tangent(const Materials& mat, const std::vector<Vec2>& b, SparseMatrix& k) const;

    std::shared_ptr<const Mesh> mesh_;
    int turns_;
    std::vector<Element> elements_;
    std::vector<int> dof_;
    std::vector<int> free_nodes_;
    SparseMatrix pattern_;
    std::vector<std::array<int, 9>> slots_; // element -> value index in pattern_, -1 if fixed
    double area_positive_ = 0.0, area_negative_ = 0.0;
};

FieldSolution assemble_and_solve(const MagnetostaticProblem& problem, const Materials& mat,
                                 double current, const SolverOptions& options = {});

// Flux density at a point as a weighted sum of element values.
struct ProbeStencil {
    Point point;
    std::size_t element = 0;
    std::vector<std::pair<std::size_t, double>> weights;
};

// Locates each point; with patch averaging the containing element is
// averaged with its same-region edge neighbours, weighted by area. Throws
// LocationError for points outside the mesh.
std::vector<ProbeStencil> locate_probes(const Mesh& mesh, std::span<const Point> points,
                                        bool patch_average = true);

Vec2 probe_B(std::span<const Vec2> element_b, const ProbeStencil& stencil);
std::vector<Vec2> probe_B(std::span<const Vec2> element_b, std::span<const ProbeStencil> stencils);
std::vector<Vec2> probe_B(const FieldSolution& solution, std::span<const ProbeStencil> stencils);
std::vector<Vec2> probe_B(const Mesh& mesh, const FieldSolution& solution,
                          std::span<const Point> points, bool patch_average = true);

// CSV `x,y,Bx,By` per element centroid.
void write_field_csv(const Mesh& mesh, const FieldSolution& solution,
                     const std::filesystem::path& path);

} // namespace bhkle

#endif // BHKLE_MAGNETOSTATICS_HPP
