#include "bhkle/magnetostatics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>

#include "bhkle/errors.hpp"
#include "text_util.hpp"

namespace bhkle {

namespace {

void fnv_mix(std::uint64_t& h, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
}

} // namespace

std::uint64_t matrix_fingerprint(const SparseMatrix& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto nnz = static_cast<std::size_t>(m.nonZeros());
    const Eigen::Index rows = m.rows(), cols = m.cols();
    fnv_mix(h, &rows, sizeof rows);
    fnv_mix(h, &cols, sizeof cols);
    if (m.isCompressed()) {
        fnv_mix(h, m.outerIndexPtr(), sizeof(int) * static_cast<std::size_t>(cols + 1));
        fnv_mix(h, m.innerIndexPtr(), sizeof(int) * nnz);
        fnv_mix(h, m.valuePtr(), sizeof(double) * nnz);
    } else {
        for (Eigen::Index c = 0; c < cols; ++c)
            for (SparseMatrix::InnerIterator it(m, c); it; ++it) {
                const auto r = it.row();
                const double v = it.value();
                fnv_mix(h, &r, sizeof r);
                fnv_mix(h, &v, sizeof v);
            }
    }
    return h;
}

// ---------------------------------------------------------------------------

MagnetostaticProblem::MagnetostaticProblem(std::shared_ptr<const Mesh> mesh, int turns)
    : mesh_(std::move(mesh)), turns_(turns) {
    if (!mesh_) throw InputError("magnetostatic problem needs a mesh");
    mesh_->validate();
    if (turns_ <= 0) throw InputError("turn count must be positive");

    const auto& m = *mesh_;
    dof_.assign(m.nodes.size(), -1);
    for (std::size_t i = 0; i < m.nodes.size(); ++i)
        if (!m.boundary[i]) {
            dof_[i] = static_cast<int>(free_nodes_.size());
            free_nodes_.push_back(static_cast<int>(i));
        }
    if (free_nodes_.empty()) throw GeometryError("mesh has no interior nodes");

    elements_.reserve(m.triangles.size());
    for (std::size_t e = 0; e < m.triangles.size(); ++e) {
        const auto& t = m.triangles[e];
        Element el{};
        el.area = m.area(e);
        el.nodes = t.nodes;
        el.region = t.region;
        const double inv2a = 1.0 / (2.0 * el.area);
        for (int k = 0; k < 3; ++k) {
            const Point& p1 = m.nodes[static_cast<std::size_t>(t.nodes[(k + 1) % 3])];
            const Point& p2 = m.nodes[static_cast<std::size_t>(t.nodes[(k + 2) % 3])];
            const double gx = (p1.y - p2.y) * inv2a; // d(phi_k)/dx
            const double gy = (p2.x - p1.x) * inv2a; // d(phi_k)/dy
            el.curl[static_cast<std::size_t>(k)] = {gy, -gx};
        }
        if (t.region == Region::CoilPositive) area_positive_ += el.area;
        if (t.region == Region::CoilNegative) area_negative_ += el.area;
        elements_.push_back(el);
    }

    const auto n = static_cast<Eigen::Index>(free_nodes_.size());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(elements_.size() * 9);
    for (const auto& el : elements_)
        for (int a : el.nodes)
            for (int b : el.nodes) {
                const int i = dof_[static_cast<std::size_t>(a)], j = dof_[static_cast<std::size_t>(b)];
                if (i >= 0 && j >= 0) trip.emplace_back(i, j, 0.0);
            }
    pattern_.resize(n, n);
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();

    slots_.resize(elements_.size());
    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    for (std::size_t e = 0; e < elements_.size(); ++e)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                const int i = dof_[static_cast<std::size_t>(elements_[e].nodes[static_cast<std::size_t>(a)])];
                const int j = dof_[static_cast<std::size_t>(elements_[e].nodes[static_cast<std::size_t>(b)])];
                int slot = -1;
                if (i >= 0 && j >= 0) {
                    const int* pos = std::lower_bound(inner + outer[j], inner + outer[j + 1], i);
                    slot = static_cast<int>(pos - inner);
                }
                slots_[e][static_cast<std::size_t>(a * 3 + b)] = slot;
            }
}

const MagneticLaw& MagnetostaticProblem::law(const Materials& mat, Region r) const {
    if (r == Region::Iron) {
        if (!mat.iron) throw InputError("no constitutive law supplied for iron");
        return *mat.iron;
    }
    // Unreachable for non-iron regions; callers use nu_air directly.
    throw InputError("law requested for a linear region");
}

Eigen::VectorXd MagnetostaticProblem::load(double current) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(free_count()));
    if (current == 0.0) return f;
    const double ampere_turns = static_cast<double>(turns_) * current;
    for (const auto& el : elements_) {
        double j = 0.0;
        if (el.region == Region::CoilPositive && area_positive_ > 0.0) j = ampere_turns / area_positive_;
        if (el.region == Region::CoilNegative && area_negative_ > 0.0) j = -ampere_turns / area_negative_;
        if (j == 0.0) continue;
        for (int node : el.nodes) {
            const int i = dof_[static_cast<std::size_t>(node)];
            if (i >= 0) f[i] += j * el.area / 3.0;
        }
    }
    return f;
}

Eigen::VectorXd MagnetostaticProblem::to_free(std::span<const double> nodal) const {
    if (nodal.size() != mesh_->nodes.size()) throw InputError("nodal vector has the wrong length");
    Eigen::VectorXd a(static_cast<Eigen::Index>(free_count()));
    for (std::size_t k = 0; k < free_nodes_.size(); ++k)
        a[static_cast<Eigen::Index>(k)] = nodal[static_cast<std::size_t>(free_nodes_[k])];
    return a;
}

std::vector<double> MagnetostaticProblem::to_nodal(const Eigen::VectorXd& free) const {
    std::vector<double> a(mesh_->nodes.size(), 0.0);
    for (std::size_t k = 0; k < free_nodes_.size(); ++k)
        a[static_cast<std::size_t>(free_nodes_[k])] = free[static_cast<Eigen::Index>(k)];
    return a;
}

std::vector<Vec2> MagnetostaticProblem::flux_density(const Eigen::VectorXd& free) const {
    std::vector<Vec2> b(elements_.size());
    for (std::size_t e = 0; e < elements_.size(); ++e) {
        const auto& el = elements_[e];
        Vec2 v;
        for (std::size_t k = 0; k < 3; ++k) {
            const int i = dof_[static_cast<std::size_t>(el.nodes[k])];
            if (i < 0) continue;
            v.x += free[i] * el.curl[k].x;
            v.y += free[i] * el.curl[k].y;
        }
        b[e] = v;
    }
    return b;
}

Eigen::VectorXd MagnetostaticProblem::residual(const Materials& mat, double current,
                                               const Eigen::VectorXd& free) const {
    Eigen::VectorXd r = -load(current);
    const auto b = flux_density(free);
    for (std::size_t e = 0; e < elements_.size(); ++e) {
        const auto& el = elements_[e];
        const double mag = std::hypot(b[e].x, b[e].y);
        const double nu = el.region == Region::Iron ? law(mat, el.region).reluctivity(mag) : mat.nu_air;
        const double hx = nu * b[e].x, hy = nu * b[e].y;
        for (std::size_t k = 0; k < 3; ++k) {
            const int i = dof_[static_cast<std::size_t>(el.nodes[k])];
            if (i >= 0) r[i] += el.area * (hx * el.curl[k].x + hy * el.curl[k].y);
        }
    }
    return r;
}

void MagnetostaticProblem::fill_tangent(const Materials& mat, const std::vector<Vec2>& b,
                                        SparseMatrix& k) const {
    double* values = k.valuePtr();
    std::fill(values, values + k.nonZeros(), 0.0);
    for (std::size_t e = 0; e < elements_.size(); ++e) {
        const auto& el = elements_[e];
        // Differential reluctivity nu I + (h' - nu)/|B|^2 B (x) B.
        double nxx, nxy, nyy;
        if (el.region == Region::Iron) {
            const auto& l = law(mat, el.region);
            const double mag = std::hypot(b[e].x, b[e].y);
            if (mag > MagneticLaw::kTiny) {
                const double nu = l.h(mag) / mag;
                const double c = (l.dh(mag) - nu) / (mag * mag);
                nxx = nu + c * b[e].x * b[e].x;
                nyy = nu + c * b[e].y * b[e].y;
                nxy = c * b[e].x * b[e].y;
            } else {
                nxx = nyy = l.dh(0.0);
                nxy = 0.0;
            }
        } else {
            nxx = nyy = mat.nu_air;
            nxy = 0.0;
        }
        const auto& slot = slots_[e];
        for (std::size_t a = 0; a < 3; ++a) {
            const Vec2 ca = el.curl[a];
            const double ta_x = nxx * ca.x + nxy * ca.y;
            const double ta_y = nxy * ca.x + nyy * ca.y;
            for (std::size_t c = 0; c < 3; ++c) {
                const int s = slot[a * 3 + c];
                if (s < 0) continue;
                values[s] += el.area * (ta_x * el.curl[c].x + ta_y * el.curl[c].y);
            }
        }
    }
}

SparseMatrix MagnetostaticProblem::tangent(const Materials& mat, const Eigen::VectorXd& free) const {
    SparseMatrix k = pattern_;
    fill_tangent(mat, flux_density(free), k);
    return k;
}

SparseMatrix MagnetostaticProblem::stiffness(double nu_iron, double nu_air) const {
    Materials mat{std::make_shared<LinearLaw>(nu_iron), nu_air};
    SparseMatrix k = pattern_;
    fill_tangent(mat, std::vector<Vec2>(elements_.size()), k);
    return k;
}

double MagnetostaticProblem::energy(const Materials& mat, double current,
                                    const Eigen::VectorXd& free) const {
    const auto b = flux_density(free);
    double w = 0.0;
    for (std::size_t e = 0; e < elements_.size(); ++e) {
        const auto& el = elements_[e];
        const double mag = std::hypot(b[e].x, b[e].y);
        w += el.area * (el.region == Region::Iron ? law(mat, el.region).energy(mag)
                                                  : 0.5 * mat.nu_air * mag * mag);
    }
    return w - load(current).dot(free);
}

FieldSolution MagnetostaticProblem::solve(const Materials& mat, double current,
                                          const SolverOptions& options,
                                          std::span<const double> initial) const {
    if (!(current >= 0.0)) throw InputError("current must be nonnegative");
    if (!mat.iron) throw InputError("no constitutive law supplied for iron");

    const auto n = static_cast<Eigen::Index>(free_count());
    FieldSolution sol;
    sol.current = current;
    const Eigen::VectorXd f = load(current);
    const double f_norm = f.norm();
    Eigen::VectorXd a = initial.empty() || f_norm == 0.0 ? Eigen::VectorXd::Zero(n) : to_free(initial);

    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper,
                             Eigen::DiagonalPreconditioner<double>>
        cg;
    bool analyzed = false;
    SparseMatrix k = pattern_;

    for (int step = 0;; ++step) {
        const Eigen::VectorXd r = residual(mat, current, a);
        const double rel = f_norm > 0.0 ? r.norm() / f_norm : r.norm();
        const double e_now = energy(mat, current, a);
        sol.residual_history.push_back(rel);
        sol.energy_history.push_back(e_now);
        if (rel < options.tolerance || (f_norm == 0.0 && rel == 0.0)) {
            sol.converged = true;
            break;
        }
        if (step >= options.max_steps) {
            std::ostringstream msg;
            msg << "Newton iteration did not converge in " << options.max_steps
                << " steps at I = " << current << " A (relative residual " << rel << ")";
            throw DivergenceError(msg.str(), sol.residual_history);
        }

        fill_tangent(mat, flux_density(a), k);
        Eigen::VectorXd delta;
        if (options.linear_solver == LinearSolverKind::SparseCholesky) {
            if (!analyzed) {
                ldlt.analyzePattern(k);
                analyzed = true;
            }
            ldlt.factorize(k);
            if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
                throw NumericalError("singular or indefinite tangent matrix in Newton step " +
                                     std::to_string(step + 1));
            delta = ldlt.solve(-r);
        } else {
            cg.setTolerance(options.cg_tolerance);
            cg.setMaxIterations(10 * n);
            cg.compute(k);
            delta = cg.solve(-r);
            if (cg.info() != Eigen::Success)
                throw NumericalError("conjugate gradients failed in Newton step " +
                                     std::to_string(step + 1) + " after " +
                                     std::to_string(cg.iterations()) + " iterations");
        }
        if (!delta.allFinite()) throw NumericalError("non-finite Newton update");

        // Backtracking on the (convex) energy functional.
        const double slope = r.dot(delta);
        double t = 1.0;
        Eigen::VectorXd trial = a + delta;
        for (int h = 0; h < options.max_halvings; ++h) {
            const double e_trial = energy(mat, current, trial);
            if (e_trial <= e_now + 1e-4 * t * slope + 1e-12 * std::abs(e_now)) break;
            t *= 0.5;
            trial = a + t * delta;
        }
        a = std::move(trial);
        ++sol.newton_steps;
    }

    sol.a = to_nodal(a);
    sol.b = flux_density(a);
    if (options.keep_tangent) {
        auto kt = std::make_shared<SparseMatrix>(pattern_);
        fill_tangent(mat, sol.b, *kt);
        sol.tangent_fingerprint = matrix_fingerprint(*kt);
        sol.tangent = std::move(kt);
    }
    return sol;
}

FieldSolution assemble_and_solve(const MagnetostaticProblem& problem, const Materials& mat,
                                 double current, const SolverOptions& options) {
    return problem.solve(mat, current, options);
}

// ---------------------------------------------------------------------------
// Probes

std::vector<ProbeStencil> locate_probes(const Mesh& mesh, std::span<const Point> points,
                                        bool patch_average) {
    std::vector<ProbeStencil> out;
    out.reserve(points.size());
    std::vector<std::array<int, 3>> neighbors;
    if (patch_average) neighbors = mesh.edge_neighbors();
    for (const auto& p : points) {
        const auto e = mesh.locate(p, 1e-10);
        if (!e) {
            std::ostringstream msg;
            msg << "probe point (" << p.x << ", " << p.y << ") lies outside the mesh";
            throw LocationError(msg.str(), p.x, p.y);
        }
        ProbeStencil s;
        s.point = p;
        s.element = *e;
        std::vector<std::size_t> patch{*e};
        if (patch_average)
            for (int nb : neighbors[*e])
                if (nb >= 0 && mesh.triangles[static_cast<std::size_t>(nb)].region ==
                                   mesh.triangles[*e].region)
                    patch.push_back(static_cast<std::size_t>(nb));
        double total = 0.0;
        for (auto q : patch) total += mesh.area(q);
        for (auto q : patch) s.weights.emplace_back(q, mesh.area(q) / total);
        out.push_back(std::move(s));
    }
    return out;
}

Vec2 probe_B(std::span<const Vec2> element_b, const ProbeStencil& stencil) {
    Vec2 v;
    for (const auto& [e, w] : stencil.weights) {
        v.x += w * element_b[e].x;
        v.y += w * element_b[e].y;
    }
    return v;
}

std::vector<Vec2> probe_B(std::span<const Vec2> element_b, std::span<const ProbeStencil> stencils) {
    std::vector<Vec2> out;
    out.reserve(stencils.size());
    for (const auto& s : stencils) out.push_back(probe_B(element_b, s));
    return out;
}

std::vector<Vec2> probe_B(const FieldSolution& solution, std::span<const ProbeStencil> stencils) {
    return probe_B(std::span<const Vec2>(solution.b), stencils);
}

std::vector<Vec2> probe_B(const Mesh& mesh, const FieldSolution& solution,
                          std::span<const Point> points, bool patch_average) {
    const auto stencils = locate_probes(mesh, points, patch_average);
    return probe_B(solution, stencils);
}

void write_field_csv(const Mesh& mesh, const FieldSolution& solution,
                     const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "x,y,Bx,By\n";
    for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
        const auto c = mesh.centroid(e);
        out << text::format_double(c.x) << ',' << text::format_double(c.y) << ','
            << text::format_double(solution.b[e].x) << ',' << text::format_double(solution.b[e].y)
            << '\n';
    }
}

} // namespace bhkle
