#include "bhkle/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "bhkle/errors.hpp"
#include "text_util.hpp"

namespace bhkle {

ReluctivityPerturbation::ReluctivityPerturbation(HermiteCurve mode, double eigenvalue,
                                                 double first_positive_knot)
    : mode_(std::move(mode)), scale_(0.0), vanishes_at_zero_(true), floor_(0.0) {
    if (!(eigenvalue >= 0.0)) throw InputError("eigenvalue must be nonnegative");
    if (!(first_positive_knot > 0.0)) throw InputError("first positive knot must be positive");
    scale_ = std::sqrt(eigenvalue);
    double peak = 0.0;
    for (double v : mode_.values()) peak = std::max(peak, std::abs(v));
    vanishes_at_zero_ = std::abs(mode_.evaluate(0.0)) <= 1e-12 * std::max(peak, 1.0);
    floor_ = vanishes_at_zero_ ? MagneticLaw::kTiny : first_positive_knot;
}

double ReluctivityPerturbation::operator()(double s) const {
    if (s > floor_) return scale_ * mode_.evaluate(s) / s;
    if (vanishes_at_zero_) return scale_ * mode_.derivative(0.0);
    return scale_ * mode_.evaluate(floor_) / floor_;
}

ReluctivityPerturbation mode_perturbation(const MaterialModel& model, int m) {
    if (m < 1 || static_cast<std::size_t>(m) > model.dimension())
        throw InputError("mode index " + std::to_string(m) + " outside 1.." +
                         std::to_string(model.dimension()));
    const auto idx = static_cast<std::size_t>(m - 1);
    const auto grid = model.grid();
    return {model.mode_curve(idx), model.eigenvalues()[idx], grid[1]};
}

GateauxSolver::GateauxSolver(const MagnetostaticProblem& problem, const FieldSolution& nominal)
    : problem_(problem), nominal_(nominal), fingerprint_(0) {
    if (!nominal.converged) throw InputError("nominal solution is not converged");
    if (!nominal.tangent) throw InputError("nominal solution carries no tangent matrix");
    if (nominal.b.size() != problem.elements().size())
        throw InputError("nominal solution does not belong to this problem");
    fingerprint_ = matrix_fingerprint(*nominal.tangent);
    if (fingerprint_ != nominal.tangent_fingerprint)
        throw NumericalError("stored tangent does not match its fingerprint");
    ldlt_.compute(*nominal.tangent);
    if (ldlt_.info() != Eigen::Success || (ldlt_.vectorD().array() <= 0.0).any())
        throw NumericalError("singular tangent matrix in sensitivity solve");
}

Eigen::VectorXd GateauxSolver::perturbation_load(const ReluctivityPerturbation& p) const {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem_.free_count()));
    const auto elements = problem_.elements();
    const auto dof = problem_.dof();
    for (std::size_t e = 0; e < elements.size(); ++e) {
        const auto& el = elements[e];
        if (el.region != Region::Iron) continue;
        const Vec2 b = nominal_.b[e];
        const double nu = p(std::hypot(b.x, b.y));
        if (nu == 0.0) continue;
        for (std::size_t k = 0; k < 3; ++k) {
            const int i = dof[static_cast<std::size_t>(el.nodes[k])];
            if (i >= 0) r[i] += el.area * nu * (b.x * el.curl[k].x + b.y * el.curl[k].y);
        }
    }
    return r;
}

SensitivityField GateauxSolver::solve_load(const Eigen::VectorXd& load, int mode) const {
    SensitivityField out;
    out.mode = mode;
    out.tangent_fingerprint = fingerprint_;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(load.size());
    if (load.squaredNorm() > 0.0) a = ldlt_.solve(-load);
    if (!a.allFinite()) throw NumericalError("non-finite sensitivity solution");
    out.a_prime = problem_.to_nodal(a);
    out.b_prime = problem_.flux_density(a);
    return out;
}

SensitivityField GateauxSolver::solve(const ReluctivityPerturbation& p, int mode) const {
    return solve_load(perturbation_load(p), mode);
}

SensitivityField solve_gateaux(const MagnetostaticProblem& problem, const FieldSolution& nominal,
                               const MaterialModel& model, int m) {
    GateauxSolver solver(problem, nominal);
    return solver.solve(mode_perturbation(model, m), m);
}

std::vector<SensitivityField> solve_all_modes(const MagnetostaticProblem& problem,
                                              const FieldSolution& nominal,
                                              const MaterialModel& model, int threads) {
    GateauxSolver solver(problem, nominal);
    const int modes = static_cast<int>(model.dimension());
    std::vector<SensitivityField> out(static_cast<std::size_t>(modes));
    auto work = [&](int m) { out[static_cast<std::size_t>(m - 1)] = solver.solve(mode_perturbation(model, m), m); };
    if (threads <= 1 || modes <= 1) {
        for (int m = 1; m <= modes; ++m) work(m);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(modes));
    std::vector<std::jthread> pool;
    const int n = std::min(threads, modes);
    for (int t = 0; t < n; ++t)
        pool.emplace_back([&, t] {
            for (int m = t + 1; m <= modes; m += n) {
                try {
                    work(m);
                } catch (...) {
                    errors[static_cast<std::size_t>(m - 1)] = std::current_exception();
                }
            }
        });
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

std::vector<Point> candidate_grid(const DipoleGeometry& geometry) {
    geometry.validate();
    const double h = geometry.gap_height / 10.0;
    const double tol = 1e-9;
    const Box gap = geometry.gap();
    const int nx = static_cast<int>(std::floor((gap.x1 - tol) / h));
    const int ny = static_cast<int>(std::floor((gap.y1 - tol) / h));
    std::vector<Point> out;
    for (int j = -ny; j <= ny; ++j)
        for (int i = -nx; i <= nx; ++i) {
            const Point p{i * h, j * h};
            if (!geometry.in_gap_air(p)) continue;
            if (geometry.distance_to_shim(p) < tol) continue;
            out.push_back(p);
        }
    return out;
}

std::vector<RankedProbe> rank_probes(std::span<const SensitivityField> fields, const Mesh& mesh,
                                     std::span<const Point> candidates, std::size_t count,
                                     bool patch_average) {
    if (candidates.empty()) throw InputError("empty candidate list");
    if (fields.empty()) throw InputError("no sensitivity fields to rank against");
    const auto stencils = locate_probes(mesh, candidates, patch_average);
    std::vector<RankedProbe> all(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        auto& r = all[c];
        r.point = candidates[c];
        r.index = c;
        for (const auto& f : fields) {
            const double v = std::abs(probe_B(f.b_prime, stencils[c]).y);
            r.per_mode.push_back(v);
            r.score += v;
        }
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const RankedProbe& a, const RankedProbe& b) { return a.score > b.score; });
    all.resize(std::min(count, all.size()));
    return all;
}

void write_sensitivity_csv(const Mesh& mesh, std::span<const SensitivityField> fields,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "x,y";
    for (const auto& f : fields) out << ",dBy_mode" << f.mode;
    out << '\n';
    for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
        const Point c = mesh.centroid(e);
        out << text::format_double(c.x) << ',' << text::format_double(c.y);
        for (const auto& f : fields) out << ',' << text::format_double(f.b_prime.at(e).y);
        out << '\n';
    }
}

void write_ranking_json(std::span<const RankedProbe> ranking, const DipoleGeometry& geometry,
                        const std::filesystem::path& path) {
    nlohmann::json probes = nlohmann::json::array();
    for (std::size_t r = 0; r < ranking.size(); ++r) {
        const auto& p = ranking[r];
        probes.push_back({{"rank", r + 1},
                          {"x", p.point.x},
                          {"y", p.point.y},
                          {"candidate_index", p.index},
                          {"score", p.score},
                          {"per_mode", p.per_mode},
                          {"distance_to_shim", geometry.distance_to_shim(p.point)}});
    }
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << nlohmann::json{{"probes", probes}}.dump(1) << '\n';
}

} // namespace bhkle
