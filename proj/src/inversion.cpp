#include "bhkle/inversion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "bhkle/errors.hpp"
#include "text_util.hpp"

namespace bhkle {

void ObservationSet::validate(const DipoleGeometry* geometry) const {
    if (currents.empty()) throw InputError("observation set has no currents");
    if (probes.empty()) throw InputError("observation set has no probes");
    for (std::size_t n = 0; n < currents.size(); ++n) {
        if (!std::isfinite(currents[n]) || currents[n] < 0.0)
            throw InputError("invalid current", static_cast<std::ptrdiff_t>(n));
        if (n > 0 && !(currents[n] > currents[n - 1]))
            throw InputError("currents are not strictly increasing", static_cast<std::ptrdiff_t>(n));
    }
    if (by.rows() != static_cast<Eigen::Index>(currents.size()) ||
        by.cols() != static_cast<Eigen::Index>(probes.size()))
        throw InputError("observation table does not match currents x probes");
    if (!by.allFinite()) throw InputError("observation data contains non-finite values");
    if (geometry)
        for (std::size_t p = 0; p < probes.size(); ++p)
            if (!geometry->in_gap_air(probes[p]))
                throw InputError("probe outside the gap", static_cast<std::ptrdiff_t>(p));
}

ObservationSet read_observations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open observation file " + path.string());
    struct Row {
        double i, x, y, b;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t row = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++row;
        if (text::is_blank_or_comment(line)) continue;
        const auto where = path.string() + ":" + std::to_string(row);
        if (!header_seen) {
            if (text::trim(line) != "current_A,x_m,y_m,By_T")
                throw InputError(where + ": expected header 'current_A,x_m,y_m,By_T'",
                                 static_cast<std::ptrdiff_t>(row));
            header_seen = true;
            continue;
        }
        const auto f = text::split(text::trim(line), ',');
        if (f.size() != 4) throw InputError(where + ": expected four fields", static_cast<std::ptrdiff_t>(row));
        double v[4];
        for (std::size_t k = 0; k < 4; ++k) {
            const auto d = text::parse_double(f[k]);
            if (!d) throw InputError(where + ": malformed number", static_cast<std::ptrdiff_t>(row));
            v[k] = *d;
        }
        rows.push_back({v[0], v[1], v[2], v[3]});
    }
    if (!header_seen) throw InputError(path.string() + ": missing header");

    ObservationSet obs;
    for (const auto& r : rows) {
        obs.currents.push_back(r.i);
        if (std::none_of(obs.probes.begin(), obs.probes.end(),
                         [&](const Point& p) { return p.x == r.x && p.y == r.y; }))
            obs.probes.push_back({r.x, r.y});
    }
    std::sort(obs.currents.begin(), obs.currents.end());
    obs.currents.erase(std::unique(obs.currents.begin(), obs.currents.end()), obs.currents.end());
    const auto nc = static_cast<Eigen::Index>(obs.currents.size());
    const auto np = static_cast<Eigen::Index>(obs.probes.size());
    obs.by = Eigen::MatrixXd::Constant(nc, np, std::nan(""));
    for (const auto& r : rows) {
        const auto n = std::lower_bound(obs.currents.begin(), obs.currents.end(), r.i) - obs.currents.begin();
        const auto p = std::find_if(obs.probes.begin(), obs.probes.end(),
                                    [&](const Point& q) { return q.x == r.x && q.y == r.y; }) -
                       obs.probes.begin();
        if (!std::isnan(obs.by(n, p)))
            throw InputError(path.string() + ": duplicate row for current " +
                             text::format_double(r.i));
        obs.by(n, p) = r.b;
    }
    if (obs.by.hasNaN()) throw InputError(path.string() + ": observations do not cover every current/probe pair");
    try {
        obs.validate();
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what(), e.index());
    }
    return obs;
}

void write_observations(const ObservationSet& obs, const std::filesystem::path& path) {
    obs.validate();
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "current_A,x_m,y_m,By_T\n";
    for (std::size_t n = 0; n < obs.currents.size(); ++n)
        for (std::size_t p = 0; p < obs.probes.size(); ++p)
            out << text::format_double(obs.currents[n]) << ',' << text::format_double(obs.probes[p].x)
                << ',' << text::format_double(obs.probes[p].y) << ','
                << text::format_double(obs.by(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p)))
                << '\n';
}

std::vector<double> log_spaced_currents(double lo, double hi, std::size_t count) {
    if (!(lo > 0.0) || !(hi > lo) || count < 2) throw InputError("invalid current range");
    std::vector<double> out(count);
    const double ratio = std::log(hi / lo);
    for (std::size_t k = 0; k < count; ++k)
        out[k] = lo * std::exp(ratio * static_cast<double>(k) / static_cast<double>(count - 1));
    out.front() = lo;
    out.back() = hi;
    return out;
}

// ---------------------------------------------------------------------------

ForwardModel::ForwardModel(std::shared_ptr<const MagnetostaticProblem> problem,
                           std::shared_ptr<const MaterialModel> model, std::vector<double> currents,
                           std::vector<Point> probes, SolverOptions options, bool patch_average)
    : problem_(std::move(problem)), model_(std::move(model)), currents_(std::move(currents)),
      probes_(std::move(probes)), options_(options) {
    if (!problem_ || !model_) throw InputError("forward model needs a problem and a material model");
    if (currents_.empty() || probes_.empty()) throw InputError("forward model needs currents and probes");
    if (!std::is_sorted(currents_.begin(), currents_.end()))
        throw InputError("forward model currents must be increasing");
    options_.keep_tangent = false;
    stencils_ = locate_probes(problem_->mesh(), probes_, patch_average);
}

Eigen::MatrixXd ForwardModel::simulate_curve(const HermiteCurve& curve) const {
    const Materials mat{std::make_shared<CurveLaw>(curve)};
    Eigen::MatrixXd out(static_cast<Eigen::Index>(currents_.size()),
                        static_cast<Eigen::Index>(probes_.size()));
    std::vector<double> start;
    double previous = 0.0;
    for (std::size_t n = 0; n < currents_.size(); ++n) {
        if (previous > 0.0)
            for (auto& v : start) v *= currents_[n] / previous;
        auto sol = problem_->solve(mat, currents_[n], options_, start);
        const auto b = probe_B(sol, stencils_);
        for (std::size_t p = 0; p < b.size(); ++p)
            out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p)) = b[p].y;
        start = std::move(sol.a);
        previous = currents_[n];
    }
    return out;
}

Eigen::MatrixXd ForwardModel::simulate(std::span<const double> y) const {
    std::vector<std::uint64_t> key(y.size());
    std::transform(y.begin(), y.end(), key.begin(), [](double v) { return std::bit_cast<std::uint64_t>(v); });
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            hits_ += currents_.size();
            if (it->second.size() == 0) throw DivergenceError("cached divergent forward sweep", {});
            return it->second;
        }
    }
    const auto curve = model_->curve(y);
    solves_ += currents_.size();
    Eigen::MatrixXd out;
    try {
        out = simulate_curve(curve);
    } catch (const NumericalError&) {
        std::lock_guard lock(mutex_);
        cache_.emplace(std::move(key), Eigen::MatrixXd());
        throw;
    }
    std::lock_guard lock(mutex_);
    cache_.emplace(std::move(key), out);
    return out;
}

void ForwardModel::clear_cache() {
    std::lock_guard lock(mutex_);
    cache_.clear();
}

// ---------------------------------------------------------------------------

double objective(const ForwardModel& forward, const ObservationSet& obs, std::span<const double> y) {
    if (obs.currents.size() != forward.currents().size() || obs.probes.size() != forward.probes().size())
        throw InputError("observation layout does not match the forward model");
    Eigen::MatrixXd sim;
    try {
        sim = forward.simulate(y);
    } catch (const NumericalError&) {
        forward.note_divergence();
        return kDivergenceSentinel;
    }
    double g = 0.0;
    for (Eigen::Index n = 0; n < sim.rows(); ++n)
        for (Eigen::Index p = 0; p < sim.cols(); ++p) {
            const double d = sim(n, p) - obs.by(n, p);
            g += d * d;
        }
    return std::isfinite(g) ? g : kDivergenceSentinel;
}

double mahalanobis_penalty(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& cov) {
    const Eigen::VectorXd d = y - mean;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any()) {
        const Eigen::MatrixXd jittered =
            cov + 1e-10 * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
        ldlt.compute(jittered);
        if (ldlt.info() != Eigen::Success) throw NumericalError("parameter covariance is not invertible");
    }
    return d.dot(ldlt.solve(d));
}

double objective_regularized(const ForwardModel& forward, const ObservationSet& obs,
                             std::span<const double> y, double a) {
    if (!(a >= 0.0)) throw InputError("regularization weight must be nonnegative");
    const double g = objective(forward, obs, y);
    if (a == 0.0 || g >= kDivergenceSentinel) return g;
    const auto& model = forward.model();
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    return g + a * mahalanobis_penalty(v, model.y_mean(), model.y_cov());
}

// ---------------------------------------------------------------------------

double ErrorMetrics::max_e_rel() const {
    return e_rel.empty() ? 0.0 : *std::max_element(e_rel.begin(), e_rel.end());
}

double ErrorMetrics::max_e_abs() const { return e_abs.size() == 0 ? 0.0 : e_abs.maxCoeff(); }

ErrorMetrics error_metrics(std::span<const double> y_hat, std::span<const double> y0,
                           const MaterialModel& model, const ObservationSet* validation,
                           const ForwardModel* validation_forward) {
    ErrorMetrics out;
    const auto fit = model.curve_unchecked(y_hat);
    const auto truth = model.curve_unchecked(y0);
    constexpr int points = 100;
    constexpr double floor = 10.0; // A/m
    for (int i = 1; i <= points; ++i) {
        const double b = model.b_max() * i / points;
        const double ref = truth(b);
        if (ref < floor) continue;
        out.b.push_back(b);
        out.e_rel.push_back(std::abs(fit(b) - ref) / ref);
    }
    if (validation && validation_forward) {
        out.currents = validation->currents;
        out.probes = validation->probes;
        out.e_abs = (validation_forward->simulate_curve(fit) - validation->by).cwiseAbs();
    }
    return out;
}

IdentificationResult identify(const ObservationSet& obs, const ForwardModel& forward,
                              const IdentifyOptions& options) {
    obs.validate();
    const auto& model = forward.model();
    const std::size_t before_solves = forward.forward_solves(), before_hits = forward.cache_hits();
    const std::size_t before_div = forward.divergent_sweeps();

    SwarmOptions swarm = options.swarm;
    swarm.divergence_sentinel = kDivergenceSentinel;
    auto g = [&](const Eigen::VectorXd& y) {
        return objective_regularized(forward, obs, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                                     options.regularization);
    };
    auto swarm_result = minimize_swarm(g, model.y_min(), model.y_max(), swarm);

    IdentificationResult r;
    r.y_hat = swarm_result.best;
    r.best_value = swarm_result.best_value;
    r.history = std::move(swarm_result.history);
    r.iterations = swarm_result.iterations;
    r.stalled = swarm_result.stalled;
    r.evaluations = swarm_result.evaluations;
    r.sweeps_requested = r.evaluations * obs.currents.size();
    r.forward_solves = forward.forward_solves() - before_solves;
    r.cache_hits = forward.cache_hits() - before_hits;
    r.divergent_evaluations = forward.divergent_sweeps() - before_div;
    r.seed = swarm.seed;
    return r;
}

} // namespace bhkle
