#include "bhkle/kle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "bhkle/errors.hpp"

namespace bhkle {

Eigen::VectorXd trapezoid_weights(std::span<const double> grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        const double h = grid[i + 1] - grid[i];
        w[i] += h / 2;
        w[i + 1] += h / 2;
    }
    return w;
}

EnsembleStatistics estimate_statistics(std::span<const MonotoneCurve> curves,
                                       std::size_t grid_size) {
    if (curves.size() < 2)
        throw InputError("insufficient ensemble: covariance needs at least two curves");
    if (grid_size < 2) throw InputError("statistics grid needs at least two points");
    const double b_max = curves.front().b_max();
    for (std::size_t k = 1; k < curves.size(); ++k)
        if (std::abs(curves[k].b_max() - b_max) > 1e-12 * b_max)
            throw InputError("ensemble curves end at different B_L", static_cast<std::ptrdiff_t>(k));

    EnsembleStatistics stats;
    const auto n = static_cast<Eigen::Index>(grid_size);
    const auto k_count = static_cast<Eigen::Index>(curves.size());
    stats.grid.resize(grid_size);
    for (std::size_t i = 0; i < grid_size; ++i)
        stats.grid[i] = b_max * static_cast<double>(i) / static_cast<double>(grid_size - 1);
    stats.grid.back() = b_max;

    Eigen::MatrixXd samples(k_count, n);
    for (Eigen::Index k = 0; k < k_count; ++k)
        for (Eigen::Index i = 0; i < n; ++i) samples(k, i) = curves[k](stats.grid[i]);

    stats.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centered = samples.rowwise() - stats.mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(k_count - 1);
    stats.covariance = 0.5 * (cov + cov.transpose());
    return stats;
}

std::vector<Eigenpair> solve_eigenproblem(const EnsembleStatistics& stats,
                                          std::size_t max_modes) {
    const auto n = static_cast<Eigen::Index>(stats.grid.size());
    if (max_modes == 0 || static_cast<Eigen::Index>(max_modes) > n)
        throw InputError("requested mode count must lie in [1, N]");
    if (stats.covariance.rows() != n || stats.covariance.cols() != n)
        throw InputError("covariance does not match the grid");

    // Galerkin system (W C W) u = lambda W u with the lumped hat-function mass W.
    const Eigen::VectorXd w = trapezoid_weights(stats.grid);
    const Eigen::MatrixXd stiffness = w.asDiagonal() * stats.covariance * w.asDiagonal();
    const Eigen::MatrixXd mass = w.asDiagonal();

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(
        stiffness, mass, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
    if (solver.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "covariance eigenproblem failed: |C|_F = " << stats.covariance.norm()
            << ", mass weights in [" << w.minCoeff() << ", " << w.maxCoeff() << "]";
        throw NumericalError(msg.str());
    }

    std::vector<Eigenpair> pairs;
    pairs.reserve(max_modes);
    for (Eigen::Index j = n - 1; j >= n - static_cast<Eigen::Index>(max_modes); --j) {
        Eigenpair p;
        p.value = solver.eigenvalues()[j];
        p.mode = solver.eigenvectors().col(j);
        if (p.mode[n - 1] < 0.0) p.mode = -p.mode;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// MaterialModel

namespace {

// Second-order finite-difference slopes of grid data.
std::vector<double> grid_tangents(std::span<const double> x, const Eigen::VectorXd& v) {
    const auto n = x.size();
    std::vector<double> t(n);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
        t[i] = (h0 * h0 * (v[i + 1] - v[i]) + h1 * h1 * (v[i] - v[i - 1])) / (h0 * h1 * (h0 + h1));
    }
    if (n >= 3) {
        const double h = x[1] - x[0];
        t[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h);
        const double g = x[n - 1] - x[n - 2];
        t[n - 1] = (3 * v[n - 1] - 4 * v[n - 2] + v[n - 3]) / (2 * g);
    } else {
        t[0] = t[n - 1] = (v[n - 1] - v[0]) / (x[n - 1] - x[0]);
    }
    return t;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

MaterialModel::MaterialModel(std::vector<double> grid, Eigen::VectorXd mean,
                             std::vector<double> eigenvalues, Eigen::MatrixXd modes,
                             Eigen::VectorXd y_min, Eigen::VectorXd y_max,
                             Eigen::MatrixXd y_samples, double alpha)
    : grid_(std::move(grid)), mean_(std::move(mean)), eigenvalues_(std::move(eigenvalues)),
      modes_(std::move(modes)), y_min_(std::move(y_min)), y_max_(std::move(y_max)),
      y_samples_(std::move(y_samples)), alpha_(alpha) {
    const auto n = static_cast<Eigen::Index>(grid_.size());
    const auto m = static_cast<Eigen::Index>(eigenvalues_.size());
    if (n < 3 || mean_.size() != n || modes_.rows() != n || modes_.cols() != m)
        throw InputError("material model: inconsistent grid, mean or mode dimensions");
    if (y_min_.size() != m || y_max_.size() != m)
        throw InputError("material model: box dimension differs from mode count");
    if (y_samples_.cols() != m) throw InputError("material model: sample dimension mismatch");
    for (Eigen::Index i = 0; i < m; ++i) {
        if (!(eigenvalues_[i] > 0.0)) throw InputError("material model: eigenvalues must be positive");
        if (i > 0 && !(eigenvalues_[i] < eigenvalues_[i - 1]))
            throw InputError("material model: eigenvalues must be strictly decreasing");
        if (!(y_min_[i] <= y_max_[i])) throw InputError("material model: empty box");
    }

    if (y_samples_.rows() > 0) {
        y_mean_ = y_samples_.colwise().mean().transpose();
        if (y_samples_.rows() > 1) {
            const Eigen::MatrixXd c = y_samples_.rowwise() - y_mean_.transpose();
            y_cov_ = c.transpose() * c / static_cast<double>(y_samples_.rows() - 1);
        } else {
            y_cov_ = Eigen::MatrixXd::Identity(m, m);
        }
    } else {
        y_mean_ = Eigen::VectorXd::Zero(m);
        y_cov_ = Eigen::MatrixXd::Identity(m, m);
    }
    build_curves();
}

void MaterialModel::build_curves() {
    std::vector<double> mean(mean_.data(), mean_.data() + mean_.size());
    mean_curve_ = fit_monotone_spline(grid_, mean, alpha_);
    mode_curves_.clear();
    const double b_l = grid_.back();
    for (Eigen::Index m = 0; m < modes_.cols(); ++m) {
        const Eigen::VectorXd col = modes_.col(m);
        std::vector<double> values(col.data(), col.data() + col.size());
        auto tangents = grid_tangents(grid_, col);
        const CurveTail tail{-values.back() / b_l, b_l, 0.0};
        mode_curves_.emplace_back(grid_, std::move(values), std::move(tangents), tail);
    }
}

bool MaterialModel::in_box(std::span<const double> y) const {
    if (y.size() != dimension()) return false;
    for (std::size_t m = 0; m < y.size(); ++m) {
        const auto i = static_cast<Eigen::Index>(m);
        if (!(y[m] >= y_min_[i] && y[m] <= y_max_[i])) return false;
    }
    return true;
}

HermiteCurve MaterialModel::curve(std::span<const double> y) const {
    if (y.size() != dimension())
        throw DomainError("parameter vector has dimension " + std::to_string(y.size()) +
                          ", model has " + std::to_string(dimension()));
    if (!in_box(y)) throw DomainError("parameter vector outside the admissible box");
    return curve_unchecked(y);
}

HermiteCurve MaterialModel::curve_unchecked(std::span<const double> y) const {
    if (y.size() != dimension()) throw DomainError("parameter vector has wrong dimension");
    std::vector<const HermiteCurve*> parts{&mean_curve_.hermite()};
    std::vector<double> weights{1.0};
    for (std::size_t m = 0; m < dimension(); ++m) {
        parts.push_back(&mode_curves_[m]);
        weights.push_back(std::sqrt(eigenvalues_[m]) * y[m]);
    }
    return HermiteCurve::combine(parts, weights);
}

double MaterialModel::evaluate(std::span<const double> y, double s) const {
    if (!in_box(y)) throw DomainError("parameter vector outside the admissible box");
    if (s < 0.0) throw DomainError("material curve evaluated at negative B");
    double h = mean_curve_(s);
    for (std::size_t m = 0; m < dimension(); ++m)
        h += std::sqrt(eigenvalues_[m]) * y[m] * mode_curves_[m](s);
    return h;
}

void MaterialModel::set_box(Eigen::VectorXd y_min, Eigen::VectorXd y_max) {
    if (y_min.size() != y_max.size() || y_min.size() != static_cast<Eigen::Index>(dimension()))
        throw InputError("box dimension mismatch");
    y_min_ = std::move(y_min);
    y_max_ = std::move(y_max);
}

double evaluate_model(const MaterialModel& model, std::span<const double> y, double s) {
    return model.evaluate(y, s);
}

long long first_nonmonotone_corner(const MaterialModel& model) {
    const auto m = model.dimension();
    const long long corners = 1LL << m;
    std::vector<double> y(m);
    for (long long c = 0; c < corners; ++c) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto j = static_cast<Eigen::Index>(i);
            y[i] = (c >> i) & 1 ? model.y_max()[j] : model.y_min()[j];
        }
        const auto curve = model.curve_unchecked(y);
        if (!(curve.min_derivative(2.0 * model.b_max()) > model.alpha())) return c;
    }
    return -1;
}

Eigen::MatrixXd project_curves(const EnsembleStatistics& stats,
                               std::span<const Eigenpair> pairs, std::size_t count,
                               std::span<const MonotoneCurve> curves) {
    const auto n = static_cast<Eigen::Index>(stats.grid.size());
    const Eigen::VectorXd w = trapezoid_weights(stats.grid);
    Eigen::MatrixXd y(static_cast<Eigen::Index>(curves.size()), static_cast<Eigen::Index>(count));
    for (std::size_t k = 0; k < curves.size(); ++k) {
        Eigen::VectorXd centered(n);
        for (Eigen::Index i = 0; i < n; ++i) centered[i] = curves[k](stats.grid[i]) - stats.mean[i];
        for (std::size_t m = 0; m < count; ++m) {
            const double proj = (w.array() * centered.array() * pairs[m].mode.array()).sum();
            y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m)) =
                proj / std::sqrt(pairs[m].value);
        }
    }
    return y;
}

MaterialModel build_model(const EnsembleStatistics& stats, std::span<const Eigenpair> pairs,
                          std::size_t modes, std::span<const MonotoneCurve> curves,
                          const ModelOptions& options) {
    if (modes == 0) throw InputError("model needs at least one mode");
    if (modes > pairs.size()) throw InputError("more modes requested than eigenpairs supplied");
    for (std::size_t m = 0; m < modes; ++m)
        if (!(pairs[m].value > 0.0))
            throw InputError("mode " + std::to_string(m + 1) + " has a nonpositive eigenvalue",
                             static_cast<std::ptrdiff_t>(m));

    const Eigen::MatrixXd y = project_curves(stats, pairs, modes, curves);
    const auto n = static_cast<Eigen::Index>(stats.grid.size());
    Eigen::MatrixXd mode_values(n, static_cast<Eigen::Index>(modes));
    std::vector<double> eigenvalues(modes);
    for (std::size_t m = 0; m < modes; ++m) {
        mode_values.col(static_cast<Eigen::Index>(m)) = pairs[m].mode;
        eigenvalues[m] = pairs[m].value;
    }

    MaterialModel model(stats.grid, stats.mean, std::move(eigenvalues), std::move(mode_values),
                        y.colwise().minCoeff().transpose(), y.colwise().maxCoeff().transpose(), y,
                        options.alpha);

    // Shrink the box about y_mean until every corner curve is monotone.
    Eigen::VectorXd lo = model.y_min(), hi = model.y_max();
    const Eigen::VectorXd& centre = model.y_mean();
    for (int iter = 0;; ++iter) {
        const long long corner = first_nonmonotone_corner(model);
        if (corner < 0) break;

        std::vector<double> yc(modes);
        for (std::size_t i = 0; i < modes; ++i)
            yc[i] = (corner >> i) & 1 ? hi[static_cast<Eigen::Index>(i)]
                                      : lo[static_cast<Eigen::Index>(i)];
        if (iter >= options.max_shrink_iterations) {
            std::ostringstream msg;
            msg << "corner " << corner << " (y =";
            for (double v : yc) msg << ' ' << v;
            msg << ") stays non-monotone after " << options.max_shrink_iterations
                << " box adjustments";
            throw ModelError(msg.str());
        }

        // The component pulling the derivative down hardest at the worst point.
        const auto curve = model.curve_unchecked(yc);
        const double s_star = curve.argmin_derivative(2.0 * model.b_max());
        std::size_t worst = 0;
        double worst_slope = 0.0;
        for (std::size_t i = 0; i < modes; ++i) {
            const double slope =
                std::sqrt(model.eigenvalues()[i]) * yc[i] * model.mode_curve(i).derivative(s_star);
            if (slope < worst_slope) {
                worst_slope = slope;
                worst = i;
            }
        }
        if (worst_slope >= 0.0)
            throw ModelError("corner " + std::to_string(corner) +
                             ": mean curve itself violates the derivative floor near B = " +
                             std::to_string(s_star));
        const auto j = static_cast<Eigen::Index>(worst);
        lo[j] = centre[j] - options.shrink_factor * (centre[j] - lo[j]);
        hi[j] = centre[j] + options.shrink_factor * (hi[j] - centre[j]);
        model.set_box(lo, hi);
    }
    return model;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json to_json_array(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from(const nlohmann::json& j) {
    return to_vector(j.get<std::vector<double>>());
}

} // namespace

std::string model_to_json(const MaterialModel& model) {
    nlohmann::json j;
    j["format"] = "bhkle-material-model";
    j["version"] = 1;
    j["alpha"] = model.alpha();
    j["grid"] = std::vector<double>(model.grid().begin(), model.grid().end());
    j["mean"] = to_json_array(model.mean_values());
    j["eigenvalues"] = std::vector<double>(model.eigenvalues().begin(), model.eigenvalues().end());
    nlohmann::json modes = nlohmann::json::array();
    for (Eigen::Index m = 0; m < model.mode_values().cols(); ++m)
        modes.push_back(to_json_array(model.mode_values().col(m)));
    j["modes"] = std::move(modes);
    j["y_min"] = to_json_array(model.y_min());
    j["y_max"] = to_json_array(model.y_max());
    j["y_mean"] = to_json_array(model.y_mean());
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < model.y_cov().rows(); ++r)
        cov.push_back(to_json_array(model.y_cov().row(r).transpose()));
    j["y_cov"] = std::move(cov);
    nlohmann::json samples = nlohmann::json::array();
    for (Eigen::Index r = 0; r < model.y_samples().rows(); ++r)
        samples.push_back(to_json_array(model.y_samples().row(r).transpose()));
    j["y_samples"] = std::move(samples);
    return j.dump(1);
}

MaterialModel model_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("model JSON: ") + e.what());
    }
    if (j.value("format", "") != "bhkle-material-model")
        throw InputError("model JSON: unexpected format tag");
    try {
        auto grid = j.at("grid").get<std::vector<double>>();
        const auto n = static_cast<Eigen::Index>(grid.size());
        auto eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
        const auto m = static_cast<Eigen::Index>(eigenvalues.size());
        Eigen::MatrixXd modes(n, m);
        const auto& jm = j.at("modes");
        if (static_cast<Eigen::Index>(jm.size()) != m) throw InputError("model JSON: mode count");
        for (Eigen::Index c = 0; c < m; ++c) {
            const auto col = vector_from(jm.at(static_cast<std::size_t>(c)));
            if (col.size() != n) throw InputError("model JSON: mode length");
            modes.col(c) = col;
        }
        const auto& js = j.at("y_samples");
        Eigen::MatrixXd samples(static_cast<Eigen::Index>(js.size()), m);
        for (std::size_t r = 0; r < js.size(); ++r) {
            const auto row = vector_from(js.at(r));
            if (row.size() != m) throw InputError("model JSON: sample length");
            samples.row(static_cast<Eigen::Index>(r)) = row.transpose();
        }
        return MaterialModel(std::move(grid), vector_from(j.at("mean")), std::move(eigenvalues),
                             std::move(modes), vector_from(j.at("y_min")),
                             vector_from(j.at("y_max")), std::move(samples),
                             j.at("alpha").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("model JSON: ") + e.what());
    }
}

void save_model(const MaterialModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << model_to_json(model) << '\n';
}

MaterialModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open model " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return model_from_json(buf.str());
}

} // namespace bhkle
