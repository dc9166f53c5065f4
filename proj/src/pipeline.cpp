#include "bhkle/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bhkle/errors.hpp"
#include "text_util.hpp"

namespace bhkle {

namespace {

using json = nlohmann::json;

std::ostream& log_of(const PipelineContext& ctx) {
    static std::ostream null(nullptr);
    return ctx.log ? *ctx.log : null;
}

std::filesystem::path prepare_out(const PipelineContext& ctx) {
    std::filesystem::create_directories(ctx.out);
    return ctx.out;
}

std::filesystem::path require_file(const PipelineContext& ctx, const char* name, const char* stage) {
    const auto p = ctx.out / name;
    if (!std::filesystem::exists(p))
        throw InputError(p.string() + " not found; run `" + stage + "` first");
    return p;
}

json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(p.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw InputError("cannot write " + p.string());
    out << text;
}

std::vector<Point> points_from(const json& arr) {
    std::vector<Point> out;
    for (const auto& p : arr) out.push_back({p.at("x").get<double>(), p.at("y").get<double>()});
    return out;
}

std::shared_ptr<const MaterialModel> stored_model(const PipelineContext& ctx) {
    return std::make_shared<const MaterialModel>(load_model(require_file(ctx, "model.json", "build-model")));
}

std::shared_ptr<const MagnetostaticProblem> make_problem(const RunConfig& config) {
    return std::make_shared<const MagnetostaticProblem>(pipeline_mesh(config), config.geometry.turns);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

} // namespace

std::vector<double> training_currents(const InversionConfig& c) {
    return log_spaced_currents(c.current_min, c.current_max, c.current_count);
}

std::vector<double> validation_currents(const InversionConfig& c) {
    auto out = training_currents(c);
    out.insert(out.end(), c.validation_currents.begin(), c.validation_currents.end());
    return out;
}

std::vector<Point> axis_probes(const InversionConfig& c, const DipoleGeometry& g) {
    const double half = 0.5 * c.validation_span * g.pole_width;
    std::vector<Point> out;
    const auto n = c.validation_probes;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({n == 1 ? 0.0 : -half + 2.0 * half * static_cast<double>(i) / static_cast<double>(n - 1), 0.0});
    return out;
}

std::vector<double> draw_ground_truth(const MaterialModel& model, const InversionConfig& c) {
    std::mt19937_64 rng(c.truth_seed);
    std::vector<double> y(model.dimension());
    for (std::size_t m = 0; m < y.size(); ++m) {
        const auto i = static_cast<Eigen::Index>(m);
        const double u = c.truth_low + (c.truth_high - c.truth_low) * unit(rng);
        y[m] = model.y_mean()[i] + u * (model.y_max()[i] - model.y_mean()[i]);
    }
    return y;
}

std::shared_ptr<const Mesh> pipeline_mesh(const RunConfig& config) {
    const auto& cache = config.paths.mesh_cache;
    if (!cache.empty() && std::filesystem::exists(cache)) {
        auto mesh = std::make_shared<Mesh>(read_mesh(cache));
        mesh->validate();
        return mesh;
    }
    auto mesh = std::make_shared<Mesh>(generate_dipole_mesh(config.geometry, config.solver.refinement));
    if (!cache.empty()) {
        if (const auto dir = std::filesystem::path(cache).parent_path(); !dir.empty())
            std::filesystem::create_directories(dir);
        write_mesh(*mesh, cache);
    }
    return mesh;
}

// ---------------------------------------------------------------------------

ModelReport cmd_build_model(const PipelineContext& ctx) {
    const auto& mc = ctx.config.model;
    auto& log = log_of(ctx);
    const auto out = prepare_out(ctx);

    std::vector<PermeameterTable> tables;
    if (ctx.config.paths.manifest.empty()) {
        tables = synth_ensemble(mc.ensemble_seed, mc.specimens, mc.points, mc.b_max, mc.shape);
        log << "synthetic ensemble: K = " << tables.size() << ", L = " << mc.points << "\n";
    } else {
        tables = read_manifest(ctx.config.paths.manifest);
        log << "ensemble from " << ctx.config.paths.manifest << ": K = " << tables.size() << "\n";
    }
    std::vector<MonotoneCurve> curves;
    curves.reserve(tables.size());
    for (const auto& t : tables) curves.push_back(fit_monotone_spline(t, mc.options.alpha));

    const auto stats = estimate_statistics(curves, mc.grid_points);
    const auto pairs = solve_eigenproblem(stats, stats.grid.size());

    ModelReport report;
    report.model = build_model(stats, pairs, mc.modes, curves, mc.options);
    for (const auto& p : pairs) report.spectrum.push_back(p.value);
    report.covariance_trace = trapezoid_weights(stats.grid).dot(stats.covariance.diagonal());

    save_model(report.model, out / "model.json");
    {
        std::ostringstream csv;
        csv << "index,lambda,ratio_to_first\n";
        for (std::size_t i = 0; i < report.spectrum.size(); ++i)
            csv << i + 1 << ',' << text::format_double(report.spectrum[i]) << ','
                << text::format_double(report.spectrum[i] / report.spectrum[0]) << '\n';
        write_text(out / "eigenvalues.csv", csv.str());
    }
    {
        const auto& m = report.model;
        std::ostringstream csv;
        csv << "B_T,mean_Am";
        for (std::size_t j = 0; j < m.dimension(); ++j) csv << ",mode" << j + 1;
        csv << '\n';
        for (std::size_t i = 0; i < m.grid().size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            csv << text::format_double(m.grid()[i]) << ',' << text::format_double(m.mean_values()[r]);
            for (Eigen::Index j = 0; j < m.mode_values().cols(); ++j)
                csv << ',' << text::format_double(m.mode_values()(r, j));
            csv << '\n';
        }
        write_text(out / "modes.csv", csv.str());
    }

    log << "leading eigenvalues and ratios to lambda_1:\n";
    for (std::size_t i = 0; i < std::min(mc.report_modes, report.spectrum.size()); ++i)
        log << "  " << std::setw(2) << i + 1 << "  " << std::setw(14) << report.spectrum[i] << "  "
            << report.spectrum[i] / report.spectrum[0] << (i < mc.modes ? "  (kept)" : "") << "\n";
    log << "box: [" << report.model.y_min().transpose() << "] .. [" << report.model.y_max().transpose()
        << "]\n";
    return report;
}

SensitivityReport cmd_sensitivity(const PipelineContext& ctx) {
    const auto& cfg = ctx.config;
    auto& log = log_of(ctx);
    const auto out = prepare_out(ctx);
    const auto model = stored_model(ctx);
    const auto problem = make_problem(cfg);

    SensitivityReport report;
    report.current = cfg.inversion.sensitivity_current > 0.0 ? cfg.inversion.sensitivity_current
                                                            : median(training_currents(cfg.inversion));
    SolverOptions options = cfg.solver.options;
    options.keep_tangent = true;
    const Materials mat{std::make_shared<CurveLaw>(model->mean_curve().hermite())};
    const auto nominal = problem->solve(mat, report.current, options);
    log << "nominal solve at " << report.current << " A: " << nominal.newton_steps << " Newton steps\n";

    const auto fields = solve_all_modes(*problem, nominal, *model, ctx.threads);
    const auto candidates = candidate_grid(cfg.geometry);
    report.candidates = candidates.size();
    report.ranking = rank_probes(fields, problem->mesh(), candidates, cfg.inversion.probe_count,
                                 cfg.solver.patch_average);

    write_sensitivity_csv(problem->mesh(), fields, out / "sensitivity_map.csv");
    write_ranking_json(report.ranking, cfg.geometry, out / "probe_ranking.json");
    log << "ranked " << report.candidates << " candidates; top probes:\n";
    for (const auto& r : report.ranking)
        log << "  (" << r.point.x << ", " << r.point.y << ")  score " << r.score << "  shim distance "
            << cfg.geometry.distance_to_shim(r.point) << "\n";
    return report;
}

DataReport cmd_make_data(const PipelineContext& ctx) {
    const auto& cfg = ctx.config;
    auto& log = log_of(ctx);
    const auto out = prepare_out(ctx);
    const auto model = stored_model(ctx);
    const auto problem = make_problem(cfg);
    const auto ranking = read_json(require_file(ctx, "probe_ranking.json", "sensitivity"));
    const auto probes = points_from(ranking.at("probes"));

    DataReport report;
    report.y0 = draw_ground_truth(*model, cfg.inversion);

    const auto train_currents = training_currents(cfg.inversion);
    const ForwardModel train(problem, model, train_currents, probes, cfg.solver.options,
                             cfg.solver.patch_average);
    report.training = {train_currents, probes, train.simulate(report.y0), "synthetic"};
    const auto axis = axis_probes(cfg.inversion, cfg.geometry);
    const auto valid_currents = validation_currents(cfg.inversion);
    const ForwardModel valid(problem, model, valid_currents, axis, cfg.solver.options,
                             cfg.solver.patch_average);
    report.validation = {valid_currents, axis, valid.simulate(report.y0), "synthetic"};
    report.training.validate(&cfg.geometry);
    report.validation.validate(&cfg.geometry);

    write_observations(report.training, out / "training.csv");
    write_observations(report.validation, out / "validation.csv");
    json truth{{"y0", report.y0},
               {"truth_seed", cfg.inversion.truth_seed},
               {"truth_low", cfg.inversion.truth_low},
               {"truth_high", cfg.inversion.truth_high}};
    write_text(out / "ground_truth.json", truth.dump(1) + "\n");
    log << "training: " << report.training.currents.size() << " currents x " << probes.size()
        << " probes; validation: " << report.validation.currents.size() << " currents x " << axis.size()
        << " axis probes\n";
    return report;
}

namespace {

json metrics_json(const ErrorMetrics& m, const InversionConfig& c) {
    return {{"max_e_rel", m.max_e_rel()},
            {"max_e_abs", m.max_e_abs()},
            {"threshold_e_rel", c.max_e_rel},
            {"threshold_e_abs", c.max_e_abs},
            {"e_rel_points", m.b.size()},
            {"passed", m.max_e_rel() < c.max_e_rel && m.max_e_abs() < c.max_e_abs}};
}

void write_metric_csvs(const ErrorMetrics& m, const std::filesystem::path& out) {
    std::ostringstream rel;
    rel << "B_T,e_rel\n";
    for (std::size_t i = 0; i < m.b.size(); ++i)
        rel << text::format_double(m.b[i]) << ',' << text::format_double(m.e_rel[i]) << '\n';
    write_text(out / "e_rel.csv", rel.str());
    std::ostringstream abs;
    abs << "current_A,x_m,y_m,e_abs_T\n";
    for (Eigen::Index n = 0; n < m.e_abs.rows(); ++n)
        for (Eigen::Index p = 0; p < m.e_abs.cols(); ++p) {
            const auto& q = m.probes[static_cast<std::size_t>(p)];
            abs << text::format_double(m.currents[static_cast<std::size_t>(n)]) << ','
                << text::format_double(q.x) << ',' << text::format_double(q.y) << ','
                << text::format_double(m.e_abs(n, p)) << '\n';
        }
    write_text(out / "e_abs.csv", abs.str());
}

ErrorMetrics compute_metrics(const PipelineContext& ctx, const MaterialModel& model,
                             std::shared_ptr<const MaterialModel> shared,
                             std::shared_ptr<const MagnetostaticProblem> problem,
                             std::span<const double> y_hat, std::span<const double> y0) {
    const auto vpath = ctx.out / "validation.csv";
    if (!std::filesystem::exists(vpath)) return error_metrics(y_hat, y0, model, nullptr, nullptr);
    const auto validation = read_observations(vpath);
    const ForwardModel vf(std::move(problem), std::move(shared), validation.currents, validation.probes,
                          ctx.config.solver.options, ctx.config.solver.patch_average);
    return error_metrics(y_hat, y0, model, &validation, &vf);
}

} // namespace

IdentifyReport cmd_identify(const PipelineContext& ctx) {
    const auto& cfg = ctx.config;
    auto& log = log_of(ctx);
    const auto out = prepare_out(ctx);
    const auto start = std::chrono::steady_clock::now();
    const auto model = stored_model(ctx);
    const auto problem = make_problem(cfg);
    const auto training = read_observations(require_file(ctx, "training.csv", "make-data"));
    training.validate(&cfg.geometry);

    const ForwardModel forward(problem, model, training.currents, training.probes, cfg.solver.options,
                               cfg.solver.patch_average);
    IdentifyOptions options;
    options.swarm = cfg.inversion.swarm;
    options.swarm.threads = ctx.threads;
    options.regularization = cfg.inversion.regularization;
    log << "identifying " << model->dimension() << " parameters: swarm " << options.swarm.swarm_size
        << ", up to " << options.swarm.iterations << " iterations, " << training.currents.size()
        << " currents\n";

    IdentifyReport report;
    report.result = identify(training, forward, options);
    auto& r = report.result;
    const std::vector<double> y_hat(r.y_hat.begin(), r.y_hat.end());

    const auto truth_path = out / "ground_truth.json";
    if (std::filesystem::exists(truth_path)) {
        const auto y0 = read_json(truth_path).at("y0").get<std::vector<double>>();
        r.errors = compute_metrics(ctx, *model, model, problem, y_hat, y0);
        report.has_metrics = true;
        report.passed = r.errors->max_e_rel() < cfg.inversion.max_e_rel &&
                        (r.errors->e_abs.size() == 0 || r.errors->max_e_abs() < cfg.inversion.max_e_abs);
        write_metric_csvs(*r.errors, out);
    }

    const auto& sw = options.swarm;
    json result{{"y_hat", y_hat},
                {"best_objective", r.best_value},
                {"history", r.history},
                {"iterations", r.iterations},
                {"stalled", r.stalled},
                {"evaluations", r.evaluations},
                {"forward_solves", r.forward_solves},
                {"cache_hits", r.cache_hits},
                {"divergent_evaluations", r.divergent_evaluations},
                {"seed", r.seed},
                {"regularization", options.regularization},
                {"swarm",
                 {{"swarm_size", sw.swarm_size},
                  {"iterations", sw.iterations},
                  {"inertia", sw.inertia},
                  {"cognitive", sw.cognitive},
                  {"social", sw.social},
                  {"velocity_clamp", sw.velocity_clamp},
                  {"stall_window", sw.stall_window},
                  {"stall_tolerance", sw.stall_tolerance},
                  {"divergence_patience", sw.divergence_patience}}},
                {"currents", training.currents},
                {"probes", json::array()}};
    for (const auto& p : training.probes) result["probes"].push_back({{"x", p.x}, {"y", p.y}});
    if (r.errors) result["errors"] = metrics_json(*r.errors, cfg.inversion);
    write_text(out / "identification.json", result.dump(1) + "\n");

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream s;
    s << "identification summary\n";
    s << "  y_hat:            [" << r.y_hat.transpose() << "]\n";
    s << "  best objective:   " << r.best_value << " T^2\n";
    s << "  iterations:       " << r.iterations << (r.stalled ? " (stalled)" : "") << "\n";
    s << "  forward solves:   " << r.forward_solves << " = swarm " << sw.swarm_size << " x rounds "
      << r.evaluations / sw.swarm_size << " x currents " << training.currents.size() << " - cache hits "
      << r.cache_hits << "\n";
    s << "  divergent evals:  " << r.divergent_evaluations << "\n";
    if (r.errors) {
        s << "  max E_rel:        " << r.errors->max_e_rel() << " (threshold " << cfg.inversion.max_e_rel
          << ")\n";
        if (r.errors->e_abs.size())
            s << "  max E_abs:        " << r.errors->max_e_abs() << " T (threshold "
              << cfg.inversion.max_e_abs << ")\n";
        s << "  result:           " << (report.passed ? "PASS" : "FAIL") << "\n";
    } else {
        s << "  no ground truth available; error metrics skipped\n";
    }
    s << "  elapsed:          " << std::fixed << std::setprecision(1) << seconds << " s\n";
    write_text(out / "summary.txt", s.str());
    log << s.str();
    return report;
}

ValidateReport cmd_validate(const PipelineContext& ctx) {
    const auto& cfg = ctx.config;
    auto& log = log_of(ctx);
    const auto out = prepare_out(ctx);
    const auto model = stored_model(ctx);
    const auto y_hat = read_json(require_file(ctx, "identification.json", "identify"))
                           .at("y_hat")
                           .get<std::vector<double>>();
    const auto y0 = read_json(require_file(ctx, "ground_truth.json", "make-data"))
                        .at("y0")
                        .get<std::vector<double>>();
    if (y_hat.size() != model->dimension() || y0.size() != model->dimension())
        throw InputError("parameter vectors do not match the model dimension");

    ValidateReport report;
    report.metrics = compute_metrics(ctx, *model, model, make_problem(cfg), y_hat, y0);
    const auto summary = metrics_json(report.metrics, cfg.inversion);
    report.passed = summary.at("passed").get<bool>();
    write_metric_csvs(report.metrics, out);
    write_text(out / "validation_report.json", summary.dump(1) + "\n");
    log << "max E_rel " << report.metrics.max_e_rel() << " (threshold " << cfg.inversion.max_e_rel
        << "), max E_abs " << report.metrics.max_e_abs() << " T (threshold " << cfg.inversion.max_e_abs
        << "): " << (report.passed ? "PASS" : "FAIL") << "\n";
    return report;
}

} // namespace bhkle
