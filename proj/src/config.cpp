#include "bhkle/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bhkle/errors.hpp"
#include "text_util.hpp"

namespace bhkle {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed fields share the size_t binding");
using Field = std::variant<double*, int*, std::size_t*, bool*, std::string*, std::vector<double>*>;

struct Entry {
    const char* section;
    const char* key;
    Field field;
};

std::vector<Entry> bind(RunConfig& c) {
    auto& g = c.geometry;
    auto& s = c.solver.options;
    auto& inv = c.inversion;
    auto& sw = c.inversion.swarm;
    return {
        {"paths", "manifest", &c.paths.manifest},
        {"paths", "mesh_cache", &c.paths.mesh_cache},
        {"paths", "output_dir", &c.paths.output_dir},

        {"model", "ensemble_seed", &c.model.ensemble_seed},
        {"model", "specimens", &c.model.specimens},
        {"model", "points", &c.model.points},
        {"model", "b_max", &c.model.b_max},
        {"model", "js_factor", &c.model.shape.js_factor},
        {"model", "mu_r", &c.model.shape.mu_r},
        {"model", "knee", &c.model.shape.knee},
        {"model", "spread", &c.model.shape.spread},
        {"model", "grid_points", &c.model.grid_points},
        {"model", "modes", &c.model.modes},
        {"model", "report_modes", &c.model.report_modes},
        {"model", "alpha", &c.model.options.alpha},
        {"model", "shrink_factor", &c.model.options.shrink_factor},
        {"model", "max_shrink_iterations", &c.model.options.max_shrink_iterations},

        {"geometry", "gap_height", &g.gap_height},
        {"geometry", "pole_width", &g.pole_width},
        {"geometry", "pole_height", &g.pole_height},
        {"geometry", "shim_width", &g.shim_width},
        {"geometry", "shim_height", &g.shim_height},
        {"geometry", "window_width", &g.window_width},
        {"geometry", "coil_clearance", &g.coil_clearance},
        {"geometry", "leg_thickness", &g.leg_thickness},
        {"geometry", "yoke_thickness", &g.yoke_thickness},
        {"geometry", "air_margin", &g.air_margin},
        {"geometry", "turns", &g.turns},
        {"geometry", "reference_gap_height_mm", &g.reference_gap_height_mm},
        {"geometry", "fine_size", &g.fine_size},
        {"geometry", "coarse_size", &g.coarse_size},

        {"solver", "tolerance", &s.tolerance},
        {"solver", "max_steps", &s.max_steps},
        {"solver", "max_halvings", &s.max_halvings},
        {"solver", "cg_tolerance", &s.cg_tolerance},
        {"solver", "refinement", &c.solver.refinement},
        {"solver", "patch_average", &c.solver.patch_average},

        {"inversion", "current_min", &inv.current_min},
        {"inversion", "current_max", &inv.current_max},
        {"inversion", "current_count", &inv.current_count},
        {"inversion", "validation_currents", &inv.validation_currents},
        {"inversion", "validation_probes", &inv.validation_probes},
        {"inversion", "validation_span", &inv.validation_span},
        {"inversion", "sensitivity_current", &inv.sensitivity_current},
        {"inversion", "probe_count", &inv.probe_count},
        {"inversion", "truth_seed", &inv.truth_seed},
        {"inversion", "truth_low", &inv.truth_low},
        {"inversion", "truth_high", &inv.truth_high},
        {"inversion", "regularization", &inv.regularization},
        {"inversion", "swarm_size", &sw.swarm_size},
        {"inversion", "iterations", &sw.iterations},
        {"inversion", "inertia", &sw.inertia},
        {"inversion", "cognitive", &sw.cognitive},
        {"inversion", "social", &sw.social},
        {"inversion", "velocity_clamp", &sw.velocity_clamp},
        {"inversion", "stall_window", &sw.stall_window},
        {"inversion", "stall_tolerance", &sw.stall_tolerance},
        {"inversion", "divergence_patience", &sw.divergence_patience},
        {"inversion", "seed", &sw.seed},
        {"inversion", "max_e_rel", &inv.max_e_rel},
        {"inversion", "max_e_abs", &inv.max_e_abs},
    };
}

[[noreturn]] void bad_value(const Entry& e, const std::string& raw) {
    throw ConfigError(std::string("[") + e.section + "] " + e.key + ": invalid value '" + raw + "'");
}

void assign(const Entry& e, const std::string& raw) {
    const auto v = text::trim(raw);
    std::visit(
        [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, double>) {
                const auto d = text::parse_double(v);
                if (!d) bad_value(e, raw);
                *p = *d;
            } else if constexpr (std::is_same_v<T, bool>) {
                if (v == "true") *p = true;
                else if (v == "false") *p = false;
                else bad_value(e, raw);
            } else if constexpr (std::is_same_v<T, std::string>) {
                *p = std::string(v);
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                p->clear();
                if (v.empty()) return;
                for (auto part : text::split(v, ',')) {
                    const auto d = text::parse_double(text::trim(part));
                    if (!d) bad_value(e, raw);
                    p->push_back(*d);
                }
            } else {
                // Unsigned targets reject a sign, so seeds use the full 64-bit range.
                T value{};
                const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
                if (ec != std::errc() || end != v.data() + v.size() || v.empty()) bad_value(e, raw);
                *p = value;
            }
        },
        e.field);
}

std::string render(const Field& f) {
    return std::visit(
        [](auto* p) -> std::string {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, double>) return text::format_double(*p);
            else if constexpr (std::is_same_v<T, bool>) return *p ? "true" : "false";
            else if constexpr (std::is_same_v<T, std::string>) return *p;
            else if constexpr (std::is_same_v<T, std::vector<double>>) {
                std::string out;
                for (std::size_t i = 0; i < p->size(); ++i)
                    out += (i ? "," : "") + text::format_double((*p)[i]);
                return out;
            } else return std::to_string(*p);
        },
        f);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

} // namespace

void RunConfig::validate() const {
    require(model.specimens >= 2, "[model] specimens must be at least 2");
    require(model.points >= 5, "[model] points must be at least 5");
    require(model.b_max > 0.0, "[model] b_max must be positive");
    require(model.grid_points >= 3, "[model] grid_points must be at least 3");
    require(model.modes >= 1, "[model] modes must be at least 1");
    require(model.report_modes >= model.modes, "[model] report_modes must be at least modes");
    require(model.options.alpha > 0.0, "[model] alpha must be positive");
    require(model.options.shrink_factor > 0.0 && model.options.shrink_factor < 1.0,
            "[model] shrink_factor must lie in (0, 1)");
    require(model.options.max_shrink_iterations >= 0, "[model] max_shrink_iterations must be nonnegative");
    require(model.shape.js_factor > 1.0 && model.shape.mu_r > 1.0 && model.shape.knee > 0.0 &&
                model.shape.spread >= 0.0 && model.shape.spread < 0.5,
            "[model] invalid synthetic ensemble shape");
    try {
        geometry.validate();
    } catch (const GeometryError& e) {
        throw ConfigError(std::string("[geometry] ") + e.what());
    }
    require(solver.options.tolerance > 0.0, "[solver] tolerance must be positive");
    require(solver.options.cg_tolerance > 0.0, "[solver] cg_tolerance must be positive");
    require(solver.options.max_steps >= 1, "[solver] max_steps must be at least 1");
    require(solver.options.max_halvings >= 0, "[solver] max_halvings must be nonnegative");
    require(solver.refinement >= 0 && solver.refinement <= 4, "[solver] refinement must lie in 0..4");
    require(inversion.current_min > 0.0 && inversion.current_max > inversion.current_min,
            "[inversion] current range must satisfy 0 < current_min < current_max");
    require(inversion.current_count >= 2, "[inversion] current_count must be at least 2");
    for (std::size_t i = 0; i < inversion.validation_currents.size(); ++i)
        require(inversion.validation_currents[i] > inversion.current_max &&
                    (i == 0 || inversion.validation_currents[i] > inversion.validation_currents[i - 1]),
                "[inversion] validation_currents must be increasing and above current_max");
    require(inversion.validation_probes >= 1, "[inversion] validation_probes must be at least 1");
    require(inversion.validation_span > 0.0 && inversion.validation_span < 1.0,
            "[inversion] validation_span must lie in (0, 1)");
    require(inversion.sensitivity_current >= 0.0, "[inversion] sensitivity_current must be nonnegative");
    require(inversion.probe_count >= 1, "[inversion] probe_count must be at least 1");
    require(0.0 <= inversion.truth_low && inversion.truth_low <= inversion.truth_high &&
                inversion.truth_high <= 1.0,
            "[inversion] truth_low/truth_high must satisfy 0 <= low <= high <= 1");
    require(inversion.regularization >= 0.0, "[inversion] regularization must be nonnegative");
    const auto& sw = inversion.swarm;
    require(sw.swarm_size >= 2, "[inversion] swarm_size must be at least 2");
    require(sw.iterations >= 0, "[inversion] iterations must be nonnegative");
    require(sw.velocity_clamp > 0.0, "[inversion] velocity_clamp must be positive");
    require(sw.stall_window >= 0, "[inversion] stall_window must be nonnegative");
    require(sw.stall_tolerance >= 0.0, "[inversion] stall_tolerance must be nonnegative");
    require(sw.divergence_patience >= 1, "[inversion] divergence_patience must be at least 1");
    require(inversion.max_e_rel > 0.0 && inversion.max_e_abs > 0.0,
            "[inversion] thresholds must be positive");
    if (!paths.manifest.empty())
        require(std::filesystem::exists(paths.manifest),
                "[paths] manifest '" + paths.manifest + "' does not exist");
    require(!paths.output_dir.empty(), "[paths] output_dir must not be empty");
}

namespace {

RunConfig read_entries(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig config;
    const auto entries = bind(config);
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("key '" + section + "' outside any section");
        bool known_section = false;
        for (const auto& e : entries) known_section |= section == e.section;
        if (!known_section) throw ConfigError("unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            const auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) {
                return section == e.section && key == e.key;
            });
            if (it == entries.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
            assign(*it, value.data());
        }
    }
    return config;
}

} // namespace

RunConfig parse_config(const std::string& text) {
    auto config = read_entries(text);
    config.validate();
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        auto config = read_entries(buffer.str());
        const auto base = path.parent_path();
        for (auto* p : {&config.paths.manifest, &config.paths.mesh_cache, &config.paths.output_dir})
            if (!p->empty() && std::filesystem::path(*p).is_relative())
                *p = (base / *p).lexically_normal().string();
        config.validate();
        return config;
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string serialize_config(const RunConfig& config) {
    RunConfig copy = config;
    std::ostringstream out;
    std::string current;
    for (const auto& e : bind(copy)) {
        if (current != e.section) {
            if (!current.empty()) out << '\n';
            current = e.section;
            out << '[' << current << "]\n";
        }
        out << e.key << " = " << render(e.field) << '\n';
    }
    return out.str();
}

} // namespace bhkle
