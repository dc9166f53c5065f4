#ifndef BHKLE_CONFIG_HPP
#define BHKLE_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bhkle/curves.hpp"
#include "bhkle/kle.hpp"
#include "bhkle/magnetostatics.hpp"
#include "bhkle/mesh.hpp"
#include "bhkle/swarm.hpp"

namespace bhkle {

struct PathsConfig {
    std::string manifest;   // empty: synthetic ensemble
    std::string mesh_cache; // empty: generate in memory
    std::string output_dir = "out";
    bool operator==(const PathsConfig&) const = default;
};

struct ModelConfig {
    std::uint64_t ensemble_seed = 7;
    std::size_t specimens = 26;
    std::size_t points = 28;
    double b_max = 2.0;
    EnsembleShape shape;
    std::size_t grid_points = 200;
    std::size_t modes = 4;
    std::size_t report_modes = 10;
    ModelOptions options;
    bool operator==(const ModelConfig&) const = default;
};

struct SolverConfig {
    SolverOptions options;
    int refinement = 0;
    bool patch_average = true;
    bool operator==(const SolverConfig&) const = default;
};

struct InversionConfig {
    double current_min = 20.0;
    double current_max = 450.0;
    std::size_t current_count = 8;
    std::vector<double> validation_currents{500.0, 550.0};
    std::size_t validation_probes = 9; // along y = 0
    double validation_span = 0.8;      // fraction of the pole width covered
    double sensitivity_current = 0.0;  // 0: median training current
    std::size_t probe_count = 5;
    std::uint64_t truth_seed = 11;
    double truth_low = 0.3;
    double truth_high = 0.7;
    double regularization = 0.0;
    SwarmOptions swarm{.seed = 5};
    double max_e_rel = 0.02;
    double max_e_abs = 5e-4;
    bool operator==(const InversionConfig&) const = default;
};

struct RunConfig {
    PathsConfig paths;
    ModelConfig model;
    DipoleGeometry geometry;
    SolverConfig solver;
    InversionConfig inversion;

    // Throws ConfigError.
    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

// INI text with sections [paths] [model] [geometry] [solver] [inversion].
// Missing keys keep their defaults; unknown sections or keys are errors.
RunConfig parse_config(const std::string& text);
// Relative paths are resolved against the file's directory.
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

} // namespace bhkle

#endif // BHKLE_CONFIG_HPP
