#ifndef BHKLE_PIPELINE_HPP
#define BHKLE_PIPELINE_HPP

#include <filesystem>
#include <memory>
#include <ostream>
#include <vector>

#include "bhkle/config.hpp"
#include "bhkle/inversion.hpp"
#include "bhkle/kle.hpp"
#include "bhkle/sensitivity.hpp"

namespace bhkle {

struct PipelineContext {
    RunConfig config;
    std::filesystem::path out; // output directory; created on demand
    int threads = 1;
    std::ostream* log = nullptr;
};

struct ModelReport {
    MaterialModel model;
    std::vector<double> spectrum; // every eigenvalue of the discretized operator
    double covariance_trace = 0.0; // trapezoid quadrature of the variance
};

struct SensitivityReport {
    double current = 0.0;
    std::size_t candidates = 0;
    std::vector<RankedProbe> ranking;
};

struct DataReport {
    ObservationSet training;
    ObservationSet validation;
    std::vector<double> y0;
};

struct IdentifyReport {
    IdentificationResult result;
    bool has_metrics = false;
    bool passed = false;
};

struct ValidateReport {
    ErrorMetrics metrics;
    bool passed = false;
};

// model.json, eigenvalues.csv, modes.csv
ModelReport cmd_build_model(const PipelineContext& ctx);
// sensitivity_map.csv, probe_ranking.json; needs model.json
SensitivityReport cmd_sensitivity(const PipelineContext& ctx);
// training.csv, validation.csv, ground_truth.json; needs model.json and probe_ranking.json
DataReport cmd_make_data(const PipelineContext& ctx);
// identification.json, e_rel.csv, e_abs.csv, summary.txt; needs model.json and training.csv
IdentifyReport cmd_identify(const PipelineContext& ctx);
// validation_report.json; needs identification.json and ground_truth.json
ValidateReport cmd_validate(const PipelineContext& ctx);

// Training currents, validation currents and axis probes from the config.
std::vector<double> training_currents(const InversionConfig& c);
std::vector<double> validation_currents(const InversionConfig& c);
std::vector<Point> axis_probes(const InversionConfig& c, const DipoleGeometry& g);
// Ground truth: y0_m = y_mean_m + u_m (y_max_m - y_mean_m), u_m uniform in [low, high].
std::vector<double> draw_ground_truth(const MaterialModel& model, const InversionConfig& c);

// Mesh from the cache file when present, otherwise generated (and cached).
std::shared_ptr<const Mesh> pipeline_mesh(const RunConfig& config);

} // namespace bhkle

#endif // BHKLE_PIPELINE_HPP
