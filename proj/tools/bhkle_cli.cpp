#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bhkle/config.hpp"
#include "bhkle/errors.hpp"
#include "bhkle/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kThreshold = 4 };

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic B(H) curve model and magnetostatic parameter identification"};
    app.require_subcommand(1);

    std::string config_path;
    int threads = 1;
    std::optional<std::uint64_t> seed_override;
    std::string out_dir;
    app.add_option("--config", config_path, "INI configuration file (defaults apply when omitted)");
    app.add_option("--threads", threads, "worker threads; 1 gives bit-reproducible results")
        ->check(CLI::PositiveNumber);
    app.add_option("--seed-override", seed_override, "replaces the particle swarm seed");
    app.add_option("--out", out_dir, "output directory (overrides [paths] output_dir)");

    auto* build = app.add_subcommand("build-model", "estimate the KLE model from the specimen ensemble");
    auto* sens = app.add_subcommand("sensitivity", "mode sensitivities and probe ranking");
    auto* data = app.add_subcommand("make-data", "simulate training and validation data at a drawn y0");
    auto* ident = app.add_subcommand("identify", "identify the KLE parameters from training data");
    auto* valid = app.add_subcommand("validate", "error metrics of the identified curve against y0");
    auto* dump = app.add_subcommand("print-config", "write the effective configuration to stdout");

    CLI11_PARSE(app, argc, argv);

    bhkle::PipelineContext ctx;
    try {
        ctx.config = config_path.empty() ? bhkle::RunConfig{} : bhkle::load_config(config_path);
        if (seed_override) ctx.config.inversion.swarm.seed = *seed_override;
        if (!out_dir.empty()) ctx.config.paths.output_dir = out_dir;
        ctx.config.validate();
    } catch (const bhkle::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    }
    ctx.out = ctx.config.paths.output_dir;
    ctx.threads = threads;
    ctx.log = &std::cout;

    try {
        if (*dump) {
            std::cout << bhkle::serialize_config(ctx.config);
        } else if (*build) {
            bhkle::cmd_build_model(ctx);
        } else if (*sens) {
            bhkle::cmd_sensitivity(ctx);
        } else if (*data) {
            bhkle::cmd_make_data(ctx);
        } else if (*ident) {
            bhkle::cmd_identify(ctx);
        } else if (*valid) {
            if (!bhkle::cmd_validate(ctx).passed) return kThreshold;
        }
    } catch (const bhkle::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const bhkle::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kConfig;
    } catch (const bhkle::DivergenceError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n  residual history:";
        for (double r : e.history()) std::cerr << ' ' << r;
        std::cerr << "\n";
        return kNumerical;
    } catch (const bhkle::Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumerical;
    }
    return kOk;
}
