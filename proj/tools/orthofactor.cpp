#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "orthofactor/orthofactor.hpp"

int main(int argc, char** argv) {
    using namespace orthofactor;
    CLI::App app{"Sparse Bayesian factor analysis with normal and orthonormal factors"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    for (const char* name : {"simulate", "fit", "diagnose"}) {
        auto* sub = app.add_subcommand(name, std::string(name) + " (see README)");
        sub->add_option("--config", config_path, "flat JSON configuration")->required();
        sub->add_option("--seed", seed, "master seed (overrides the config)");
        sub->add_option("--output-dir", output_dir, "output directory (overrides the config)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    ConfigOverrides ov;
    ov.command = parse_command(app.get_subcommands().front()->get_name());
    ov.seed = seed;
    ov.output_dir = output_dir;
    RunConfig config;
    try {
        config = parse_config(config_path, ov);
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kExitValidation;
    }
    return run_pipeline(config, std::cerr);
}
