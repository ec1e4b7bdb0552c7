#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "qfm/errors.hpp"
#include "qfm/experiments.hpp"
#include "qfm/spectrum.hpp"

namespace fs = std::filesystem;

namespace {

std::string output_root() {
    const char* env = std::getenv("QFM_OUTPUT_ROOT");
    return (env != nullptr && *env != '\0') ? env : "runs";
}

std::string run_dir_for(const qfm::ExperimentConfig& config, const std::string& config_path) {
    std::string name = config.output;
    if (name.empty()) name = fs::path(config_path).stem().string();
    return (fs::path(output_root()) / name).string();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trainable-frequency quantum models on a statevector simulator"};
    app.require_subcommand(1);

    std::string run_config, spectrum_config, dir_a, dir_b;
    CLI::App* run = app.add_subcommand("run", "Execute the experiment described by a JSON config");
    run->add_option("config", run_config, "experiment config path")->required();
    CLI::App* compare = app.add_subcommand("compare", "Compare two completed run directories");
    compare->add_option("dir_a", dir_a, "first run directory")->required();
    compare->add_option("dir_b", dir_b, "second run directory")->required();
    CLI::App* spectrum =
        app.add_subcommand("spectrum", "Print the configured model's frequency set");
    spectrum->add_option("config", spectrum_config, "experiment config path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            const qfm::ExperimentConfig config = qfm::load_experiment_config(run_config);
            const std::string dir = run_dir_for(config, run_config);
            qfm::run_experiment(config, dir);
            std::cout << "artifacts: " << dir << "\n";
        } else if (compare->parsed()) {
            std::cout << qfm::compare_runs(dir_a, dir_b);
        } else if (spectrum->parsed()) {
            const qfm::ExperimentConfig config = qfm::load_experiment_config(spectrum_config);
            const qfm::EncodingBlock block =
                qfm::make_feature_map(config.model.feature_map, config.model.qubits);
            const qfm::RVector theta_f = qfm::RVector::Ones(config.model.qubits);
            const qfm::SpectrumReport report =
                qfm::make_spectrum_report(block, theta_f, qfm::SpectrumMode::qnn_gaps);
            std::cout << std::setprecision(15);
            for (int i = 0; i < report.frequencies.size(); ++i)
                std::cout << report.frequencies[i] << "\n";
        }
        return 0;
    } catch (const qfm::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const qfm::numerical_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
