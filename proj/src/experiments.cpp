#include "qfm/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <vector>

#include "json.hpp"

#include "qfm/errors.hpp"
#include "qfm/pde.hpp"
#include "qfm/spectrum.hpp"
#include "qfm/training.hpp"

namespace qfm {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw io_error("failed while writing '" + path.string() + "'");
}

std::ostringstream make_csv() {
    std::ostringstream csv;
    csv << std::setprecision(17);
    return csv;
}

ordered_json vec_json(const RVector& v) {
    ordered_json arr = ordered_json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

RVector to_rvector(const std::vector<double>& v) {
    RVector out(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<int>(i)] = v[i];
    return out;
}

std::string trace_csv(const std::vector<double>& trace) {
    auto csv = make_csv();
    csv << "iteration,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) csv << i << ',' << trace[i] << '\n';
    return csv.str();
}

ordered_json loss_json(const DqcLoss& loss) {
    ordered_json j;
    j["pde"] = loss.pde;
    j["data"] = loss.data;
    j["total"] = loss.total;
    return j;
}

ordered_json observable_json(const std::array<double, 3>& values) {
    ordered_json j;
    j["u"] = values[0];
    j["v"] = values[1];
    j["p"] = values[2];
    return j;
}

ordered_json run_fit_cosine(const ExperimentConfig& config, const fs::path& dir) {
    const RVector freqs = to_rvector(config.dataset.frequencies);
    const CosineDataset dataset =
        sample_cosine_series(freqs, config.dataset.lo, config.dataset.hi, config.dataset.count);

    ModelSpec spec = config.model;
    spec.feature_dims = 1;
    const QuantumModel model = build_model(spec, config.seed);

    TrainConfig train = config.training;
    train.seed = config.seed;
    const TrainReport report = train_supervised(model, dataset, train);

    QuantumModel trained = model;
    trained.theta_a = report.theta_a;
    trained.theta_f = report.theta_f;
    const GateProgram program = compile(trained);

    const int n = static_cast<int>(dataset.xs.size());
    RVector pred(n), x(1);
    for (int i = 0; i < n; ++i) {
        x[0] = dataset.xs[i];
        pred[i] = run_program(program, trained.theta_a, trained.theta_f, x);
    }

    auto prediction_csv = make_csv();
    prediction_csv << "x,y_ref,y_pred\n";
    for (int i = 0; i < n; ++i)
        prediction_csv << dataset.xs[i] << ',' << dataset.ys[i] << ',' << pred[i] << '\n';
    write_text(dir / "prediction.csv", prediction_csv.str());
    write_text(dir / "trace.csv", trace_csv(report.loss_trace));

    const DftSpectrum spectrum =
        model_prediction_spectrum(trained, dataset.lo, dataset.hi, freqs.maxCoeff() + 1.0);
    auto spectrum_csv = make_csv();
    spectrum_csv << "omega,magnitude\n";
    for (int i = 0; i < spectrum.omega.size(); ++i)
        spectrum_csv << spectrum.omega[i] << ',' << spectrum.magnitude[i] << '\n';
    write_text(dir / "spectrum.csv", spectrum_csv.str());
    const std::vector<SpectralPeak> peaks = spectral_peaks(spectrum);

    ordered_json results;
    results["experiment"] = to_string(config.experiment);
    results["dataset_count"] = n;
    results["final_mse"] = report.final_mse;
    if (!report.loss_trace.empty()) {
        results["loss_first"] = report.loss_trace.front();
        results["loss_last"] = report.loss_trace.back();
    }
    results["theta_f"] = vec_json(report.theta_f);
    ordered_json peaks_json;
    ordered_json peak_omega = ordered_json::array(), peak_magnitude = ordered_json::array();
    for (const SpectralPeak& peak : peaks) {
        peak_omega.push_back(peak.omega);
        peak_magnitude.push_back(peak.magnitude);
    }
    peaks_json["omega"] = peak_omega;
    peaks_json["magnitude"] = peak_magnitude;
    results["peaks"] = peaks_json;
    results["circuit_evaluations"] = report.circuit_evaluations;
    return results;
}

ordered_json run_richness_sweep(const ExperimentConfig& config, const fs::path& dir) {
    auto csv = make_csv();
    csv << "num_frequencies,feature_map,seed,final_mse\n";

    // medians[kind][dataset] = median over seeds of the final MSE
    std::vector<std::vector<double>> medians(config.sweep.feature_maps.size());
    unsigned long long evaluations = 0;

    for (int n_freq = 1; n_freq <= config.sweep.max_frequencies; ++n_freq) {
        const RVector freqs = richness_frequencies(n_freq);
        const CosineDataset dataset =
            sample_cosine_series(freqs, config.dataset.lo, config.dataset.hi, config.dataset.count);
        for (std::size_t k = 0; k < config.sweep.feature_maps.size(); ++k) {
            const FeatureMapKind kind = config.sweep.feature_maps[k];
            RVector per_seed(static_cast<int>(config.sweep.seeds.size()));
            for (std::size_t s = 0; s < config.sweep.seeds.size(); ++s) {
                ModelSpec spec = config.model;
                spec.feature_map = kind;
                spec.feature_dims = 1;
                const QuantumModel model = build_model(spec, config.sweep.seeds[s]);
                TrainConfig train = config.training;
                train.seed = config.sweep.seeds[s];
                const TrainReport report = train_supervised(model, dataset, train);
                per_seed[static_cast<int>(s)] = report.final_mse;
                evaluations += report.circuit_evaluations;
                csv << n_freq << ',' << to_string(kind) << ',' << config.sweep.seeds[s] << ','
                    << report.final_mse << '\n';
            }
            medians[k].push_back(median(per_seed));
        }
    }
    write_text(dir / "sweep_results.csv", csv.str());

    ordered_json results;
    results["experiment"] = to_string(config.experiment);
    results["num_datasets"] = config.sweep.max_frequencies;
    ordered_json median_json, mean_json;
    for (std::size_t k = 0; k < config.sweep.feature_maps.size(); ++k) {
        const std::string name = to_string(config.sweep.feature_maps[k]);
        median_json[name] = medians[k];
        double sum = 0.0;
        for (double m : medians[k]) sum += m;
        mean_json[name] = sum / static_cast<double>(medians[k].size());
    }
    results["median_mse_by_dataset"] = median_json;
    results["mean_mse"] = mean_json;
    results["circuit_evaluations"] = evaluations;
    return results;
}

ordered_json run_spectrum(const ExperimentConfig& config, const fs::path& dir) {
    const EncodingBlock block = make_feature_map(config.model.feature_map, config.model.qubits);
    const RVector theta_f = RVector::Ones(config.model.qubits);
    const SpectrumReport report = make_spectrum_report(block, theta_f, SpectrumMode::qnn_gaps);

    auto csv = make_csv();
    csv << "gap\n";
    for (int i = 0; i < report.frequencies.size(); ++i) csv << report.frequencies[i] << '\n';
    write_text(dir / "gaps.csv", csv.str());

    ordered_json results;
    results["experiment"] = to_string(config.experiment);
    results["feature_map"] = to_string(config.model.feature_map);
    results["qubits"] = config.model.qubits;
    results["eigenvalues"] = vec_json(report.eigenvalues);
    results["frequencies"] = vec_json(report.frequencies);
    return results;
}

ordered_json run_solve_nse(const ExperimentConfig& config, const fs::path& dir) {
    NseSpec spec;
    spec.model = config.model;
    spec.data_stride_x = config.nse.data_stride_x;
    spec.data_stride_y = config.nse.data_stride_y;

    FlowField reference;
    if (config.nse.source == "taylor_green") {
        const RVector xs = RVector::LinSpaced(config.nse.x.count, config.nse.x.lo, config.nse.x.hi);
        const RVector ys = RVector::LinSpaced(config.nse.y.count, config.nse.y.lo, config.nse.y.hi);
        const RVector ts = RVector::LinSpaced(config.nse.t.count, config.nse.t.lo, config.nse.t.hi);
        reference = taylor_green_field(xs, ys, ts, config.nse.reynolds);
        spec.reynolds = config.nse.reynolds;
        spec.lo = {config.nse.x.lo, config.nse.y.lo, config.nse.t.lo};
        spec.hi = {config.nse.x.hi, config.nse.y.hi, config.nse.t.hi};
    } else {
        reference = load_flow_field(config.nse.source);
        spec.reynolds = reference.reynolds > 0.0 ? reference.reynolds : config.nse.reynolds;
        spec.lo = {reference.xs.minCoeff(), reference.ys.minCoeff(), reference.ts.minCoeff()};
        spec.hi = {reference.xs.maxCoeff(), reference.ys.maxCoeff(), reference.ts.maxCoeff()};
    }

    const NseProblem problem = build_nse_problem(spec, config.seed);
    NseTrainConfig train;
    train.iterations = config.training.iterations;
    train.batch_size = config.training.batch_size;
    train.learning_rate = config.training.learning_rate;
    train.seed = config.seed;
    const NseTrainReport report = train_nse(problem, reference, train);

    write_text(dir / "trace.csv", trace_csv(report.loss_trace));
    save_flow_field(reference, (dir / "reference.csv").string());
    save_flow_field(report.prediction, (dir / "fields.csv").string());

    auto maerm_csv = make_csv();
    maerm_csv << "time_index,t,u,v,p\n";
    for (int it = 0; it < report.maerm.by_time.rows(); ++it)
        maerm_csv << it << ',' << reference.ts[it] << ',' << report.maerm.by_time(it, 0) << ','
                  << report.maerm.by_time(it, 1) << ',' << report.maerm.by_time(it, 2) << '\n';
    write_text(dir / "maerm.csv", maerm_csv.str());

    const MaermReport baseline = maerm_report(constant_median_baseline(reference), reference);

    ordered_json results;
    results["experiment"] = to_string(config.experiment);
    results["reynolds"] = spec.reynolds;
    ordered_json grid;
    grid["nx"] = reference.nx();
    grid["ny"] = reference.ny();
    grid["nt"] = reference.nt();
    results["grid"] = grid;
    results["initial_loss"] = loss_json(report.initial_loss);
    results["final_loss"] = loss_json(report.final_loss);
    results["maerm_mean"] = observable_json(report.maerm.mean);
    results["maerm_min"] = observable_json(report.maerm.min);
    results["maerm_max"] = observable_json(report.maerm.max);
    results["baseline_maerm_mean"] = observable_json(baseline.mean);
    ordered_json params;
    params["stream"] = static_cast<int>(report.trained.psi_model.theta_a.size() +
                                        report.trained.psi_model.theta_f.size()) +
                       2;
    params["pressure"] = static_cast<int>(report.trained.p_model.theta_a.size() +
                                          report.trained.p_model.theta_f.size()) +
                         2;
    results["trainable_parameters"] = params;
    results["circuit_evaluations"] = report.circuit_evaluations;
    return results;
}

ordered_json load_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("'" + path.string() + "' is missing");
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw io_error(path.string() + ": " + e.what());
    }
}

void flatten_numbers(const ordered_json& value, const std::string& path,
                     std::map<std::string, double>& out) {
    if (value.is_number()) {
        out[path] = value.get<double>();
    } else if (value.is_object()) {
        for (auto it = value.begin(); it != value.end(); ++it)
            flatten_numbers(it.value(), path.empty() ? it.key() : path + "." + it.key(), out);
    } else if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i)
            flatten_numbers(value[i], path + "[" + std::to_string(i) + "]", out);
    }
}

} // namespace

void run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
    validate_experiment_config(config);
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + dir.string() + "'");

    write_text(dir / "config.json", canonical_config_json(config));

    ordered_json results;
    switch (config.experiment) {
    case ExperimentKind::fit_cosine: results = run_fit_cosine(config, dir); break;
    case ExperimentKind::richness_sweep: results = run_richness_sweep(config, dir); break;
    case ExperimentKind::spectrum: results = run_spectrum(config, dir); break;
    case ExperimentKind::solve_nse: results = run_solve_nse(config, dir); break;
    }
    write_text(dir / "results.json", results.dump(2) + "\n");

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ordered_json timing;
    timing["wall_seconds"] = wall;
    write_text(dir / "timing.json", timing.dump(2) + "\n");
}

std::string compare_runs(const std::string& dir_a, const std::string& dir_b) {
    const ordered_json results_a = load_json_file(fs::path(dir_a) / "results.json");
    const ordered_json results_b = load_json_file(fs::path(dir_b) / "results.json");

    const std::string kind_a = results_a.value("experiment", std::string());
    const std::string kind_b = results_b.value("experiment", std::string());
    if (kind_a.empty() || kind_b.empty())
        throw io_error("results.json lacks an 'experiment' field");
    if (kind_a != kind_b)
        throw config_error("incompatible experiments: '" + kind_a + "' vs '" + kind_b + "'");

    std::map<std::string, double> flat_a, flat_b;
    flatten_numbers(results_a, "", flat_a);
    flatten_numbers(results_b, "", flat_b);

    ordered_json deltas;
    for (const auto& [path, value_a] : flat_a) {
        const auto it = flat_b.find(path);
        if (it == flat_b.end()) continue;
        ordered_json entry;
        entry["a"] = value_a;
        entry["b"] = it->second;
        entry["delta"] = it->second - value_a;
        deltas[path] = entry;
    }

    ordered_json report;
    report["experiment"] = kind_a;
    report["a"] = dir_a;
    report["b"] = dir_b;

    const ExperimentKind kind = parse_experiment_kind(kind_a);
    if (kind == ExperimentKind::spectrum) {
        double max_abs = 0.0;
        int shared = 0;
        for (const auto& [path, value_a] : flat_a) {
            if (path.rfind("frequencies[", 0) != 0) continue;
            const auto it = flat_b.find(path);
            if (it == flat_b.end()) continue;
            ++shared;
            max_abs = std::max(max_abs, std::abs(it->second - value_a));
        }
        ordered_json freq;
        freq["count_a"] = results_a.contains("frequencies") ? results_a["frequencies"].size() : 0;
        freq["count_b"] = results_b.contains("frequencies") ? results_b["frequencies"].size() : 0;
        freq["shared"] = shared;
        freq["max_abs_delta"] = max_abs;
        freq["match"] = freq["count_a"] == freq["count_b"] && max_abs == 0.0;
        report["frequency_delta"] = freq;
    } else {
        std::string metric;
        switch (kind) {
        case ExperimentKind::fit_cosine: metric = "final_mse"; break;
        case ExperimentKind::richness_sweep: metric = "mean_mse.trainable"; break;
        case ExperimentKind::solve_nse: metric = "final_loss.total"; break;
        case ExperimentKind::spectrum: break;
        }
        if (kind == ExperimentKind::richness_sweep && flat_a.find(metric) == flat_a.end()) {
            // fall back to the first mean the sweep actually produced
            for (const auto& [path, value] : flat_a) {
                (void)value;
                if (path.rfind("mean_mse.", 0) == 0) {
                    metric = path;
                    break;
                }
            }
        }
        report["primary_metric"] = metric;
        const auto a_it = flat_a.find(metric);
        const auto b_it = flat_b.find(metric);
        if (a_it != flat_a.end() && b_it != flat_b.end()) {
            ordered_json primary;
            primary["a"] = a_it->second;
            primary["b"] = b_it->second;
            const double delta = b_it->second - a_it->second;
            primary["delta"] = delta;
            primary["better"] = delta == 0.0 ? "tie" : (delta > 0.0 ? "a" : "b");
            report["primary"] = primary;
        }
    }
    report["deltas"] = deltas;
    return report.dump(2) + "\n";
}

} // namespace qfm
