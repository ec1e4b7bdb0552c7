#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qfm/model.hpp"
#include "qfm/training.hpp"

namespace qfm {

enum class ExperimentKind { fit_cosine, richness_sweep, spectrum, solve_nse };

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

Entangler parse_entangler(const std::string& name);
std::string to_string(Entangler entangler);

RotationSchedule parse_rotation_schedule(const std::string& name);
std::string to_string(RotationSchedule schedule);

EncodingLayout parse_encoding_layout(const std::string& name);
std::string to_string(EncodingLayout layout);

struct DatasetConfig {
    std::vector<double> frequencies = {1.0, 2.0, 3.0};
    double lo = -12.566370614359172; // -4 pi
    double hi = 12.566370614359172;
    int count = -1; // -1: the Nyquist count
};

struct SweepConfig {
    int max_frequencies = 7;
    std::vector<FeatureMapKind> feature_maps = {FeatureMapKind::trainable, FeatureMapKind::simple,
                                                FeatureMapKind::tower, FeatureMapKind::exponential};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct AxisConfig {
    double lo = 0.0;
    double hi = 1.0;
    int count = 2;
};

struct NseConfig {
    double reynolds = 100.0;
    // "taylor_green" synthesizes the reference on the grid below; anything
    // else is read as a flow-field CSV path and overrides the grid.
    std::string source = "taylor_green";
    AxisConfig x{0.8, 3.0, 20};
    AxisConfig y{1.1, 2.8, 20};
    AxisConfig t{0.0, 1.0, 5};
    int data_stride_x = 10;
    int data_stride_y = 10;
};

/// One experiment, fully specified: the canonical echo of this struct is
/// enough to reproduce a run bit-identically.
struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::fit_cosine;
    std::string output; // run directory name; empty derives from the config file name
    std::uint64_t seed = 1;
    ModelSpec model;
    TrainConfig training{2000, 1, 1e-3, 0}; // seed field is taken from `seed` above
    DatasetConfig dataset;
    SweepConfig sweep;
    NseConfig nse;
};

/// Parses and validates; malformed JSON gets a line-anchored diagnostic,
/// unknown or ill-typed fields are named in full (e.g. "training.batch_size").
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& source_name = "<config>");

ExperimentConfig load_experiment_config(const std::string& path);

/// Every field materialized, fixed key order; re-parsing yields an identical
/// configuration.
std::string canonical_config_json(const ExperimentConfig& config);

void validate_experiment_config(const ExperimentConfig& config);

} // namespace qfm
