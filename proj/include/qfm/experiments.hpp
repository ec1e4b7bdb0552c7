#pragma once

#include <string>

#include "qfm/config.hpp"

namespace qfm {

/// Runs the configured experiment and writes its artifacts into out_dir
/// (created if needed): config.json (the canonical echo), results.json
/// (deterministic; re-running the echoed config reproduces it byte for byte),
/// timing.json (wall clock, kept apart so everything else replays exactly),
/// and per-experiment CSV traces.
void run_experiment(const ExperimentConfig& config, const std::string& out_dir);

/// Compares two completed run directories of the same experiment kind.
/// Returns a JSON document with per-metric values, deltas (b - a) and a
/// lower-is-better verdict. Mismatched kinds or missing results are errors.
std::string compare_runs(const std::string& dir_a, const std::string& dir_b);

} // namespace qfm
