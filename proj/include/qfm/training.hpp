#pragma once

#include <cstdint>
#include <vector>

#include "qfm/autodiff.hpp"
#include "qfm/model.hpp"
#include "qfm/spectrum.hpp"

namespace qfm {

struct CosineDataset {
    RVector frequencies;
    double lo = 0.0;
    double hi = 0.0;
    RVector xs;
    RVector ys;
};

/// Sample count ceil(2 * |D| * max frequency) resolving the highest data
/// frequency.
int nyquist_count(const RVector& frequencies, double lo, double hi);

/// Equally spaced samples of y(x) = mean_w cos(w*x), endpoints inclusive.
/// `count_override` < 0 keeps the Nyquist count.
CosineDataset sample_cosine_series(const RVector& frequencies, double lo, double hi,
                                   int count_override = -1);

double mse(const RVector& pred, const RVector& target);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    RVector m;
    RVector v;
    long long step = 0;
};

/// Standard bias-corrected Adam update, in place.
void adam_step(AdamState& state, RVector& params, const RVector& grads, double learning_rate,
               const AdamConfig& config = {});

struct TrainConfig {
    int iterations = 0;
    int batch_size = 1;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> loss_trace; // batch loss per iteration
    RVector theta_a;
    RVector theta_f;
    double final_mse = 0.0; // on the full dataset
    unsigned long long circuit_evaluations = 0;
    double wall_seconds = 0.0;
};

/// Mini-batch Adam on [theta_A; theta_F] jointly. Batches are drawn uniformly
/// without replacement each iteration from the seeded generator.
TrainReport train_supervised(QuantumModel model, const CosineDataset& dataset,
                             const TrainConfig& config);

/// Relative circuit-evaluation cost of a TF gradient pass vs its FF
/// counterpart: (num_theta_f + num_theta_a) / num_theta_a, where the counts
/// are two-point shift tasks (= parameters when nothing is re-uploaded).
double cost_factor(int num_theta_f, int num_theta_a);

/// Evenly spaced frequencies in [1, 3]; a single-frequency set is {value_for_one}.
RVector richness_frequencies(int count, double value_for_one = 1.0);

/// DFT of the model's prediction sampled over the data domain widened
/// span_factor times about its centre, dense enough to resolve `bandwidth`
/// (samples at ceil(2 * span * bandwidth)). The wide window narrows the bins
/// enough to localise non-integer peaks.
DftSpectrum model_prediction_spectrum(const QuantumModel& model, double lo, double hi,
                                      double bandwidth, double span_factor = 8.0);

} // namespace qfm
