#include "qfm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <utility>

#include "qfm/errors.hpp"
#include "qfm/rng.hpp"

namespace qfm {

int nyquist_count(const RVector& frequencies, double lo, double hi) {
    if (frequencies.size() == 0) throw input_error("nyquist_count: no frequencies given");
    if (!(hi > lo)) throw input_error("nyquist_count: domain must satisfy hi > lo");
    const double max_freq = frequencies.maxCoeff();
    if (!(max_freq > 0.0)) throw input_error("nyquist_count: frequencies must be positive");
    return static_cast<int>(std::ceil(2.0 * (hi - lo) * max_freq));
}

CosineDataset sample_cosine_series(const RVector& frequencies, double lo, double hi,
                                   int count_override) {
    const int count = count_override < 0 ? nyquist_count(frequencies, lo, hi) : count_override;
    if (frequencies.size() == 0) throw input_error("sample_cosine_series: no frequencies given");
    if (!(hi > lo)) throw input_error("sample_cosine_series: domain must satisfy hi > lo");
    if (count < 2) throw input_error("sample_cosine_series: need at least two samples");

    CosineDataset data;
    data.frequencies = frequencies;
    data.lo = lo;
    data.hi = hi;
    data.xs = RVector::LinSpaced(count, lo, hi);
    data.ys = RVector::Zero(count);
    for (int i = 0; i < count; ++i) {
        double acc = 0.0;
        for (int k = 0; k < frequencies.size(); ++k) acc += std::cos(frequencies[k] * data.xs[i]);
        data.ys[i] = acc / static_cast<double>(frequencies.size());
    }
    return data;
}

double mse(const RVector& pred, const RVector& target) {
    if (pred.size() == 0) throw input_error("mse: empty input");
    if (pred.size() != target.size()) throw input_error("mse: size mismatch");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

void adam_step(AdamState& state, RVector& params, const RVector& grads, double learning_rate,
               const AdamConfig& config) {
    if (grads.size() != params.size()) throw input_error("adam_step: gradient size mismatch");
    if (state.m.size() == 0) {
        state.m = RVector::Zero(params.size());
        state.v = RVector::Zero(params.size());
        state.step = 0;
    }
    if (state.m.size() != params.size()) throw input_error("adam_step: state size mismatch");

    state.step += 1;
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads;
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * grads.cwiseProduct(grads);
    const double m_scale = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double v_scale = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    params.array() -= learning_rate * (state.m / m_scale).array() /
                      ((state.v / v_scale).array().sqrt() + config.epsilon);
}

TrainReport train_supervised(QuantumModel model, const CosineDataset& dataset,
                             const TrainConfig& config) {
    model.validate();
    const int n = static_cast<int>(dataset.xs.size());
    if (n == 0) throw input_error("train_supervised: empty dataset");
    if (dataset.ys.size() != n) throw input_error("train_supervised: xs/ys size mismatch");
    if (config.iterations < 0) throw config_error("iterations must be non-negative");
    if (config.batch_size < 1) throw config_error("batch_size must be at least 1");
    if (config.batch_size > n) throw config_error("batch_size exceeds the dataset size");
    if (!(config.learning_rate > 0.0)) throw config_error("learning_rate must be positive");

    const GateProgram program = compile(model);
    if (program.feature_dims != 1)
        throw input_error("train_supervised expects one-dimensional inputs");

    const auto t0 = std::chrono::steady_clock::now();
    const auto evals0 = evaluation_count();

    const int na = static_cast<int>(model.theta_a.size());
    const int nf = static_cast<int>(model.theta_f.size());
    RVector params(na + nf);
    params.head(na) = model.theta_a;
    params.tail(nf) = model.theta_f;

    AdamState adam;
    Rng rng(config.seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    report.loss_trace.reserve(static_cast<std::size_t>(config.iterations));
    std::vector<RVector> bx(static_cast<std::size_t>(config.batch_size), RVector(1));
    RVector by(config.batch_size);
    for (int iter = 0; iter < config.iterations; ++iter) {
        for (int j = 0; j < config.batch_size; ++j) {
            const int pick = j + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - j)));
            std::swap(order[j], order[pick]);
            bx[static_cast<std::size_t>(j)][0] = dataset.xs[order[j]];
            by[j] = dataset.ys[order[j]];
        }
        const LossGrad batch = supervised_loss_gradient(program, params.head(na), params.tail(nf), bx, by);
        report.loss_trace.push_back(batch.loss);
        adam_step(adam, params, batch.grad, config.learning_rate);
    }

    report.theta_a = params.head(na);
    report.theta_f = params.tail(nf);
    RVector pred(n);
    RVector x(1);
    for (int i = 0; i < n; ++i) {
        x[0] = dataset.xs[i];
        pred[i] = run_program(program, report.theta_a, report.theta_f, x);
    }
    report.final_mse = mse(pred, dataset.ys);
    report.circuit_evaluations = evaluation_count() - evals0;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

double cost_factor(int num_theta_f, int num_theta_a) {
    if (num_theta_a < 1) throw config_error("cost_factor: need at least one ansatz parameter");
    if (num_theta_f < 0) throw config_error("cost_factor: negative frequency parameter count");
    return static_cast<double>(num_theta_f + num_theta_a) / static_cast<double>(num_theta_a);
}

RVector richness_frequencies(int count, double value_for_one) {
    if (count < 1) throw config_error("richness_frequencies: count must be at least 1");
    if (count == 1) return RVector::Constant(1, value_for_one);
    return RVector::LinSpaced(count, 1.0, 3.0);
}

DftSpectrum model_prediction_spectrum(const QuantumModel& model, double lo, double hi,
                                      double bandwidth, double span_factor) {
    if (!(hi > lo)) throw input_error("model_prediction_spectrum: hi must exceed lo");
    if (!(bandwidth > 0.0)) throw input_error("model_prediction_spectrum: bandwidth must be positive");
    if (!(span_factor >= 1.0))
        throw input_error("model_prediction_spectrum: span_factor must be at least 1");
    const double centre = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo) * span_factor;
    const double span = 2.0 * half;
    const int count = std::max(2, static_cast<int>(std::ceil(2.0 * span * bandwidth)));
    const GateProgram program = compile(model);
    const RVector xs = RVector::LinSpaced(count, centre - half, centre + half);
    RVector ys(count);
    RVector x(1);
    for (int i = 0; i < count; ++i) {
        x[0] = xs[i];
        ys[i] = run_program(program, model.theta_a, model.theta_f, x);
    }
    return dft_spectrum(xs, ys);
}

} // namespace qfm
