#include "qfm/feature_map.hpp"

#include <cmath>

namespace qfm {

FeatureMapKind parse_feature_map_kind(const std::string& name) {
    if (name == "simple") return FeatureMapKind::simple;
    if (name == "tower") return FeatureMapKind::tower;
    if (name == "exponential") return FeatureMapKind::exponential;
    if (name == "trainable") return FeatureMapKind::trainable;
    throw config_error("unknown feature map kind '" + name +
                       "' (expected simple | tower | exponential | trainable)");
}

std::string to_string(FeatureMapKind kind) {
    switch (kind) {
    case FeatureMapKind::simple: return "simple";
    case FeatureMapKind::tower: return "tower";
    case FeatureMapKind::exponential: return "exponential";
    case FeatureMapKind::trainable: return "trainable";
    }
    return "?";
}

EncodingBlock make_feature_map(FeatureMapKind kind, int num_qubits, int feature_dim,
                               int theta_f_offset) {
    if (num_qubits < 1) {
        throw config_error("feature map needs at least one qubit");
    }
    EncodingBlock block;
    block.feature_dim = feature_dim;
    block.gamma.resize(num_qubits);
    for (int m = 1; m <= num_qubits; ++m) {
        switch (kind) {
        case FeatureMapKind::simple:
        case FeatureMapKind::trainable:
            block.gamma[m - 1] = 1.0;
            break;
        case FeatureMapKind::tower:
            block.gamma[m - 1] = static_cast<double>(m);
            break;
        case FeatureMapKind::exponential:
            block.gamma[m - 1] = std::ldexp(1.0, m - 1);
            break;
        }
    }
    if (kind == FeatureMapKind::trainable) {
        block.theta_f_slice.resize(num_qubits);
        for (int m = 0; m < num_qubits; ++m) {
            block.theta_f_slice[m] = theta_f_offset + m;
        }
    }
    return block;
}

RVector block_weights(const EncodingBlock& block, const RVector& theta_f) {
    const Eigen::Index n = block.gamma.size();
    RVector w(n);
    for (Eigen::Index m = 0; m < n; ++m) {
        double theta = 1.0;
        if (block.trainable()) {
            const int j = block.theta_f_slice[static_cast<std::size_t>(m)];
            if (j < 0 || j >= theta_f.size()) {
                throw index_error("theta_f index " + std::to_string(j) + " out of range");
            }
            theta = theta_f[j];
        }
        w[m] = block.gamma[m] * theta;
    }
    return w;
}

StateVector evolve_encoding_block(StateVector state, const EncodingBlock& block,
                                  const RVector& theta_f, double feature_value) {
    if (block.gamma.size() != state.num_qubits) {
        throw input_error("encoding block spans " + std::to_string(block.gamma.size()) +
                          " qubits, state has " + std::to_string(state.num_qubits));
    }
    if (block.trainable() &&
        block.theta_f_slice.size() != static_cast<std::size_t>(state.num_qubits)) {
        throw input_error("trainable block must carry one theta_f index per qubit");
    }
    const RVector w = block_weights(block, theta_f);
    const double phi = block.phi_scale * feature_value;
    for (int q = 0; q < state.num_qubits; ++q) {
        if (w[q] == 0.0) continue;
        kernels::rotate(state.amps, block.axis, q, w[q] * phi);
    }
    return state;
}

} // namespace qfm
