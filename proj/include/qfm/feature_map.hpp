#pragma once

#include <string>
#include <vector>

#include "qfm/state.hpp"

namespace qfm {

/// Product feature map: one rotation per qubit,
///   exp(-i/2 * w_m * phi(x) * sigma^axis) with w_m = gamma_m * theta_m.
/// theta_m comes from `theta_f_slice` (global generator-parameter indices);
/// an empty slice means fixed frequencies (theta_m = 1).
/// phi is the affine input map phi(x) = phi_scale * x.
struct EncodingBlock {
    Axis axis = Axis::Y;
    RVector gamma;
    std::vector<int> theta_f_slice;
    double phi_scale = 1.0;
    int feature_dim = 0;

    bool trainable() const { return !theta_f_slice.empty(); }
};

enum class FeatureMapKind { simple, tower, exponential, trainable };

FeatureMapKind parse_feature_map_kind(const std::string& name);
std::string to_string(FeatureMapKind kind);

/// gamma per kind: simple -> 1, tower -> m, exponential -> 2^(m-1) (m is the
/// 1-based qubit number). `trainable` uses gamma = 1 with a fresh theta_F slice
/// of length num_qubits starting at `theta_f_offset`.
EncodingBlock make_feature_map(FeatureMapKind kind, int num_qubits, int feature_dim = 0,
                               int theta_f_offset = 0);

/// Resolved per-qubit weights w_m = gamma_m * theta_m for the block.
RVector block_weights(const EncodingBlock& block, const RVector& theta_f);

StateVector evolve_encoding_block(StateVector state, const EncodingBlock& block,
                                  const RVector& theta_f, double feature_value);

} // namespace qfm
