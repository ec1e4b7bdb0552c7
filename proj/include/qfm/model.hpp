#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "qfm/feature_map.hpp"
#include "qfm/state.hpp"

namespace qfm {

enum class Entangler { cx_ring, analog_zz_ring };
enum class RotationSchedule { ry_rz, rx_ry_rz };

/// One hardware-efficient ansatz layer: the rotation schedule applied to every
/// qubit (each rotation gets its own angle from theta_A), then a ring of
/// entanglers over pairs (0,1)...(N-1,0); two qubits get the single pair (0,1).
struct AnsatzLayer {
    std::vector<Axis> rotation_axes = {Axis::Y, Axis::Z};
    Entangler entangler = Entangler::cx_ring;
    int param_offset = 0;
};

struct LayoutItem {
    enum class Kind { ansatz, encoding } kind = Kind::ansatz;
    int index = 0; // into `layers` or `blocks`; a block may appear twice (re-upload)
};

struct QuantumModel {
    int num_qubits = 0;
    int feature_dims = 1;
    std::vector<AnsatzLayer> layers;
    std::vector<EncodingBlock> blocks;
    std::vector<LayoutItem> layout;
    RVector theta_a;
    RVector theta_f;
    CostOperator cost;

    int layer_param_count(const AnsatzLayer& layer) const {
        return num_qubits * static_cast<int>(layer.rotation_axes.size());
    }

    void validate() const;
};

/// Flattened gate list. Every rotation (ansatz or encoding) carries an
/// occurrence id so shift rules can offset individual gate angles.
struct CompiledGate {
    enum class Kind { rotation, cx, analog_zz } kind = Kind::rotation;
    Axis axis = Axis::Y;
    int qubit = 0;
    int partner = 0;
    int theta_a = -1;       // ansatz angle index
    int theta_f = -1;       // trainable encoding weight index
    int dim = -1;           // feature dimension for encoding rotations
    double gamma = 1.0;
    double phi_scale = 1.0; // encoding angle = gamma * theta * phi_scale * x[dim]
    int occurrence = -1;
};

struct GateProgram {
    int num_qubits = 0;
    int feature_dims = 1;
    std::vector<CompiledGate> gates;
    int num_rotations = 0;
    std::vector<std::vector<int>> occ_by_theta_a; // gate indices per parameter
    std::vector<std::vector<int>> occ_by_theta_f;
    std::vector<std::vector<int>> occ_by_dim;
    CostOperator cost;

    Eigen::Index dim() const { return Eigen::Index{1} << num_qubits; }
};

GateProgram compile(const QuantumModel& model);

/// Angle offsets keyed by gate index (not occurrence id) as produced by the
/// occurrence lookup tables above. Kept as a flat list; it is always tiny.
using GateOffsets = std::vector<std::pair<int, double>>;

double run_program(const GateProgram& program, const RVector& theta_a, const RVector& theta_f,
                   const RVector& x, const GateOffsets& offsets = {});

/// Executes the model on |0...0> and returns the total-magnetization
/// expectation.
double forward(const QuantumModel& model, const RVector& x);
double forward(const QuantumModel& model, double x);

// Running total of statevector program executions (shift-rule bookkeeping).
unsigned long long evaluation_count();
void reset_evaluation_count();

namespace detail {
double gate_angle(const CompiledGate& g, const RVector& theta_a, const RVector& theta_f,
                  const RVector& x);
void count_evaluation();
} // namespace detail

enum class EncodingLayout {
    single,         // one feature dimension, one block
    parallel,       // one block per dimension, applied back to back on all qubits
    parallel_split, // dimensions own disjoint qubit groups inside one region
    serial          // blocks separated by dedicated ansatz layers
};

struct ModelSpec {
    int qubits = 4;
    int ansatz_layers = 4;
    Entangler entangler = Entangler::cx_ring;
    RotationSchedule rotations = RotationSchedule::ry_rz;
    FeatureMapKind feature_map = FeatureMapKind::simple;
    EncodingLayout encoding = EncodingLayout::single;
    int feature_dims = 1;
    bool reupload = false;
    double input_scale = 1.0; // phi global scale applied at every encoding gate
};

/// Builds the model: theta_A drawn uniform [-pi, pi) from the seed, theta_F
/// initialised to ones. Layouts: plain models are [encoding, L ansatz layers];
/// re-uploading models are [ansatz, encoding, L-2 ansatz, encoding, ansatz]
/// with the second encoding sharing theta_F indices with the first.
QuantumModel build_model(const ModelSpec& spec, std::uint64_t seed);

/// Architecture pair used for shift-count accounting: 6 qubits, 10 layers of
/// 3-rotation HEA (180 ansatz angles), three input dimensions encoded on
/// disjoint qubit pairs with one trainable weight per qubit, re-uploaded with
/// shared parameters (12 trainable encoding-gate occurrences).
ModelSpec cost_accounting_spec(bool trainable_frequencies);

} // namespace qfm
