#include "qfm/model.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

#include "qfm/rng.hpp"

namespace qfm {

namespace {

std::atomic<unsigned long long> g_eval_count{0};

void add_ring(std::vector<CompiledGate>& gates, Entangler entangler, int n) {
    const int pairs = (n == 2) ? 1 : n;
    for (int q = 0; q < pairs; ++q) {
        CompiledGate g;
        g.qubit = q;
        g.partner = (q + 1) % n;
        g.kind = (entangler == Entangler::cx_ring) ? CompiledGate::Kind::cx
                                                   : CompiledGate::Kind::analog_zz;
        gates.push_back(g);
    }
}

} // namespace

unsigned long long evaluation_count() { return g_eval_count.load(std::memory_order_relaxed); }
void reset_evaluation_count() { g_eval_count.store(0, std::memory_order_relaxed); }

void QuantumModel::validate() const {
    if (num_qubits < 1 || num_qubits > kDefaultQubitCap) {
        throw capacity_error("model qubit count out of range: " + std::to_string(num_qubits));
    }
    if (feature_dims < 1 || feature_dims > 3) {
        throw config_error("feature_dims must be 1..3, got " + std::to_string(feature_dims));
    }
    for (const auto& layer : layers) {
        if (layer.rotation_axes.empty()) {
            throw config_error("ansatz layer must have at least one rotation per qubit");
        }
        const int need = layer.param_offset + layer_param_count(layer);
        if (layer.param_offset < 0 || need > theta_a.size()) {
            throw index_error("ansatz layer parameter slice exceeds theta_a length");
        }
    }
    for (const auto& block : blocks) {
        if (block.gamma.size() != num_qubits) {
            throw config_error("encoding block gamma length must equal qubit count");
        }
        if (block.feature_dim < 0 || block.feature_dim >= feature_dims) {
            throw config_error("encoding block feature_dim out of range");
        }
        if (block.trainable()) {
            if (block.theta_f_slice.size() != static_cast<std::size_t>(num_qubits)) {
                throw config_error("trainable block needs one theta_f index per qubit");
            }
            for (int j : block.theta_f_slice) {
                if (j < 0 || j >= theta_f.size()) {
                    throw index_error("theta_f slice index out of range");
                }
            }
        }
    }
    for (const auto& item : layout) {
        const int limit = (item.kind == LayoutItem::Kind::ansatz)
                              ? static_cast<int>(layers.size())
                              : static_cast<int>(blocks.size());
        if (item.index < 0 || item.index >= limit) {
            throw index_error("layout references a missing layer or block");
        }
    }
}

GateProgram compile(const QuantumModel& model) {
    model.validate();
    GateProgram p;
    p.num_qubits = model.num_qubits;
    p.feature_dims = model.feature_dims;
    p.cost = model.cost;
    p.occ_by_theta_a.resize(static_cast<std::size_t>(model.theta_a.size()));
    p.occ_by_theta_f.resize(static_cast<std::size_t>(model.theta_f.size()));
    p.occ_by_dim.resize(static_cast<std::size_t>(model.feature_dims));

    for (const auto& item : model.layout) {
        if (item.kind == LayoutItem::Kind::ansatz) {
            const auto& layer = model.layers[static_cast<std::size_t>(item.index)];
            int param = layer.param_offset;
            for (int q = 0; q < model.num_qubits; ++q) {
                for (Axis axis : layer.rotation_axes) {
                    CompiledGate g;
                    g.kind = CompiledGate::Kind::rotation;
                    g.axis = axis;
                    g.qubit = q;
                    g.theta_a = param++;
                    g.occurrence = p.num_rotations++;
                    p.occ_by_theta_a[static_cast<std::size_t>(g.theta_a)].push_back(
                        static_cast<int>(p.gates.size()));
                    p.gates.push_back(g);
                }
            }
            add_ring(p.gates, layer.entangler, model.num_qubits);
        } else {
            const auto& block = model.blocks[static_cast<std::size_t>(item.index)];
            for (int q = 0; q < model.num_qubits; ++q) {
                if (block.gamma[q] == 0.0) continue; // identity rotation, not emitted
                CompiledGate g;
                g.kind = CompiledGate::Kind::rotation;
                g.axis = block.axis;
                g.qubit = q;
                g.dim = block.feature_dim;
                g.gamma = block.gamma[q];
                g.phi_scale = block.phi_scale;
                if (block.trainable()) {
                    g.theta_f = block.theta_f_slice[static_cast<std::size_t>(q)];
                }
                g.occurrence = p.num_rotations++;
                const int gate_index = static_cast<int>(p.gates.size());
                if (g.theta_f >= 0) {
                    p.occ_by_theta_f[static_cast<std::size_t>(g.theta_f)].push_back(gate_index);
                }
                p.occ_by_dim[static_cast<std::size_t>(g.dim)].push_back(gate_index);
                p.gates.push_back(g);
            }
        }
    }
    return p;
}

namespace detail {

double gate_angle(const CompiledGate& g, const RVector& theta_a, const RVector& theta_f,
                  const RVector& x) {
    if (g.theta_a >= 0) {
        return theta_a[g.theta_a];
    }
    const double theta = (g.theta_f >= 0) ? theta_f[g.theta_f] : 1.0;
    return g.gamma * theta * g.phi_scale * x[g.dim];
}

void count_evaluation() { g_eval_count.fetch_add(1, std::memory_order_relaxed); }

} // namespace detail

double run_program(const GateProgram& program, const RVector& theta_a, const RVector& theta_f,
                   const RVector& x, const GateOffsets& offsets) {
    if (x.size() != program.feature_dims) {
        throw input_error("model expects " + std::to_string(program.feature_dims) +
                          " feature(s), got " + std::to_string(x.size()));
    }
    CVector amps = CVector::Zero(program.dim());
    amps[0] = Complex{1.0, 0.0};
    for (std::size_t gi = 0; gi < program.gates.size(); ++gi) {
        const CompiledGate& g = program.gates[gi];
        switch (g.kind) {
        case CompiledGate::Kind::rotation: {
            double angle = detail::gate_angle(g, theta_a, theta_f, x);
            for (const auto& [index, delta] : offsets) {
                if (index == static_cast<int>(gi)) angle += delta;
            }
            kernels::rotate(amps, g.axis, g.qubit, angle);
            break;
        }
        case CompiledGate::Kind::cx:
            kernels::cx(amps, g.qubit, g.partner);
            break;
        case CompiledGate::Kind::analog_zz:
            kernels::analog_zz(amps, g.qubit, g.partner);
            break;
        }
    }
    g_eval_count.fetch_add(1, std::memory_order_relaxed);
    double acc = 0.0;
    const Complex* a = amps.data();
    for (Eigen::Index i = 0; i < amps.size(); ++i) {
        const double w =
            program.num_qubits - 2 * std::popcount(static_cast<unsigned long long>(i));
        acc += w * std::norm(a[i]);
    }
    return acc;
}

double forward(const QuantumModel& model, const RVector& x) {
    return run_program(compile(model), model.theta_a, model.theta_f, x);
}

double forward(const QuantumModel& model, double x) {
    RVector v(1);
    v[0] = x;
    return forward(model, v);
}

QuantumModel build_model(const ModelSpec& spec, std::uint64_t seed) {
    if (spec.qubits < 1) {
        throw config_error("model needs at least one qubit");
    }
    if (spec.ansatz_layers < 0) {
        throw config_error("ansatz_layers must be non-negative");
    }
    if (spec.feature_dims < 1 || spec.feature_dims > 3) {
        throw config_error("feature_dims must be 1..3");
    }
    if (spec.encoding == EncodingLayout::single && spec.feature_dims != 1) {
        throw config_error("single encoding layout requires feature_dims = 1");
    }
    if (spec.encoding == EncodingLayout::parallel_split &&
        spec.qubits % spec.feature_dims != 0) {
        throw config_error("split encoding needs qubit count divisible by feature_dims");
    }
    if (spec.reupload && spec.ansatz_layers < 2) {
        throw config_error("re-uploading layout needs at least two ansatz layers");
    }

    QuantumModel model;
    model.num_qubits = spec.qubits;
    model.feature_dims = spec.feature_dims;

    std::vector<Axis> axes = (spec.rotations == RotationSchedule::ry_rz)
                                 ? std::vector<Axis>{Axis::Y, Axis::Z}
                                 : std::vector<Axis>{Axis::X, Axis::Y, Axis::Z};

    // Encoding blocks, one per feature dimension.
    const bool trainable = spec.feature_map == FeatureMapKind::trainable;
    for (int d = 0; d < spec.feature_dims; ++d) {
        EncodingBlock block = make_feature_map(spec.feature_map, spec.qubits, d,
                                               trainable ? d * spec.qubits : 0);
        block.phi_scale = spec.input_scale;
        if (spec.encoding == EncodingLayout::parallel_split) {
            // Each dimension keeps only its own qubit group; the slice stays
            // per-qubit so theta_F has one entry per qubit overall.
            const int group = spec.qubits / spec.feature_dims;
            for (int q = 0; q < spec.qubits; ++q) {
                if (q / group != d) block.gamma[q] = 0.0;
                if (trainable) block.theta_f_slice[static_cast<std::size_t>(q)] = q;
            }
        }
        model.blocks.push_back(std::move(block));
    }
    if (trainable) {
        const int n_f = (spec.encoding == EncodingLayout::parallel_split)
                            ? spec.qubits
                            : spec.qubits * spec.feature_dims;
        model.theta_f = RVector::Ones(n_f);
    }

    // Layout. Serial layouts get extra separator layers between blocks.
    auto push_layer = [&](void) {
        AnsatzLayer layer;
        layer.rotation_axes = axes;
        layer.entangler = spec.entangler;
        layer.param_offset = static_cast<int>(model.theta_a.size());
        model.theta_a.conservativeResize(model.theta_a.size() + model.layer_param_count(layer));
        model.layers.push_back(layer);
        model.layout.push_back({LayoutItem::Kind::ansatz, static_cast<int>(model.layers.size()) - 1});
    };
    auto push_encoding_region = [&](void) {
        for (int d = 0; d < spec.feature_dims; ++d) {
            model.layout.push_back({LayoutItem::Kind::encoding, d});
            if (spec.encoding == EncodingLayout::serial && d + 1 < spec.feature_dims) {
                push_layer();
            }
        }
    };

    model.theta_a.resize(0);
    if (spec.reupload) {
        push_layer();
        push_encoding_region();
        for (int l = 0; l < spec.ansatz_layers - 2; ++l) push_layer();
        push_encoding_region();
        push_layer();
    } else {
        push_encoding_region();
        for (int l = 0; l < spec.ansatz_layers; ++l) push_layer();
    }

    Rng rng(seed);
    for (Eigen::Index i = 0; i < model.theta_a.size(); ++i) {
        model.theta_a[i] = rng.uniform(-std::numbers::pi, std::numbers::pi);
    }
    model.validate();
    return model;
}

ModelSpec cost_accounting_spec(bool trainable_frequencies) {
    ModelSpec spec;
    spec.qubits = 6;
    spec.ansatz_layers = 10;
    spec.entangler = Entangler::analog_zz_ring;
    spec.rotations = RotationSchedule::rx_ry_rz;
    spec.feature_map =
        trainable_frequencies ? FeatureMapKind::trainable : FeatureMapKind::simple;
    spec.encoding = EncodingLayout::parallel_split;
    spec.feature_dims = 3;
    spec.reupload = true;
    return spec;
}

} // namespace qfm
