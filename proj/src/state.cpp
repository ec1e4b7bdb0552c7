#include "qfm/state.hpp"

#include <bit>
#include <cmath>

namespace qfm {

StateVector new_zero_state(int num_qubits, int max_qubits) {
    if (num_qubits < 1 || num_qubits > max_qubits) {
        throw capacity_error("num_qubits must be in [1, " + std::to_string(max_qubits) +
                             "], got " + std::to_string(num_qubits));
    }
    StateVector s;
    s.num_qubits = num_qubits;
    s.amps = CVector::Zero(Eigen::Index{1} << num_qubits);
    s.amps[0] = Complex{1.0, 0.0};
    return s;
}

namespace kernels {

void rotate(CVector& amps, Axis axis, int qubit, double angle) {
    const double c = std::cos(0.5 * angle);
    const double s = std::sin(0.5 * angle);
    const Eigen::Index stride = Eigen::Index{1} << qubit;
    const Eigen::Index dim = amps.size();
    Complex* a = amps.data();
    switch (axis) {
    case Axis::X:
        // [[c, -is], [-is, c]]
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i = base; i < base + stride; ++i) {
                const Complex a0 = a[i];
                const Complex a1 = a[i + stride];
                a[i] = c * a0 - Complex{0, s} * a1;
                a[i + stride] = c * a1 - Complex{0, s} * a0;
            }
        }
        break;
    case Axis::Y:
        // [[c, -s], [s, c]]
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i = base; i < base + stride; ++i) {
                const Complex a0 = a[i];
                const Complex a1 = a[i + stride];
                a[i] = c * a0 - s * a1;
                a[i + stride] = s * a0 + c * a1;
            }
        }
        break;
    case Axis::Z: {
        // diag(e^{-i angle/2}, e^{+i angle/2})
        const Complex p0{c, -s};
        const Complex p1{c, s};
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i = base; i < base + stride; ++i) {
                a[i] *= p0;
                a[i + stride] *= p1;
            }
        }
        break;
    }
    }
}

void cx(CVector& amps, int control, int target) {
    const Eigen::Index cbit = Eigen::Index{1} << control;
    const Eigen::Index tbit = Eigen::Index{1} << target;
    const Eigen::Index dim = amps.size();
    Complex* a = amps.data();
    for (Eigen::Index i = 0; i < dim; ++i) {
        if ((i & cbit) && !(i & tbit)) {
            std::swap(a[i], a[i | tbit]);
        }
    }
}

void analog_zz(CVector& amps, int qubit_a, int qubit_b) {
    const Eigen::Index mask = (Eigen::Index{1} << qubit_a) | (Eigen::Index{1} << qubit_b);
    const Eigen::Index dim = amps.size();
    Complex* a = amps.data();
    for (Eigen::Index i = 0; i < dim; ++i) {
        if ((i & mask) == mask) {
            a[i] = -a[i];
        }
    }
}

void pauli(CVector& amps, Axis axis, int qubit) {
    const Eigen::Index stride = Eigen::Index{1} << qubit;
    const Eigen::Index dim = amps.size();
    Complex* a = amps.data();
    switch (axis) {
    case Axis::X:
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i = base; i < base + stride; ++i) {
                std::swap(a[i], a[i + stride]);
            }
        }
        break;
    case Axis::Y:
        // Y|0> = i|1>, Y|1> = -i|0>
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i = base; i < base + stride; ++i) {
                const Complex a0 = a[i];
                const Complex a1 = a[i + stride];
                a[i] = Complex{0, -1} * a1;
                a[i + stride] = Complex{0, 1} * a0;
            }
        }
        break;
    case Axis::Z:
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i = base + stride; i < base + 2 * stride; ++i) {
                a[i] = -a[i];
            }
        }
        break;
    }
}

void magnetization_diagonal(int num_qubits, RVector& diag) {
    const Eigen::Index dim = Eigen::Index{1} << num_qubits;
    diag.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        diag[i] = num_qubits - 2 * std::popcount(static_cast<unsigned long long>(i));
    }
}

} // namespace kernels

namespace {

void check_qubit(const StateVector& s, int q, const char* what) {
    if (q < 0 || q >= s.num_qubits) {
        throw index_error(std::string(what) + " index " + std::to_string(q) +
                          " out of range for " + std::to_string(s.num_qubits) + " qubits");
    }
}

} // namespace

StateVector apply_gate(StateVector state, const GateSpec& gate) {
    std::visit(
        [&state](const auto& g) {
            using T = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<T, PauliRotation>) {
                check_qubit(state, g.qubit, "rotation qubit");
                kernels::rotate(state.amps, g.axis, g.qubit, g.angle);
            } else if constexpr (std::is_same_v<T, Cx>) {
                check_qubit(state, g.control, "cx control");
                check_qubit(state, g.target, "cx target");
                if (g.control == g.target) {
                    throw index_error("cx control and target must differ");
                }
                kernels::cx(state.amps, g.control, g.target);
            } else {
                check_qubit(state, g.qubit_a, "analog_zz qubit");
                check_qubit(state, g.qubit_b, "analog_zz qubit");
                if (g.qubit_a == g.qubit_b) {
                    throw index_error("analog_zz qubits must differ");
                }
                kernels::analog_zz(state.amps, g.qubit_a, g.qubit_b);
            }
        },
        gate);
    return state;
}

double expectation(const StateVector& state, const CostOperator&) {
    const Eigen::Index dim = state.amps.size();
    const Complex* a = state.amps.data();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
        const double w = state.num_qubits - 2 * std::popcount(static_cast<unsigned long long>(i));
        acc += w * std::norm(a[i]);
    }
    return acc;
}

} // namespace qfm
