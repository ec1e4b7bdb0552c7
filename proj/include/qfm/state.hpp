#pragma once

#include <complex>
#include <variant>

#include <Eigen/Dense>

#include "qfm/errors.hpp"

namespace qfm {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr int kDefaultQubitCap = 14;

enum class Axis { X, Y, Z };

/// Dense statevector over `num_qubits` qubits, little-endian: qubit q is bit q
/// of the basis index, so |q1 q0> = |10> is amplitude index 2.
struct StateVector {
    int num_qubits = 0;
    CVector amps;

    double norm() const { return amps.norm(); }
};

/// All qubits in |0>, i.e. amplitude 1 at index 0.
StateVector new_zero_state(int num_qubits, int max_qubits = kDefaultQubitCap);

struct PauliRotation {
    Axis axis = Axis::Y;
    int qubit = 0;
    double angle = 0.0; // exp(-i * angle * sigma / 2)
};

struct Cx {
    int control = 0;
    int target = 0;
};

/// Analog two-qubit interaction exp(i*pi * n_k n_l) with n = |1><1|:
/// a pure -1 phase on the |11> component of the pair.
struct AnalogZZ {
    int qubit_a = 0;
    int qubit_b = 0;
};

using GateSpec = std::variant<PauliRotation, Cx, AnalogZZ>;

StateVector apply_gate(StateVector state, const GateSpec& gate);

/// Total magnetization: sum of single-qubit Z observables over all qubits.
/// Expectation lies in [-N, N]; +N on |0...0>.
struct CostOperator {
    enum class Kind { total_magnetization } kind = Kind::total_magnetization;
};

double expectation(const StateVector& state, const CostOperator& cost);

// In-place kernels used by the evaluators; index bounds are the caller's job.
namespace kernels {

void rotate(CVector& amps, Axis axis, int qubit, double angle);
void cx(CVector& amps, int control, int target);
void analog_zz(CVector& amps, int qubit_a, int qubit_b);
/// Applies the bare Pauli matrix (X, Y, or Z) on one qubit.
void pauli(CVector& amps, Axis axis, int qubit);
/// Fills `diag` with the total-magnetization eigenvalue per basis state.
void magnetization_diagonal(int num_qubits, RVector& diag);

} // namespace kernels

} // namespace qfm
