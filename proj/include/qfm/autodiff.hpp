#pragma once

#include <array>
#include <functional>
#include <vector>

#include "qfm/model.hpp"

namespace qfm {

enum class DiffBackend { shift_rule, analytic_forward };

DiffBackend parse_diff_backend(const std::string& name);

/// Derivative multi-index over up to three feature dimensions,
/// e.g. {2,1,0} = d^3 / dx^2 dy.
struct MultiIdx {
    std::array<int, 3> k{0, 0, 0};

    int total() const { return k[0] + k[1] + k[2]; }
    bool operator==(const MultiIdx&) const = default;

    static MultiIdx unit(int dim, int order = 1) {
        MultiIdx m;
        m.k[static_cast<std::size_t>(dim)] = order;
        return m;
    }
};

/// Downward-closed set of multi-indices with precomputed lookup tables for the
/// forward-mode propagation (per-dimension ancestors) and the product-rule
/// pairing at the measurement.
class DerivSet {
  public:
    DerivSet() = default;
    static DerivSet closure(int dims, const std::vector<MultiIdx>& maximal);

    int dims() const { return dims_; }
    int size() const { return static_cast<int>(indices_.size()); }
    const std::vector<MultiIdx>& indices() const { return indices_; }
    int slot(const MultiIdx& idx) const; // -1 if absent
    bool dim_active(int d) const { return dim_active_[static_cast<std::size_t>(d)]; }
    /// Slot of indices()[i] - j*e_d; valid for j <= indices()[i].k[d].
    int ancestor(int i, int d, int j) const {
        return ancestors_[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)]
                         [static_cast<std::size_t>(j)];
    }

    struct Pair {
        int left;
        int right;
        double coeff;
    };
    const std::vector<Pair>& measurement_pairs(int i) const {
        return pairs_[static_cast<std::size_t>(i)];
    }

  private:
    int dims_ = 1;
    std::vector<MultiIdx> indices_;
    std::array<bool, 3> dim_active_{false, false, false};
    std::array<std::vector<std::vector<int>>, 3> ancestors_;
    std::vector<std::vector<Pair>> pairs_;
    std::vector<int> lookup_;
};

/// Forward-mode evaluator: propagates the statevector together with its
/// derivative states through the program, exact for the affine encodings used
/// here. Holds workspace so repeated evaluation does not allocate.
class DerivEvaluator {
  public:
    DerivEvaluator(const GateProgram& program, DerivSet set);

    const DerivSet& set() const { return set_; }
    const GateProgram& program() const { return *program_; }

    /// Returns all tracked partial derivatives of <C>, aligned with
    /// set().indices(); entry 0 is the plain forward value.
    RVector evaluate(const RVector& theta_a, const RVector& theta_f, const RVector& x,
                     const GateOffsets& offsets = {});

  private:
    const GateProgram* program_;
    DerivSet set_;
    std::vector<CVector> states_;
    std::vector<CVector> rotated_;
    std::vector<CVector> pauli_rotated_;
};

/// d<C>/d theta_A[i] by the two-point parameter-shift rule, summed over the
/// gate occurrences of the parameter. Zero when the parameter is absent.
double grad_ansatz(const QuantumModel& model, const RVector& x, int param_index);

/// Per-occurrence contributions phi(x) * gamma_m * (f(a+pi/2) - f(a-pi/2))/2
/// for theta_F[j]; `grad_generator` sums them (re-uploaded blocks contribute
/// one term each).
std::vector<double> grad_generator_terms(const QuantumModel& model, const RVector& x,
                                         int theta_f_index);
double grad_generator(const QuantumModel& model, const RVector& x, int theta_f_index);

/// Mixed input partial d^|idx| f / dx^idx.
double input_partial(const QuantumModel& model, const RVector& x, const MultiIdx& idx,
                     DiffBackend backend);

/// d^order f / d x_dim^order for order 1..3.
double input_derivative(const QuantumModel& model, const RVector& x, int dim, int order,
                        DiffBackend backend);

/// Generalized shift rule for an evaluator with known spectral gaps: solves
/// the sine system over equidistant shifts (2i-1)*pi/(2*R*max_gap). A single
/// gap of 1 reproduces the standard rule with shift pi/2. Duplicate or
/// near-degenerate gaps make the system singular, which is an error.
double gpsr_gradient(const std::function<double(double)>& evaluator, const RVector& gaps,
                     double angle);

struct ParamRef {
    enum class Kind { ansatz, generator } kind = Kind::ansatz;
    int index = 0;
};

/// d/d theta of every partial tracked by the evaluator's set, as a vector
/// aligned with the set slots. Used to differentiate residual terms that mix
/// input derivatives with parameter derivatives.
RVector param_partials_gradient(DerivEvaluator& eval, const RVector& theta_a,
                                const RVector& theta_f, const RVector& x, ParamRef param);

/// Gradient of <C> with respect to [theta_A; theta_F], one shift pair per gate
/// occurrence.
RVector model_gradient(const GateProgram& program, const RVector& theta_a,
                       const RVector& theta_f, const RVector& x);

struct LossGrad {
    double loss = 0.0;
    RVector grad;
};

/// Batch MSE loss and its gradient over [theta_A; theta_F]:
/// dL/df = 2 (f - y) / batch_size.
LossGrad supervised_loss_gradient(const GateProgram& program, const RVector& theta_a,
                                  const RVector& theta_f, const std::vector<RVector>& xs,
                                  const RVector& ys);

} // namespace qfm
