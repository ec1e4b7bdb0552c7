#include "qfm/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include <Eigen/LU>

namespace qfm {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

int binom3(int n, int r) {
    static constexpr int table[4][4] = {
        {1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};
    return table[n][r];
}

int pack(const MultiIdx& m) { return m.k[0] | (m.k[1] << 4) | (m.k[2] << 8); }

} // namespace

DiffBackend parse_diff_backend(const std::string& name) {
    if (name == "shift_rule") return DiffBackend::shift_rule;
    if (name == "analytic_forward") return DiffBackend::analytic_forward;
    throw config_error("unknown derivative backend '" + name +
                       "' (expected shift_rule | analytic_forward)");
}

DerivSet DerivSet::closure(int dims, const std::vector<MultiIdx>& maximal) {
    if (dims < 1 || dims > 3) {
        throw config_error("derivative sets support 1..3 dimensions");
    }
    DerivSet set;
    set.dims_ = dims;
    set.lookup_.assign(1 << 12, -1);

    auto add = [&set](const MultiIdx& m) {
        if (set.lookup_[static_cast<std::size_t>(pack(m))] >= 0) return;
        set.lookup_[static_cast<std::size_t>(pack(m))] = 0; // placeholder
        set.indices_.push_back(m);
    };
    add(MultiIdx{});
    for (const auto& top : maximal) {
        for (int d = dims; d < 3; ++d) {
            if (top.k[static_cast<std::size_t>(d)] != 0) {
                throw input_error("multi-index uses a dimension beyond the declared count");
            }
        }
        MultiIdx m;
        for (m.k[0] = 0; m.k[0] <= top.k[0]; ++m.k[0]) {
            for (m.k[1] = 0; m.k[1] <= top.k[1]; ++m.k[1]) {
                for (m.k[2] = 0; m.k[2] <= top.k[2]; ++m.k[2]) {
                    add(m);
                }
            }
        }
    }
    std::sort(set.indices_.begin(), set.indices_.end(), [](const MultiIdx& a, const MultiIdx& b) {
        if (a.total() != b.total()) return a.total() < b.total();
        return a.k < b.k;
    });
    for (int i = 0; i < set.size(); ++i) {
        set.lookup_[static_cast<std::size_t>(pack(set.indices_[static_cast<std::size_t>(i)]))] = i;
    }

    for (int d = 0; d < 3; ++d) {
        auto& table = set.ancestors_[static_cast<std::size_t>(d)];
        table.resize(set.indices_.size());
        for (int i = 0; i < set.size(); ++i) {
            const MultiIdx& m = set.indices_[static_cast<std::size_t>(i)];
            const int kd = m.k[static_cast<std::size_t>(d)];
            if (kd > 0) set.dim_active_[static_cast<std::size_t>(d)] = true;
            auto& row = table[static_cast<std::size_t>(i)];
            row.resize(static_cast<std::size_t>(kd) + 1);
            for (int j = 0; j <= kd; ++j) {
                MultiIdx a = m;
                a.k[static_cast<std::size_t>(d)] -= j;
                row[static_cast<std::size_t>(j)] = set.slot(a);
            }
        }
    }

    set.pairs_.resize(set.indices_.size());
    for (int i = 0; i < set.size(); ++i) {
        const MultiIdx& m = set.indices_[static_cast<std::size_t>(i)];
        MultiIdx b;
        for (b.k[0] = 0; b.k[0] <= m.k[0]; ++b.k[0]) {
            for (b.k[1] = 0; b.k[1] <= m.k[1]; ++b.k[1]) {
                for (b.k[2] = 0; b.k[2] <= m.k[2]; ++b.k[2]) {
                    MultiIdx c;
                    for (int d = 0; d < 3; ++d) {
                        c.k[static_cast<std::size_t>(d)] =
                            m.k[static_cast<std::size_t>(d)] - b.k[static_cast<std::size_t>(d)];
                    }
                    double coeff = 1.0;
                    for (int d = 0; d < 3; ++d) {
                        coeff *= binom3(m.k[static_cast<std::size_t>(d)],
                                        b.k[static_cast<std::size_t>(d)]);
                    }
                    set.pairs_[static_cast<std::size_t>(i)].push_back(
                        {set.slot(b), set.slot(c), coeff});
                }
            }
        }
    }
    return set;
}

int DerivSet::slot(const MultiIdx& idx) const {
    for (int d = 0; d < 3; ++d) {
        if (idx.k[static_cast<std::size_t>(d)] < 0 || idx.k[static_cast<std::size_t>(d)] > 3) {
            return -1;
        }
    }
    return lookup_[static_cast<std::size_t>(pack(idx))];
}

DerivEvaluator::DerivEvaluator(const GateProgram& program, DerivSet set)
    : program_(&program), set_(std::move(set)) {
    const Eigen::Index dim = program.dim();
    const std::size_t n = static_cast<std::size_t>(set_.size());
    states_.resize(n, CVector(dim));
    rotated_.resize(n, CVector(dim));
    pauli_rotated_.resize(n, CVector(dim));
}

RVector DerivEvaluator::evaluate(const RVector& theta_a, const RVector& theta_f,
                                 const RVector& x, const GateOffsets& offsets) {
    const GateProgram& p = *program_;
    if (x.size() != p.feature_dims) {
        throw input_error("model expects " + std::to_string(p.feature_dims) +
                          " feature(s), got " + std::to_string(x.size()));
    }
    const int slots = set_.size();
    for (int i = 0; i < slots; ++i) {
        states_[static_cast<std::size_t>(i)].setZero();
    }
    states_[0][0] = Complex{1.0, 0.0};

    for (std::size_t gi = 0; gi < p.gates.size(); ++gi) {
        const CompiledGate& g = p.gates[gi];
        if (g.kind == CompiledGate::Kind::cx) {
            for (int i = 0; i < slots; ++i) {
                kernels::cx(states_[static_cast<std::size_t>(i)], g.qubit, g.partner);
            }
            continue;
        }
        if (g.kind == CompiledGate::Kind::analog_zz) {
            for (int i = 0; i < slots; ++i) {
                kernels::analog_zz(states_[static_cast<std::size_t>(i)], g.qubit, g.partner);
            }
            continue;
        }

        double angle = detail::gate_angle(g, theta_a, theta_f, x);
        for (const auto& [index, delta] : offsets) {
            if (index == static_cast<int>(gi)) angle += delta;
        }

        const bool differentiated = g.dim >= 0 && set_.dim_active(g.dim);
        if (!differentiated) {
            for (int i = 0; i < slots; ++i) {
                kernels::rotate(states_[static_cast<std::size_t>(i)], g.axis, g.qubit, angle);
            }
            continue;
        }

        // d/dx_d of exp(-i*angle(x)*sigma/2) inserts slope * (-i/2) * sigma;
        // the gate and its generator commute so the factors stack after U.
        const double theta = (g.theta_f >= 0) ? theta_f[g.theta_f] : 1.0;
        const double slope = g.gamma * theta * g.phi_scale;
        const Complex a = Complex{0.0, -0.5} * slope;
        for (int i = 0; i < slots; ++i) {
            rotated_[static_cast<std::size_t>(i)] = states_[static_cast<std::size_t>(i)];
            kernels::rotate(rotated_[static_cast<std::size_t>(i)], g.axis, g.qubit, angle);
            pauli_rotated_[static_cast<std::size_t>(i)] = rotated_[static_cast<std::size_t>(i)];
            kernels::pauli(pauli_rotated_[static_cast<std::size_t>(i)], g.axis, g.qubit);
        }
        for (int i = 0; i < slots; ++i) {
            const int kd = set_.indices()[static_cast<std::size_t>(i)].k[static_cast<std::size_t>(g.dim)];
            CVector& out = states_[static_cast<std::size_t>(i)];
            out = rotated_[static_cast<std::size_t>(i)];
            Complex factor{1.0, 0.0};
            for (int j = 1; j <= kd; ++j) {
                factor *= a;
                const int src = set_.ancestor(i, g.dim, j);
                const auto& bank = (j % 2 == 1) ? pauli_rotated_ : rotated_;
                out += static_cast<double>(binom3(kd, j)) * factor *
                       bank[static_cast<std::size_t>(src)];
            }
        }
    }

    // One simulator pass regardless of how many derivative states ride along.
    detail::count_evaluation();

    RVector out(slots);
    const int n = p.num_qubits;
    const Eigen::Index dim = p.dim();
    for (int i = 0; i < slots; ++i) {
        Complex acc{0.0, 0.0};
        for (const auto& pair : set_.measurement_pairs(i)) {
            const Complex* left = states_[static_cast<std::size_t>(pair.left)].data();
            const Complex* right = states_[static_cast<std::size_t>(pair.right)].data();
            Complex ip{0.0, 0.0};
            for (Eigen::Index b = 0; b < dim; ++b) {
                const double w = n - 2 * std::popcount(static_cast<unsigned long long>(b));
                ip += std::conj(left[b]) * w * right[b];
            }
            acc += pair.coeff * ip;
        }
        out[i] = acc.real();
    }
    return out;
}

namespace {

double shifted_eval(const GateProgram& p, const RVector& ta, const RVector& tf,
                    const RVector& x, const GateOffsets& base, int gate, double delta) {
    GateOffsets offs = base;
    offs.emplace_back(gate, delta);
    return run_program(p, ta, tf, x, offs);
}

// Recursive shift-rule partials: peel one derivative off the multi-index, sum
// slope * PSR over the encoding occurrences of that dimension, recurse on the
// shifted programs. Cost (2 * occurrences)^order.
double shift_partial_rec(const GateProgram& p, const RVector& ta, const RVector& tf,
                         const RVector& x, MultiIdx idx, const GateOffsets& base) {
    int d = -1;
    for (int i = 0; i < 3; ++i) {
        if (idx.k[static_cast<std::size_t>(i)] > 0) {
            d = i;
            break;
        }
    }
    if (d < 0) {
        return run_program(p, ta, tf, x, base);
    }
    idx.k[static_cast<std::size_t>(d)] -= 1;
    double acc = 0.0;
    for (int gi : p.occ_by_dim[static_cast<std::size_t>(d)]) {
        const CompiledGate& g = p.gates[static_cast<std::size_t>(gi)];
        const double theta = (g.theta_f >= 0) ? tf[g.theta_f] : 1.0;
        const double slope = g.gamma * theta * g.phi_scale;
        if (slope == 0.0) continue;
        GateOffsets plus = base;
        plus.emplace_back(gi, kHalfPi);
        GateOffsets minus = base;
        minus.emplace_back(gi, -kHalfPi);
        acc += 0.5 * slope *
               (shift_partial_rec(p, ta, tf, x, idx, plus) -
                shift_partial_rec(p, ta, tf, x, idx, minus));
    }
    return acc;
}

void check_param_index(Eigen::Index size, int index, const char* what) {
    if (index < 0 || index >= size) {
        throw index_error(std::string(what) + " index " + std::to_string(index) +
                          " out of range");
    }
}

} // namespace

double grad_ansatz(const QuantumModel& model, const RVector& x, int param_index) {
    check_param_index(model.theta_a.size(), param_index, "theta_a");
    const GateProgram p = compile(model);
    double acc = 0.0;
    for (int gi : p.occ_by_theta_a[static_cast<std::size_t>(param_index)]) {
        acc += 0.5 * (shifted_eval(p, model.theta_a, model.theta_f, x, {}, gi, kHalfPi) -
                      shifted_eval(p, model.theta_a, model.theta_f, x, {}, gi, -kHalfPi));
    }
    return acc;
}

std::vector<double> grad_generator_terms(const QuantumModel& model, const RVector& x,
                                         int theta_f_index) {
    check_param_index(model.theta_f.size(), theta_f_index, "theta_f");
    const GateProgram p = compile(model);
    std::vector<double> terms;
    for (int gi : p.occ_by_theta_f[static_cast<std::size_t>(theta_f_index)]) {
        const CompiledGate& g = p.gates[static_cast<std::size_t>(gi)];
        const double chain = g.gamma * g.phi_scale * x[g.dim];
        terms.push_back(
            chain * 0.5 *
            (shifted_eval(p, model.theta_a, model.theta_f, x, {}, gi, kHalfPi) -
             shifted_eval(p, model.theta_a, model.theta_f, x, {}, gi, -kHalfPi)));
    }
    return terms;
}

double grad_generator(const QuantumModel& model, const RVector& x, int theta_f_index) {
    double acc = 0.0;
    for (double t : grad_generator_terms(model, x, theta_f_index)) acc += t;
    return acc;
}

double input_partial(const QuantumModel& model, const RVector& x, const MultiIdx& idx,
                     DiffBackend backend) {
    if (idx.total() < 1 || idx.total() > 3) {
        throw config_error("input derivatives support total order 1..3, got " +
                           std::to_string(idx.total()));
    }
    for (int d = model.feature_dims; d < 3; ++d) {
        if (idx.k[static_cast<std::size_t>(d)] != 0) {
            throw input_error("derivative dimension out of range for this model");
        }
    }
    const GateProgram p = compile(model);
    if (backend == DiffBackend::shift_rule) {
        return shift_partial_rec(p, model.theta_a, model.theta_f, x, idx, {});
    }
    DerivEvaluator eval(p, DerivSet::closure(model.feature_dims, {idx}));
    const RVector values = eval.evaluate(model.theta_a, model.theta_f, x);
    return values[eval.set().slot(idx)];
}

double input_derivative(const QuantumModel& model, const RVector& x, int dim, int order,
                        DiffBackend backend) {
    if (order < 1 || order > 3) {
        throw input_error("input_derivative supports orders 1..3, got " +
                          std::to_string(order));
    }
    if (dim < 0 || dim >= model.feature_dims) {
        throw index_error("derivative dimension out of range");
    }
    return input_partial(model, x, MultiIdx::unit(dim, order), backend);
}

double gpsr_gradient(const std::function<double(double)>& evaluator, const RVector& gaps,
                     double angle) {
    const Eigen::Index r = gaps.size();
    if (r == 0) return 0.0;
    for (Eigen::Index i = 0; i < r; ++i) {
        if (gaps[i] <= 0.0) {
            throw numerical_error("spectral gaps must be positive");
        }
    }
    const double max_gap = gaps.maxCoeff();
    Eigen::MatrixXd m(r, r);
    Eigen::VectorXd rhs(r);
    for (Eigen::Index i = 0; i < r; ++i) {
        const double shift = (2.0 * static_cast<double>(i) + 1.0) * std::numbers::pi /
                             (2.0 * static_cast<double>(r) * max_gap);
        for (Eigen::Index c = 0; c < r; ++c) {
            m(i, c) = 2.0 * std::sin(gaps[c] * shift);
        }
        rhs[i] = evaluator(angle + shift) - evaluator(angle - shift);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    lu.setThreshold(1e-10);
    if (!lu.isInvertible()) {
        throw numerical_error(
            "shift system is singular (degenerate or duplicated gaps); refusing to "
            "regularize");
    }
    const Eigen::VectorXd z = lu.solve(rhs);
    return gaps.dot(z);
}

RVector param_partials_gradient(DerivEvaluator& eval, const RVector& theta_a,
                                const RVector& theta_f, const RVector& x, ParamRef param) {
    const GateProgram& p = eval.program();
    const DerivSet& set = eval.set();
    RVector acc = RVector::Zero(set.size());
    const auto& occ = (param.kind == ParamRef::Kind::ansatz)
                          ? p.occ_by_theta_a.at(static_cast<std::size_t>(param.index))
                          : p.occ_by_theta_f.at(static_cast<std::size_t>(param.index));
    for (int gi : occ) {
        const CompiledGate& g = p.gates[static_cast<std::size_t>(gi)];
        const RVector plus = eval.evaluate(theta_a, theta_f, x, {{gi, kHalfPi}});
        const RVector minus = eval.evaluate(theta_a, theta_f, x, {{gi, -kHalfPi}});
        if (param.kind == ParamRef::Kind::ansatz) {
            acc += 0.5 * (plus - minus);
            continue;
        }
        // Generator parameter: angle = gamma * theta * phi(x_d), so the PSR
        // term carries the x-dependent factor gamma*phi(x_d). Differentiating
        // that product in x_d adds the slope term (phi is affine, so exactly
        // one extra term per x_d order).
        const double phi_x = g.phi_scale * x[g.dim];
        for (int i = 0; i < set.size(); ++i) {
            const double h = 0.5 * (plus[i] - minus[i]);
            double value = g.gamma * phi_x * h;
            const int kd = set.indices()[static_cast<std::size_t>(i)].k[static_cast<std::size_t>(g.dim)];
            if (kd > 0) {
                const int down = set.ancestor(i, g.dim, 1);
                const double h_down = 0.5 * (plus[down] - minus[down]);
                value += g.gamma * static_cast<double>(kd) * g.phi_scale * h_down;
            }
            acc[i] += value;
        }
    }
    return acc;
}

RVector model_gradient(const GateProgram& program, const RVector& theta_a,
                       const RVector& theta_f, const RVector& x) {
    RVector grad = RVector::Zero(theta_a.size() + theta_f.size());
    for (Eigen::Index i = 0; i < theta_a.size(); ++i) {
        for (int gi : program.occ_by_theta_a[static_cast<std::size_t>(i)]) {
            grad[i] += 0.5 * (shifted_eval(program, theta_a, theta_f, x, {}, gi, kHalfPi) -
                              shifted_eval(program, theta_a, theta_f, x, {}, gi, -kHalfPi));
        }
    }
    for (Eigen::Index j = 0; j < theta_f.size(); ++j) {
        for (int gi : program.occ_by_theta_f[static_cast<std::size_t>(j)]) {
            const CompiledGate& g = program.gates[static_cast<std::size_t>(gi)];
            const double chain = g.gamma * g.phi_scale * x[g.dim];
            grad[theta_a.size() + j] +=
                chain * 0.5 *
                (shifted_eval(program, theta_a, theta_f, x, {}, gi, kHalfPi) -
                 shifted_eval(program, theta_a, theta_f, x, {}, gi, -kHalfPi));
        }
    }
    return grad;
}

LossGrad supervised_loss_gradient(const GateProgram& program, const RVector& theta_a,
                                  const RVector& theta_f, const std::vector<RVector>& xs,
                                  const RVector& ys) {
    if (static_cast<Eigen::Index>(xs.size()) != ys.size() || xs.empty()) {
        throw input_error("supervised batch needs matching non-empty xs/ys");
    }
    LossGrad out;
    out.grad = RVector::Zero(theta_a.size() + theta_f.size());
    const double scale = 2.0 / static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = run_program(program, theta_a, theta_f, xs[i]);
        const double r = f - ys[static_cast<Eigen::Index>(i)];
        out.loss += r * r / static_cast<double>(xs.size());
        out.grad += (scale * r) * model_gradient(program, theta_a, theta_f, xs[i]);
    }
    return out;
}

} // namespace qfm
