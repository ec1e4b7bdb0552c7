#include "qfm/pde.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "qfm/errors.hpp"
#include "qfm/rng.hpp"
#include "qfm/training.hpp"

namespace qfm {

namespace {

MultiIdx mi(int kx, int ky, int kt) {
    MultiIdx m;
    m.k = {kx, ky, kt};
    return m;
}

/// Multi-indices of the stream-function partials the momentum residuals read.
DerivSet psi_residual_set() {
    return DerivSet::closure(
        3, {mi(2, 1, 0), mi(0, 3, 0), mi(3, 0, 0), mi(1, 2, 0), mi(0, 1, 1), mi(1, 0, 1)});
}

DerivSet first_order_set() {
    return DerivSet::closure(3, {mi(1, 0, 0), mi(0, 1, 0)});
}

/// Chain factors for physical derivatives under xi_d = a_d x_d + b_d:
/// d^alpha f / dx^alpha = prod_d a_d^alpha_d * (xi-space partial).
RVector chain_powers(const DerivSet& set, const Eigen::Vector3d& a) {
    RVector out(set.size());
    for (int i = 0; i < set.size(); ++i) {
        double w = 1.0;
        for (int d = 0; d < 3; ++d)
            for (int j = 0; j < set.indices()[static_cast<std::size_t>(i)].k[static_cast<std::size_t>(d)]; ++j)
                w *= a[d];
        out[i] = w;
    }
    return out;
}

struct PsiSlots {
    int m100, m010, m110, m020, m200, m011, m101, m210, m030, m300, m120;
};

int required_slot(const DerivSet& set, const MultiIdx& idx) {
    const int s = set.slot(idx);
    if (s < 0) throw index_error("derivative set is missing a required multi-index");
    return s;
}

PsiSlots psi_slots(const DerivSet& set) {
    PsiSlots s;
    s.m100 = required_slot(set, mi(1, 0, 0));
    s.m010 = required_slot(set, mi(0, 1, 0));
    s.m110 = required_slot(set, mi(1, 1, 0));
    s.m020 = required_slot(set, mi(0, 2, 0));
    s.m200 = required_slot(set, mi(2, 0, 0));
    s.m011 = required_slot(set, mi(0, 1, 1));
    s.m101 = required_slot(set, mi(1, 0, 1));
    s.m210 = required_slot(set, mi(2, 1, 0));
    s.m030 = required_slot(set, mi(0, 3, 0));
    s.m300 = required_slot(set, mi(3, 0, 0));
    s.m120 = required_slot(set, mi(1, 2, 0));
    return s;
}

struct LowSlots {
    int m000, m100, m010;
};

LowSlots low_slots(const DerivSet& set) {
    LowSlots s;
    s.m000 = required_slot(set, mi(0, 0, 0));
    s.m100 = required_slot(set, mi(1, 0, 0));
    s.m010 = required_slot(set, mi(0, 1, 0));
    return s;
}

/// Physical flow sample from the two xi-space derivative bundles.
FlowSample assemble_sample(const RVector& psi_bundle, const RVector& psi_chain, const PsiSlots& S,
                           double psi_scale, const RVector& p_bundle, const RVector& p_chain,
                           const LowSlots& Q, double p_scale, double p_shift) {
    const auto P = [&](int slot) { return psi_scale * psi_chain[slot] * psi_bundle[slot]; };
    FlowSample s;
    s.u = P(S.m010);
    s.v = -P(S.m100);
    s.u_t = P(S.m011);
    s.u_x = P(S.m110);
    s.u_y = P(S.m020);
    s.u_xx = P(S.m210);
    s.u_yy = P(S.m030);
    s.v_t = -P(S.m101);
    s.v_x = -P(S.m200);
    s.v_y = -P(S.m110);
    s.v_xx = -P(S.m300);
    s.v_yy = -P(S.m120);
    s.p = p_scale * p_bundle[Q.m000] + p_shift;
    s.p_x = p_scale * p_chain[Q.m100] * p_bundle[Q.m100];
    s.p_y = p_scale * p_chain[Q.m010] * p_bundle[Q.m010];
    return s;
}

std::string sidecar_path(const std::string& csv_path) {
    if (csv_path.size() >= 4 && csv_path.substr(csv_path.size() - 4) == ".csv")
        return csv_path.substr(0, csv_path.size() - 4) + ".json";
    return csv_path + ".json";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.pop_back();
        std::size_t start = 0;
        while (start < field.size() && field[start] == ' ') ++start;
        out.push_back(field.substr(start));
    }
    return out;
}

std::vector<int> subset_flat_indices(const FlowField& reference, int stride_x, int stride_y) {
    std::vector<int> flats;
    for (int it = 0; it < reference.nt(); ++it)
        for (int iy = 0; iy < reference.ny(); iy += stride_y)
            for (int ix = 0; ix < reference.nx(); ix += stride_x)
                flats.push_back(reference.index(ix, iy, it));
    return flats;
}

} // namespace

std::pair<double, double> velocities_from_stream(double psi_dx, double psi_dy) {
    return {psi_dy, -psi_dx};
}

NsResidual ns_residuals(const FlowSample& s, double reynolds) {
    if (!(reynolds > 0.0)) throw input_error("ns_residuals: Reynolds number must be positive");
    const double nu = 1.0 / reynolds;
    NsResidual r;
    r.r_x = s.u_t + s.u * s.u_x + s.v * s.u_y - nu * (s.u_xx + s.u_yy) + s.p_x;
    r.r_y = s.v_t + s.u * s.v_x + s.v * s.v_y - nu * (s.v_xx + s.v_yy) + s.p_y;
    return r;
}

FlowSample taylor_green_sample(double x, double y, double t, double reynolds) {
    if (!(reynolds > 0.0)) throw input_error("taylor_green_sample: Reynolds number must be positive");
    const double f = std::exp(-2.0 * t / reynolds);
    const double f2 = f * f;
    const double cx = std::cos(x), sx = std::sin(x);
    const double cy = std::cos(y), sy = std::sin(y);
    FlowSample s;
    s.u = -cx * sy * f;
    s.u_t = (2.0 / reynolds) * cx * sy * f;
    s.u_x = sx * sy * f;
    s.u_y = -cx * cy * f;
    s.u_xx = cx * sy * f;
    s.u_yy = cx * sy * f;
    s.v = sx * cy * f;
    s.v_t = -(2.0 / reynolds) * sx * cy * f;
    s.v_x = cx * cy * f;
    s.v_y = -sx * sy * f;
    s.v_xx = -sx * cy * f;
    s.v_yy = -sx * cy * f;
    s.p = -0.25 * (std::cos(2.0 * x) + std::cos(2.0 * y)) * f2;
    s.p_x = 0.5 * std::sin(2.0 * x) * f2;
    s.p_y = 0.5 * std::sin(2.0 * y) * f2;
    return s;
}

FlowPoint taylor_green_reference(double x, double y, double t, double reynolds) {
    const FlowSample s = taylor_green_sample(x, y, t, reynolds);
    return {s.u, s.v, s.p};
}

FieldSampler taylor_green_sampler(double reynolds) {
    if (!(reynolds > 0.0)) throw input_error("taylor_green_sampler: Reynolds number must be positive");
    return [reynolds](double x, double y, double t) {
        return taylor_green_sample(x, y, t, reynolds);
    };
}

Point3 FlowField::point(int flat) const {
    const int ix = flat % nx();
    const int iy = (flat / nx()) % ny();
    const int it = flat / (nx() * ny());
    return {xs[ix], ys[iy], ts[it]};
}

void FlowField::validate() const {
    if (nx() < 1 || ny() < 1 || nt() < 1) throw input_error("flow field: empty grid axis");
    if (u.size() != size() || v.size() != size() || p.size() != size())
        throw input_error("flow field: observable arrays do not match the grid shape");
    if (!(reynolds > 0.0)) throw input_error("flow field: Reynolds number must be positive");
}

FlowField taylor_green_field(const RVector& xs, const RVector& ys, const RVector& ts,
                             double reynolds) {
    FlowField field;
    field.xs = xs;
    field.ys = ys;
    field.ts = ts;
    field.reynolds = reynolds;
    field.u.resize(field.size());
    field.v.resize(field.size());
    field.p.resize(field.size());
    for (int it = 0; it < field.nt(); ++it)
        for (int iy = 0; iy < field.ny(); ++iy)
            for (int ix = 0; ix < field.nx(); ++ix) {
                const FlowPoint w = taylor_green_reference(xs[ix], ys[iy], ts[it], reynolds);
                const int i = field.index(ix, iy, it);
                field.u[i] = w.u;
                field.v[i] = w.v;
                field.p[i] = w.p;
            }
    field.validate();
    return field;
}

void save_flow_field(const FlowField& field, const std::string& csv_path) {
    field.validate();
    std::ofstream out(csv_path);
    if (!out) throw io_error("cannot open '" + csv_path + "' for writing");
    out << std::setprecision(17);
    out << "x,y,t,u,v,p\n";
    for (int it = 0; it < field.nt(); ++it)
        for (int iy = 0; iy < field.ny(); ++iy)
            for (int ix = 0; ix < field.nx(); ++ix) {
                const int i = field.index(ix, iy, it);
                out << field.xs[ix] << ',' << field.ys[iy] << ',' << field.ts[it] << ','
                    << field.u[i] << ',' << field.v[i] << ',' << field.p[i] << '\n';
            }
    if (!out) throw io_error("failed while writing '" + csv_path + "'");

    nlohmann::json meta;
    meta["reynolds"] = field.reynolds;
    meta["nx"] = field.nx();
    meta["ny"] = field.ny();
    meta["nt"] = field.nt();
    std::ofstream side(sidecar_path(csv_path));
    if (!side) throw io_error("cannot open '" + sidecar_path(csv_path) + "' for writing");
    side << meta.dump(2) << '\n';
}

FlowField load_flow_field(const std::string& csv_path) {
    std::ifstream side(sidecar_path(csv_path));
    if (!side) throw io_error("missing sidecar file '" + sidecar_path(csv_path) + "'");
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("invalid sidecar '" + sidecar_path(csv_path) + "': " + e.what());
    }
    FlowField field;
    int nx = 0, ny = 0, nt = 0;
    try {
        field.reynolds = meta.at("reynolds").get<double>();
        nx = meta.at("nx").get<int>();
        ny = meta.at("ny").get<int>();
        nt = meta.at("nt").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error("sidecar '" + sidecar_path(csv_path) + "' is incomplete: " + e.what());
    }
    if (nx < 1 || ny < 1 || nt < 1) throw io_error("sidecar grid dimensions must be positive");

    std::ifstream in(csv_path);
    if (!in) throw io_error("cannot open '" + csv_path + "'");
    std::string line;
    if (!std::getline(in, line)) throw io_error("'" + csv_path + "' is empty");
    const std::vector<std::string> header = split_csv_line(line);
    const auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw io_error("'" + csv_path + "' is missing column '" + name + "'");
    };
    const int cx = column("x"), cy = column("y"), ct = column("t");
    const int cu = column("u"), cv = column("v"), cp = column("p");
    const int max_col = std::max({cx, cy, ct, cu, cv, cp});

    const int total = nx * ny * nt;
    field.xs.resize(nx);
    field.ys.resize(ny);
    field.ts.resize(nt);
    field.u.resize(total);
    field.v.resize(total);
    field.p.resize(total);

    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        if (row >= total) throw io_error("'" + csv_path + "' has more rows than the sidecar grid");
        const std::vector<std::string> tok = split_csv_line(line);
        if (static_cast<int>(tok.size()) <= max_col)
            throw io_error("'" + csv_path + "' row " + std::to_string(row + 2) + " has too few fields");
        double vals[6];
        const int cols[6] = {cx, cy, ct, cu, cv, cp};
        for (int k = 0; k < 6; ++k) {
            try {
                vals[k] = std::stod(tok[static_cast<std::size_t>(cols[k])]);
            } catch (const std::exception&) {
                throw io_error("'" + csv_path + "' row " + std::to_string(row + 2) +
                               ": cannot parse '" + tok[static_cast<std::size_t>(cols[k])] + "'");
            }
        }
        const int ix = row % nx;
        const int iy = (row / nx) % ny;
        const int it = row / (nx * ny);
        const auto check_axis = [&](RVector& axis, int idx, double value, const char* name) {
            const bool first = (name[0] == 'x') ? (iy == 0 && it == 0)
                               : (name[0] == 'y') ? (ix == 0 && it == 0)
                                                  : (ix == 0 && iy == 0);
            if (first) {
                axis[idx] = value;
            } else if (std::abs(axis[idx] - value) > 1e-9 * (1.0 + std::abs(axis[idx]))) {
                throw io_error("'" + csv_path + "' row " + std::to_string(row + 2) +
                               ": coordinate " + name + " breaks the row-major (t, y, x) grid order");
            }
        };
        check_axis(field.xs, ix, vals[0], "x");
        check_axis(field.ys, iy, vals[1], "y");
        check_axis(field.ts, it, vals[2], "t");
        field.u[row] = vals[3];
        field.v[row] = vals[4];
        field.p[row] = vals[5];
        ++row;
    }
    if (row != total)
        throw io_error("'" + csv_path + "' has " + std::to_string(row) + " rows; sidecar promises " +
                       std::to_string(total));
    field.validate();
    return field;
}

double median(const RVector& values) {
    if (values.size() == 0) throw input_error("median: empty input");
    std::vector<double> w(values.data(), values.data() + values.size());
    const std::size_t mid = w.size() / 2;
    std::nth_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(mid), w.end());
    const double hi = w[mid];
    if (w.size() % 2 == 1) return hi;
    const double lo = *std::max_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

double maerm(const RVector& pred, const RVector& ref) {
    if (pred.size() == 0) throw input_error("maerm: empty input");
    if (pred.size() != ref.size()) throw input_error("maerm: size mismatch");
    const double med = median(ref);
    if (med == 0.0)
        throw metric_error("maerm: reference median is zero, the relative error is undefined");
    return 100.0 * (pred - ref).cwiseAbs().mean() / std::abs(med);
}

MaermReport maerm_report(const FlowField& pred, const FlowField& ref) {
    pred.validate();
    ref.validate();
    if (pred.nx() != ref.nx() || pred.ny() != ref.ny() || pred.nt() != ref.nt())
        throw input_error("maerm_report: grids differ in shape");
    MaermReport report;
    report.by_time.resize(ref.nt(), 3);
    const int slice = ref.nx() * ref.ny();
    for (int it = 0; it < ref.nt(); ++it) {
        const int off = it * slice;
        report.by_time(it, 0) = maerm(pred.u.segment(off, slice), ref.u.segment(off, slice));
        report.by_time(it, 1) = maerm(pred.v.segment(off, slice), ref.v.segment(off, slice));
        report.by_time(it, 2) = maerm(pred.p.segment(off, slice), ref.p.segment(off, slice));
    }
    for (int o = 0; o < 3; ++o) {
        report.mean[static_cast<std::size_t>(o)] = report.by_time.col(o).mean();
        report.min[static_cast<std::size_t>(o)] = report.by_time.col(o).minCoeff();
        report.max[static_cast<std::size_t>(o)] = report.by_time.col(o).maxCoeff();
    }
    return report;
}

FlowField constant_median_baseline(const FlowField& ref) {
    ref.validate();
    FlowField out = ref;
    const int slice = ref.nx() * ref.ny();
    for (int it = 0; it < ref.nt(); ++it) {
        const int off = it * slice;
        out.u.segment(off, slice).setConstant(median(ref.u.segment(off, slice)));
        out.v.segment(off, slice).setConstant(median(ref.v.segment(off, slice)));
        out.p.segment(off, slice).setConstant(median(ref.p.segment(off, slice)));
    }
    return out;
}

void NseProblem::validate() const {
    psi_model.validate();
    p_model.validate();
    if (psi_model.feature_dims != 3 || p_model.feature_dims != 3)
        throw config_error("stream-function and pressure networks must take (x, y, t)");
    if (!(reynolds > 0.0)) throw config_error("Reynolds number must be positive");
    if (data_stride_x < 1 || data_stride_y < 1) throw config_error("data strides must be at least 1");
    for (int d = 0; d < 3; ++d)
        if (!(map_scale[d] > 0.0) || !std::isfinite(map_shift[d]))
            throw config_error("input map must be a finite increasing affine map");
}

NseProblem build_nse_problem(const NseSpec& spec, std::uint64_t seed) {
    ModelSpec m = spec.model;
    m.feature_dims = 3;
    if (m.encoding == EncodingLayout::single) m.encoding = EncodingLayout::parallel;

    NseProblem problem;
    problem.psi_model = build_model(m, seed);
    problem.p_model = build_model(m, seed ^ 0x9e3779b97f4a7c15ULL);
    problem.reynolds = spec.reynolds;
    problem.data_stride_x = spec.data_stride_x;
    problem.data_stride_y = spec.data_stride_y;
    constexpr double kPi = 3.141592653589793238462643383279502884;
    for (int d = 0; d < 3; ++d) {
        if (!(spec.hi[d] > spec.lo[d]))
            throw config_error("domain must satisfy hi > lo in every dimension");
        problem.map_scale[d] = kPi / (spec.hi[d] - spec.lo[d]);
        problem.map_shift[d] = -spec.lo[d] * problem.map_scale[d];
    }
    problem.validate();
    return problem;
}

FieldSampler nse_sampler(const NseProblem& problem, DiffBackend backend) {
    problem.validate();
    if (backend == DiffBackend::analytic_forward) {
        struct Core {
            GateProgram psi_prog, p_prog;
            DerivSet psi_set, p_set;
            DerivEvaluator psi_eval, p_eval;
            PsiSlots S;
            LowSlots Q;
            RVector psi_chain, p_chain;
            NseProblem problem;

            explicit Core(const NseProblem& pr)
                : psi_prog(compile(pr.psi_model)),
                  p_prog(compile(pr.p_model)),
                  psi_set(psi_residual_set()),
                  p_set(first_order_set()),
                  psi_eval(psi_prog, psi_set),
                  p_eval(p_prog, p_set),
                  S(psi_slots(psi_set)),
                  Q(low_slots(p_set)),
                  psi_chain(chain_powers(psi_set, pr.map_scale)),
                  p_chain(chain_powers(p_set, pr.map_scale)),
                  problem(pr) {}
        };
        auto core = std::make_shared<Core>(problem);
        return [core](double x, double y, double t) {
            const RVector xi = core->problem.to_unit_box(x, y, t);
            const RVector bpsi = core->psi_eval.evaluate(core->problem.psi_model.theta_a,
                                                         core->problem.psi_model.theta_f, xi);
            const RVector bp = core->p_eval.evaluate(core->problem.p_model.theta_a,
                                                     core->problem.p_model.theta_f, xi);
            return assemble_sample(bpsi, core->psi_chain, core->S, core->problem.psi_head.scale, bp,
                                   core->p_chain, core->Q, core->problem.p_head.scale,
                                   core->problem.p_head.shift);
        };
    }

    // Shift-rule sampler: every partial from nested occurrence shifts. Orders
    // of magnitude slower; used to cross-check the forward-mode path.
    const NseProblem snapshot = problem;
    return [snapshot](double x, double y, double t) {
        const RVector xi = snapshot.to_unit_box(x, y, t);
        const Eigen::Vector3d& a = snapshot.map_scale;
        const auto psi_part = [&](int i, int j, int k) {
            const double chain = std::pow(a[0], i) * std::pow(a[1], j) * std::pow(a[2], k);
            return snapshot.psi_head.scale * chain *
                   input_partial(snapshot.psi_model, xi, mi(i, j, k), DiffBackend::shift_rule);
        };
        FlowSample s;
        s.u = psi_part(0, 1, 0);
        s.v = -psi_part(1, 0, 0);
        s.u_t = psi_part(0, 1, 1);
        s.u_x = psi_part(1, 1, 0);
        s.u_y = psi_part(0, 2, 0);
        s.u_xx = psi_part(2, 1, 0);
        s.u_yy = psi_part(0, 3, 0);
        s.v_t = -psi_part(1, 0, 1);
        s.v_x = -psi_part(2, 0, 0);
        s.v_y = -psi_part(1, 1, 0);
        s.v_xx = -psi_part(3, 0, 0);
        s.v_yy = -psi_part(1, 2, 0);
        s.p = snapshot.p_head.scale * forward(snapshot.p_model, xi) + snapshot.p_head.shift;
        s.p_x = snapshot.p_head.scale * a[0] *
                input_partial(snapshot.p_model, xi, mi(1, 0, 0), DiffBackend::shift_rule);
        s.p_y = snapshot.p_head.scale * a[1] *
                input_partial(snapshot.p_model, xi, mi(0, 1, 0), DiffBackend::shift_rule);
        return s;
    };
}

DataBatch data_subset(const FlowField& reference, int stride_x, int stride_y) {
    reference.validate();
    if (stride_x < 1 || stride_y < 1) throw config_error("data strides must be at least 1");
    const std::vector<int> flats = subset_flat_indices(reference, stride_x, stride_y);
    DataBatch batch;
    batch.points.reserve(flats.size());
    batch.u.resize(static_cast<Eigen::Index>(flats.size()));
    batch.v.resize(static_cast<Eigen::Index>(flats.size()));
    batch.p.resize(static_cast<Eigen::Index>(flats.size()));
    for (std::size_t i = 0; i < flats.size(); ++i) {
        batch.points.push_back(reference.point(flats[i]));
        batch.u[static_cast<Eigen::Index>(i)] = reference.u[flats[i]];
        batch.v[static_cast<Eigen::Index>(i)] = reference.v[flats[i]];
        batch.p[static_cast<Eigen::Index>(i)] = reference.p[flats[i]];
    }
    return batch;
}

std::vector<Point3> grid_points(const FlowField& field) {
    field.validate();
    std::vector<Point3> pts;
    pts.reserve(static_cast<std::size_t>(field.size()));
    for (int flat = 0; flat < field.size(); ++flat) pts.push_back(field.point(flat));
    return pts;
}

DqcLoss dqc_loss(const FieldSampler& field, double reynolds,
                 const std::vector<Point3>& collocation, const DataBatch& data) {
    if (collocation.empty()) throw input_error("dqc_loss: empty collocation batch");
    if (data.points.empty()) throw input_error("dqc_loss: empty data batch");
    const auto nd = static_cast<Eigen::Index>(data.points.size());
    if (data.u.size() != nd || data.v.size() != nd || data.p.size() != nd)
        throw input_error("dqc_loss: data batch reference arrays do not match its points");

    DqcLoss loss;
    for (const Point3& pt : collocation) {
        const NsResidual r = ns_residuals(field(pt.x, pt.y, pt.t), reynolds);
        loss.pde += r.r_x * r.r_x + r.r_y * r.r_y;
    }
    loss.pde /= static_cast<double>(collocation.size());

    for (Eigen::Index i = 0; i < nd; ++i) {
        const Point3& pt = data.points[static_cast<std::size_t>(i)];
        const FlowSample s = field(pt.x, pt.y, pt.t);
        const double du = s.u - data.u[i];
        const double dv = s.v - data.v[i];
        const double dp = s.p - data.p[i];
        loss.data += du * du + dv * dv + dp * dp;
    }
    loss.data /= static_cast<double>(nd);
    loss.total = loss.pde + loss.data;
    return loss;
}

DqcLoss dqc_loss(const NseProblem& problem, const std::vector<Point3>& collocation,
                 const DataBatch& data, DiffBackend backend) {
    return dqc_loss(nse_sampler(problem, backend), problem.reynolds, collocation, data);
}

int nse_param_count(const NseProblem& problem) {
    return static_cast<int>(problem.psi_model.theta_a.size() + problem.psi_model.theta_f.size() +
                            problem.p_model.theta_a.size() + problem.p_model.theta_f.size()) +
           4;
}

RVector pack_nse_params(const NseProblem& problem) {
    RVector out(nse_param_count(problem));
    Eigen::Index at = 0;
    const auto put = [&](const RVector& v) {
        out.segment(at, v.size()) = v;
        at += v.size();
    };
    put(problem.psi_model.theta_a);
    put(problem.psi_model.theta_f);
    out[at++] = problem.psi_head.scale;
    out[at++] = problem.psi_head.shift;
    put(problem.p_model.theta_a);
    put(problem.p_model.theta_f);
    out[at++] = problem.p_head.scale;
    out[at++] = problem.p_head.shift;
    return out;
}

void unpack_nse_params(NseProblem& problem, const RVector& params) {
    if (params.size() != nse_param_count(problem))
        throw input_error("unpack_nse_params: parameter vector has the wrong length");
    Eigen::Index at = 0;
    const auto take = [&](RVector& v) {
        v = params.segment(at, v.size());
        at += v.size();
    };
    take(problem.psi_model.theta_a);
    take(problem.psi_model.theta_f);
    problem.psi_head.scale = params[at++];
    problem.psi_head.shift = params[at++];
    take(problem.p_model.theta_a);
    take(problem.p_model.theta_f);
    problem.p_head.scale = params[at++];
    problem.p_head.shift = params[at++];
}

namespace {

/// Shared state for the physics-informed loss gradient: compiled programs,
/// derivative evaluators, slot tables and the packed-parameter layout.
struct DqcContext {
    const NseProblem& problem;
    GateProgram psi_prog, p_prog;
    DerivSet psi_res_set, psi_data_set, p_set;
    DerivEvaluator psi_res_eval, psi_data_eval, p_eval;
    PsiSlots S;
    LowSlots D, Q;
    RVector res_chain, data_chain, p_chain;
    int na1, nf1, na2, nf2;
    int i_s1, i_b1, base2, i_s2, i_b2, total;
    std::vector<ParamRef> psi_refs, p_refs;

    explicit DqcContext(const NseProblem& pr)
        : problem(pr),
          psi_prog(compile(pr.psi_model)),
          p_prog(compile(pr.p_model)),
          psi_res_set(psi_residual_set()),
          psi_data_set(first_order_set()),
          p_set(first_order_set()),
          psi_res_eval(psi_prog, psi_res_set),
          psi_data_eval(psi_prog, psi_data_set),
          p_eval(p_prog, p_set),
          S(psi_slots(psi_res_set)),
          D(low_slots(psi_data_set)),
          Q(low_slots(p_set)) {
        res_chain = chain_powers(psi_res_set, pr.map_scale);
        data_chain = chain_powers(psi_data_set, pr.map_scale);
        p_chain = chain_powers(p_set, pr.map_scale);
        na1 = static_cast<int>(pr.psi_model.theta_a.size());
        nf1 = static_cast<int>(pr.psi_model.theta_f.size());
        na2 = static_cast<int>(pr.p_model.theta_a.size());
        nf2 = static_cast<int>(pr.p_model.theta_f.size());
        i_s1 = na1 + nf1;
        i_b1 = i_s1 + 1;
        base2 = i_b1 + 1;
        i_s2 = base2 + na2 + nf2;
        i_b2 = i_s2 + 1;
        total = i_b2 + 1;
        for (int k = 0; k < na1; ++k) psi_refs.push_back({ParamRef::Kind::ansatz, k});
        for (int k = 0; k < nf1; ++k) psi_refs.push_back({ParamRef::Kind::generator, k});
        for (int k = 0; k < na2; ++k) p_refs.push_back({ParamRef::Kind::ansatz, k});
        for (int k = 0; k < nf2; ++k) p_refs.push_back({ParamRef::Kind::generator, k});
    }

    DqcContext(const DqcContext&) = delete;
    DqcContext& operator=(const DqcContext&) = delete;

    struct View {
        RVector ta1, tf1, ta2, tf2;
        double s1, b1, s2, b2;
    };

    View view(const RVector& params) const {
        View v;
        v.ta1 = params.segment(0, na1);
        v.tf1 = params.segment(na1, nf1);
        v.s1 = params[i_s1];
        v.b1 = params[i_b1];
        v.ta2 = params.segment(base2, na2);
        v.tf2 = params.segment(base2 + na2, nf2);
        v.s2 = params[i_s2];
        v.b2 = params[i_b2];
        return v;
    }

    /// Residual loss over the collocation batch plus the data-subset loss,
    /// with the gradient over the packed parameters. Every parameter partial
    /// comes from per-occurrence shift pairs on the derivative bundles.
    LossGrad loss_grad(const View& v, const std::vector<Point3>& collocation,
                       const DataBatch& data) {
        if (collocation.empty()) throw input_error("dqc_loss: empty collocation batch");
        if (data.points.empty()) throw input_error("dqc_loss: empty data batch");
        const double nu = 1.0 / problem.reynolds;
        const double nc = static_cast<double>(collocation.size());
        const double nd = static_cast<double>(data.points.size());

        LossGrad out;
        out.grad = RVector::Zero(total);
        RVector wx = RVector::Zero(psi_res_set.size());
        RVector wy = RVector::Zero(psi_res_set.size());

        double pde = 0.0;
        for (const Point3& pt : collocation) {
            const RVector xi = problem.to_unit_box(pt.x, pt.y, pt.t);
            const RVector bpsi = psi_res_eval.evaluate(v.ta1, v.tf1, xi);
            const RVector bp = p_eval.evaluate(v.ta2, v.tf2, xi);
            const FlowSample s =
                assemble_sample(bpsi, res_chain, S, v.s1, bp, p_chain, Q, v.s2, v.b2);
            const NsResidual r = ns_residuals(s, problem.reynolds);
            pde += r.r_x * r.r_x + r.r_y * r.r_y;

            // d r / d (raw psi bundle entry), divided by the head scale.
            wx.setZero();
            wy.setZero();
            wx[S.m011] += res_chain[S.m011];
            wx[S.m010] += res_chain[S.m010] * s.u_x;
            wx[S.m110] += res_chain[S.m110] * s.u;
            wx[S.m100] -= res_chain[S.m100] * s.u_y;
            wx[S.m020] += res_chain[S.m020] * s.v;
            wx[S.m210] -= res_chain[S.m210] * nu;
            wx[S.m030] -= res_chain[S.m030] * nu;
            wy[S.m101] -= res_chain[S.m101];
            wy[S.m010] += res_chain[S.m010] * s.v_x;
            wy[S.m200] -= res_chain[S.m200] * s.u;
            wy[S.m100] -= res_chain[S.m100] * s.v_y;
            wy[S.m110] -= res_chain[S.m110] * s.v;
            wy[S.m300] += res_chain[S.m300] * nu;
            wy[S.m120] += res_chain[S.m120] * nu;

            const double fx = 2.0 * r.r_x / nc;
            const double fy = 2.0 * r.r_y / nc;
            out.grad[i_s1] += fx * wx.dot(bpsi) + fy * wy.dot(bpsi);
            for (std::size_t k = 0; k < psi_refs.size(); ++k) {
                const RVector j = param_partials_gradient(psi_res_eval, v.ta1, v.tf1, xi, psi_refs[k]);
                out.grad[static_cast<int>(k)] += v.s1 * (fx * wx.dot(j) + fy * wy.dot(j));
            }
            out.grad[i_s2] +=
                fx * p_chain[Q.m100] * bp[Q.m100] + fy * p_chain[Q.m010] * bp[Q.m010];
            for (std::size_t k = 0; k < p_refs.size(); ++k) {
                const RVector j = param_partials_gradient(p_eval, v.ta2, v.tf2, xi, p_refs[k]);
                out.grad[base2 + static_cast<int>(k)] +=
                    v.s2 * (fx * p_chain[Q.m100] * j[Q.m100] + fy * p_chain[Q.m010] * j[Q.m010]);
            }
        }
        pde /= nc;

        const double ax = problem.map_scale[0];
        const double ay = problem.map_scale[1];
        double ldata = 0.0;
        for (std::size_t i = 0; i < data.points.size(); ++i) {
            const Point3& pt = data.points[i];
            const RVector xi = problem.to_unit_box(pt.x, pt.y, pt.t);
            const RVector bd = psi_data_eval.evaluate(v.ta1, v.tf1, xi);
            const RVector bp = p_eval.evaluate(v.ta2, v.tf2, xi);
            const double u = v.s1 * ay * bd[D.m010];
            const double w = -v.s1 * ax * bd[D.m100];
            const double pv = v.s2 * bp[Q.m000] + v.b2;
            const auto ei = static_cast<Eigen::Index>(i);
            const double du = u - data.u[ei];
            const double dv = w - data.v[ei];
            const double dp = pv - data.p[ei];
            ldata += du * du + dv * dv + dp * dp;

            const double fu = 2.0 * du / nd;
            const double fv = 2.0 * dv / nd;
            const double fp = 2.0 * dp / nd;
            out.grad[i_s1] += fu * ay * bd[D.m010] - fv * ax * bd[D.m100];
            for (std::size_t k = 0; k < psi_refs.size(); ++k) {
                const RVector j =
                    param_partials_gradient(psi_data_eval, v.ta1, v.tf1, xi, psi_refs[k]);
                out.grad[static_cast<int>(k)] += v.s1 * (fu * ay * j[D.m010] - fv * ax * j[D.m100]);
            }
            out.grad[i_s2] += fp * bp[Q.m000];
            out.grad[i_b2] += fp;
            for (std::size_t k = 0; k < p_refs.size(); ++k) {
                const RVector j = param_partials_gradient(p_eval, v.ta2, v.tf2, xi, p_refs[k]);
                out.grad[base2 + static_cast<int>(k)] += fp * v.s2 * j[Q.m000];
            }
        }
        ldata /= nd;

        out.loss = pde + ldata;
        return out;
    }

    /// Loss over the whole reference grid as collocation set, with the fixed
    /// data subset; optionally writes the predicted field.
    DqcLoss full_grid(const View& v, const FlowField& ref, const std::vector<int>& subset_flats,
                      const DataBatch& data, FlowField* prediction) {
        FlowField pred;
        pred.xs = ref.xs;
        pred.ys = ref.ys;
        pred.ts = ref.ts;
        pred.reynolds = ref.reynolds;
        pred.u.resize(ref.size());
        pred.v.resize(ref.size());
        pred.p.resize(ref.size());

        DqcLoss loss;
        for (int flat = 0; flat < ref.size(); ++flat) {
            const Point3 pt = ref.point(flat);
            const RVector xi = problem.to_unit_box(pt.x, pt.y, pt.t);
            const RVector bpsi = psi_res_eval.evaluate(v.ta1, v.tf1, xi);
            const RVector bp = p_eval.evaluate(v.ta2, v.tf2, xi);
            const FlowSample s =
                assemble_sample(bpsi, res_chain, S, v.s1, bp, p_chain, Q, v.s2, v.b2);
            const NsResidual r = ns_residuals(s, problem.reynolds);
            loss.pde += r.r_x * r.r_x + r.r_y * r.r_y;
            pred.u[flat] = s.u;
            pred.v[flat] = s.v;
            pred.p[flat] = s.p;
        }
        loss.pde /= static_cast<double>(ref.size());

        for (std::size_t i = 0; i < subset_flats.size(); ++i) {
            const int flat = subset_flats[i];
            const auto ei = static_cast<Eigen::Index>(i);
            const double du = pred.u[flat] - data.u[ei];
            const double dv = pred.v[flat] - data.v[ei];
            const double dp = pred.p[flat] - data.p[ei];
            loss.data += du * du + dv * dv + dp * dp;
        }
        loss.data /= static_cast<double>(subset_flats.size());
        loss.total = loss.pde + loss.data;
        if (prediction != nullptr) *prediction = std::move(pred);
        return loss;
    }
};

} // namespace

LossGrad dqc_loss_gradient(const NseProblem& problem, const std::vector<Point3>& collocation,
                           const DataBatch& data) {
    problem.validate();
    DqcContext ctx(problem);
    return ctx.loss_grad(ctx.view(pack_nse_params(problem)), collocation, data);
}

NseTrainReport train_nse(NseProblem problem, const FlowField& reference,
                         const NseTrainConfig& config) {
    problem.validate();
    reference.validate();
    if (config.iterations < 0) throw config_error("iterations must be non-negative");
    if (config.batch_size < 1) throw config_error("batch_size must be at least 1");
    if (!(config.learning_rate > 0.0)) throw config_error("learning_rate must be positive");

    const auto t0 = std::chrono::steady_clock::now();
    const auto evals0 = evaluation_count();

    DqcContext ctx(problem);
    const std::vector<int> subset_flats =
        subset_flat_indices(reference, problem.data_stride_x, problem.data_stride_y);
    const DataBatch data = data_subset(reference, problem.data_stride_x, problem.data_stride_y);

    RVector params = pack_nse_params(problem);
    NseTrainReport report;
    report.initial_loss = ctx.full_grid(ctx.view(params), reference, subset_flats, data, nullptr);

    Rng rng(config.seed);
    AdamState adam;
    std::vector<Point3> batch(static_cast<std::size_t>(config.batch_size));
    report.loss_trace.reserve(static_cast<std::size_t>(config.iterations));
    for (int iter = 0; iter < config.iterations; ++iter) {
        for (int b = 0; b < config.batch_size; ++b) {
            const int flat = static_cast<int>(rng.below(static_cast<std::uint64_t>(reference.size())));
            batch[static_cast<std::size_t>(b)] = reference.point(flat);
        }
        const LossGrad lg = ctx.loss_grad(ctx.view(params), batch, data);
        report.loss_trace.push_back(lg.loss);
        adam_step(adam, params, lg.grad, config.learning_rate);
    }

    unpack_nse_params(problem, params);
    report.final_loss = ctx.full_grid(ctx.view(params), reference, subset_flats, data, &report.prediction);
    report.trained = problem;
    report.maerm = maerm_report(report.prediction, reference);
    report.circuit_evaluations = evaluation_count() - evals0;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace qfm
