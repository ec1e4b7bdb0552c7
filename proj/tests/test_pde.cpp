#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "qfm/errors.hpp"
#include "qfm/pde.hpp"
#include "qfm/rng.hpp"

using namespace qfm;

namespace {

RVector rvec(std::initializer_list<double> values) {
    RVector out(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) out[i++] = v;
    return out;
}

void check_close(double got, double want, double rel = 1e-4, double floor = 1e-6) {
    if (std::abs(want) < 1e-3) {
        CHECK(std::abs(got - want) < floor);
    } else {
        CHECK(std::abs(got - want) < rel * std::abs(want));
    }
}

// Closed-form decaying vortex used as an independent oracle.
FlowPoint vortex(double x, double y, double t, double re) {
    const double f = std::exp(-2.0 * t / re);
    return {-std::cos(x) * std::sin(y) * f, std::sin(x) * std::cos(y) * f,
            -0.25 * (std::cos(2.0 * x) + std::cos(2.0 * y)) * f * f};
}

NseSpec small_spec(int qubits = 3, int layers = 2) {
    NseSpec spec;
    spec.model.qubits = qubits;
    spec.model.ansatz_layers = layers;
    spec.model.feature_map = FeatureMapKind::trainable;
    spec.model.encoding = EncodingLayout::parallel;
    spec.reynolds = 100.0;
    spec.lo = {2.4, 0.15, 0.0};
    spec.hi = {3.1, 0.75, 1.0};
    spec.data_stride_x = 2;
    spec.data_stride_y = 2;
    return spec;
}

FlowField small_reference(int nx = 4, int ny = 3, int nt = 2) {
    return taylor_green_field(RVector::LinSpaced(nx, 2.4, 3.1), RVector::LinSpaced(ny, 0.15, 0.75),
                              RVector::LinSpaced(nt, 0.0, 1.0), 100.0);
}

std::filesystem::path fresh_dir(const char* tag) {
    const auto dir = std::filesystem::temp_directory_path() /
                     (std::string("qfm_pde_") + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("velocities follow the stream function") {
    // psi = x y at (2, 3): psi_x = 3, psi_y = 2 -> (u, v) = (2, -3).
    auto [u, v] = velocities_from_stream(3.0, 2.0);
    CHECK(u == 2.0);
    CHECK(v == -3.0);

    // psi = sin x sin y at (pi/2, 0): psi_x = 0, psi_y = 1 -> (1, 0).
    const double x = 1.5707963267948966, y = 0.0;
    auto [u2, v2] = velocities_from_stream(std::cos(x) * std::sin(y), std::sin(x) * std::cos(y));
    CHECK(u2 == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(v2) < 1e-15);
}

TEST_CASE("momentum residuals match the written formula") {
    // u = x steady flow at x = 2: only the advection term u u_x = 2 survives.
    FlowSample s;
    s.u = 2.0;
    s.u_x = 1.0;
    const NsResidual r = ns_residuals(s, 100.0);
    CHECK(r.r_x == 2.0);
    CHECK(r.r_y == 0.0);

    FlowSample q;
    q.u = 1.1;
    q.v = -0.7;
    q.p = 0.3;
    q.u_t = 0.2;
    q.u_x = 0.5;
    q.u_y = -0.4;
    q.u_xx = 1.3;
    q.u_yy = -0.9;
    q.v_t = -0.1;
    q.v_x = 0.8;
    q.v_y = 0.6;
    q.v_xx = -1.2;
    q.v_yy = 0.35;
    q.p_x = 0.05;
    q.p_y = -0.15;
    const double re = 40.0;
    const NsResidual w = ns_residuals(q, re);
    const double want_x = q.u_t + q.u * q.u_x + q.v * q.u_y - (q.u_xx + q.u_yy) / re + q.p_x;
    const double want_y = q.v_t + q.u * q.v_x + q.v * q.v_y - (q.v_xx + q.v_yy) / re + q.p_y;
    CHECK(w.r_x == doctest::Approx(want_x).epsilon(1e-15));
    CHECK(w.r_y == doctest::Approx(want_y).epsilon(1e-15));

    CHECK_THROWS_AS(ns_residuals(s, 0.0), input_error);
    CHECK_THROWS_AS(ns_residuals(s, -3.0), input_error);
}

TEST_CASE("decaying vortex hits its landmark values") {
    const double pi_2 = 1.5707963267948966;

    const FlowPoint a = taylor_green_reference(0.0, 0.0, 0.0, 100.0);
    CHECK(a.u == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(a.v == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(a.p == doctest::Approx(-0.5).epsilon(1e-15));

    const FlowPoint b = taylor_green_reference(pi_2, pi_2, 0.0, 100.0);
    CHECK(std::abs(b.u) < 1e-15);
    CHECK(std::abs(b.v) < 1e-15);
    CHECK(b.p == doctest::Approx(0.5).epsilon(1e-15));

    // The vortex decays to rest.
    const FlowPoint c = taylor_green_reference(0.7, 1.9, 1e6, 10.0);
    CHECK(std::abs(c.u) < 1e-12);
    CHECK(std::abs(c.v) < 1e-12);
    CHECK(std::abs(c.p) < 1e-12);

    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const double x = rng.uniform(-6.0, 6.0);
        const double y = rng.uniform(-6.0, 6.0);
        const double t = rng.uniform(0.0, 4.0);
        const double re = (i % 2 == 0) ? 1.0 : 100.0;
        const FlowPoint got = taylor_green_reference(x, y, t, re);
        const FlowPoint want = vortex(x, y, t, re);
        CHECK(got.u == doctest::Approx(want.u).epsilon(1e-13));
        CHECK(got.v == doctest::Approx(want.v).epsilon(1e-13));
        CHECK(got.p == doctest::Approx(want.p).epsilon(1e-13));
    }

    CHECK_THROWS_AS(taylor_green_reference(0.0, 0.0, 0.0, 0.0), input_error);
}

TEST_CASE("vortex sample derivatives agree with finite differences") {
    Rng rng(23);
    const double h = 1e-4, re = 100.0;
    for (int i = 0; i < 12; ++i) {
        const double x = rng.uniform(0.5, 5.5);
        const double y = rng.uniform(0.5, 5.5);
        const double t = rng.uniform(0.0, 2.0);
        const FlowSample s = taylor_green_sample(x, y, t, re);

        const FlowPoint c = taylor_green_reference(x, y, t, re);
        CHECK(s.u == doctest::Approx(c.u).epsilon(1e-14));
        CHECK(s.v == doctest::Approx(c.v).epsilon(1e-14));
        CHECK(s.p == doctest::Approx(c.p).epsilon(1e-14));

        const auto at = [&](double dx, double dy, double dt) {
            return taylor_green_reference(x + dx, y + dy, t + dt, re);
        };
        check_close(s.u_x, (at(h, 0, 0).u - at(-h, 0, 0).u) / (2 * h), 1e-6, 1e-6);
        check_close(s.u_y, (at(0, h, 0).u - at(0, -h, 0).u) / (2 * h), 1e-6, 1e-6);
        check_close(s.u_t, (at(0, 0, h).u - at(0, 0, -h).u) / (2 * h), 1e-6, 1e-6);
        check_close(s.v_x, (at(h, 0, 0).v - at(-h, 0, 0).v) / (2 * h), 1e-6, 1e-6);
        check_close(s.v_y, (at(0, h, 0).v - at(0, -h, 0).v) / (2 * h), 1e-6, 1e-6);
        check_close(s.v_t, (at(0, 0, h).v - at(0, 0, -h).v) / (2 * h), 1e-6, 1e-6);
        check_close(s.p_x, (at(h, 0, 0).p - at(-h, 0, 0).p) / (2 * h), 1e-6, 1e-6);
        check_close(s.p_y, (at(0, h, 0).p - at(0, -h, 0).p) / (2 * h), 1e-6, 1e-6);
        check_close(s.u_xx, (at(h, 0, 0).u - 2 * s.u + at(-h, 0, 0).u) / (h * h), 1e-5, 1e-5);
        check_close(s.u_yy, (at(0, h, 0).u - 2 * s.u + at(0, -h, 0).u) / (h * h), 1e-5, 1e-5);
        check_close(s.v_xx, (at(h, 0, 0).v - 2 * s.v + at(-h, 0, 0).v) / (h * h), 1e-5, 1e-5);
        check_close(s.v_yy, (at(0, h, 0).v - 2 * s.v + at(0, -h, 0).v) / (h * h), 1e-5, 1e-5);
    }
}

TEST_CASE("the vortex solves the momentum equations") {
    Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-7.0, 7.0);
        const double y = rng.uniform(-7.0, 7.0);
        const double t = rng.uniform(0.0, 5.0);
        const double re = (i % 2 == 0) ? 1.0 : 100.0;
        const NsResidual r = ns_residuals(taylor_green_sample(x, y, t, re), re);
        CHECK(std::abs(r.r_x) < 1e-8);
        CHECK(std::abs(r.r_y) < 1e-8);
    }
    const FieldSampler sampler = taylor_green_sampler(100.0);
    const NsResidual r = ns_residuals(sampler(2.5, 0.3, 0.4), 100.0);
    CHECK(std::abs(r.r_x) < 1e-12);
    CHECK(std::abs(r.r_y) < 1e-12);
    CHECK_THROWS_AS(taylor_green_sampler(-1.0), input_error);
}

TEST_CASE("flow fields index row-major in (t, y, x)") {
    const FlowField field = small_reference(4, 3, 2);
    CHECK(field.nx() == 4);
    CHECK(field.ny() == 3);
    CHECK(field.nt() == 2);
    CHECK(field.size() == 24);
    CHECK(field.index(1, 0, 0) == 1);
    CHECK(field.index(0, 1, 0) == 4);
    CHECK(field.index(0, 0, 1) == 12);

    const Point3 q = field.point(field.index(2, 1, 1));
    CHECK(q.x == field.xs[2]);
    CHECK(q.y == field.ys[1]);
    CHECK(q.t == field.ts[1]);

    // Grid values are the reference solution evaluated pointwise.
    for (int it = 0; it < field.nt(); ++it)
        for (int iy = 0; iy < field.ny(); ++iy)
            for (int ix = 0; ix < field.nx(); ++ix) {
                const int i = field.index(ix, iy, it);
                const FlowPoint want =
                    taylor_green_reference(field.xs[ix], field.ys[iy], field.ts[it], 100.0);
                CHECK(field.u[i] == doctest::Approx(want.u).epsilon(1e-15));
                CHECK(field.v[i] == doctest::Approx(want.v).epsilon(1e-15));
                CHECK(field.p[i] == doctest::Approx(want.p).epsilon(1e-15));
            }

    const std::vector<Point3> pts = grid_points(field);
    CHECK(static_cast<int>(pts.size()) == field.size());
    CHECK(pts[0].x == field.xs[0]);
    CHECK(pts[1].x == field.xs[1]);
    CHECK(pts[4].y == field.ys[1]);
    CHECK(pts[12].t == field.ts[1]);

    FlowField bad = field;
    bad.u.resize(3);
    CHECK_THROWS_AS(bad.validate(), input_error);
    FlowField bad_re = field;
    bad_re.reynolds = 0.0;
    CHECK_THROWS_AS(bad_re.validate(), input_error);
}

TEST_CASE("flow fields survive a CSV round trip") {
    const auto dir = fresh_dir("csv");
    const std::string path = (dir / "field.csv").string();
    const FlowField field = small_reference(2, 2, 2);
    save_flow_field(field, path);

    // 8 grid rows plus the header.
    std::ifstream in(path);
    int lines = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 9);

    const FlowField back = load_flow_field(path);
    CHECK(back.reynolds == field.reynolds);
    CHECK(back.nx() == 2);
    CHECK(back.ny() == 2);
    CHECK(back.nt() == 2);
    for (int i = 0; i < field.size(); ++i) {
        CHECK(std::abs(back.u[i] - field.u[i]) < 1e-12);
        CHECK(std::abs(back.v[i] - field.v[i]) < 1e-12);
        CHECK(std::abs(back.p[i] - field.p[i]) < 1e-12);
    }
    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(back.xs[i] - field.xs[i]) < 1e-12);
        CHECK(std::abs(back.ys[i] - field.ys[i]) < 1e-12);
        CHECK(std::abs(back.ts[i] - field.ts[i]) < 1e-12);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("CSV loading reports what is wrong") {
    const auto dir = fresh_dir("csv_err");
    const std::string path = (dir / "field.csv").string();
    const FlowField field = small_reference(2, 2, 2);

    // No sidecar at all.
    {
        std::ofstream out(path);
        out << "x,y,t,u,v,p\n";
    }
    CHECK_THROWS_WITH_AS(load_flow_field(path), doctest::Contains("sidecar"), io_error);

    // Sidecar present but the p column is gone.
    save_flow_field(field, path);
    {
        std::ofstream out(path);
        out << "x,y,t,u,v\n";
        for (int i = 0; i < 8; ++i) out << "0,0,0,0,0\n";
    }
    CHECK_THROWS_WITH_AS(load_flow_field(path), doctest::Contains("missing column 'p'"), io_error);

    // Row count disagrees with the sidecar grid.
    save_flow_field(field, path);
    {
        std::ofstream out(path);
        out << "x,y,t,u,v,p\n";
        out << "2.4,0.15,0,0,0,1\n";
    }
    CHECK_THROWS_AS(load_flow_field(path), io_error);

    // Rows out of grid order.
    save_flow_field(field, path);
    {
        std::ifstream in(path);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        std::swap(lines[1], lines[2]);
        std::ofstream out(path);
        for (const auto& l : lines) out << l << '\n';
    }
    CHECK_THROWS_WITH_AS(load_flow_field(path), doctest::Contains("grid order"), io_error);

    std::filesystem::remove_all(dir);
}

TEST_CASE("median and relative-deviation metric") {
    CHECK(median(rvec({5.0})) == 5.0);
    CHECK(median(rvec({3.0, 1.0})) == 2.0);
    CHECK(median(rvec({7.0, 1.0, 3.0})) == 3.0);
    CHECK(median(rvec({1.0, 2.0, 4.0, 2.0})) == 2.0);
    CHECK_THROWS_AS(median(RVector()), input_error);

    // mean |pred - ref| = 1/3, |median(ref)| = 2 -> 16.67 percent.
    const double m = maerm(rvec({1.0, 2.0, 3.0}), rvec({1.0, 2.0, 4.0}));
    CHECK(m == doctest::Approx(100.0 / 6.0).epsilon(1e-14));

    // A constant offset c reads exactly as 100 |c / median|.
    const RVector ref = rvec({1.0, 2.0, 4.0, 2.0});
    RVector pred = ref;
    for (int i = 0; i < pred.size(); ++i) pred[i] += 0.5;
    CHECK(maerm(pred, ref) == 25.0);

    // Rescaling both fields by a common factor leaves the metric unchanged.
    CHECK(maerm(2.0 * pred, 2.0 * ref) == maerm(pred, ref));

    CHECK(maerm(ref, ref) == 0.0);
    CHECK_THROWS_AS(maerm(rvec({1.0}), rvec({1.0, 2.0})), input_error);
    CHECK_THROWS_AS(maerm(RVector(), RVector()), input_error);
    CHECK_THROWS_AS(maerm(rvec({1.0, 2.0, 3.0}), rvec({-1.0, 0.0, 1.0})), metric_error);
}

TEST_CASE("per-slice metric report and the constant-median baseline") {
    const FlowField ref = small_reference(6, 5, 3);

    const MaermReport self = maerm_report(ref, ref);
    CHECK(self.by_time.rows() == 3);
    CHECK(self.by_time.cols() == 3);
    CHECK(self.by_time.cwiseAbs().maxCoeff() == 0.0);
    for (int c = 0; c < 3; ++c) {
        CHECK(self.mean[static_cast<std::size_t>(c)] == 0.0);
        CHECK(self.min[static_cast<std::size_t>(c)] == 0.0);
        CHECK(self.max[static_cast<std::size_t>(c)] == 0.0);
    }

    const FlowField base = constant_median_baseline(ref);
    // Every time slice of the baseline is flat at the slice median.
    const int slice = ref.nx() * ref.ny();
    for (int it = 0; it < ref.nt(); ++it) {
        const RVector u_slice = ref.u.segment(it * slice, slice);
        const double med = median(u_slice);
        for (int i = 0; i < slice; ++i) CHECK(base.u[it * slice + i] == med);
    }

    const MaermReport rep = maerm_report(base, ref);
    CHECK(rep.by_time.rows() == 3);
    for (int c = 0; c < 3; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        CHECK(rep.mean[uc] == doctest::Approx(rep.by_time.col(c).mean()).epsilon(1e-15));
        CHECK(rep.min[uc] == rep.by_time.col(c).minCoeff());
        CHECK(rep.max[uc] == rep.by_time.col(c).maxCoeff());
        CHECK(rep.min[uc] <= rep.mean[uc]);
        CHECK(rep.mean[uc] <= rep.max[uc]);
    }

    FlowField other = small_reference(5, 5, 3);
    CHECK_THROWS_AS(maerm_report(other, ref), input_error);
}

TEST_CASE("data supervision lives on the stride subgrid") {
    const FlowField ref = taylor_green_field(RVector::LinSpaced(20, 2.4, 3.1),
                                             RVector::LinSpaced(20, 0.15, 0.75),
                                             RVector::LinSpaced(5, 0.0, 1.0), 100.0);
    const DataBatch batch = data_subset(ref, 10, 10);
    // ix, iy in {0, 10} at each of the 5 time steps.
    CHECK(batch.points.size() == 20);
    CHECK(batch.u.size() == 20);
    CHECK(batch.points[0].x == ref.xs[0]);
    CHECK(batch.points[0].y == ref.ys[0]);
    CHECK(batch.points[0].t == ref.ts[0]);

    std::size_t k = 0;
    for (int it = 0; it < 5; ++it)
        for (int iy : {0, 10})
            for (int ix : {0, 10}) {
                const int i = ref.index(ix, iy, it);
                CHECK(batch.points[k].x == ref.xs[ix]);
                CHECK(batch.points[k].y == ref.ys[iy]);
                CHECK(batch.points[k].t == ref.ts[it]);
                CHECK(batch.u[static_cast<Eigen::Index>(k)] == ref.u[i]);
                CHECK(batch.v[static_cast<Eigen::Index>(k)] == ref.v[i]);
                CHECK(batch.p[static_cast<Eigen::Index>(k)] == ref.p[i]);
                ++k;
            }

    // Strides past the grid keep only the anchor column.
    const DataBatch anchor = data_subset(ref, 100, 100);
    CHECK(anchor.points.size() == 5);
    CHECK_THROWS_AS(data_subset(ref, 0, 1), config_error);
}

TEST_CASE("problem construction maps the domain onto the encoding box") {
    const NseSpec spec = small_spec();
    const NseProblem problem = build_nse_problem(spec, 9);

    CHECK(problem.psi_model.feature_dims == 3);
    CHECK(problem.p_model.feature_dims == 3);
    CHECK(problem.psi_model.blocks.size() == 3);
    CHECK(problem.reynolds == 100.0);
    CHECK(problem.psi_head.scale == 1.0);
    CHECK(problem.psi_head.shift == 0.0);
    CHECK(problem.p_head.scale == 1.0);
    CHECK(problem.p_head.shift == 0.0);

    const double pi = 3.141592653589793;
    const Eigen::Vector3d lo = problem.to_unit_box(spec.lo[0], spec.lo[1], spec.lo[2]);
    const Eigen::Vector3d hi = problem.to_unit_box(spec.hi[0], spec.hi[1], spec.hi[2]);
    for (int d = 0; d < 3; ++d) {
        CHECK(std::abs(lo[d]) < 1e-12);
        CHECK(hi[d] == doctest::Approx(pi).epsilon(1e-12));
    }

    // The two networks start from independent draws but the build is repeatable.
    CHECK(problem.psi_model.theta_a != problem.p_model.theta_a);
    const NseProblem again = build_nse_problem(spec, 9);
    CHECK(again.psi_model.theta_a == problem.psi_model.theta_a);
    CHECK(again.p_model.theta_a == problem.p_model.theta_a);

    // A one-dimensional layout request is upgraded to one block per input.
    NseSpec single = spec;
    single.model.encoding = EncodingLayout::single;
    single.model.feature_dims = 1;
    const NseProblem upgraded = build_nse_problem(single, 9);
    CHECK(upgraded.psi_model.feature_dims == 3);
    CHECK(upgraded.psi_model.blocks.size() == 3);

    NseSpec flat = spec;
    flat.hi[1] = flat.lo[1];
    CHECK_THROWS_AS(build_nse_problem(flat, 9), config_error);
    NseSpec bad_re = spec;
    bad_re.reynolds = 0.0;
    CHECK_THROWS_AS(build_nse_problem(bad_re, 9), config_error);

    NseProblem broken = build_nse_problem(spec, 9);
    broken.data_stride_x = 0;
    CHECK_THROWS_AS(broken.validate(), config_error);
    NseProblem squashed = build_nse_problem(spec, 9);
    squashed.map_scale[0] = 0.0;
    CHECK_THROWS_AS(squashed.validate(), config_error);
}

TEST_CASE("packed parameters follow the documented layout") {
    const NseProblem problem = build_nse_problem(small_spec(), 4);
    const int n_psi_a = static_cast<int>(problem.psi_model.theta_a.size());
    const int n_psi_f = static_cast<int>(problem.psi_model.theta_f.size());
    const int n_p_a = static_cast<int>(problem.p_model.theta_a.size());
    const int n_p_f = static_cast<int>(problem.p_model.theta_f.size());
    const int total = n_psi_a + n_psi_f + 2 + n_p_a + n_p_f + 2;
    CHECK(nse_param_count(problem) == total);

    const RVector packed = pack_nse_params(problem);
    CHECK(packed.size() == total);
    CHECK(packed.segment(0, n_psi_a) == problem.psi_model.theta_a);
    CHECK(packed.segment(n_psi_a, n_psi_f) == problem.psi_model.theta_f);
    CHECK(packed[n_psi_a + n_psi_f] == problem.psi_head.scale);
    CHECK(packed[n_psi_a + n_psi_f + 1] == problem.psi_head.shift);
    CHECK(packed.segment(n_psi_a + n_psi_f + 2, n_p_a) == problem.p_model.theta_a);
    CHECK(packed[total - 2] == problem.p_head.scale);
    CHECK(packed[total - 1] == problem.p_head.shift);

    // Round trip through distinct values.
    const RVector fresh = RVector::LinSpaced(total, 0.25, 3.75);
    NseProblem copy = problem;
    unpack_nse_params(copy, fresh);
    CHECK(pack_nse_params(copy) == fresh);
    CHECK(copy.psi_head.scale == fresh[n_psi_a + n_psi_f]);
    CHECK(copy.p_model.theta_f == fresh.segment(n_psi_a + n_psi_f + 2 + n_p_a, n_p_f));

    RVector wrong(total + 1);
    wrong.setZero();
    CHECK_THROWS_AS(unpack_nse_params(copy, wrong), input_error);
}

TEST_CASE("network fields are divergence-free and match finite differences") {
    const NseProblem problem = build_nse_problem(small_spec(), 5);
    const FieldSampler sampler = nse_sampler(problem);

    Rng rng(77);
    const double h = 1e-4;
    for (int i = 0; i < 12; ++i) {
        const double x = rng.uniform(2.4, 3.1);
        const double y = rng.uniform(0.15, 0.75);
        const double t = rng.uniform(0.0, 1.0);
        const FlowSample s = sampler(x, y, t);

        // u = psi_y and v = -psi_x share the mixed second derivative.
        CHECK(std::abs(s.u_x + s.v_y) < 1e-10);

        const auto at = [&](double dx, double dy, double dt) {
            return sampler(x + dx, y + dy, t + dt);
        };
        check_close(s.u_x, (at(h, 0, 0).u - at(-h, 0, 0).u) / (2 * h), 1e-4, 1e-5);
        check_close(s.u_y, (at(0, h, 0).u - at(0, -h, 0).u) / (2 * h), 1e-4, 1e-5);
        check_close(s.u_t, (at(0, 0, h).u - at(0, 0, -h).u) / (2 * h), 1e-4, 1e-5);
        check_close(s.v_x, (at(h, 0, 0).v - at(-h, 0, 0).v) / (2 * h), 1e-4, 1e-5);
        check_close(s.p_x, (at(h, 0, 0).p - at(-h, 0, 0).p) / (2 * h), 1e-4, 1e-5);
        check_close(s.p_y, (at(0, h, 0).p - at(0, -h, 0).p) / (2 * h), 1e-4, 1e-5);
        check_close(s.u_xx, (at(h, 0, 0).u - 2 * s.u + at(-h, 0, 0).u) / (h * h), 1e-3, 1e-3);
        check_close(s.v_yy, (at(0, h, 0).v - 2 * s.v + at(0, -h, 0).v) / (h * h), 1e-3, 1e-3);
    }

    // Heads rescale the observables affinely.
    NseProblem scaled = problem;
    scaled.psi_head.scale = 2.0;
    scaled.p_head.shift = 1.5;
    const FieldSampler sampler2 = nse_sampler(scaled);
    const FlowSample a = sampler(2.7, 0.4, 0.5);
    const FlowSample b = sampler2(2.7, 0.4, 0.5);
    CHECK(b.u == doctest::Approx(2.0 * a.u).epsilon(1e-14));
    CHECK(b.v_x == doctest::Approx(2.0 * a.v_x).epsilon(1e-14));
    CHECK(b.p == doctest::Approx(a.p + 1.5).epsilon(1e-14));
    CHECK(b.p_x == doctest::Approx(a.p_x).epsilon(1e-12));
}

TEST_CASE("both derivative backends sample the same flow") {
    const NseProblem problem = build_nse_problem(small_spec(2, 1), 13);
    const FieldSampler fast = nse_sampler(problem, DiffBackend::analytic_forward);
    const FieldSampler shifted = nse_sampler(problem, DiffBackend::shift_rule);

    Rng rng(29);
    for (int i = 0; i < 5; ++i) {
        const double x = rng.uniform(2.4, 3.1);
        const double y = rng.uniform(0.15, 0.75);
        const double t = rng.uniform(0.0, 1.0);
        const FlowSample a = fast(x, y, t);
        const FlowSample b = shifted(x, y, t);
        CHECK(std::abs(a.u - b.u) < 1e-8);
        CHECK(std::abs(a.v - b.v) < 1e-8);
        CHECK(std::abs(a.p - b.p) < 1e-8);
        CHECK(std::abs(a.u_t - b.u_t) < 1e-8);
        CHECK(std::abs(a.u_x - b.u_x) < 1e-8);
        CHECK(std::abs(a.u_y - b.u_y) < 1e-8);
        CHECK(std::abs(a.u_xx - b.u_xx) < 1e-8);
        CHECK(std::abs(a.u_yy - b.u_yy) < 1e-8);
        CHECK(std::abs(a.v_t - b.v_t) < 1e-8);
        CHECK(std::abs(a.v_x - b.v_x) < 1e-8);
        CHECK(std::abs(a.v_y - b.v_y) < 1e-8);
        CHECK(std::abs(a.v_xx - b.v_xx) < 1e-8);
        CHECK(std::abs(a.v_yy - b.v_yy) < 1e-8);
        CHECK(std::abs(a.p_x - b.p_x) < 1e-8);
        CHECK(std::abs(a.p_y - b.p_y) < 1e-8);
    }
}

TEST_CASE("the exact vortex drives the physics loss to zero") {
    const FlowField ref = taylor_green_field(RVector::LinSpaced(20, 2.4, 3.1),
                                             RVector::LinSpaced(20, 0.15, 0.75),
                                             RVector::LinSpaced(5, 0.0, 1.0), 100.0);
    const DqcLoss loss =
        dqc_loss(taylor_green_sampler(100.0), 100.0, grid_points(ref), data_subset(ref, 10, 10));
    CHECK(loss.pde < 1e-6);
    CHECK(loss.data < 1e-20);
    CHECK(loss.total == loss.pde + loss.data);
}

TEST_CASE("loss decomposition and its degenerate inputs") {
    const NseProblem problem = build_nse_problem(small_spec(), 3);
    const FlowField ref = small_reference();
    const std::vector<Point3> colloc = {{2.5, 0.3, 0.2}, {2.9, 0.6, 0.8}, {2.6, 0.45, 0.5}};
    const DataBatch data = data_subset(ref, 2, 2);

    const DqcLoss via_problem = dqc_loss(problem, colloc, data);
    const DqcLoss via_sampler = dqc_loss(nse_sampler(problem), problem.reynolds, colloc, data);
    CHECK(via_problem.pde == doctest::Approx(via_sampler.pde).epsilon(1e-12));
    CHECK(via_problem.data == doctest::Approx(via_sampler.data).epsilon(1e-12));
    CHECK(via_problem.total == via_problem.pde + via_problem.data);
    CHECK(via_problem.pde > 0.0);
    CHECK(via_problem.data > 0.0);

    // Supervising the network on its own predictions zeroes the data term.
    const FieldSampler sampler = nse_sampler(problem);
    DataBatch own = data;
    for (std::size_t i = 0; i < own.points.size(); ++i) {
        const FlowSample s = sampler(own.points[i].x, own.points[i].y, own.points[i].t);
        const auto k = static_cast<Eigen::Index>(i);
        own.u[k] = s.u;
        own.v[k] = s.v;
        own.p[k] = s.p;
    }
    const DqcLoss self = dqc_loss(problem, colloc, own);
    CHECK(self.data < 1e-16);
    CHECK(self.pde == doctest::Approx(via_problem.pde).epsilon(1e-12));

    CHECK_THROWS_AS(dqc_loss(problem, {}, data), input_error);
    DataBatch empty;
    CHECK_THROWS_AS(dqc_loss(problem, colloc, empty), input_error);
    DataBatch mismatched = data;
    mismatched.u.resize(1);
    CHECK_THROWS_AS(dqc_loss(problem, colloc, mismatched), input_error);
}

TEST_CASE("loss gradient agrees with finite differences") {
    const NseProblem problem = build_nse_problem(small_spec(3, 1), 7);
    const FlowField ref = small_reference();
    const std::vector<Point3> colloc = {{2.55, 0.25, 0.3}, {2.95, 0.65, 0.7}, {2.7, 0.5, 0.1}};
    const DataBatch data = data_subset(ref, 2, 2);

    const LossGrad lg = dqc_loss_gradient(problem, colloc, data);
    const DqcLoss direct = dqc_loss(problem, colloc, data);
    CHECK(lg.loss == doctest::Approx(direct.total).epsilon(1e-12));
    CHECK(lg.grad.size() == nse_param_count(problem));

    const RVector base = pack_nse_params(problem);
    const double h = 1e-5;
    for (int i = 0; i < base.size(); ++i) {
        RVector plus = base, minus = base;
        plus[i] += h;
        minus[i] -= h;
        NseProblem up = problem, down = problem;
        unpack_nse_params(up, plus);
        unpack_nse_params(down, minus);
        const double fd = (dqc_loss(up, colloc, data).total - dqc_loss(down, colloc, data).total) /
                          (2.0 * h);
        check_close(lg.grad[i], fd, 2e-4, 2e-6);
    }
}

TEST_CASE("training reports an untouched problem when asked for zero steps") {
    const NseProblem problem = build_nse_problem(small_spec(), 21);
    const FlowField ref = small_reference(5, 4, 3);
    NseTrainConfig config;
    config.iterations = 0;
    config.batch_size = 4;
    config.seed = 21;

    const NseTrainReport report = train_nse(problem, ref, config);
    CHECK(report.loss_trace.empty());
    CHECK(pack_nse_params(report.trained) == pack_nse_params(problem));
    CHECK(report.final_loss.total == report.initial_loss.total);
    CHECK(report.initial_loss.total > 0.0);
    CHECK(report.circuit_evaluations > 0);

    // The prediction grid is the network itself evaluated on the reference axes.
    CHECK(report.prediction.nx() == ref.nx());
    CHECK(report.prediction.reynolds == problem.reynolds);
    const FieldSampler sampler = nse_sampler(problem);
    const int i = ref.index(2, 1, 1);
    const FlowSample s = sampler(ref.xs[2], ref.ys[1], ref.ts[1]);
    CHECK(report.prediction.u[i] == doctest::Approx(s.u).epsilon(1e-12));
    CHECK(report.prediction.v[i] == doctest::Approx(s.v).epsilon(1e-12));
    CHECK(report.prediction.p[i] == doctest::Approx(s.p).epsilon(1e-12));
    CHECK(report.maerm.by_time.rows() == ref.nt());

    NseTrainConfig bad = config;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_nse(problem, ref, bad), config_error);
    bad.batch_size = 4;
    bad.iterations = -1;
    CHECK_THROWS_AS(train_nse(problem, ref, bad), config_error);
    bad.iterations = 0;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(train_nse(problem, ref, bad), config_error);
}

TEST_CASE("a short physics-informed run lowers the loss deterministically") {
    const NseProblem problem = build_nse_problem(small_spec(), 1);
    const FlowField ref = taylor_green_field(RVector::LinSpaced(8, 2.4, 3.1),
                                             RVector::LinSpaced(8, 0.15, 0.75),
                                             RVector::LinSpaced(3, 0.0, 1.0), 100.0);
    NseTrainConfig config;
    config.iterations = 40;
    config.batch_size = 8;
    config.learning_rate = 1e-2;
    config.seed = 1;

    const NseTrainReport a = train_nse(problem, ref, config);
    CHECK(a.loss_trace.size() == 40);
    CHECK(a.final_loss.total < a.initial_loss.total);
    CHECK(a.circuit_evaluations > 0);
    CHECK(a.wall_seconds >= 0.0);

    const NseTrainReport b = train_nse(problem, ref, config);
    CHECK(b.loss_trace == a.loss_trace);
    CHECK(pack_nse_params(b.trained) == pack_nse_params(a.trained));
    CHECK(b.final_loss.total == a.final_loss.total);
    CHECK(b.prediction.u == a.prediction.u);
    CHECK(b.circuit_evaluations == a.circuit_evaluations);

    NseTrainConfig other = config;
    other.seed = 18;
    const NseTrainReport c = train_nse(problem, ref, other);
    CHECK(c.final_loss.total != a.final_loss.total);
}

TEST_CASE("chained desk-scale sessions beat the constant-median baseline") {
    NseSpec spec = small_spec(4, 4);
    spec.lo = {0.8, 1.1, 0.0};
    spec.hi = {3.0, 2.8, 1.0};
    spec.data_stride_x = 10;
    spec.data_stride_y = 10;
    const FlowField ref = taylor_green_field(RVector::LinSpaced(20, 0.8, 3.0),
                                             RVector::LinSpaced(20, 1.1, 2.8),
                                             RVector::LinSpaced(5, 0.0, 1.0), 100.0);

    // One uninterrupted 1000-iteration session parks in the residual term's
    // near-constant-field basin (every probed seed does). Resuming in 250
    // iteration sessions restarts the optimizer moments and the collocation
    // stream each time, which reliably kicks the model onto the real flow
    // by the third session. Same total budget, chained through `trained`.
    NseProblem current = build_nse_problem(spec, 1);
    double initial_total = 0.0;
    NseTrainReport last;
    for (int session = 0; session < 4; ++session) {
        NseTrainConfig config;
        config.iterations = 250;
        config.batch_size = 64;
        config.learning_rate = 1e-2;
        config.seed = 1000 + 250 * session;
        last = train_nse(current, ref, config);
        current = last.trained;
        if (session == 0) initial_total = last.initial_loss.total;
    }
    CHECK(last.final_loss.total < initial_total);

    const MaermReport baseline = maerm_report(constant_median_baseline(ref), ref);
    int better = 0;
    for (std::size_t c = 0; c < 3; ++c)
        if (last.maerm.mean[c] < baseline.mean[c]) ++better;
    INFO("u ", last.maerm.mean[0], " vs ", baseline.mean[0], "; v ", last.maerm.mean[1], " vs ",
         baseline.mean[1], "; p ", last.maerm.mean[2], " vs ", baseline.mean[2]);
    CHECK(better >= 2);
}
