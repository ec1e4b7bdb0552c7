#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "qfm/autodiff.hpp"
#include "qfm/model.hpp"

namespace qfm {

/// u = dpsi/dy, v = -dpsi/dx; divergence-free by construction.
std::pair<double, double> velocities_from_stream(double psi_dx, double psi_dy);

/// Everything the two momentum residuals and the data terms read at one point.
struct FlowSample {
    double u = 0.0, v = 0.0, p = 0.0;
    double u_t = 0.0, u_x = 0.0, u_y = 0.0, u_xx = 0.0, u_yy = 0.0;
    double v_t = 0.0, v_x = 0.0, v_y = 0.0, v_xx = 0.0, v_yy = 0.0;
    double p_x = 0.0, p_y = 0.0;
};

struct NsResidual {
    double r_x = 0.0;
    double r_y = 0.0;
};

/// Momentum residuals of the incompressible 2D Navier-Stokes equations:
///   r_x = u_t + u u_x + v u_y - (1/Re)(u_xx + u_yy) + p_x
///   r_y = v_t + u v_x + v v_y - (1/Re)(v_xx + v_yy) + p_y
NsResidual ns_residuals(const FlowSample& s, double reynolds);

struct FlowPoint {
    double u = 0.0, v = 0.0, p = 0.0;
};

/// Decaying-vortex solution of the periodic box; exact for the residuals above.
FlowPoint taylor_green_reference(double x, double y, double t, double reynolds);

/// Same solution with every derivative the residuals need.
FlowSample taylor_green_sample(double x, double y, double t, double reynolds);

struct Point3 {
    double x = 0.0, y = 0.0, t = 0.0;
};

using FieldSampler = std::function<FlowSample(double x, double y, double t)>;

FieldSampler taylor_green_sampler(double reynolds);

/// Regular (x, y, t) grid of flow observables, stored row-major in (t, y, x).
struct FlowField {
    RVector xs, ys, ts;
    RVector u, v, p;
    double reynolds = 0.0;

    int nx() const { return static_cast<int>(xs.size()); }
    int ny() const { return static_cast<int>(ys.size()); }
    int nt() const { return static_cast<int>(ts.size()); }
    int size() const { return nx() * ny() * nt(); }
    int index(int ix, int iy, int it) const { return (it * ny() + iy) * nx() + ix; }
    Point3 point(int flat) const;

    void validate() const;
};

FlowField taylor_green_field(const RVector& xs, const RVector& ys, const RVector& ts,
                             double reynolds);

/// CSV with header x,y,t,u,v,p plus a sidecar .json carrying Re and grid dims.
void save_flow_field(const FlowField& field, const std::string& csv_path);
FlowField load_flow_field(const std::string& csv_path);

/// Mean absolute deviation relative to the reference median, in percent.
double maerm(const RVector& pred, const RVector& ref);

double median(const RVector& values);

/// Rows are time steps; columns are the observables u, v, p.
struct MaermReport {
    Eigen::MatrixXd by_time;
    std::array<double, 3> mean{}, min{}, max{};
};

MaermReport maerm_report(const FlowField& pred, const FlowField& ref);

/// Per-observable, per-time-slice constant predictor at the reference median.
FlowField constant_median_baseline(const FlowField& ref);

/// Trainable affine read-out applied to a model expectation.
struct ScalarHead {
    double scale = 1.0;
    double shift = 0.0;
};

/// Stream-function and pressure networks over physical (x, y, t), with an
/// affine map onto [0, pi]^3 feeding the encodings and a trainable head per
/// observable. Data supervision lives on the (stride_x, stride_y) subgrid of
/// the reference field, anchored at index 0, at every time step.
struct NseProblem {
    QuantumModel psi_model;
    QuantumModel p_model;
    ScalarHead psi_head;
    ScalarHead p_head;
    Eigen::Vector3d map_scale = Eigen::Vector3d::Ones();
    Eigen::Vector3d map_shift = Eigen::Vector3d::Zero();
    double reynolds = 100.0;
    int data_stride_x = 10;
    int data_stride_y = 10;

    Eigen::Vector3d to_unit_box(double x, double y, double t) const {
        return {map_scale[0] * x + map_shift[0], map_scale[1] * y + map_shift[1],
                map_scale[2] * t + map_shift[2]};
    }

    void validate() const;
};

struct NseSpec {
    // Used for both networks; feature_dims is forced to 3 and a `single`
    // encoding layout is upgraded to `parallel`.
    ModelSpec model;
    double reynolds = 100.0;
    Eigen::Vector3d lo{0.0, 0.0, 0.0};
    Eigen::Vector3d hi{3.141592653589793, 3.141592653589793, 1.0};
    int data_stride_x = 10;
    int data_stride_y = 10;
};

/// Independent theta_A draws for the two networks, heads at (1, 0).
NseProblem build_nse_problem(const NseSpec& spec, std::uint64_t seed);

/// Field sampler backed by the problem's networks as parameterized right now
/// (later parameter changes do not propagate into the sampler).
FieldSampler nse_sampler(const NseProblem& problem,
                         DiffBackend backend = DiffBackend::analytic_forward);

struct DataBatch {
    std::vector<Point3> points;
    RVector u, v, p; // reference values at `points`
};

/// Reference values on the stride subgrid (anchor 0, every time step).
DataBatch data_subset(const FlowField& reference, int stride_x, int stride_y);

std::vector<Point3> grid_points(const FlowField& field);

struct DqcLoss {
    double pde = 0.0;
    double data = 0.0;
    double total = 0.0;
};

/// pde = mse(r_x, 0) + mse(r_y, 0) over collocation; data = sum of the three
/// observable MSEs over the batch; total = pde + data.
DqcLoss dqc_loss(const FieldSampler& field, double reynolds,
                 const std::vector<Point3>& collocation, const DataBatch& data);
DqcLoss dqc_loss(const NseProblem& problem, const std::vector<Point3>& collocation,
                 const DataBatch& data, DiffBackend backend = DiffBackend::analytic_forward);

/// Collocation-residual loss plus data loss with its gradient over the packed
/// parameter vector; the workhorse behind train_nse, exposed for testing
/// against finite differences.
LossGrad dqc_loss_gradient(const NseProblem& problem, const std::vector<Point3>& collocation,
                           const DataBatch& data);

int nse_param_count(const NseProblem& problem);
/// [psi theta_A; psi theta_F; psi head; p theta_A; p theta_F; p head]
RVector pack_nse_params(const NseProblem& problem);
void unpack_nse_params(NseProblem& problem, const RVector& params);

struct NseTrainConfig {
    int iterations = 0;
    int batch_size = 1;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
};

struct NseTrainReport {
    std::vector<double> loss_trace; // batch pde + fixed-subset data, per iteration
    DqcLoss initial_loss;           // full grid collocation + data subset
    DqcLoss final_loss;
    NseProblem trained;
    FlowField prediction; // networks evaluated on the reference grid
    MaermReport maerm;
    unsigned long long circuit_evaluations = 0;
    double wall_seconds = 0.0;
};

/// Physics-informed training: per iteration, batch_size collocation points are
/// drawn uniformly from the full reference grid (seeded), the residual loss
/// plus the fixed data-subset loss is differentiated by per-occurrence shift
/// pairs on every network parameter, and one joint Adam step updates both
/// networks and both heads.
NseTrainReport train_nse(NseProblem problem, const FlowField& reference,
                         const NseTrainConfig& config);

} // namespace qfm
