#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "psf/filter/filter.hpp"
#include "psf/learn/actor_critic.hpp"
#include "psf/ragrid/ragrid.hpp"

namespace psf {

struct ExperimentConfig {
    Json system;  // model, sets, curvature
    int rows = 40, cols = 60;  // sweep resolution along x1, x2
    int horizon = 25;
    // grid-DP oracle
    std::vector<int> oracle_nodes{121, 121};
    double gamma = 0.999;
    int action_levels = 11;
    int disturbance_lattice = 0;
    double fixpoint_tol = 1e-9;
    int max_sweeps = 100000;
    // training
    TrainConfig train;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    // closed loop
    long closed_loop_steps = 2000;
    double nominal_input = 5.0;
    double adversarial_probability = 0.5;
    long fault_start = 40, fault_length = 60;
    long fault_run_steps = 200;
    // checks
    int tube_states = 50;
    int tube_rollouts = 1000;
    double min_area_ratio = 0.6;
    double max_mean_solve_time = 1.0;
    double min_probe_fraction = 0.5;
    std::string out_dir = "out";
    int jobs = 1;

    void validate() const;
    SystemSetup system_setup() const;
    RAConfig ra_config(const SystemSetup& setup) const;
};

ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig default_experiment_config();

/// rows x cols node grid over the bounding box of X, x1 varying slowest.
std::vector<Vec> sweep_points(const Polytope& X, int rows, int cols);

struct SweepRow {
    Vec x;
    SolveStatus status = SolveStatus::SolverError;
    double V_ra = std::numeric_limits<double>::quiet_NaN();
    double solve_time = 0.0;
    int iterations = 0;
    double affine_residual = std::numeric_limits<double>::quiet_NaN();
    double realization_residual = std::numeric_limits<double>::quiet_NaN();
    /// Tube rollouts of a verified point stayed within the certificate;
    /// unset when not checked.
    std::optional<bool> tube_sound;

    bool verified() const;
};

struct SweepOptions {
    int horizon = 25;
    int jobs = 1;
    /// Disturbed tube rollouts run for every verified point (0 disables).
    int soundness_rollouts = 0;
};

/// One verification per grid point with u = policy(x). Points are split
/// over `jobs` threads and returned in grid order.
std::vector<SweepRow> sweep_safe_set(const SystemSetup& setup, const Vec& mu, const Policy& policy,
                                     const std::vector<Vec>& points, const SweepOptions& opts,
                                     const std::function<void(std::size_t, const SweepRow&)>& progress = {});

/// CSV "x1,x2,V_ra,solve_time,status,iterations,affine_residual,realization_residual".
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
/// Reads the columns written by write_sweep_csv (the trailing three are
/// optional). Throws ParseError naming the offending line.
std::vector<SweepRow> read_sweep_csv(std::istream& in);

struct TimingStats {
    int count = 0;
    double mean = 0.0, std = 0.0, max = 0.0;  // std uses the n-1 denominator
};

/// Statistics of solve_time over solved rows.
TimingStats timing_report(const std::vector<SweepRow>& rows);

/// Zero-sublevel cells and containment versus the grid-DP oracle.
struct SetComparison {
    int verified = 0;        // sweep points with V <= 0
    int oracle = 0;          // sweep points where the oracle is <= 0
    int verified_in_oracle = 0;
    int outside_dilated = 0;  // verified points outside the one-cell dilation
    double area_ratio = 0.0;  // verified / oracle
    std::vector<std::size_t> exceptions;
};

/// Oracle values are resampled at the sweep points; the dilation test asks
/// whether any oracle node of the 4x4 node block around the point's oracle
/// cell is <= 0.
SetComparison compare_with_oracle(const std::vector<SweepRow>& rows, const GridValueFunction& oracle,
                                  const std::function<double(const Vec&)>& outside);

struct Segment {
    double x0, y0, x1, y1;
};

/// Zero-level line segments of a node field (marching squares). The field
/// is padded with a positive ring half a cell outside the grid, so a
/// sublevel set touching the border is closed along it.
std::vector<Segment> zero_contour(const Vec& ax, const Vec& ay, const Mat& values);

struct ContourLayer {
    std::vector<Segment> segments;
    std::string color;
    std::string label;
};

/// Static SVG over the box [lo, hi] with labeled axes and one polyline
/// set per layer.
void write_contour_svg(std::ostream& out, const Vec& lo, const Vec& hi, const std::vector<ContourLayer>& layers);

/// Sweep rows as a rows x cols field (x1 along rows), unsolved points +inf.
Mat sweep_field(const std::vector<SweepRow>& rows, int nrows, int ncols);

enum class DisturbanceMode { Vertex, Adversarial };

struct ClosedLoopOptions {
    long steps = 2000;
    Vec x0;  // default: origin
    std::function<Vec(const Vec&, long)> nominal;  // default: constant max input
    DisturbanceMode disturbance = DisturbanceMode::Adversarial;
    double adversarial_probability = 0.5;
    std::uint64_t seed = 11;
    std::function<bool(long)> fault;
    int horizon = 25;
};

struct ClosedLoopReport {
    long steps = 0;
    long violations = 0;  // steps with h(x) > 0
    double worst_margin = -1e300;
    long verified = 0, tracking = 0, terminal = 0, clipped = 0;
    TimingStats timing;
    std::vector<FilterTelemetry> telemetry;
    std::vector<Vec> states;  // x_0..x_steps
};

/// Closed loop of the true disturbed dynamics under the safety filter.
/// Adversarial sampling picks, with the given probability, the vertex of D
/// that maximizes the next state's constraint margin; otherwise a random
/// vertex.
ClosedLoopReport closed_loop_experiment(const SystemSetup& setup, const Vec& mu, const Policy& policy,
                                        const TerminalController& terminal, const ClosedLoopOptions& opts);

}  // namespace psf
