#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "psf/sls/sls.hpp"

namespace psf {

/// Stabilizing solution of the discrete algebraic Riccati equation.
Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, double tol = 1e-12, int max_iters = 100000);
/// Gain K of u = -K x for the infinite-horizon discrete LQR.
Mat lqr_gain(const Mat& A, const Mat& B, const Mat& Q, const Mat& R);

/// Saturated linear feedback u = clip(-K x) onto the box of U.
class TerminalController {
public:
    TerminalController() = default;
    TerminalController(Mat K, Vec u_lo, Vec u_hi);

    Vec operator()(const Vec& x) const;
    const Mat& gain() const { return K_; }

private:
    Mat K_;
    Vec lo_, hi_;
};

struct TerminalValidationOptions {
    int initial_states = 1000;  // vertices of R first, then uniform samples
    int steps = 1000;
    std::uint64_t seed = 3;
};

struct TerminalValidation {
    bool safe = false;
    double worst_state_margin = -1e300;
    int rollouts = 0;
};

/// Monte-Carlo check that trajectories from R under the controller and
/// vertex-sampled disturbances never leave X.
TerminalValidation validate_terminal(const TerminalController& ctrl, const SystemSetup& setup,
                                     const TerminalValidationOptions& opts = {});

struct LqrDesignOptions {
    Vec q_diag;  // empty: diag(10, 1, 1, ...)
    double r = 0.1;
    int max_retunes = 8;  // doubling Q(0,0) each time
    TerminalValidationOptions validation;
};

struct TerminalDesign {
    TerminalController controller;
    Mat Q;
    int retunes = 0;
    TerminalValidation validation;
};

/// LQR on the origin linearization of the nominal map, retuned by doubling
/// Q(0,0) until the Monte-Carlo validation passes. Throws ConvergenceError
/// if it never does.
TerminalDesign design_terminal_controller(const SystemSetup& setup, const LqrDesignOptions& opts = {});

enum class FilterMode { Fresh, Tracking, Terminal };
std::string to_string(FilterMode m);

enum class FilterBranch { Verified, Tracking, Terminal };
std::string to_string(FilterBranch b);

/// First verification failed: there is no certified plan to fall back on.
class InitialFeasibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FilterTelemetry {
    long step = 0;
    Vec x, u_nom, u_safe;
    FilterMode mode = FilterMode::Fresh;  // after the step
    int k = 0;                            // plan age after the step
    FilterBranch branch = FilterBranch::Verified;
    SolveStatus status = SolveStatus::SolverError;
    double V_ra_star = 0.0;  // NaN unless solved
    double solve_time = 0.0;
    bool clipped = false;  // tube input had to be clipped onto U
    bool injected = false;
};

struct FilterState {
    FilterMode mode = FilterMode::Fresh;
    int k = 0;
    bool has_plan = false;
    NominalTrajectory plan;
    Mat K;
    std::vector<Vec> dx;  // dx_1..dx_k of the stored plan
};

struct FilterOptions {
    int horizon = 25;
    ConicSolverOptions solver;
    /// When it returns true for a step index, the verification is treated as
    /// a solver failure without solving.
    std::function<bool(long)> fault;
};

/// Runtime safety filter: pass the nominal input when the tube program
/// certifies it, otherwise replay the stored tube controller, then the
/// terminal controller.
class SafetyFilter {
public:
    SafetyFilter(SystemSetup setup, Vec mu, Policy policy, TerminalController terminal, FilterOptions opts = {});

    FilterTelemetry step(const Vec& x, const Vec& u_nom);
    const FilterState& state() const { return state_; }
    long steps_taken() const { return step_; }

private:
    SystemSetup setup_;
    Vec mu_;
    Policy policy_;
    TerminalController terminal_;
    FilterOptions opts_;
    Vec u_lo_, u_hi_;
    FilterState state_;
    long step_ = 0;
};

/// CSV columns: step,x1..xn,u_nom,u_safe,mode,k,branch,status,V_ra,solve_time,clipped,injected
std::string telemetry_csv_header(int nx, int nu);
std::string telemetry_csv_row(const FilterTelemetry& t);

}  // namespace psf
