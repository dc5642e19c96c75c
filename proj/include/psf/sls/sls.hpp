#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "psf/socp/conic.hpp"
#include "psf/sysmodel/config.hpp"
#include "psf/sysmodel/linearize.hpp"

namespace psf {

using Policy = std::function<Vec(const Vec&)>;

/// Rollout z_0 = x_bar, v_0 = u_bar, z_{k+1} = f(z_k, v_k), v_{k+1} = policy(z_{k+1}).
NominalTrajectory generate_nominal(const DisturbedModel& model, const Vec& x_bar, const Vec& u_bar,
                                   const Policy& policy, int T);

/// Stacked LTV operators over k = 1..T:
///   A = blkdiag(Af_1, ..., Af_{T-1}, 0),  B = blkdiag(Bf_1, ..., Bf_{T-1}, 0),
///   Z = block downshift by one n_x block.
struct BlockLtv {
    Mat A;  // T*nx x T*nx
    Mat B;  // T*nx x T*nu
    Mat Z;  // T*nx x T*nx
};

BlockLtv assemble_blocks(const LinearizationBundle& bundle, int T);

/// Variable layout of the tube program. Block (k, j) with 1 <= j <= k <= T.
struct SlsLayout {
    int nx = 0, nu = 0, T = 0;
    int phi_x = 0;   // first Phi_x entry
    int phi_u = 0;   // first Phi_u entry
    int sigma = 0;   // sigma_{k,i}, k = 0..T-1
    int lambda = 0;  // lambda_k, k = 1..T-1
    int eta = 0;     // eta_k, k = 1..T-1
    int value = 0;   // V_ra
    int abs_phi = 0; // |Phi| slack per Phi_x / Phi_u entry (same ordering)
    int num_vars = 0;

    static int block_index(int k, int j) { return (k - 1) * k / 2 + (j - 1); }
    int phi_x_var(int k, int j, int r, int c) const {
        return phi_x + block_index(k, j) * nx * nx + r * nx + c;
    }
    int phi_u_var(int k, int j, int r, int c) const {
        return phi_u + block_index(k, j) * nu * nx + r * nx + c;
    }
    int sigma_var(int k, int i) const { return sigma + k * nx + i; }
    int lambda_var(int k) const { return lambda + (k - 1); }
    int eta_var(int k) const { return eta + (k - 1); }
    int abs_var(int phi_index) const { return abs_phi + (phi_index - phi_x); }
};

/// Row counts of each constraint family before slack expansion.
struct SlsFamilyCounts {
    int affine = 0;         // equality rows of [I - ZA, -ZB][Phi_x; Phi_u] = Sigma
    int filter_initial = 0; // k = 0 disturbance filter rows
    int filter = 0;         // k >= 1 disturbance filter rows
    int eta_bound = 0;
    int state = 0;          // including k = 0
    int input = 0;          // including k = 0
    int terminal = 0;
    int cones = 0;
    int abs_rows = 0;       // slack expansion rows
};

/// Everything the tube program is built from.
struct SlsInstance {
    NominalTrajectory traj;
    LinearizationBundle bundle;
    Polytope X, U, D, R;
    std::vector<Mat> g_nominal;  // g(z_k, v_k), k = 0..T-1
    Mat d_vertices;              // nd x |V_D|

    int horizon() const { return traj.horizon(); }
};

SlsInstance make_instance(const DisturbedModel& model, const NominalTrajectory& traj,
                          const LinearizationBundle& bundle, const SystemSetup& setup);

struct SlsProgram {
    ConicProgram conic;
    SlsLayout layout;
    SlsFamilyCounts counts;
};

/// Conic program minimizing the worst-case reach-avoid value of the tube.
/// Throws ConfigError when mu is missing or dimensions disagree.
SlsProgram build_socp(const SlsInstance& inst);

struct SystemResponse {
    Mat Phi_x;  // T*nx x T*nx, block lower-triangular
    Mat Phi_u;  // T*nu x T*nx, block lower-triangular
};

struct VerificationResult {
    SolveStatus status = SolveStatus::SolverError;
    std::string detail;
    double V_ra_star = 0.0;
    SystemResponse Phi;
    Mat Sigma;   // T x nx, row k holds sigma_{k,.}
    Vec lambda;  // entry k-1 for k = 1..T-1
    Vec eta;
    Mat K;       // T*nu x T*nx, block lower-triangular
    double solve_time = 0.0;
    int iterations = 0;

    /// V* <= 0 judged at the solver's feasibility tolerance.
    static constexpr double kAcceptTolerance = 1e-8;
    bool verified() const { return status == SolveStatus::Solved && V_ra_star <= kAcceptTolerance; }
    /// Block (k, j) of K, 1-based as in u_k = v_k + sum_j K^{k,j} dx_j.
    Mat K_block(int k, int j) const;
};

VerificationResult solve_socp(const SlsProgram& program, const ConicSolverOptions& opts = {});

/// K such that K * Phi_x = Phi_u, solved block by block; singular diagonal
/// blocks fall back to a least-squares solve.
Mat recover_gain(const SystemResponse& phi, int nx, int nu, int T);

/// max |[I - ZA, -ZB][Phi_x; Phi_u] - Sigma|.
double affine_residual(const VerificationResult& res, const BlockLtv& blocks);
/// max |K Phi_x - Phi_u|.
double realization_residual(const VerificationResult& res);

/// Largest violation of each constraint family evaluated directly from the
/// returned system response (independent of the conic matrices).
struct ConstraintAudit {
    double affine = 0, filter_initial = 0, filter = 0, eta_bound = 0, state = 0, input = 0,
           terminal = 0, cone = 0, causality = 0;
    double worst() const;
};

ConstraintAudit audit_constraints(const SlsInstance& inst, const VerificationResult& res);

/// Generate the nominal rollout from (x_bar, u_bar), linearize it and solve
/// the tube program.
struct Verification {
    SlsInstance instance;
    VerificationResult result;
};

Verification verify_action(const SystemSetup& setup, const Vec& mu, const Policy& policy,
                           const Vec& x_bar, const Vec& u_bar, int T,
                           const ConicSolverOptions& opts = {});

struct TubeCheckOptions {
    int rollouts = 1000;
    /// Probability that a disturbance sample is a vertex of D.
    double vertex_probability = 0.8;
    std::uint64_t seed = 1;
};

/// Worst observed margins over disturbed closed-loop rollouts of the true
/// dynamics under u_k = v_k + sum_{j<=k} K^{k,j} dx_j.
struct TubeCheckReport {
    double max_value = -1e300;          // max over rollouts of max{max_k h(x_k), l(x_T)}
    double max_state_margin = -1e300;   // k = 0..T
    double max_terminal_margin = -1e300;
    double max_input_margin_initial = -1e300;  // k = 0
    double max_input_margin = -1e300;          // k = 1..T
    int rollouts = 0;

    /// Every margin within its certified bound (V_ra* for state, terminal
    /// and initial input; 0 for later inputs).
    bool sound(double V_ra_star, double tol = 1e-6) const;
};

TubeCheckReport tube_soundness_check(const VerificationResult& res, const SlsInstance& inst,
                                     const DisturbedModel& model, const TubeCheckOptions& opts = {});

/// CSV row "x1,...,V_ra,solve_time,status".
std::string verification_csv_header(int nx);
std::string verification_csv_row(const Vec& x, const VerificationResult& res);

}  // namespace psf
