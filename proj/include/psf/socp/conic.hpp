#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "psf/sysmodel/types.hpp"

namespace psf {

using SpMat = Eigen::SparseMatrix<double>;

/// minimize c'x  subject to  A x = b,  G x + s = h,  s in K
/// where K = R_+^{lp_dim} x Q^{soc_dims[0]} x ... (second-order cones,
/// first entry of each cone block is the "t" component).
struct ConicProgram {
    Vec c;
    SpMat A;
    Vec b;
    SpMat G;
    Vec h;
    int lp_dim = 0;
    std::vector<int> soc_dims;

    int num_vars() const { return static_cast<int>(c.size()); }
    int num_eq() const { return static_cast<int>(A.rows()); }
    int num_cone_rows() const { return static_cast<int>(G.rows()); }

    /// Throws ConfigError on inconsistent dimensions.
    void validate() const;
};

enum class SolveStatus { Solved, Infeasible, SolverError };

std::string to_string(SolveStatus s);

struct ConicSolverOptions {
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-8;
    int max_iters = 100;
    double static_reg = 1e-8;
    int refine_steps = 8;
    bool verbose = false;
};

struct ConicSolution {
    SolveStatus status = SolveStatus::SolverError;
    std::string detail;
    Vec x, y, z, s;
    double pcost = 0, dcost = 0;
    double pres = 0, dres = 0, gap = 0;
    int iterations = 0;
};

/// Primal-dual interior-point method on the homogeneous self-dual embedding
/// with Nesterov-Todd scaling and Mehrotra correction. The KKT system is
/// factored as a regularized quasi-definite sparse LDL' with iterative
/// refinement.
ConicSolution solve_conic(const ConicProgram& prog, const ConicSolverOptions& opts = {});

/// Max violation of A x = b, G x <= h (LP rows) and cone membership of
/// h - G x, all in absolute terms.
double max_constraint_violation(const ConicProgram& prog, const Vec& x);

/// Sparse-triplet text dump:
///   conic 1
///   dims <n> <p> <m> <lp_dim> <num_soc> <soc dims...>
///   c <n values>
///   b <p values>
///   h <m values>
///   A <nnz>   followed by nnz lines "row col value"
///   G <nnz>   followed by nnz lines "row col value"
/// Zero-based indices, values printed with 17 significant digits.
void write_conic_program(std::ostream& out, const ConicProgram& prog);
ConicProgram read_conic_program(std::istream& in);

}  // namespace psf
