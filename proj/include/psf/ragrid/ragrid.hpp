#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "psf/sysmodel/config.hpp"

namespace psf {

/// Values on a rectangular grid; row-major with the last axis fastest.
class GridValueFunction {
public:
    GridValueFunction() = default;
    explicit GridValueFunction(std::vector<Vec> axes, double fill = 0.0);

    int dim() const { return static_cast<int>(axes_.size()); }
    int size() const { return static_cast<int>(values_.size()); }
    const std::vector<Vec>& axes() const { return axes_; }
    const Vec& values() const { return values_; }
    Vec& values() { return values_; }
    double operator[](int i) const { return values_(i); }
    double& operator[](int i) { return values_(i); }

    Vec node(int flat) const;
    int flat_index(const std::vector<int>& multi) const;
    bool inside(const Vec& x) const;

    /// Multilinear interpolation; outside the grid box returns outside(x).
    double interpolate(const Vec& x, const std::function<double(const Vec&)>& outside) const;

    /// Binary layout: "PSFGRID1", int32 dim, per axis int32 n + n doubles,
    /// then int64 count + row-major doubles (little-endian host order).
    void save(std::ostream& out) const;
    static GridValueFunction load(std::istream& in);
    /// CSV "x1,...,xn,value", one row per node.
    void write_csv(std::ostream& out) const;

private:
    std::vector<Vec> axes_;
    std::vector<int> strides_;
    Vec values_;
};

Vec linspace(double lo, double hi, int n);

/// Dynamics and margins seen by the grid solver.
struct GridProblem {
    std::vector<Vec> axes;
    std::function<Vec(const Vec& x, const Vec& u, const Vec& d)> step;
    std::function<double(const Vec&)> h;  // avoid margin (<= 0 inside X)
    std::function<double(const Vec&)> l;  // reach margin (<= 0 inside R)
};

/// Grid over the bounding box of X with the model's disturbed step.
GridProblem make_grid_problem(const SystemSetup& setup, const std::vector<int>& nodes_per_axis);

struct RAConfig {
    double gamma = 0.999;
    std::vector<Vec> actions;
    std::vector<Vec> disturbances;
    double fixpoint_tol = 1e-9;
    int max_sweeps = 100000;
    int jobs = 1;

    void validate() const;
};

/// Uniform levels per input dimension (product grid) over the bounding box of U.
std::vector<Vec> uniform_actions(const Polytope& U, int levels);
/// Vertices of D, optionally with an interior lattice of `lattice` points per axis.
std::vector<Vec> disturbance_samples(const Polytope& D, int lattice = 0);

/// Per-node index into RAConfig::actions (or ::disturbances).
struct GridPolicy {
    std::vector<int> index;

    bool operator==(const GridPolicy& o) const { return index == o.index; }
    void save(std::ostream& out) const;
    static GridPolicy load(std::istream& in);
};

struct PolicyIterationResult {
    GridPolicy policy;
    GridValueFunction value;
    std::vector<GridValueFunction> history;
    std::vector<int> evaluation_sweeps;
    int iterations = 0;
};

struct ValueIterationResult {
    GridValueFunction value;
    int sweeps = 0;
    std::vector<double> residuals;  // sup-norm change per sweep
};

/// Discounted robust reach-avoid dynamic programming on a grid. Successor
/// stencils for every (node, action, disturbance) are computed once.
class ReachAvoidGrid {
public:
    ReachAvoidGrid(GridProblem problem, RAConfig cfg);

    const RAConfig& config() const { return cfg_; }
    const GridProblem& problem() const { return prob_; }
    int num_nodes() const { return num_nodes_; }
    GridValueFunction terminal_value() const;  // max{l, h} per node
    GridValueFunction blank() const { return GridValueFunction(prob_.axes); }

    double interpolate(const GridValueFunction& V, const Vec& x) const;

    GridValueFunction apply_T(const GridValueFunction& V) const;
    GridValueFunction apply_T_pi(const GridValueFunction& V, const GridPolicy& pi) const;
    GridValueFunction apply_T_pi_mu(const GridValueFunction& V, const GridPolicy& pi,
                                    const GridPolicy& mu) const;

    /// Fixed point of T_pi starting from `start` (default max{l,h}).
    /// Throws ConvergenceError after max_sweeps.
    GridValueFunction policy_evaluation(const GridPolicy& pi, const GridValueFunction* start = nullptr,
                                        int* sweeps = nullptr) const;
    GridPolicy policy_improvement(const GridValueFunction& V) const;
    /// Evaluations after the first are warm-started from the previous value.
    PolicyIterationResult policy_iteration(const GridPolicy& pi0) const;
    ValueIterationResult value_iteration() const;

    /// Disturbance maximizing the successor value for u = pi(x).
    GridPolicy worst_disturbance(const GridValueFunction& V, const GridPolicy& pi) const;

private:
    double successor_value(const GridValueFunction& V, int s) const;
    double backup(int node, double q) const;
    template <class F>
    GridValueFunction sweep(F&& per_node) const;

    GridProblem prob_;
    RAConfig cfg_;
    int num_nodes_ = 0;
    int corners_ = 0;
    int na_ = 0, nd_ = 0;
    Vec h_, l_;
    std::vector<int> stencil_idx_;
    std::vector<double> stencil_w_;
    std::vector<double> outside_;  // NaN when the successor is on the grid
};

}  // namespace psf
