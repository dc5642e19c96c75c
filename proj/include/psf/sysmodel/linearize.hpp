#pragma once

#include <cstdint>
#include <vector>

#include "psf/sysmodel/model.hpp"
#include "psf/sysmodel/polytope.hpp"

namespace psf {

/// Nominal pairs (z_k, v_k), k = 0..T.
struct NominalTrajectory {
    std::vector<Vec> z;
    std::vector<Vec> v;

    int horizon() const { return static_cast<int>(z.size()) - 1; }
};

/// Per-step Jacobians along a nominal trajectory plus the curvature bound.
struct LinearizationBundle {
    std::vector<Mat> Af;  // nx x nx
    std::vector<Mat> Bf;  // nx x nu
    std::vector<Mat> Ag;  // (nx*nd) x nx
    std::vector<Mat> Bg;  // (nx*nd) x nu
    Vec mu;               // nx, >= 0

    int steps() const { return static_cast<int>(Af.size()); }
};

/// Jacobians at (z_k, v_k) for k = 0..T-1. With check_domain set, a
/// nominal point outside X x U raises DomainError since the curvature
/// bound only holds there.
LinearizationBundle linearize_trajectory(const DisturbedModel& model, const NominalTrajectory& traj,
                                         const Polytope& X, const Polytope& U, const Vec& mu,
                                         bool check_domain = true);

/// Total linearization remainder r of the disturbed map at (x, u, d) about
/// the nominal pair (z, v).
Vec linearization_remainder(const DisturbedModel& model, const Vec& z, const Vec& v, const Vec& x,
                            const Vec& u, const Vec& d);

struct CurvatureOptions {
    int samples = 100000;
    double inflation = 1.5;
    std::uint64_t seed = 7;
    /// Share of samples drawn as local perturbations of the nominal pair
    /// (log-uniform radius); the rest are independent uniform pairs.
    double local_fraction = 0.5;
};

/// Worst observed |r_i| / ||e||_inf^2 over sampled (z, v, x, u, d) in
/// (X x U)^2 x D, scaled by the inflation factor.
Vec curvature_bounds(const DisturbedModel& model, const Polytope& X, const Polytope& U,
                     const Polytope& D, const CurvatureOptions& opts = {});

}  // namespace psf
