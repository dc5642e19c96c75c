#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "psf/sysmodel/types.hpp"

namespace psf {

/// Half-space polytope {x | H x <= h}.
class Polytope {
public:
    Polytope() = default;
    Polytope(Mat H, Vec h);

    static Polytope box(const Vec& lo, const Vec& hi);

    int dim() const { return static_cast<int>(H_.cols()); }
    int rows() const { return static_cast<int>(H_.rows()); }
    const Mat& H() const { return H_; }
    const Vec& h() const { return h_; }

    /// max_i (H_i x - h_i); <= 0 inside.
    double margin(const Vec& x) const;
    bool contains(const Vec& x, double tol = 1e-9) const;

    /// Axis-aligned bounds when every row has exactly one nonzero entry and
    /// every coordinate is bounded from both sides.
    std::optional<std::pair<Vec, Vec>> as_box() const;

    /// Vertex list. Boxes of any dimension are handled directly; general
    /// polytopes only for dim <= 4 by facet-intersection enumeration.
    /// Throws DomainError for empty or unbounded sets.
    std::vector<Vec> vertices() const;

    /// Smallest axis-aligned box containing the set.
    std::pair<Vec, Vec> bounding_box() const;

    /// {a * p | p in P} for a >= 0.
    Polytope scaled(double a) const;

    /// Center of the bounding box.
    Vec center() const;

private:
    Mat H_;
    Vec h_;
};

}  // namespace psf
