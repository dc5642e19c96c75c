#pragma once

#include "psf/sysmodel/model.hpp"

namespace psf {

struct PendulumParams {
    double gravity = 10.0;
    double length = 1.0;
    double mass = 1.0;
};

/// Inverted pendulum: x1 angle (rad), x2 rate (rad/s), u torque.
///   x1dot = x2 + d1
///   x2dot = 3g/(2l) sin x1 + 3/(m l^2) u + d2 + d3 u
class PendulumDynamics : public ContinuousDynamics {
public:
    explicit PendulumDynamics(PendulumParams p = {}) : p_(p) {}

    int nx() const override { return 2; }
    int nu() const override { return 1; }
    int nd() const override { return 3; }
    std::string name() const override { return "pendulum"; }

    Vec flow(const Vec& x, const Vec& u) const override;
    Mat channel(const Vec& x, const Vec& u) const override;
    bool flow_jacobian(const Vec& x, const Vec& u, Mat& A, Mat& B) const override;

    const PendulumParams& params() const { return p_; }

private:
    PendulumParams p_;
};

}  // namespace psf
