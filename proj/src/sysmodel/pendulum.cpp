#include "psf/sysmodel/pendulum.hpp"

#include <cmath>

namespace psf {

Vec PendulumDynamics::flow(const Vec& x, const Vec& u) const {
    Vec dx(2);
    dx(0) = x(1);
    dx(1) = 1.5 * p_.gravity / p_.length * std::sin(x(0)) +
            3.0 / (p_.mass * p_.length * p_.length) * u(0);
    return dx;
}

Mat PendulumDynamics::channel(const Vec& /*x*/, const Vec& u) const {
    Mat G = Mat::Zero(2, 3);
    G(0, 0) = 1.0;
    G(1, 1) = 1.0;
    G(1, 2) = u(0);
    return G;
}

bool PendulumDynamics::flow_jacobian(const Vec& x, const Vec& /*u*/, Mat& A, Mat& B) const {
    A.resize(2, 2);
    A << 0.0, 1.0, 1.5 * p_.gravity / p_.length * std::cos(x(0)), 0.0;
    B.resize(2, 1);
    B << 0.0, 3.0 / (p_.mass * p_.length * p_.length);
    return true;
}

}  // namespace psf
