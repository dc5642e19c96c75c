#pragma once

#include <Eigen/Dense>

namespace psf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

}  // namespace psf
