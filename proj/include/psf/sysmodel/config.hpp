#pragma once

#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "psf/sysmodel/linearize.hpp"
#include "psf/sysmodel/model.hpp"
#include "psf/sysmodel/polytope.hpp"

namespace psf {

using Json = nlohmann::json;

/// Model, constraint sets and curvature settings of one problem instance.
struct SystemSetup {
    std::shared_ptr<const DisturbedModel> model;
    Polytope X;  // state constraints
    Polytope U;  // input constraints
    Polytope D;  // disturbance set
    Polytope R;  // terminal safe set
    CurvatureOptions curvature;
    std::optional<Vec> mu_override;

    /// max_i (H_x x - h_x)_i
    double h_margin(const Vec& x) const { return X.margin(x); }
    /// max_i (R_x x - r_x)_i
    double l_margin(const Vec& x) const { return R.margin(x); }

    /// The configured override, otherwise the sampled bound.
    Vec curvature_mu() const;
};

Json load_json_file(const std::string& path);

/// Scalar that may be written as a number or as an expression such as
/// "pi/3", "-pi/12" or "2*pi".
double json_scalar(const Json& j);
Vec json_vector(const Json& j);
Mat json_matrix(const Json& j);

/// A set given as {"lo": [...], "hi": [...]} or {"H": [[...]], "h": [...]}.
Polytope json_polytope(const Json& j);

/// Built-in model registry keyed by "name": "pendulum" (gravity, length,
/// mass) or "linear" (A, B, E); both discretized with RK4 over "dt".
std::shared_ptr<const DisturbedModel> make_model(const Json& model_cfg);

SystemSetup make_system(const Json& cfg);

/// The pendulum instance with its default sets.
Json default_pendulum_config();

}  // namespace psf
