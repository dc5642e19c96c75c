#pragma once

#include <memory>
#include <string>

#include "psf/sysmodel/types.hpp"

namespace psf {

/// Discrete-time dynamics x+ = f(x, u) + g(x, u) d.
class DisturbedModel {
public:
    virtual ~DisturbedModel() = default;

    virtual int nx() const = 0;
    virtual int nu() const = 0;
    virtual int nd() const = 0;
    virtual double dt() const = 0;
    virtual std::string name() const = 0;

    /// Nominal map.
    virtual Vec f(const Vec& x, const Vec& u) const = 0;
    /// Disturbance channel, nx x nd.
    virtual Mat g(const Vec& x, const Vec& u) const = 0;

    /// Jacobians of f. Default: central differences with step 1e-6.
    virtual void jacobian_f(const Vec& x, const Vec& u, Mat& A, Mat& B) const;

    /// Stacked row-Jacobians of g: Ag(i*nd + j, c) = d g_ij / d x_c,
    /// Bg(i*nd + j, c) = d g_ij / d u_c. Default: central differences.
    virtual void jacobian_g(const Vec& x, const Vec& u, Mat& Ag, Mat& Bg) const;
};

/// f(x, u); throws NumericError when the result is not finite.
Vec step_nominal(const DisturbedModel& model, const Vec& x, const Vec& u);

/// f(x, u) + g(x, u) d; throws NumericError when the result is not finite.
Vec step_disturbed(const DisturbedModel& model, const Vec& x, const Vec& u, const Vec& d);

/// Continuous-time vector field xdot = a(x, u) + b(x, u) d.
class ContinuousDynamics {
public:
    virtual ~ContinuousDynamics() = default;
    virtual int nx() const = 0;
    virtual int nu() const = 0;
    virtual int nd() const = 0;
    virtual std::string name() const = 0;

    virtual Vec flow(const Vec& x, const Vec& u) const = 0;
    virtual Mat channel(const Vec& x, const Vec& u) const = 0;

    /// Analytic Jacobians of flow. Return false when not provided.
    virtual bool flow_jacobian(const Vec& /*x*/, const Vec& /*u*/, Mat& /*A*/, Mat& /*B*/) const {
        return false;
    }
};

/// RK4 discretization of the nominal flow with the disturbance channel
/// held at the step's start point: f = RK4(a), g = dt * b(x, u).
class Rk4Model : public DisturbedModel {
public:
    Rk4Model(std::shared_ptr<const ContinuousDynamics> ct, double dt);

    int nx() const override { return ct_->nx(); }
    int nu() const override { return ct_->nu(); }
    int nd() const override { return ct_->nd(); }
    double dt() const override { return dt_; }
    std::string name() const override { return ct_->name(); }

    Vec f(const Vec& x, const Vec& u) const override;
    Mat g(const Vec& x, const Vec& u) const override;

    /// Chain rule through the RK4 stages when the flow supplies Jacobians.
    void jacobian_f(const Vec& x, const Vec& u, Mat& A, Mat& B) const override;

    const ContinuousDynamics& continuous() const { return *ct_; }

private:
    std::shared_ptr<const ContinuousDynamics> ct_;
    double dt_;
};

/// xdot = A x + B u + E d.
class LinearDynamics : public ContinuousDynamics {
public:
    LinearDynamics(Mat A, Mat B, Mat E, std::string name = "linear");

    int nx() const override { return static_cast<int>(A_.rows()); }
    int nu() const override { return static_cast<int>(B_.cols()); }
    int nd() const override { return static_cast<int>(E_.cols()); }
    std::string name() const override { return name_; }

    Vec flow(const Vec& x, const Vec& u) const override { return A_ * x + B_ * u; }
    Mat channel(const Vec&, const Vec&) const override { return E_; }
    bool flow_jacobian(const Vec&, const Vec&, Mat& A, Mat& B) const override {
        A = A_;
        B = B_;
        return true;
    }

private:
    Mat A_, B_, E_;
    std::string name_;
};

}  // namespace psf
