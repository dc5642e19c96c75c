#include "psf/sysmodel/model.hpp"

#include "psf/errors.hpp"

namespace psf {

namespace {
constexpr double kFdStep = 1e-6;
}

void DisturbedModel::jacobian_f(const Vec& x, const Vec& u, Mat& A, Mat& B) const {
    const int n = nx();
    const int m = nu();
    A.resize(n, n);
    B.resize(n, m);
    Vec xp = x, xm = x;
    for (int c = 0; c < n; ++c) {
        xp(c) = x(c) + kFdStep;
        xm(c) = x(c) - kFdStep;
        A.col(c) = (f(xp, u) - f(xm, u)) / (2 * kFdStep);
        xp(c) = xm(c) = x(c);
    }
    Vec up = u, um = u;
    for (int c = 0; c < m; ++c) {
        up(c) = u(c) + kFdStep;
        um(c) = u(c) - kFdStep;
        B.col(c) = (f(x, up) - f(x, um)) / (2 * kFdStep);
        up(c) = um(c) = u(c);
    }
}

void DisturbedModel::jacobian_g(const Vec& x, const Vec& u, Mat& Ag, Mat& Bg) const {
    const int n = nx();
    const int m = nu();
    const int q = nd();
    Ag.resize(n * q, n);
    Bg.resize(n * q, m);
    // Row-major flattening of g matches the stacked layout.
    auto flat = [&](const Mat& G) {
        Vec out(n * q);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < q; ++j) out(i * q + j) = G(i, j);
        return out;
    };
    Vec xp = x, xm = x;
    for (int c = 0; c < n; ++c) {
        xp(c) = x(c) + kFdStep;
        xm(c) = x(c) - kFdStep;
        Ag.col(c) = (flat(g(xp, u)) - flat(g(xm, u))) / (2 * kFdStep);
        xp(c) = xm(c) = x(c);
    }
    Vec up = u, um = u;
    for (int c = 0; c < m; ++c) {
        up(c) = u(c) + kFdStep;
        um(c) = u(c) - kFdStep;
        Bg.col(c) = (flat(g(x, up)) - flat(g(x, um))) / (2 * kFdStep);
        up(c) = um(c) = u(c);
    }
}

Vec step_nominal(const DisturbedModel& model, const Vec& x, const Vec& u) {
    Vec next = model.f(x, u);
    if (!next.allFinite()) throw NumericError("nominal step produced a non-finite state");
    return next;
}

Vec step_disturbed(const DisturbedModel& model, const Vec& x, const Vec& u, const Vec& d) {
    Vec next = model.f(x, u) + model.g(x, u) * d;
    if (!next.allFinite()) throw NumericError("disturbed step produced a non-finite state");
    return next;
}

Rk4Model::Rk4Model(std::shared_ptr<const ContinuousDynamics> ct, double dt)
    : ct_(std::move(ct)), dt_(dt) {
    if (!ct_) throw ConfigError("Rk4Model: null dynamics");
    if (!(dt_ > 0)) throw ConfigError("Rk4Model: dt must be positive");
}

Vec Rk4Model::f(const Vec& x, const Vec& u) const {
    const double h = dt_;
    const Vec k1 = ct_->flow(x, u);
    const Vec k2 = ct_->flow(x + 0.5 * h * k1, u);
    const Vec k3 = ct_->flow(x + 0.5 * h * k2, u);
    const Vec k4 = ct_->flow(x + h * k3, u);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Mat Rk4Model::g(const Vec& x, const Vec& u) const { return dt_ * ct_->channel(x, u); }

void Rk4Model::jacobian_f(const Vec& x, const Vec& u, Mat& A, Mat& B) const {
    Mat A1, B1;
    if (!ct_->flow_jacobian(x, u, A1, B1)) {
        DisturbedModel::jacobian_f(x, u, A, B);
        return;
    }
    const double h = dt_;
    const int n = nx();
    const Mat I = Mat::Identity(n, n);

    const Vec k1 = ct_->flow(x, u);
    const Vec x2 = x + 0.5 * h * k1;
    const Vec k2 = ct_->flow(x2, u);
    const Vec x3 = x + 0.5 * h * k2;
    const Vec k3 = ct_->flow(x3, u);
    const Vec x4 = x + h * k3;

    Mat A2, B2, A3, B3, A4, B4;
    ct_->flow_jacobian(x2, u, A2, B2);
    ct_->flow_jacobian(x3, u, A3, B3);
    ct_->flow_jacobian(x4, u, A4, B4);

    // dk_i/dx and dk_i/du through the stage arguments.
    const Mat K1x = A1;
    const Mat K1u = B1;
    const Mat K2x = A2 * (I + 0.5 * h * K1x);
    const Mat K2u = A2 * (0.5 * h * K1u) + B2;
    const Mat K3x = A3 * (I + 0.5 * h * K2x);
    const Mat K3u = A3 * (0.5 * h * K2u) + B3;
    const Mat K4x = A4 * (I + h * K3x);
    const Mat K4u = A4 * (h * K3u) + B4;

    A = I + (h / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x);
    B = (h / 6.0) * (K1u + 2.0 * K2u + 2.0 * K3u + K4u);
}

LinearDynamics::LinearDynamics(Mat A, Mat B, Mat E, std::string name)
    : A_(std::move(A)), B_(std::move(B)), E_(std::move(E)), name_(std::move(name)) {
    if (A_.rows() != A_.cols() || B_.rows() != A_.rows() || E_.rows() != A_.rows()) {
        throw ConfigError("LinearDynamics: inconsistent dimensions");
    }
}

}  // namespace psf
