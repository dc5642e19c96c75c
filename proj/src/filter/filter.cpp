#include "psf/filter/filter.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "psf/errors.hpp"

namespace psf {

Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, double tol, int max_iters) {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols() ||
        R.cols() != B.cols())
        throw ConfigError("solve_dare: dimension mismatch");
    Mat P = Q;
    double change = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iters; ++it) {
        const Mat BtP = B.transpose() * P;
        const Mat G = (R + BtP * B).ldlt().solve(BtP * A);
        Mat next = Q + A.transpose() * P * A - A.transpose() * P * B * G;
        next = 0.5 * (next + next.transpose());
        if (!next.allFinite()) throw NumericError("solve_dare: iteration diverged");
        change = (next - P).lpNorm<Eigen::Infinity>();
        P = std::move(next);
        if (change <= tol * (1.0 + P.lpNorm<Eigen::Infinity>())) return P;
    }
    throw ConvergenceError("solve_dare: Riccati iteration did not converge", change);
}

Mat lqr_gain(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
    const Mat P = solve_dare(A, B, Q, R);
    const Mat BtP = B.transpose() * P;
    return (R + BtP * B).ldlt().solve(BtP * A);
}

TerminalController::TerminalController(Mat K, Vec u_lo, Vec u_hi)
    : K_(std::move(K)), lo_(std::move(u_lo)), hi_(std::move(u_hi)) {
    if (K_.rows() != lo_.size() || lo_.size() != hi_.size()) throw ConfigError("terminal controller size mismatch");
}

Vec TerminalController::operator()(const Vec& x) const { return (-(K_ * x)).cwiseMax(lo_).cwiseMin(hi_); }

TerminalValidation validate_terminal(const TerminalController& ctrl, const SystemSetup& setup,
                                     const TerminalValidationOptions& opts) {
    const DisturbedModel& model = *setup.model;
    std::mt19937_64 rng(opts.seed);
    const auto dverts = setup.D.vertices();
    std::uniform_int_distribution<std::size_t> pick(0, dverts.size() - 1);
    const auto rverts = setup.R.vertices();
    const auto [lo, hi] = setup.R.bounding_box();
    TerminalValidation out;
    out.safe = true;
    for (int r = 0; r < opts.initial_states; ++r) {
        Vec x;
        if (r < static_cast<int>(rverts.size())) {
            x = rverts[static_cast<std::size_t>(r)];
        } else {
            do {
                x.resize(lo.size());
                for (Eigen::Index i = 0; i < lo.size(); ++i)
                    x(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
            } while (!setup.R.contains(x));
        }
        for (int k = 0; k < opts.steps; ++k) {
            x = step_disturbed(model, x, ctrl(x), dverts[pick(rng)]);
            const double m = setup.X.margin(x);
            out.worst_state_margin = std::max(out.worst_state_margin, m);
            if (m > 0.0) out.safe = false;
        }
        ++out.rollouts;
    }
    return out;
}

TerminalDesign design_terminal_controller(const SystemSetup& setup, const LqrDesignOptions& opts) {
    const DisturbedModel& model = *setup.model;
    const int nx = model.nx(), nu = model.nu();
    Mat A, B;
    model.jacobian_f(Vec::Zero(nx), Vec::Zero(nu), A, B);
    Vec q = opts.q_diag;
    if (q.size() == 0) {
        q = Vec::Ones(nx);
        q(0) = 10.0;
    }
    if (q.size() != nx) throw ConfigError("LQR weight has wrong size");
    const Mat R = Mat::Identity(nu, nu) * opts.r;
    const auto [ulo, uhi] = setup.U.bounding_box();
    TerminalDesign d;
    for (int retune = 0; retune <= opts.max_retunes; ++retune) {
        d.Q = q.asDiagonal();
        d.controller = TerminalController(lqr_gain(A, B, d.Q, R), ulo, uhi);
        d.retunes = retune;
        d.validation = validate_terminal(d.controller, setup, opts.validation);
        if (d.validation.safe) return d;
        q(0) *= 2.0;
    }
    throw ConvergenceError("terminal controller failed validation after retuning", d.validation.worst_state_margin);
}

std::string to_string(FilterMode m) {
    switch (m) {
        case FilterMode::Fresh:
            return "FRESH";
        case FilterMode::Tracking:
            return "TRACKING";
        case FilterMode::Terminal:
            return "TERMINAL";
    }
    return "?";
}

std::string to_string(FilterBranch b) {
    switch (b) {
        case FilterBranch::Verified:
            return "verified";
        case FilterBranch::Tracking:
            return "tracking";
        case FilterBranch::Terminal:
            return "terminal";
    }
    return "?";
}

SafetyFilter::SafetyFilter(SystemSetup setup, Vec mu, Policy policy, TerminalController terminal, FilterOptions opts)
    : setup_(std::move(setup)),
      mu_(std::move(mu)),
      policy_(std::move(policy)),
      terminal_(std::move(terminal)),
      opts_(std::move(opts)) {
    if (opts_.horizon < 1) throw ConfigError("filter horizon must be >= 1");
    std::tie(u_lo_, u_hi_) = setup_.U.bounding_box();
}

FilterTelemetry SafetyFilter::step(const Vec& x, const Vec& u_nom_in) {
    if (!x.allFinite()) throw NumericError("filter received a non-finite state");
    FilterTelemetry t;
    t.step = step_++;
    t.x = x;
    t.u_nom = u_nom_in.cwiseMax(u_lo_).cwiseMin(u_hi_);
    t.V_ra_star = std::numeric_limits<double>::quiet_NaN();

    bool verified = false;
    Verification ver;
    if (opts_.fault && opts_.fault(t.step)) {
        t.injected = true;
        t.status = SolveStatus::SolverError;
    } else {
        ver = verify_action(setup_, mu_, policy_, x, t.u_nom, opts_.horizon, opts_.solver);
        t.status = ver.result.status;
        t.solve_time = ver.result.solve_time;
        if (ver.result.status == SolveStatus::Solved) t.V_ra_star = ver.result.V_ra_star;
        verified = ver.result.verified();
    }

    if (verified) {
        state_.mode = FilterMode::Fresh;
        state_.k = 0;
        state_.has_plan = true;
        state_.plan = std::move(ver.instance.traj);
        state_.K = std::move(ver.result.K);
        state_.dx.clear();
        t.branch = FilterBranch::Verified;
        t.u_safe = t.u_nom;
    } else if (!state_.has_plan) {
        throw InitialFeasibilityError("initial feasibility assumption violated: first verification at step " +
                                      std::to_string(t.step) + " failed (" + to_string(t.status) + ")");
    } else if (state_.mode != FilterMode::Terminal && state_.k + 1 <= opts_.horizon) {
        const int k = ++state_.k;
        state_.mode = FilterMode::Tracking;
        state_.dx.push_back(x - state_.plan.z[static_cast<std::size_t>(k)]);
        const int nx = static_cast<int>(x.size()), nu = static_cast<int>(u_lo_.size());
        Vec u = state_.plan.v[static_cast<std::size_t>(k)];
        for (int j = 1; j <= k; ++j)
            u += state_.K.block((k - 1) * nu, (j - 1) * nx, nu, nx) * state_.dx[static_cast<std::size_t>(j - 1)];
        t.u_safe = u.cwiseMax(u_lo_).cwiseMin(u_hi_);
        t.clipped = (t.u_safe - u).lpNorm<Eigen::Infinity>() > 0.0;
        t.branch = FilterBranch::Tracking;
    } else {
        state_.mode = FilterMode::Terminal;
        t.u_safe = terminal_(x);
        t.branch = FilterBranch::Terminal;
    }
    t.mode = state_.mode;
    t.k = state_.k;
    return t;
}

std::string telemetry_csv_header(int nx, int nu) {
    std::ostringstream os;
    os << "step";
    for (int i = 0; i < nx; ++i) os << ",x" << (i + 1);
    for (int i = 0; i < nu; ++i) os << ",u_nom" << (i + 1);
    for (int i = 0; i < nu; ++i) os << ",u_safe" << (i + 1);
    os << ",mode,k,branch,status,V_ra,solve_time,clipped,injected";
    return os.str();
}

std::string telemetry_csv_row(const FilterTelemetry& t) {
    std::ostringstream os;
    os << std::setprecision(12) << t.step;
    for (Eigen::Index i = 0; i < t.x.size(); ++i) os << ',' << t.x(i);
    for (Eigen::Index i = 0; i < t.u_nom.size(); ++i) os << ',' << t.u_nom(i);
    for (Eigen::Index i = 0; i < t.u_safe.size(); ++i) os << ',' << t.u_safe(i);
    os << ',' << to_string(t.mode) << ',' << t.k << ',' << to_string(t.branch) << ',' << to_string(t.status) << ',';
    if (std::isnan(t.V_ra_star)) {
        os << "nan";
    } else {
        os << t.V_ra_star;
    }
    os << ',' << t.solve_time << ',' << (t.clipped ? 1 : 0) << ',' << (t.injected ? 1 : 0);
    return os.str();
}

}  // namespace psf
