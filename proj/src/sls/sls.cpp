#include "psf/sls/sls.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "psf/errors.hpp"

namespace psf {

NominalTrajectory generate_nominal(const DisturbedModel& model, const Vec& x_bar, const Vec& u_bar,
                                   const Policy& policy, int T) {
    if (T < 1) throw ConfigError("generate_nominal: horizon must be >= 1");
    if (x_bar.size() != model.nx() || u_bar.size() != model.nu())
        throw ConfigError("generate_nominal: dimension mismatch");
    NominalTrajectory traj;
    traj.z.reserve(T + 1);
    traj.v.reserve(T + 1);
    traj.z.push_back(x_bar);
    traj.v.push_back(u_bar);
    for (int k = 0; k < T; ++k) {
        Vec next = step_nominal(model, traj.z.back(), traj.v.back());
        Vec u = policy(next);
        if (!u.allFinite()) throw NumericError("generate_nominal: policy returned a non-finite input");
        traj.z.push_back(std::move(next));
        traj.v.push_back(std::move(u));
    }
    return traj;
}

BlockLtv assemble_blocks(const LinearizationBundle& bundle, int T) {
    if (bundle.steps() < T) throw ConfigError("assemble_blocks: bundle shorter than horizon");
    const int nx = static_cast<int>(bundle.Af.at(0).rows());
    const int nu = static_cast<int>(bundle.Bf.at(0).cols());
    BlockLtv out;
    out.A = Mat::Zero(T * nx, T * nx);
    out.B = Mat::Zero(T * nx, T * nu);
    out.Z = Mat::Zero(T * nx, T * nx);
    for (int k = 1; k < T; ++k) {
        if (bundle.Af[k].rows() != nx || bundle.Af[k].cols() != nx || bundle.Bf[k].rows() != nx ||
            bundle.Bf[k].cols() != nu)
            throw ConfigError("assemble_blocks: inconsistent Jacobian sizes");
        out.A.block((k - 1) * nx, (k - 1) * nx, nx, nx) = bundle.Af[k];
        out.B.block((k - 1) * nx, (k - 1) * nu, nx, nu) = bundle.Bf[k];
    }
    for (int k = 1; k < T; ++k) out.Z.block(k * nx, (k - 1) * nx, nx, nx).setIdentity();
    return out;
}

SlsInstance make_instance(const DisturbedModel& model, const NominalTrajectory& traj,
                          const LinearizationBundle& bundle, const SystemSetup& setup) {
    SlsInstance inst{traj, bundle, setup.X, setup.U, setup.D, setup.R, {}, {}};
    const int T = traj.horizon();
    for (int k = 0; k < T; ++k) inst.g_nominal.push_back(model.g(traj.z[k], traj.v[k]));
    const auto verts = setup.D.vertices();
    inst.d_vertices.resize(model.nd(), static_cast<Eigen::Index>(verts.size()));
    for (std::size_t i = 0; i < verts.size(); ++i) inst.d_vertices.col(static_cast<Eigen::Index>(i)) = verts[i];
    return inst;
}

namespace {

using Terms = std::vector<std::pair<int, double>>;

class ProgramBuilder {
public:
    int add_vars(int n) {
        const int first = n_;
        n_ += n;
        return first;
    }
    int num_vars() const { return n_; }

    void eq(const Terms& t, double rhs) {
        push(eq_, eq_rows_, t);
        b_.push_back(rhs);
    }
    /// t . x <= rhs
    void leq(const Terms& t, double rhs) {
        push(lp_, lp_rows_, t);
        h_lp_.push_back(rhs);
    }
    /// h_r - g_r . x for each row r forms one second-order cone.
    void soc(const std::vector<std::pair<Terms, double>>& rows) {
        for (const auto& [t, rhs] : rows) {
            push(soc_, soc_rows_, t);
            h_soc_.push_back(rhs);
        }
        soc_dims_.push_back(static_cast<int>(rows.size()));
    }

    ConicProgram finish(const Vec& c) const {
        ConicProgram p;
        p.c = c;
        p.A = SpMat(eq_rows_, n_);
        p.A.setFromTriplets(eq_.begin(), eq_.end());
        p.b = Eigen::Map<const Vec>(b_.data(), static_cast<Eigen::Index>(b_.size()));
        std::vector<Eigen::Triplet<double>> g = lp_;
        for (const auto& t : soc_) g.emplace_back(t.row() + lp_rows_, t.col(), t.value());
        p.G = SpMat(lp_rows_ + soc_rows_, n_);
        p.G.setFromTriplets(g.begin(), g.end());
        p.h.resize(lp_rows_ + soc_rows_);
        for (int i = 0; i < lp_rows_; ++i) p.h(i) = h_lp_[i];
        for (int i = 0; i < soc_rows_; ++i) p.h(lp_rows_ + i) = h_soc_[i];
        p.lp_dim = lp_rows_;
        p.soc_dims = soc_dims_;
        return p;
    }

private:
    static void push(std::vector<Eigen::Triplet<double>>& trips, int& rows, const Terms& t) {
        for (const auto& [var, coef] : t)
            if (coef != 0.0) trips.emplace_back(rows, var, coef);
        ++rows;
    }

    int n_ = 0;
    std::vector<Eigen::Triplet<double>> eq_, lp_, soc_;
    int eq_rows_ = 0, lp_rows_ = 0, soc_rows_ = 0;
    std::vector<double> b_, h_lp_, h_soc_;
    std::vector<int> soc_dims_;
};

enum class Resp { X, U };

/// Upper bounds for ||c * Phi^{k,1:jmax}||_1 as linear terms in the slacks.
class OneNormEncoder {
public:
    OneNormEncoder(ProgramBuilder& pb, const SlsLayout& lay) : pb_(pb), lay_(lay) {}

    void append(Terms& out, Resp which, int k, int jmax, const Vec& coef) {
        const int rows = which == Resp::X ? lay_.nx : lay_.nu;
        std::vector<int> nz;
        for (int r = 0; r < rows; ++r)
            if (coef(r) != 0.0) nz.push_back(r);
        if (nz.empty()) return;
        for (int j = 1; j <= jmax; ++j) {
            for (int c = 0; c < lay_.nx; ++c) {
                if (nz.size() == 1) {
                    out.emplace_back(lay_.abs_var(phi(which, k, j, nz[0], c)), std::abs(coef(nz[0])));
                    continue;
                }
                const double scale = coef.cwiseAbs().maxCoeff();
                Vec unit = coef / scale;
                if (unit(nz[0]) < 0) unit = -unit;
                Key key{static_cast<int>(which), k, j, c, std::vector<double>(unit.data(), unit.data() + rows)};
                auto it = cache_.find(key);
                int var;
                if (it == cache_.end()) {
                    var = pb_.add_vars(1);
                    Terms pos, neg;
                    for (int r : nz) {
                        pos.emplace_back(phi(which, k, j, r, c), unit(r));
                        neg.emplace_back(phi(which, k, j, r, c), -unit(r));
                    }
                    pos.emplace_back(var, -1.0);
                    neg.emplace_back(var, -1.0);
                    pb_.leq(pos, 0.0);
                    pb_.leq(neg, 0.0);
                    rows_added_ += 2;
                    cache_.emplace(std::move(key), var);
                } else {
                    var = it->second;
                }
                out.emplace_back(var, scale);
            }
        }
    }

    int rows_added() const { return rows_added_; }

private:
    int phi(Resp which, int k, int j, int r, int c) const {
        return which == Resp::X ? lay_.phi_x_var(k, j, r, c) : lay_.phi_u_var(k, j, r, c);
    }

    using Key = std::tuple<int, int, int, int, std::vector<double>>;
    ProgramBuilder& pb_;
    const SlsLayout& lay_;
    std::map<Key, int> cache_;
    int rows_added_ = 0;
};

/// Row i of (I kron d') J, i.e. sum_j d_j J(i*nd + j, :).
Vec channel_row(const Mat& J, const Vec& d, int i) {
    const int nd = static_cast<int>(d.size());
    Vec row = Vec::Zero(J.cols());
    for (int j = 0; j < nd; ++j) row += d(j) * J.row(i * nd + j).transpose();
    return row;
}

}  // namespace

SlsProgram build_socp(const SlsInstance& inst) {
    const int T = inst.horizon();
    if (T < 1) throw ConfigError("build_socp: horizon must be >= 1");
    if (inst.bundle.steps() < T || static_cast<int>(inst.g_nominal.size()) < T)
        throw ConfigError("build_socp: linearization shorter than horizon");
    const int nx = static_cast<int>(inst.traj.z[0].size());
    const int nu = static_cast<int>(inst.traj.v[0].size());
    const int nd = static_cast<int>(inst.d_vertices.rows());
    if (inst.bundle.mu.size() != nx) throw ConfigError("build_socp: curvature bound mu is missing");
    if (inst.X.dim() != nx || inst.R.dim() != nx || inst.U.dim() != nu || inst.D.dim() != nd)
        throw ConfigError("build_socp: set dimensions disagree with the trajectory");
    const Vec& mu = inst.bundle.mu;
    const int nblocks = T * (T + 1) / 2;

    SlsProgram out;
    SlsLayout& lay = out.layout;
    SlsFamilyCounts& cnt = out.counts;
    lay.nx = nx;
    lay.nu = nu;
    lay.T = T;
    ProgramBuilder pb;
    lay.phi_x = pb.add_vars(nblocks * nx * nx);
    lay.phi_u = pb.add_vars(nblocks * nu * nx);
    lay.sigma = pb.add_vars(T * nx);
    lay.lambda = pb.add_vars(T - 1);
    lay.eta = pb.add_vars(T - 1);
    lay.value = pb.add_vars(1);
    const int num_phi = nblocks * (nx * nx + nu * nx);
    lay.abs_phi = pb.add_vars(num_phi);

    // |Phi| slacks
    for (int v = 0; v < num_phi; ++v) {
        const int phi = lay.phi_x + v;
        pb.leq({{phi, 1.0}, {lay.abs_var(phi), -1.0}}, 0.0);
        pb.leq({{phi, -1.0}, {lay.abs_var(phi), -1.0}}, 0.0);
    }
    cnt.abs_rows = 2 * num_phi;
    OneNormEncoder norm1(pb, lay);

    // affine subspace
    for (int k = 1; k <= T; ++k) {
        for (int j = 1; j <= k; ++j) {
            for (int r = 0; r < nx; ++r) {
                for (int c = 0; c < nx; ++c) {
                    Terms t{{lay.phi_x_var(k, j, r, c), 1.0}};
                    if (k >= 2 && j <= k - 1) {
                        const Mat& A = inst.bundle.Af[k - 1];
                        const Mat& B = inst.bundle.Bf[k - 1];
                        for (int m = 0; m < nx; ++m) t.emplace_back(lay.phi_x_var(k - 1, j, m, c), -A(r, m));
                        for (int m = 0; m < nu; ++m) t.emplace_back(lay.phi_u_var(k - 1, j, m, c), -B(r, m));
                    }
                    if (j == k && r == c) t.emplace_back(lay.sigma_var(k - 1, r), -1.0);
                    pb.eq(t, 0.0);
                    ++cnt.affine;
                }
            }
        }
    }

    // disturbance filter, k = 0
    for (int i = 0; i < nx; ++i) {
        for (int v = 0; v < inst.d_vertices.cols(); ++v) {
            const double w = std::abs(inst.g_nominal[0].row(i).dot(inst.d_vertices.col(v)));
            pb.leq({{lay.sigma_var(0, i), -1.0}}, -w);
            ++cnt.filter_initial;
        }
    }
    // disturbance filter, k = 1..T-1
    for (int k = 1; k <= T - 1; ++k) {
        for (int i = 0; i < nx; ++i) {
            for (int v = 0; v < inst.d_vertices.cols(); ++v) {
                const Vec d = inst.d_vertices.col(v);
                const double w = std::abs(inst.g_nominal[k].row(i).dot(d));
                Terms t{{lay.lambda_var(k), mu(i)}, {lay.sigma_var(k, i), -1.0}};
                norm1.append(t, Resp::X, k, k, channel_row(inst.bundle.Ag[k], d, i));
                norm1.append(t, Resp::U, k, k, channel_row(inst.bundle.Bg[k], d, i));
                pb.leq(t, -w);
                ++cnt.filter;
            }
        }
    }
    // infinity norm of the stacked block row
    for (int k = 1; k <= T - 1; ++k) {
        for (int r = 0; r < nx + nu; ++r) {
            Terms t{{lay.eta_var(k), -1.0}};
            for (int j = 1; j <= k; ++j)
                for (int c = 0; c < nx; ++c) {
                    const int phi = r < nx ? lay.phi_x_var(k, j, r, c) : lay.phi_u_var(k, j, r - nx, c);
                    t.emplace_back(lay.abs_var(phi), 1.0);
                }
            pb.leq(t, 0.0);
            ++cnt.eta_bound;
        }
    }
    // state margins
    const Mat& Hx = inst.X.H();
    const Vec& hx = inst.X.h();
    for (int i = 0; i < Hx.rows(); ++i) {
        pb.leq({{lay.value, -1.0}}, hx(i) - Hx.row(i).dot(inst.traj.z[0]));
        ++cnt.state;
    }
    for (int k = 1; k <= T; ++k) {
        for (int i = 0; i < Hx.rows(); ++i) {
            Terms t{{lay.value, -1.0}};
            norm1.append(t, Resp::X, k, k, Hx.row(i).transpose());
            pb.leq(t, hx(i) - Hx.row(i).dot(inst.traj.z[k]));
            ++cnt.state;
        }
    }
    // input margins
    const Mat& Hu = inst.U.H();
    const Vec& hu = inst.U.h();
    for (int i = 0; i < Hu.rows(); ++i) {
        pb.leq({{lay.value, -1.0}}, hu(i) - Hu.row(i).dot(inst.traj.v[0]));
        ++cnt.input;
    }
    for (int k = 1; k <= T; ++k) {
        for (int i = 0; i < Hu.rows(); ++i) {
            Terms t;
            norm1.append(t, Resp::U, k, k, Hu.row(i).transpose());
            pb.leq(t, hu(i) - Hu.row(i).dot(inst.traj.v[k]));
            ++cnt.input;
        }
    }
    // terminal margins
    const Mat& Rx = inst.R.H();
    const Vec& rx = inst.R.h();
    for (int i = 0; i < Rx.rows(); ++i) {
        Terms t{{lay.value, -1.0}};
        norm1.append(t, Resp::X, T, T, Rx.row(i).transpose());
        pb.leq(t, rx(i) - Rx.row(i).dot(inst.traj.z[T]));
        ++cnt.terminal;
    }
    cnt.abs_rows += norm1.rows_added();
    // eta_k^2 <= lambda_k
    for (int k = 1; k <= T - 1; ++k) {
        pb.soc({{{{lay.lambda_var(k), -0.5}}, 0.5},
                {{{lay.lambda_var(k), -0.5}}, -0.5},
                {{{lay.eta_var(k), -1.0}}, 0.0}});
        ++cnt.cones;
    }

    lay.num_vars = pb.num_vars();
    Vec c = Vec::Zero(lay.num_vars);
    c(lay.value) = 1.0;
    out.conic = pb.finish(c);
    return out;
}

Mat VerificationResult::K_block(int k, int j) const {
    const int nx = static_cast<int>(K.cols()) / static_cast<int>(Sigma.rows());
    const int nu = static_cast<int>(K.rows()) / static_cast<int>(Sigma.rows());
    return K.block((k - 1) * nu, (j - 1) * nx, nu, nx);
}

Mat recover_gain(const SystemResponse& phi, int nx, int nu, int T) {
    Mat K = Mat::Zero(T * nu, T * nx);
    for (int k = 1; k <= T; ++k) {
        for (int j = k; j >= 1; --j) {
            Mat rhs = phi.Phi_u.block((k - 1) * nu, (j - 1) * nx, nu, nx);
            for (int l = j + 1; l <= k; ++l)
                rhs -= K.block((k - 1) * nu, (l - 1) * nx, nu, nx) * phi.Phi_x.block((l - 1) * nx, (j - 1) * nx, nx, nx);
            const Mat D = phi.Phi_x.block((j - 1) * nx, (j - 1) * nx, nx, nx);
            // K_kj D = rhs  <=>  D' K_kj' = rhs'
            const Mat sol = D.transpose().completeOrthogonalDecomposition().solve(rhs.transpose());
            K.block((k - 1) * nu, (j - 1) * nx, nu, nx) = sol.transpose();
        }
    }
    return K;
}

VerificationResult solve_socp(const SlsProgram& program, const ConicSolverOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    const ConicSolution sol = solve_conic(program.conic, opts);
    const auto t1 = std::chrono::steady_clock::now();

    VerificationResult res;
    res.status = sol.status;
    res.detail = sol.detail;
    res.solve_time = std::chrono::duration<double>(t1 - t0).count();
    res.iterations = sol.iterations;
    if (sol.status != SolveStatus::Solved) return res;

    const SlsLayout& lay = program.layout;
    const int nx = lay.nx, nu = lay.nu, T = lay.T;
    const Vec& x = sol.x;
    res.V_ra_star = x(lay.value);
    res.Phi.Phi_x = Mat::Zero(T * nx, T * nx);
    res.Phi.Phi_u = Mat::Zero(T * nu, T * nx);
    for (int k = 1; k <= T; ++k)
        for (int j = 1; j <= k; ++j)
            for (int c = 0; c < nx; ++c) {
                for (int r = 0; r < nx; ++r)
                    res.Phi.Phi_x((k - 1) * nx + r, (j - 1) * nx + c) = x(lay.phi_x_var(k, j, r, c));
                for (int r = 0; r < nu; ++r)
                    res.Phi.Phi_u((k - 1) * nu + r, (j - 1) * nx + c) = x(lay.phi_u_var(k, j, r, c));
            }
    res.Sigma.resize(T, nx);
    for (int k = 0; k < T; ++k)
        for (int i = 0; i < nx; ++i) res.Sigma(k, i) = x(lay.sigma_var(k, i));
    res.lambda.resize(T - 1);
    res.eta.resize(T - 1);
    for (int k = 1; k <= T - 1; ++k) {
        res.lambda(k - 1) = x(lay.lambda_var(k));
        res.eta(k - 1) = x(lay.eta_var(k));
    }
    res.K = recover_gain(res.Phi, nx, nu, T);
    return res;
}

double affine_residual(const VerificationResult& res, const BlockLtv& blocks) {
    const Eigen::Index n = blocks.A.rows();
    Mat Sigma = Mat::Zero(n, n);
    const int nx = static_cast<int>(res.Sigma.cols());
    for (int k = 0; k < res.Sigma.rows(); ++k)
        for (int i = 0; i < nx; ++i) Sigma(k * nx + i, k * nx + i) = res.Sigma(k, i);
    const Mat lhs = (Mat::Identity(n, n) - blocks.Z * blocks.A) * res.Phi.Phi_x - blocks.Z * blocks.B * res.Phi.Phi_u;
    return (lhs - Sigma).cwiseAbs().maxCoeff();
}

double realization_residual(const VerificationResult& res) {
    return (res.K * res.Phi.Phi_x - res.Phi.Phi_u).cwiseAbs().maxCoeff();
}

double ConstraintAudit::worst() const {
    return std::max({affine, filter_initial, filter, eta_bound, state, input, terminal, cone, causality});
}

ConstraintAudit audit_constraints(const SlsInstance& inst, const VerificationResult& res) {
    ConstraintAudit a;
    const int T = inst.horizon();
    const int nx = static_cast<int>(res.Sigma.cols());
    const int nu = static_cast<int>(res.Phi.Phi_u.rows()) / T;
    const Mat& Px = res.Phi.Phi_x;
    const Mat& Pu = res.Phi.Phi_u;
    const double V = res.V_ra_star;
    auto rowx = [&](int k) { return Px.block((k - 1) * nx, 0, nx, k * nx); };
    auto rowu = [&](int k) { return Pu.block((k - 1) * nu, 0, nu, k * nx); };

    a.affine = affine_residual(res, assemble_blocks(inst.bundle, T));
    for (int k = 1; k <= T; ++k) {
        const int cols = (T - k) * nx;
        if (cols == 0) continue;
        a.causality = std::max({a.causality, Px.block((k - 1) * nx, k * nx, nx, cols).cwiseAbs().maxCoeff(),
                                Pu.block((k - 1) * nu, k * nx, nu, cols).cwiseAbs().maxCoeff(),
                                res.K.block((k - 1) * nu, k * nx, nu, cols).cwiseAbs().maxCoeff()});
    }
    a.filter_initial = a.filter = a.eta_bound = a.state = a.input = a.terminal = a.cone = -1e300;
    for (int v = 0; v < inst.d_vertices.cols(); ++v) {
        const Vec d = inst.d_vertices.col(v);
        for (int i = 0; i < nx; ++i) {
            a.filter_initial =
                std::max(a.filter_initial, std::abs(inst.g_nominal[0].row(i).dot(d)) - res.Sigma(0, i));
            for (int k = 1; k <= T - 1; ++k) {
                const Vec cA = channel_row(inst.bundle.Ag[k], d, i);
                const Vec cB = channel_row(inst.bundle.Bg[k], d, i);
                const double lhs = res.lambda(k - 1) * inst.bundle.mu(i) +
                                   std::abs(inst.g_nominal[k].row(i).dot(d)) +
                                   (cA.transpose() * rowx(k)).cwiseAbs().sum() +
                                   (cB.transpose() * rowu(k)).cwiseAbs().sum();
                a.filter = std::max(a.filter, lhs - res.Sigma(k, i));
            }
        }
    }
    for (int k = 1; k <= T - 1; ++k) {
        Mat stacked(nx + nu, k * nx);
        stacked << rowx(k), rowu(k);
        a.eta_bound = std::max(a.eta_bound, stacked.rowwise().lpNorm<1>().maxCoeff() - res.eta(k - 1));
        a.cone = std::max({a.cone, res.eta(k - 1) * res.eta(k - 1) - res.lambda(k - 1), -res.lambda(k - 1)});
    }
    const Mat& Hx = inst.X.H();
    const Vec& hx = inst.X.h();
    a.state = (Hx * inst.traj.z[0] - hx).maxCoeff() - V;
    for (int k = 1; k <= T; ++k) {
        const Vec m = Hx * inst.traj.z[k] + (Hx * rowx(k)).rowwise().lpNorm<1>() - hx;
        a.state = std::max(a.state, m.maxCoeff() - V);
    }
    const Mat& Hu = inst.U.H();
    const Vec& hu = inst.U.h();
    a.input = (Hu * inst.traj.v[0] - hu).maxCoeff() - V;
    for (int k = 1; k <= T; ++k) {
        const Vec m = Hu * inst.traj.v[k] + (Hu * rowu(k)).rowwise().lpNorm<1>() - hu;
        a.input = std::max(a.input, m.maxCoeff());
    }
    const Vec mt = inst.R.H() * inst.traj.z[T] + (inst.R.H() * rowx(T)).rowwise().lpNorm<1>() - inst.R.h();
    a.terminal = mt.maxCoeff() - V;
    if (T == 1) a.filter = a.eta_bound = a.cone = 0.0;
    return a;
}

Verification verify_action(const SystemSetup& setup, const Vec& mu, const Policy& policy,
                           const Vec& x_bar, const Vec& u_bar, int T, const ConicSolverOptions& opts) {
    const DisturbedModel& model = *setup.model;
    const NominalTrajectory traj = generate_nominal(model, x_bar, u_bar, policy, T);
    const LinearizationBundle bundle = linearize_trajectory(model, traj, setup.X, setup.U, mu, false);
    Verification out{make_instance(model, traj, bundle, setup), {}};
    out.result = solve_socp(build_socp(out.instance), opts);
    return out;
}

bool TubeCheckReport::sound(double V_ra_star, double tol) const {
    return max_state_margin <= V_ra_star + tol && max_terminal_margin <= V_ra_star + tol &&
           max_input_margin_initial <= V_ra_star + tol && max_input_margin <= tol;
}

TubeCheckReport tube_soundness_check(const VerificationResult& res, const SlsInstance& inst,
                                     const DisturbedModel& model, const TubeCheckOptions& opts) {
    if (res.status != SolveStatus::Solved) throw ConfigError("tube_soundness_check: result is not solved");
    const int T = inst.horizon();
    const int nx = model.nx(), nu = model.nu();
    const Mat& verts = inst.d_vertices;
    const int nv = static_cast<int>(verts.cols());
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, nv - 1);
    auto sample_d = [&]() -> Vec {
        if (unit(rng) < opts.vertex_probability) return verts.col(pick(rng));
        // random convex combination of the vertices
        Vec w(nv);
        for (int i = 0; i < nv; ++i) w(i) = -std::log(1.0 - unit(rng));
        return verts * (w / w.sum());
    };

    TubeCheckReport rep;
    for (int r = 0; r < opts.rollouts; ++r) {
        std::vector<Vec> dx;  // dx_1..dx_k
        Vec x = inst.traj.z[0];
        Vec u = inst.traj.v[0];
        double state_m = inst.X.margin(x);
        rep.max_input_margin_initial = std::max(rep.max_input_margin_initial, inst.U.margin(u));
        for (int k = 0; k < T; ++k) {
            x = step_disturbed(model, x, u, sample_d());
            dx.push_back(x - inst.traj.z[k + 1]);
            Vec du = Vec::Zero(nu);
            for (int j = 1; j <= k + 1; ++j) du += res.K.block(k * nu, (j - 1) * nx, nu, nx) * dx[j - 1];
            u = inst.traj.v[k + 1] + du;
            state_m = std::max(state_m, inst.X.margin(x));
            rep.max_input_margin = std::max(rep.max_input_margin, inst.U.margin(u));
        }
        const double term = inst.R.margin(x);
        rep.max_state_margin = std::max(rep.max_state_margin, state_m);
        rep.max_terminal_margin = std::max(rep.max_terminal_margin, term);
        rep.max_value = std::max(rep.max_value, std::max(state_m, term));
        ++rep.rollouts;
    }
    return rep;
}

std::string verification_csv_header(int nx) {
    std::ostringstream os;
    for (int i = 0; i < nx; ++i) os << 'x' << (i + 1) << ',';
    os << "V_ra,solve_time,status";
    return os.str();
}

std::string verification_csv_row(const Vec& x, const VerificationResult& res) {
    std::ostringstream os;
    os << std::setprecision(12);
    for (Eigen::Index i = 0; i < x.size(); ++i) os << x(i) << ',';
    if (res.status == SolveStatus::Solved) {
        os << res.V_ra_star;
    } else {
        os << "nan";
    }
    os << ',' << res.solve_time << ',' << to_string(res.status);
    return os.str();
}

}  // namespace psf
