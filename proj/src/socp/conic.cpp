#include "psf/socp/conic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <Eigen/OrderingMethods>

#include "psf/errors.hpp"

namespace psf {

void ConicProgram::validate() const {
    const int n = num_vars();
    if (A.cols() != n && A.rows() > 0) throw ConfigError("conic: A has wrong column count");
    if (G.cols() != n) throw ConfigError("conic: G has wrong column count");
    if (b.size() != A.rows()) throw ConfigError("conic: b size mismatch");
    if (h.size() != G.rows()) throw ConfigError("conic: h size mismatch");
    int m = lp_dim;
    for (int q : soc_dims) {
        if (q < 2) throw ConfigError("conic: second-order cones need dimension >= 2");
        m += q;
    }
    if (m != G.rows()) throw ConfigError("conic: cone dimensions do not add up to rows of G");
}

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Solved: return "solved";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::SolverError: return "solver-error";
    }
    return "unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Vec& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

/// Cone K = R_+^l x Q^{q1} x ... with Nesterov-Todd scaling state.
class Cones {
public:
    Cones(int lp_dim, std::vector<int> soc_dims) : l_(lp_dim), soc_(std::move(soc_dims)) {
        int off = l_;
        for (int q : soc_) {
            offsets_.push_back(off);
            off += q;
        }
        m_ = off;
        w_lp_ = Vec::Ones(l_);
        beta_.assign(soc_.size(), 1.0);
        wbar_.resize(soc_.size());
        for (std::size_t k = 0; k < soc_.size(); ++k) wbar_[k] = Vec::Unit(soc_[k], 0);
    }

    int dim() const { return m_; }
    int degree() const { return l_ + static_cast<int>(soc_.size()); }
    int lp_dim() const { return l_; }
    int num_soc() const { return static_cast<int>(soc_.size()); }
    int soc_offset(int k) const { return offsets_[k]; }
    int soc_dim(int k) const { return soc_[k]; }

    Vec unit() const {
        Vec e = Vec::Zero(m_);
        e.head(l_).setOnes();
        for (int k = 0; k < num_soc(); ++k) e(offsets_[k]) = 1.0;
        return e;
    }

    /// Smallest a such that u + a e lies on the cone boundary, i.e. the
    /// negated minimal "eigenvalue" of u.
    double boundary_shift(const Vec& u) const {
        double a = -kInf;
        for (int i = 0; i < l_; ++i) a = std::max(a, -u(i));
        for (int k = 0; k < num_soc(); ++k) {
            const auto blk = u.segment(offsets_[k], soc_[k]);
            a = std::max(a, blk.tail(soc_[k] - 1).norm() - blk(0));
        }
        return a;
    }

    void identity_scaling() {
        w_lp_.setOnes();
        for (int k = 0; k < num_soc(); ++k) {
            beta_[k] = 1.0;
            wbar_[k] = Vec::Unit(soc_[k], 0);
        }
    }

    /// NT scaling point for interior s, z. Returns false if either leaves
    /// the interior.
    bool update_scaling(const Vec& s, const Vec& z) {
        for (int i = 0; i < l_; ++i) {
            if (!(s(i) > 0 && z(i) > 0)) return false;
            w_lp_(i) = std::sqrt(s(i) / z(i));
        }
        for (int k = 0; k < num_soc(); ++k) {
            const int o = offsets_[k], q = soc_[k];
            const Vec sk = s.segment(o, q), zk = z.segment(o, q);
            const double sres = soc_residual(sk), zres = soc_residual(zk);
            if (!(sres > 0 && zres > 0 && sk(0) > 0 && zk(0) > 0)) return false;
            const double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
            const Vec sb = sk / snorm;
            const Vec zb = zk / znorm;
            const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
            Vec w(q);
            w(0) = (sb(0) + zb(0)) / (2.0 * gamma);
            w.tail(q - 1) = (sb.tail(q - 1) - zb.tail(q - 1)) / (2.0 * gamma);
            wbar_[k] = w;
            beta_[k] = std::sqrt(snorm / znorm);
        }
        return true;
    }

    Vec apply_W(const Vec& v) const {
        Vec out(m_);
        out.head(l_) = w_lp_.cwiseProduct(v.head(l_));
        for (int k = 0; k < num_soc(); ++k) {
            const int o = offsets_[k], q = soc_[k];
            const Vec& w = wbar_[k];
            const auto vk = v.segment(o, q);
            const double w1v1 = w.tail(q - 1).dot(vk.tail(q - 1));
            out(o) = beta_[k] * (w(0) * vk(0) + w1v1);
            out.segment(o + 1, q - 1) =
                beta_[k] * (vk.tail(q - 1) + (w1v1 / (1.0 + w(0)) + vk(0)) * w.tail(q - 1));
        }
        return out;
    }

    Vec apply_Winv(const Vec& v) const {
        Vec out(m_);
        out.head(l_) = v.head(l_).cwiseQuotient(w_lp_);
        for (int k = 0; k < num_soc(); ++k) {
            const int o = offsets_[k], q = soc_[k];
            const Vec& w = wbar_[k];
            const auto vk = v.segment(o, q);
            const double w1v1 = w.tail(q - 1).dot(vk.tail(q - 1));
            out(o) = (w(0) * vk(0) - w1v1) / beta_[k];
            out.segment(o + 1, q - 1) =
                (vk.tail(q - 1) + (w1v1 / (1.0 + w(0)) - vk(0)) * w.tail(q - 1)) / beta_[k];
        }
        return out;
    }

    /// Dense W^2 block of SOC k, beta^2 (2 w w' - J).
    Mat soc_W2(int k) const {
        const int q = soc_[k];
        const Vec& w = wbar_[k];
        Mat W2 = 2.0 * w * w.transpose();
        W2(0, 0) -= 1.0;
        for (int i = 1; i < q; ++i) W2(i, i) += 1.0;
        return beta_[k] * beta_[k] * W2;
    }

    double lp_W2(int i) const { return w_lp_(i) * w_lp_(i); }

    Vec jordan(const Vec& u, const Vec& v) const {
        Vec out(m_);
        out.head(l_) = u.head(l_).cwiseProduct(v.head(l_));
        for (int k = 0; k < num_soc(); ++k) {
            const int o = offsets_[k], q = soc_[k];
            const auto uk = u.segment(o, q), vk = v.segment(o, q);
            out(o) = uk.dot(vk);
            out.segment(o + 1, q - 1) = uk(0) * vk.tail(q - 1) + vk(0) * uk.tail(q - 1);
        }
        return out;
    }

    /// x with u o x = r.
    Vec jordan_div(const Vec& u, const Vec& r) const {
        Vec out(m_);
        out.head(l_) = r.head(l_).cwiseQuotient(u.head(l_));
        for (int k = 0; k < num_soc(); ++k) {
            const int o = offsets_[k], q = soc_[k];
            const auto uk = u.segment(o, q), rk = r.segment(o, q);
            const double det = soc_residual(uk);
            const double x0 = (uk(0) * rk(0) - uk.tail(q - 1).dot(rk.tail(q - 1))) / det;
            out(o) = x0;
            out.segment(o + 1, q - 1) = (rk.tail(q - 1) - x0 * uk.tail(q - 1)) / uk(0);
        }
        return out;
    }

    /// Largest a with v + a dv in the cone (v interior); +inf if unbounded.
    double max_step(const Vec& v, const Vec& dv) const {
        double a = kInf;
        for (int i = 0; i < l_; ++i) {
            if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
        }
        for (int k = 0; k < num_soc(); ++k) {
            const int o = offsets_[k], q = soc_[k];
            a = std::min(a, soc_step(v.segment(o, q), dv.segment(o, q)));
        }
        return a;
    }

private:
    template <class V>
    static double soc_residual(const V& v) {
        const double t = v(0);
        const double r = v.tail(v.size() - 1).norm();
        return (t - r) * (t + r);
    }

    template <class V, class D>
    static double soc_step(const V& v, const D& d) {
        const int q = static_cast<int>(v.size());
        const double a = d(0) * d(0) - d.tail(q - 1).squaredNorm();
        const double b = 2.0 * (v(0) * d(0) - v.tail(q - 1).dot(d.tail(q - 1)));
        const double c = std::max(soc_residual(v), 0.0);
        double best = kInf;
        if (d(0) < 0) best = -v(0) / d(0);
        auto consider = [&](double r) {
            if (r > 0 && std::isfinite(r)) best = std::min(best, r);
        };
        if (std::abs(a) < 1e-300) {
            if (b < 0) consider(-c / b);
            return best;
        }
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0) return best;
        const double sq = std::sqrt(disc);
        const double qv = -0.5 * (b + (b >= 0 ? sq : -sq));
        if (qv != 0) {
            consider(qv / a);
            consider(c / qv);
        }
        return best;
    }

    int l_;
    std::vector<int> soc_;
    std::vector<int> offsets_;
    int m_ = 0;
    Vec w_lp_;
    std::vector<double> beta_;
    std::vector<Vec> wbar_;
};

/// Sparse LDL' of a quasi-definite matrix (up-looking, elimination tree)
/// with fill-reducing AMD ordering. Pivots whose sign disagrees with the
/// expected inertia, or that are tiny, are replaced by +-delta.
class QuasiDefiniteLdl {
public:
    /// lower: lower triangle of the matrix; signs: expected pivot signs.
    void analyze(const SpMat& lower, const std::vector<int>& signs) {
        Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
        Eigen::AMDOrdering<int> amd;
        amd(lower, pinv);
        perm_ = pinv.inverse();
        pinv_ = pinv;
        const int n = static_cast<int>(lower.rows());
        signs_.assign(n, 1);
        for (int i = 0; i < n; ++i) signs_[perm_.indices()(i)] = signs[i];
    }

    bool factor(const SpMat& lower, double eps, double delta) {
        SpMat full;
        full = lower.selfadjointView<Eigen::Lower>().twistedBy(perm_);
        SpMat U = full.triangularView<Eigen::Upper>();
        U.makeCompressed();
        const int n = static_cast<int>(U.rows());
        const int* Ap = U.outerIndexPtr();
        const int* Ai = U.innerIndexPtr();
        const double* Ax = U.valuePtr();

        // elimination tree and column counts
        etree_.assign(n, -1);
        std::vector<int> lnz(n, 0), work(n, 0);
        for (int j = 0; j < n; ++j) {
            work[j] = j;
            for (int p = Ap[j]; p < Ap[j + 1]; ++p) {
                int i = Ai[p];
                while (work[i] != j) {
                    if (etree_[i] == -1) etree_[i] = j;
                    ++lnz[i];
                    work[i] = j;
                    i = etree_[i];
                }
            }
        }
        Lp_.assign(n + 1, 0);
        for (int i = 0; i < n; ++i) Lp_[i + 1] = Lp_[i] + lnz[i];
        Li_.assign(Lp_[n], 0);
        Lx_.assign(Lp_[n], 0.0);
        D_.assign(n, 0.0);
        Dinv_.assign(n, 0.0);

        std::vector<double> y(n, 0.0);
        std::vector<char> used(n, 0);
        std::vector<int> next(Lp_.begin(), Lp_.end() - 1), yidx(n), buf(n);
        for (int k = 0; k < n; ++k) {
            int nnz_y = 0;
            double dk = 0.0;
            for (int p = Ap[k]; p < Ap[k + 1]; ++p) {
                const int b = Ai[p];
                if (b == k) {
                    dk = Ax[p];
                    continue;
                }
                y[b] = Ax[p];
                if (used[b]) continue;
                int ne = 0;
                int idx = b;
                while (idx != -1 && idx < k && !used[idx]) {
                    used[idx] = 1;
                    buf[ne++] = idx;
                    idx = etree_[idx];
                }
                while (ne > 0) yidx[nnz_y++] = buf[--ne];
            }
            for (int i = nnz_y - 1; i >= 0; --i) {
                const int c = yidx[i];
                const int slot = next[c];
                const double yc = y[c];
                for (int j = Lp_[c]; j < slot; ++j) y[Li_[j]] -= Lx_[j] * yc;
                Li_[slot] = k;
                Lx_[slot] = yc * Dinv_[c];
                dk -= yc * Lx_[slot];
                ++next[c];
                y[c] = 0.0;
                used[c] = 0;
            }
            if (!std::isfinite(dk)) return false;
            if (signs_[k] * dk <= eps) dk = signs_[k] * delta;
            D_[k] = dk;
            Dinv_[k] = 1.0 / dk;
        }
        return true;
    }

    Vec solve(const Vec& b) const {
        Vec x = perm_ * b;
        const int n = static_cast<int>(x.size());
        for (int i = 0; i < n; ++i)
            for (int j = Lp_[i]; j < Lp_[i + 1]; ++j) x(Li_[j]) -= Lx_[j] * x(i);
        for (int i = 0; i < n; ++i) x(i) *= Dinv_[i];
        for (int i = n - 1; i >= 0; --i)
            for (int j = Lp_[i]; j < Lp_[i + 1]; ++j) x(i) -= Lx_[j] * x(Li_[j]);
        return pinv_ * x;
    }

private:
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm_, pinv_;
    std::vector<int> signs_;
    std::vector<int> etree_, Lp_, Li_;
    std::vector<double> Lx_, D_, Dinv_;
};

/// Regularized quasi-definite KKT matrix
///   [ d I   A'   G'       ]
///   [ A    -d I  0        ]
///   [ G     0   -W^2 - dI ]
/// (lower triangle stored) with refinement against the unregularized one.
class Kkt {
public:
    Kkt(const ConicProgram& prog, const Cones& cones, double reg)
        : prog_(prog), cones_(cones), n_(prog.num_vars()), p_(prog.num_eq()),
          m_(prog.num_cone_rows()), reg_(reg) {
        const int N = n_ + p_ + m_;
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(prog.A.nonZeros() + prog.G.nonZeros() + N + 9 * cones.num_soc());
        for (int i = 0; i < n_; ++i) trips.emplace_back(i, i, reg_);
        for (int j = 0; j < prog.A.outerSize(); ++j)
            for (SpMat::InnerIterator it(prog.A, j); it; ++it) trips.emplace_back(n_ + it.row(), j, it.value());
        for (int i = 0; i < p_; ++i) trips.emplace_back(n_ + i, n_ + i, -reg_);
        for (int j = 0; j < prog.G.outerSize(); ++j)
            for (SpMat::InnerIterator it(prog.G, j); it; ++it)
                trips.emplace_back(n_ + p_ + it.row(), j, it.value());
        const int zo = n_ + p_;
        for (int i = 0; i < cones.lp_dim(); ++i) trips.emplace_back(zo + i, zo + i, -1.0);
        for (int k = 0; k < cones.num_soc(); ++k) {
            const int o = zo + cones.soc_offset(k), q = cones.soc_dim(k);
            for (int c = 0; c < q; ++c)
                for (int r = c; r < q; ++r) trips.emplace_back(o + r, o + c, r == c ? -1.0 : 0.0);
        }
        K_.resize(N, N);
        K_.setFromTriplets(trips.begin(), trips.end());
        K_.makeCompressed();

        auto slot = [&](int r, int c) { return static_cast<int>(&K_.coeffRef(r, c) - K_.valuePtr()); };
        for (int i = 0; i < n_ + p_; ++i) diag_slots_.push_back(slot(i, i));
        for (int i = 0; i < cones.lp_dim(); ++i) lp_slots_.push_back(slot(zo + i, zo + i));
        for (int k = 0; k < cones.num_soc(); ++k) {
            const int o = zo + cones.soc_offset(k), q = cones.soc_dim(k);
            std::vector<int> s;
            for (int c = 0; c < q; ++c)
                for (int r = c; r < q; ++r) s.push_back(slot(o + r, o + c));
            soc_slots_.push_back(std::move(s));
        }
        std::vector<int> signs(N, -1);
        std::fill(signs.begin(), signs.begin() + n_, 1);
        ldl_.analyze(K_, signs);
    }

    void set_regularization(double reg) {
        if (reg == reg_) return;
        reg_ = reg;
        double* val = K_.valuePtr();
        for (int i = 0; i < n_; ++i) val[diag_slots_[i]] = reg_;
        for (int i = 0; i < p_; ++i) val[diag_slots_[n_ + i]] = -reg_;
    }

    bool factor() {
        double* val = K_.valuePtr();
        for (int i = 0; i < cones_.lp_dim(); ++i) val[lp_slots_[i]] = -cones_.lp_W2(i) - reg_;
        for (int k = 0; k < cones_.num_soc(); ++k) {
            const Mat W2 = cones_.soc_W2(k);
            const int q = cones_.soc_dim(k);
            int idx = 0;
            for (int c = 0; c < q; ++c)
                for (int r = c; r < q; ++r) val[soc_slots_[k][idx++]] = -W2(r, c) - (r == c ? reg_ : 0.0);
        }
        return ldl_.factor(K_, 1e-13, 2e-7);
    }

    /// Solve the unregularized system with iterative refinement.
    Vec solve(const Vec& rhs, int refine_steps) const {
        Vec sol = ldl_.solve(rhs);
        const double scale = std::max(1.0, inf_norm(rhs));
        for (int it = 0; it < refine_steps; ++it) {
            const Vec err = rhs - multiply(sol);
            if (inf_norm(err) <= 1e-12 * scale) break;
            sol += ldl_.solve(err);
        }
        return sol;
    }

private:
    Vec multiply(const Vec& v) const {
        const auto x = v.head(n_);
        const auto y = v.segment(n_, p_);
        const Vec z = v.tail(m_);
        Vec out(n_ + p_ + m_);
        out.head(n_) = prog_.G.transpose() * z;
        if (p_ > 0) {
            out.head(n_) += prog_.A.transpose() * y;
            out.segment(n_, p_) = prog_.A * x;
        }
        out.tail(m_) = prog_.G * x - cones_.apply_W(cones_.apply_W(z));
        return out;
    }

    const ConicProgram& prog_;
    const Cones& cones_;
    int n_, p_, m_;
    double reg_;
    SpMat K_;
    std::vector<int> diag_slots_, lp_slots_;
    std::vector<std::vector<int>> soc_slots_;
    QuasiDefiniteLdl ldl_;
};

}  // namespace

ConicSolution solve_conic(const ConicProgram& prog, const ConicSolverOptions& o) {
    prog.validate();
    const int n = prog.num_vars();
    const int p = prog.num_eq();
    const int m = prog.num_cone_rows();
    Cones cones(prog.lp_dim, prog.soc_dims);
    const Vec e = cones.unit();
    const double D = cones.degree();

    ConicSolution sol;
    Kkt kkt(prog, cones, o.static_reg);

    auto split = [&](const Vec& v, Vec& x, Vec& y, Vec& z) {
        x = v.head(n);
        y = v.segment(n, p);
        z = v.tail(m);
    };
    auto stack = [&](const Vec& x, const Vec& y, const Vec& z) {
        Vec v(n + p + m);
        v << x, y, z;
        return v;
    };

    // Initial point: least-squares primal and dual points shifted into the cone.
    cones.identity_scaling();
    if (!kkt.factor()) {
        sol.detail = "initial factorization failed";
        return sol;
    }
    Vec x, y, z, s, tmp1, tmp2;
    split(kkt.solve(stack(Vec::Zero(n), prog.b, prog.h), o.refine_steps), x, tmp1, tmp2);
    s = -tmp2;
    {
        const double a = cones.boundary_shift(s);
        if (a >= -1e-8) s += (1.0 + a) * e;
    }
    split(kkt.solve(stack(-prog.c, Vec::Zero(p), Vec::Zero(m)), o.refine_steps), tmp1, y, z);
    {
        const double a = cones.boundary_shift(z);
        if (a >= -1e-8) z += (1.0 + a) * e;
    }
    double tau = 1.0, kappa = 1.0;

    const double bnorm = std::max(1.0, inf_norm(prog.b));
    const double hnorm = std::max(1.0, inf_norm(prog.h));
    const double cnorm = std::max(1.0, inf_norm(prog.c));

    for (int iter = 0; iter <= o.max_iters; ++iter) {
        // residuals of the embedding
        Vec rx = prog.G.transpose() * z + prog.c * tau;
        Vec ry = Vec::Zero(p);
        if (p > 0) {
            rx += prog.A.transpose() * y;
            ry = prog.A * x - prog.b * tau;
        }
        const Vec rz = s + prog.G * x - prog.h * tau;
        const double cx = prog.c.dot(x);
        const double by = p > 0 ? prog.b.dot(y) : 0.0;
        const double hz = prog.h.dot(z);
        const double rt = kappa + cx + by + hz;
        const double mu = (s.dot(z) + tau * kappa) / (D + 1.0);

        sol.iterations = iter;
        sol.pres = std::max(inf_norm(ry) / bnorm, inf_norm(rz) / hnorm) / tau;
        sol.dres = inf_norm(rx) / cnorm / tau;
        sol.gap = s.dot(z) / (tau * tau);
        sol.pcost = cx / tau;
        sol.dcost = -(by + hz) / tau;
        double relgap = kInf;
        if (sol.pcost < 0) {
            relgap = sol.gap / -sol.pcost;
        } else if (sol.dcost > 0) {
            relgap = sol.gap / sol.dcost;
        }
        if (o.verbose) {
            std::cerr << std::setw(3) << iter << std::scientific << std::setprecision(3) << "  pcost "
                      << sol.pcost << "  dcost " << sol.dcost << "  gap " << sol.gap << "  pres "
                      << sol.pres << "  dres " << sol.dres << "  k/t " << kappa / tau << "  mu " << mu
                      << "\n";
        }
        if (sol.pres < o.feastol && sol.dres < o.feastol &&
            (sol.gap < o.abstol || relgap < o.reltol)) {
            sol.status = SolveStatus::Solved;
            sol.x = x / tau;
            sol.y = y / tau;
            sol.z = z / tau;
            sol.s = s / tau;
            sol.detail = "optimal";
            return sol;
        }
        // infeasibility certificates
        if (by + hz < 0) {
            const Vec aty = rx - prog.c * tau;
            if (inf_norm(aty) / -(by + hz) < o.feastol) {
                sol.status = SolveStatus::Infeasible;
                sol.detail = "primal infeasible";
                sol.y = y / -(by + hz);
                sol.z = z / -(by + hz);
                return sol;
            }
        }
        if (cx < 0) {
            const double pr = std::max(inf_norm(ry + prog.b * tau), inf_norm(rz + prog.h * tau));
            if (pr / -cx < o.feastol) {
                sol.status = SolveStatus::SolverError;
                sol.detail = "dual infeasible (unbounded)";
                return sol;
            }
        }
        if (iter == o.max_iters) break;

        if (!cones.update_scaling(s, z)) {
            sol.detail = "iterate left the cone interior";
            return sol;
        }
        const Vec lambda = cones.apply_W(z);

        struct Direction {
            Vec dx, dy, dz, ds;
            double dtau = 0, dkappa = 0;
        };
        auto step_length = [&](const Direction& d) {
            double a = std::min(cones.max_step(lambda, cones.apply_Winv(d.ds)),
                                cones.max_step(lambda, cones.apply_W(d.dz)));
            if (d.dtau < 0) a = std::min(a, -tau / d.dtau);
            if (d.dkappa < 0) a = std::min(a, -kappa / d.dkappa);
            return a;
        };

        Direction dir;
        double alpha = 0.0;
        double reg = o.static_reg;
        for (int attempt = 0; attempt < 4; ++attempt, reg *= 100.0) {
            kkt.set_regularization(reg);
            if (!kkt.factor()) continue;
            Vec x1, y1, z1;
            split(kkt.solve(stack(-prog.c, prog.b, prog.h), o.refine_steps), x1, y1, z1);
            const double denom =
                prog.c.dot(x1) + (p > 0 ? prog.b.dot(y1) : 0.0) + prog.h.dot(z1) - kappa / tau;

            auto direction = [&](double sigma, const Vec& xi, double corr_tau) {
                Direction d;
                const Vec rhs =
                    stack(-(1 - sigma) * rx, -(1 - sigma) * ry, -(1 - sigma) * rz - cones.apply_W(xi));
                Vec x2, y2, z2;
                split(kkt.solve(rhs, o.refine_steps), x2, y2, z2);
                const double comp_tau = sigma * mu - tau * kappa - corr_tau;
                const double num = -(1 - sigma) * rt - comp_tau / tau -
                                   (prog.c.dot(x2) + (p > 0 ? prog.b.dot(y2) : 0.0) + prog.h.dot(z2));
                d.dtau = num / denom;
                d.dx = x2 + d.dtau * x1;
                d.dy = y2 + d.dtau * y1;
                d.dz = z2 + d.dtau * z1;
                d.ds = cones.apply_W(xi - cones.apply_W(d.dz));
                d.dkappa = (comp_tau - kappa * d.dtau) / tau;
                return d;
            };

            // predictor
            const Direction aff = direction(0.0, -lambda, 0.0);
            const double a_aff = std::min(1.0, step_length(aff));
            const double sigma = std::clamp(std::pow(1.0 - a_aff, 3), 0.0, 1.0);

            // corrector
            const Vec corr = cones.jordan(cones.apply_Winv(aff.ds), cones.apply_W(aff.dz));
            const Vec xi = cones.jordan_div(lambda, sigma * mu * e - cones.jordan(lambda, lambda) - corr);
            dir = direction(sigma, xi, aff.dtau * aff.dkappa);
            alpha = std::min(1.0, 0.99 * step_length(dir));
            const bool finite = dir.dx.allFinite() && dir.dz.allFinite() && dir.ds.allFinite() &&
                                std::isfinite(dir.dtau) && std::isfinite(dir.dkappa);
            if (o.verbose) {
                std::cerr << "     a_aff " << a_aff << "  sigma " << sigma << "  alpha " << alpha
                          << (attempt > 0 ? "  (raised regularization)" : "") << "\n";
            }
            if (finite && alpha > 1e-8) break;
            alpha = 0.0;
        }
        if (!(alpha > 0.0)) {
            sol.detail = "no usable search direction";
            break;
        }

        x += alpha * dir.dx;
        y += alpha * dir.dy;
        z += alpha * dir.dz;
        s += alpha * dir.ds;
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        if (!(x.allFinite() && z.allFinite() && s.allFinite() && std::isfinite(tau))) {
            sol.detail = "non-finite iterate";
            return sol;
        }
    }
    sol.status = SolveStatus::SolverError;
    if (sol.detail.empty()) sol.detail = "iteration limit reached";
    sol.x = x / tau;
    sol.y = y / tau;
    sol.z = z / tau;
    sol.s = s / tau;
    return sol;
}

double max_constraint_violation(const ConicProgram& prog, const Vec& x) {
    double worst = 0.0;
    if (prog.num_eq() > 0) worst = inf_norm(prog.A * x - prog.b);
    const Vec slack = prog.h - prog.G * x;
    for (int i = 0; i < prog.lp_dim; ++i) worst = std::max(worst, -slack(i));
    int off = prog.lp_dim;
    for (int q : prog.soc_dims) {
        const auto blk = slack.segment(off, q);
        worst = std::max(worst, blk.tail(q - 1).norm() - blk(0));
        off += q;
    }
    return worst;
}

void write_conic_program(std::ostream& out, const ConicProgram& prog) {
    out << std::setprecision(17);
    out << "conic 1\n";
    out << "dims " << prog.num_vars() << ' ' << prog.num_eq() << ' ' << prog.num_cone_rows() << ' '
        << prog.lp_dim << ' ' << prog.soc_dims.size();
    for (int q : prog.soc_dims) out << ' ' << q;
    out << '\n';
    auto vec_line = [&](const char* tag, const Vec& v) {
        out << tag;
        for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v(i);
        out << '\n';
    };
    vec_line("c", prog.c);
    vec_line("b", prog.b);
    vec_line("h", prog.h);
    auto mat_block = [&](const char* tag, const SpMat& M) {
        out << tag << ' ' << M.nonZeros() << '\n';
        for (int j = 0; j < M.outerSize(); ++j)
            for (SpMat::InnerIterator it(M, j); it; ++it) out << it.row() << ' ' << j << ' ' << it.value() << '\n';
    };
    mat_block("A", prog.A);
    mat_block("G", prog.G);
}

ConicProgram read_conic_program(std::istream& in) {
    auto expect = [&](const std::string& tag) {
        std::string t;
        if (!(in >> t) || t != tag) throw ParseError("conic program: expected '" + tag + "'");
    };
    expect("conic");
    int version = 0;
    in >> version;
    if (version != 1) throw ParseError("conic program: unsupported version");
    expect("dims");
    int n, p, m, l;
    std::size_t nsoc;
    in >> n >> p >> m >> l >> nsoc;
    ConicProgram prog;
    prog.lp_dim = l;
    prog.soc_dims.resize(nsoc);
    for (auto& q : prog.soc_dims) in >> q;
    auto read_vec = [&](const char* tag, int size) {
        expect(tag);
        Vec v(size);
        for (int i = 0; i < size; ++i) in >> v(i);
        return v;
    };
    prog.c = read_vec("c", n);
    prog.b = read_vec("b", p);
    prog.h = read_vec("h", m);
    auto read_mat = [&](const char* tag, int rows) {
        expect(tag);
        long nnz = 0;
        in >> nnz;
        std::vector<Eigen::Triplet<double>> trips;
        for (long k = 0; k < nnz; ++k) {
            int r, c;
            double v;
            in >> r >> c >> v;
            trips.emplace_back(r, c, v);
        }
        SpMat M(rows, n);
        M.setFromTriplets(trips.begin(), trips.end());
        return M;
    };
    prog.A = read_mat("A", p);
    prog.G = read_mat("G", m);
    if (!in) throw ParseError("conic program: truncated input");
    prog.validate();
    return prog;
}

}  // namespace psf
