#include "psf/sysmodel/linearize.hpp"

#include <cmath>
#include <random>

#include "psf/errors.hpp"

namespace psf {

LinearizationBundle linearize_trajectory(const DisturbedModel& model, const NominalTrajectory& traj,
                                         const Polytope& X, const Polytope& U, const Vec& mu,
                                         bool check_domain) {
    const int T = traj.horizon();
    if (T < 1 || traj.v.size() != traj.z.size()) {
        throw ConfigError("linearize_trajectory: trajectory needs T+1 state/input pairs, T >= 1");
    }
    if (mu.size() != model.nx()) throw ConfigError("linearize_trajectory: mu has wrong size");
    if ((mu.array() < 0).any()) throw ConfigError("linearize_trajectory: mu must be nonnegative");

    LinearizationBundle b;
    b.mu = mu;
    b.Af.resize(T);
    b.Bf.resize(T);
    b.Ag.resize(T);
    b.Bg.resize(T);
    for (int k = 0; k < T; ++k) {
        if (check_domain && (!X.contains(traj.z[k]) || !U.contains(traj.v[k]))) {
            throw DomainError("linearize_trajectory: nominal point " + std::to_string(k) +
                              " lies outside X x U");
        }
        model.jacobian_f(traj.z[k], traj.v[k], b.Af[k], b.Bf[k]);
        model.jacobian_g(traj.z[k], traj.v[k], b.Ag[k], b.Bg[k]);
    }
    return b;
}

Vec linearization_remainder(const DisturbedModel& model, const Vec& z, const Vec& v, const Vec& x,
                            const Vec& u, const Vec& d) {
    Mat Af, Bf, Ag, Bg;
    model.jacobian_f(z, v, Af, Bf);
    model.jacobian_g(z, v, Ag, Bg);
    const int n = model.nx();
    const int q = model.nd();
    const Vec dx = x - z;
    const Vec du = u - v;
    // (I (x) d^T) M for a stacked (n*q) x c matrix M.
    auto contract = [&](const Mat& M) {
        Mat out = Mat::Zero(n, M.cols());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < q; ++j) out.row(i) += d(j) * M.row(i * q + j);
        return out;
    };
    const Vec lin = model.f(z, v) + Af * dx + Bf * du + model.g(z, v) * d + contract(Ag) * dx +
                    contract(Bg) * du;
    return model.f(x, u) + model.g(x, u) * d - lin;
}

namespace {

class BoxSampler {
public:
    explicit BoxSampler(const Polytope& P) : P_(P) {
        auto [lo, hi] = P.bounding_box();
        lo_ = lo;
        hi_ = hi;
        exact_box_ = P.as_box().has_value();
    }

    template <class Rng>
    Vec uniform(Rng& rng) const {
        std::uniform_real_distribution<double> U01(0.0, 1.0);
        for (int attempt = 0; attempt < 10000; ++attempt) {
            Vec p(lo_.size());
            for (int i = 0; i < p.size(); ++i) p(i) = lo_(i) + (hi_(i) - lo_(i)) * U01(rng);
            if (exact_box_ || P_.contains(p)) return p;
        }
        return P_.center();
    }

    const Vec& lo() const { return lo_; }
    const Vec& hi() const { return hi_; }
    bool contains(const Vec& p) const { return P_.contains(p, 0.0); }

private:
    const Polytope& P_;
    Vec lo_, hi_;
    bool exact_box_ = false;
};

}  // namespace

Vec curvature_bounds(const DisturbedModel& model, const Polytope& X, const Polytope& U,
                     const Polytope& D, const CurvatureOptions& opts) {
    const int n = model.nx();
    const int m = model.nu();
    BoxSampler sx(X), su(U), sd(D);
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> U01(0.0, 1.0);
    std::uniform_real_distribution<double> Upm(-1.0, 1.0);

    const Vec xspan = sx.hi() - sx.lo();
    const Vec uspan = su.hi() - su.lo();
    Vec worst = Vec::Zero(n);
    for (int s = 0; s < opts.samples; ++s) {
        const Vec z = sx.uniform(rng);
        const Vec v = su.uniform(rng);
        Vec x, u;
        if (U01(rng) < opts.local_fraction) {
            // radius log-uniform in [1e-3, 1] of the set span
            const double radius = std::pow(10.0, -3.0 * U01(rng));
            bool inside = false;
            for (int attempt = 0; attempt < 50 && !inside; ++attempt) {
                x = z;
                u = v;
                for (int i = 0; i < n; ++i) x(i) += radius * xspan(i) * Upm(rng);
                for (int i = 0; i < m; ++i) u(i) += radius * uspan(i) * Upm(rng);
                inside = sx.contains(x) && su.contains(u);
            }
            if (!inside) continue;
        } else {
            x = sx.uniform(rng);
            u = su.uniform(rng);
        }
        const Vec d = sd.uniform(rng);
        const double e = std::max((x - z).lpNorm<Eigen::Infinity>(),
                                  m > 0 ? (u - v).lpNorm<Eigen::Infinity>() : 0.0);
        if (e < 1e-4) continue;  // remainder below roundoff resolution
        Vec r = linearization_remainder(model, z, v, x, u, d).cwiseAbs();
        // roundoff floor: an exactly affine map must give mu = 0
        const double floor = 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>());
        r = (r.array() <= floor).select(0.0, r);
        worst = worst.cwiseMax(r / (e * e));
    }
    return opts.inflation * worst;
}

}  // namespace psf
