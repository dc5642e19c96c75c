#include "psf/ragrid/ragrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <thread>

#include "psf/errors.hpp"

namespace psf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("unexpected end of binary file");
    return v;
}

}  // namespace

Vec linspace(double lo, double hi, int n) {
    if (n < 2) throw ConfigError("linspace needs at least 2 points");
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = lo + (hi - lo) * i / (n - 1);
    v(n - 1) = hi;
    return v;
}

GridValueFunction::GridValueFunction(std::vector<Vec> axes, double fill) : axes_(std::move(axes)) {
    if (axes_.empty()) throw ConfigError("grid needs at least one axis");
    long total = 1;
    for (const Vec& a : axes_) {
        if (a.size() < 2) throw ConfigError("grid axis needs at least 2 nodes");
        for (Eigen::Index i = 1; i < a.size(); ++i)
            if (!(a(i) > a(i - 1))) throw ConfigError("grid axis must be strictly increasing");
        total *= a.size();
    }
    strides_.assign(axes_.size(), 1);
    for (int d = dim() - 2; d >= 0; --d) strides_[d] = strides_[d + 1] * static_cast<int>(axes_[d + 1].size());
    values_ = Vec::Constant(total, fill);
}

Vec GridValueFunction::node(int flat) const {
    Vec x(dim());
    for (int d = 0; d < dim(); ++d) {
        x(d) = axes_[d](flat / strides_[d]);
        flat %= strides_[d];
    }
    return x;
}

int GridValueFunction::flat_index(const std::vector<int>& multi) const {
    int f = 0;
    for (int d = 0; d < dim(); ++d) f += multi[d] * strides_[d];
    return f;
}

bool GridValueFunction::inside(const Vec& x) const {
    for (int d = 0; d < dim(); ++d)
        if (!(x(d) >= axes_[d](0) && x(d) <= axes_[d](axes_[d].size() - 1))) return false;
    return true;
}

namespace {

/// Corner indices and weights of the multilinear stencil at x (inside).
void stencil(const std::vector<Vec>& axes, const std::vector<int>& strides, const Vec& x, int* idx,
             double* w) {
    const int n = static_cast<int>(axes.size());
    int base = 0;
    std::vector<double> t(n);
    for (int d = 0; d < n; ++d) {
        const Vec& a = axes[d];
        const int m = static_cast<int>(a.size());
        int i = static_cast<int>(std::upper_bound(a.data(), a.data() + m, x(d)) - a.data()) - 1;
        i = std::clamp(i, 0, m - 2);
        t[d] = (x(d) - a(i)) / (a(i + 1) - a(i));
        base += i * strides[d];
    }
    const int corners = 1 << n;
    for (int c = 0; c < corners; ++c) {
        int off = base;
        double weight = 1.0;
        for (int d = 0; d < n; ++d) {
            if (c >> (n - 1 - d) & 1) {
                off += strides[d];
                weight *= t[d];
            } else {
                weight *= 1.0 - t[d];
            }
        }
        idx[c] = off;
        w[c] = weight;
    }
}

}  // namespace

double GridValueFunction::interpolate(const Vec& x, const std::function<double(const Vec&)>& outside) const {
    if (!inside(x)) return outside(x);
    const int corners = 1 << dim();
    std::vector<int> idx(corners);
    std::vector<double> w(corners);
    stencil(axes_, strides_, x, idx.data(), w.data());
    double v = 0.0;
    for (int c = 0; c < corners; ++c)
        if (w[c] != 0.0) v += w[c] * values_(idx[c]);
    return v;
}

void GridValueFunction::save(std::ostream& out) const {
    out.write("PSFGRID1", 8);
    put<std::int32_t>(out, dim());
    for (const Vec& a : axes_) {
        put<std::int32_t>(out, static_cast<std::int32_t>(a.size()));
        out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
    }
    put<std::int64_t>(out, values_.size());
    out.write(reinterpret_cast<const char*>(values_.data()),
              static_cast<std::streamsize>(values_.size() * sizeof(double)));
}

GridValueFunction GridValueFunction::load(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "PSFGRID1", 8) != 0) throw ParseError("not a grid value file");
    const int n = get<std::int32_t>(in);
    if (n < 1 || n > 8) throw ParseError("bad grid dimension");
    std::vector<Vec> axes;
    for (int d = 0; d < n; ++d) {
        const int m = get<std::int32_t>(in);
        if (m < 2) throw ParseError("bad axis length");
        Vec a(m);
        if (!in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(m * sizeof(double))))
            throw ParseError("truncated axis");
        axes.push_back(std::move(a));
    }
    GridValueFunction V(std::move(axes));
    const auto count = get<std::int64_t>(in);
    if (count != V.size()) throw ParseError("value count does not match axes");
    if (!in.read(reinterpret_cast<char*>(V.values_.data()), static_cast<std::streamsize>(count * sizeof(double))))
        throw ParseError("truncated values");
    return V;
}

void GridValueFunction::write_csv(std::ostream& out) const {
    for (int d = 0; d < dim(); ++d) out << 'x' << (d + 1) << ',';
    out << "value\n" << std::setprecision(12);
    for (int i = 0; i < size(); ++i) {
        const Vec x = node(i);
        for (int d = 0; d < dim(); ++d) out << x(d) << ',';
        out << values_(i) << '\n';
    }
}

void GridPolicy::save(std::ostream& out) const {
    out.write("PSFPOL01", 8);
    put<std::int64_t>(out, static_cast<std::int64_t>(index.size()));
    for (int i : index) put<std::int32_t>(out, i);
}

GridPolicy GridPolicy::load(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "PSFPOL01", 8) != 0) throw ParseError("not a grid policy file");
    GridPolicy p;
    const auto n = get<std::int64_t>(in);
    if (n < 0) throw ParseError("bad policy length");
    p.index.resize(static_cast<std::size_t>(n));
    for (auto& i : p.index) i = get<std::int32_t>(in);
    return p;
}

GridProblem make_grid_problem(const SystemSetup& setup, const std::vector<int>& nodes_per_axis) {
    const auto box = setup.X.bounding_box();
    const int n = setup.X.dim();
    if (static_cast<int>(nodes_per_axis.size()) != n) throw ConfigError("grid resolution has wrong dimension");
    GridProblem p;
    for (int d = 0; d < n; ++d) p.axes.push_back(linspace(box.first(d), box.second(d), nodes_per_axis[d]));
    auto model = setup.model;
    p.step = [model](const Vec& x, const Vec& u, const Vec& d) { return step_disturbed(*model, x, u, d); };
    const Polytope X = setup.X, R = setup.R;
    p.h = [X](const Vec& x) { return X.margin(x); };
    p.l = [R](const Vec& x) { return R.margin(x); };
    return p;
}

void RAConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (actions.empty()) throw ConfigError("action set is empty");
    if (disturbances.empty()) throw ConfigError("disturbance set is empty");
    if (!(fixpoint_tol > 0.0)) throw ConfigError("fixpoint_tol must be positive");
    if (max_sweeps < 1) throw ConfigError("max_sweeps must be >= 1");
}

std::vector<Vec> uniform_actions(const Polytope& U, int levels) {
    if (levels < 1) throw ConfigError("need at least one action level");
    const auto [lo, hi] = U.bounding_box();
    const int n = U.dim();
    std::vector<Vec> out;
    int total = 1;
    for (int d = 0; d < n; ++d) total *= levels;
    for (int c = 0; c < total; ++c) {
        Vec u(n);
        int rem = c;
        for (int d = n - 1; d >= 0; --d) {
            const int i = rem % levels;
            rem /= levels;
            u(d) = levels == 1 ? 0.5 * (lo(d) + hi(d)) : lo(d) + (hi(d) - lo(d)) * i / (levels - 1);
        }
        if (U.contains(u)) out.push_back(u);
    }
    return out;
}

std::vector<Vec> disturbance_samples(const Polytope& D, int lattice) {
    std::vector<Vec> out = D.vertices();
    if (lattice >= 2) {
        for (const Vec& d : uniform_actions(D, lattice)) {
            const bool dup = std::any_of(out.begin(), out.end(),
                                         [&](const Vec& v) { return (v - d).lpNorm<Eigen::Infinity>() < 1e-12; });
            if (!dup) out.push_back(d);
        }
    }
    return out;
}

ReachAvoidGrid::ReachAvoidGrid(GridProblem problem, RAConfig cfg) : prob_(std::move(problem)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!prob_.step || !prob_.h || !prob_.l) throw ConfigError("grid problem is incomplete");
    const GridValueFunction grid(prob_.axes);
    num_nodes_ = grid.size();
    const int n = grid.dim();
    corners_ = 1 << n;
    na_ = static_cast<int>(cfg_.actions.size());
    nd_ = static_cast<int>(cfg_.disturbances.size());
    std::vector<int> strides(n, 1);
    for (int d = n - 2; d >= 0; --d) strides[d] = strides[d + 1] * static_cast<int>(prob_.axes[d + 1].size());

    h_.resize(num_nodes_);
    l_.resize(num_nodes_);
    const long total = static_cast<long>(num_nodes_) * na_ * nd_;
    stencil_idx_.assign(total * corners_, 0);
    stencil_w_.assign(total * corners_, 0.0);
    outside_.assign(total, kNaN);
    for (int i = 0; i < num_nodes_; ++i) {
        const Vec x = grid.node(i);
        h_(i) = prob_.h(x);
        l_(i) = prob_.l(x);
        for (int a = 0; a < na_; ++a) {
            for (int d = 0; d < nd_; ++d) {
                const long s = (static_cast<long>(i) * na_ + a) * nd_ + d;
                const Vec next = prob_.step(x, cfg_.actions[a], cfg_.disturbances[d]);
                if (grid.inside(next)) {
                    stencil(prob_.axes, strides, next, &stencil_idx_[s * corners_], &stencil_w_[s * corners_]);
                } else {
                    outside_[s] = std::max(prob_.l(next), prob_.h(next));
                }
            }
        }
    }
}

GridValueFunction ReachAvoidGrid::terminal_value() const {
    GridValueFunction V(prob_.axes);
    V.values() = l_.cwiseMax(h_);
    return V;
}

double ReachAvoidGrid::interpolate(const GridValueFunction& V, const Vec& x) const {
    return V.interpolate(x, [this](const Vec& y) { return std::max(prob_.l(y), prob_.h(y)); });
}

double ReachAvoidGrid::successor_value(const GridValueFunction& V, int s) const {
    const double o = outside_[s];
    if (!std::isnan(o)) return o;
    const int* idx = &stencil_idx_[static_cast<long>(s) * corners_];
    const double* w = &stencil_w_[static_cast<long>(s) * corners_];
    double v = 0.0;
    for (int c = 0; c < corners_; ++c)
        if (w[c] != 0.0) v += w[c] * V[idx[c]];
    return v;
}

double ReachAvoidGrid::backup(int node, double q) const {
    const double g = cfg_.gamma;
    return (1.0 - g) * std::max(l_(node), h_(node)) + g * std::max(h_(node), std::min(l_(node), q));
}

template <class F>
GridValueFunction ReachAvoidGrid::sweep(F&& per_node) const {
    GridValueFunction out(prob_.axes);
    const int jobs = std::max(1, std::min(cfg_.jobs, num_nodes_));
    if (jobs == 1) {
        for (int i = 0; i < num_nodes_; ++i) out[i] = per_node(i);
        return out;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < num_nodes_; i += jobs) out[i] = per_node(i);
        });
    }
    for (auto& th : pool) th.join();
    return out;
}

GridValueFunction ReachAvoidGrid::apply_T(const GridValueFunction& V) const {
    return sweep([&](int i) {
        double q = std::numeric_limits<double>::infinity();
        for (int a = 0; a < na_; ++a) {
            double worst = -std::numeric_limits<double>::infinity();
            for (int d = 0; d < nd_; ++d) worst = std::max(worst, successor_value(V, (i * na_ + a) * nd_ + d));
            q = std::min(q, worst);
        }
        return backup(i, q);
    });
}

GridValueFunction ReachAvoidGrid::apply_T_pi(const GridValueFunction& V, const GridPolicy& pi) const {
    if (static_cast<int>(pi.index.size()) != num_nodes_) throw ConfigError("policy size does not match grid");
    return sweep([&](int i) {
        const int a = pi.index[i];
        double worst = -std::numeric_limits<double>::infinity();
        for (int d = 0; d < nd_; ++d) worst = std::max(worst, successor_value(V, (i * na_ + a) * nd_ + d));
        return backup(i, worst);
    });
}

GridValueFunction ReachAvoidGrid::apply_T_pi_mu(const GridValueFunction& V, const GridPolicy& pi,
                                                const GridPolicy& mu) const {
    if (static_cast<int>(pi.index.size()) != num_nodes_ || static_cast<int>(mu.index.size()) != num_nodes_)
        throw ConfigError("policy size does not match grid");
    return sweep([&](int i) { return backup(i, successor_value(V, (i * na_ + pi.index[i]) * nd_ + mu.index[i])); });
}

GridValueFunction ReachAvoidGrid::policy_evaluation(const GridPolicy& pi, const GridValueFunction* start,
                                                    int* sweeps) const {
    for (int a : pi.index)
        if (a < 0 || a >= na_) throw ConfigError("policy index out of range");
    GridValueFunction V = start ? *start : terminal_value();
    double change = 0.0;
    for (int it = 1; it <= cfg_.max_sweeps; ++it) {
        GridValueFunction next = apply_T_pi(V, pi);
        change = (next.values() - V.values()).lpNorm<Eigen::Infinity>();
        V = std::move(next);
        if (change < cfg_.fixpoint_tol) {
            if (sweeps) *sweeps = it;
            return V;
        }
    }
    throw ConvergenceError("policy evaluation did not converge", change);
}

GridPolicy ReachAvoidGrid::policy_improvement(const GridValueFunction& V) const {
    GridPolicy pi;
    pi.index.assign(num_nodes_, 0);
    for (int i = 0; i < num_nodes_; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a < na_; ++a) {
            double worst = -std::numeric_limits<double>::infinity();
            for (int d = 0; d < nd_; ++d) worst = std::max(worst, successor_value(V, (i * na_ + a) * nd_ + d));
            if (worst < best) {
                best = worst;
                pi.index[i] = a;
            }
        }
    }
    return pi;
}

GridPolicy ReachAvoidGrid::worst_disturbance(const GridValueFunction& V, const GridPolicy& pi) const {
    GridPolicy mu;
    mu.index.assign(num_nodes_, 0);
    for (int i = 0; i < num_nodes_; ++i) {
        double worst = -std::numeric_limits<double>::infinity();
        for (int d = 0; d < nd_; ++d) {
            const double v = successor_value(V, (i * na_ + pi.index[i]) * nd_ + d);
            if (v > worst) {
                worst = v;
                mu.index[i] = d;
            }
        }
    }
    return mu;
}

PolicyIterationResult ReachAvoidGrid::policy_iteration(const GridPolicy& pi0) const {
    PolicyIterationResult res;
    GridPolicy pi = pi0;
    for (int k = 0; k < cfg_.max_sweeps; ++k) {
        int sweeps = 0;
        GridValueFunction V = policy_evaluation(pi, res.history.empty() ? nullptr : &res.history.back(), &sweeps);
        res.evaluation_sweeps.push_back(sweeps);
        const double change =
            res.history.empty() ? std::numeric_limits<double>::infinity()
                                : (V.values() - res.history.back().values()).lpNorm<Eigen::Infinity>();
        res.history.push_back(V);
        res.iterations = k + 1;
        GridPolicy next = policy_improvement(V);
        if (next == pi || change < cfg_.fixpoint_tol) {
            res.policy = std::move(pi);
            res.value = std::move(V);
            return res;
        }
        pi = std::move(next);
    }
    throw ConvergenceError("policy iteration did not converge", 0.0);
}

ValueIterationResult ReachAvoidGrid::value_iteration() const {
    ValueIterationResult res;
    GridValueFunction V = terminal_value();
    for (int it = 1; it <= cfg_.max_sweeps; ++it) {
        GridValueFunction next = apply_T(V);
        const double change = (next.values() - V.values()).lpNorm<Eigen::Infinity>();
        res.residuals.push_back(change);
        V = std::move(next);
        if (change < cfg_.fixpoint_tol) {
            res.value = std::move(V);
            res.sweeps = it;
            return res;
        }
    }
    throw ConvergenceError("value iteration did not converge", res.residuals.back());
}

}  // namespace psf
