#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "psf/ragrid/ragrid.hpp"

namespace psf::testing {

inline Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

// 5x5 lattice on integer nodes; moves by one node per action, disturbance
// adds a drift. Successors are always nodes or leave the box.
inline double mdp_h(const Vec& x) {
    const double box = std::max(std::abs(x(0) - 2.0), std::abs(x(1) - 2.0)) - 2.5;
    const double obstacle = 0.6 - std::abs(x(0) - 1.0) - std::abs(x(1) - 3.0);
    return std::max(box, obstacle);
}

inline double mdp_l(const Vec& x) { return std::max(std::abs(x(0) - 4.0), std::abs(x(1) - 4.0)) - 0.5 + 0.05 * x(1); }

inline GridProblem finite_mdp(bool clamp) {
    GridProblem p;
    p.axes = {linspace(0, 4, 5), linspace(0, 4, 5)};
    p.step = [clamp](const Vec& x, const Vec& u, const Vec& d) {
        Vec y = x + u + d;
        if (clamp) y = y.cwiseMax(0.0).cwiseMin(4.0);
        return y;
    };
    p.h = mdp_h;
    p.l = mdp_l;
    return p;
}

inline RAConfig mdp_config(double gamma) {
    RAConfig cfg;
    cfg.gamma = gamma;
    cfg.actions = {vec2(1, 0), vec2(-1, 0), vec2(0, 1), vec2(0, -1)};
    cfg.disturbances = {vec2(0, 0), vec2(-1, 0)};
    cfg.fixpoint_tol = 1e-12;
    return cfg;
}

/// Tabular reach-avoid backup over explicit successor lists, iterated until
/// no entry changes.
struct TabularOracle {
    int n = 25;
    std::vector<double> h, l;
    // succ[i][a][d]: node index or -1 with value off[i][a][d]
    std::vector<std::vector<std::vector<int>>> succ;
    std::vector<std::vector<std::vector<double>>> off;
    double gamma;

    TabularOracle(bool clamp, double g) : gamma(g) {
        const auto p = finite_mdp(clamp);
        const auto cfg = mdp_config(g);
        for (int r = 0; r < 5; ++r) {
            for (int c = 0; c < 5; ++c) {
                const Vec x = vec2(r, c);
                h.push_back(p.h(x));
                l.push_back(p.l(x));
                std::vector<std::vector<int>> sa;
                std::vector<std::vector<double>> oa;
                for (const Vec& u : cfg.actions) {
                    std::vector<int> sd;
                    std::vector<double> od;
                    for (const Vec& d : cfg.disturbances) {
                        const Vec y = p.step(x, u, d);
                        const bool in = y(0) >= 0 && y(0) <= 4 && y(1) >= 0 && y(1) <= 4;
                        sd.push_back(in ? static_cast<int>(std::lround(y(0))) * 5 + static_cast<int>(std::lround(y(1)))
                                        : -1);
                        od.push_back(std::max(p.l(y), p.h(y)));
                    }
                    sa.push_back(sd);
                    oa.push_back(od);
                }
                succ.push_back(sa);
                off.push_back(oa);
            }
        }
    }

    double next(const std::vector<double>& V, int i, int a, int d) const {
        const int j = succ[i][a][d];
        return j < 0 ? off[i][a][d] : V[j];
    }

    std::vector<double> solve(const std::vector<int>* pi) const {
        std::vector<double> V(n);
        for (int i = 0; i < n; ++i) V[i] = std::max(l[i], h[i]);
        for (int it = 0; it < 100000; ++it) {
            std::vector<double> W(n);
            for (int i = 0; i < n; ++i) {
                double q = 1e300;
                for (int a = 0; a < 4; ++a) {
                    if (pi && (*pi)[i] != a) continue;
                    q = std::min(q, std::max(next(V, i, a, 0), next(V, i, a, 1)));
                }
                W[i] = (1 - gamma) * std::max(l[i], h[i]) + gamma * std::max(h[i], std::min(l[i], q));
            }
            if (W == V) return V;
            V = W;
        }
        throw std::runtime_error("oracle did not settle");
    }
};

}  // namespace psf::testing
