#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "psf/errors.hpp"
#include "psf/ragrid/ragrid.hpp"
#include "support/finite_mdp.hpp"

using namespace psf;
using namespace psf::testing;

namespace {

const SystemSetup& pendulum() {
    static const SystemSetup setup = make_system(default_pendulum_config());
    return setup;
}

RAConfig pendulum_config(int action_levels, double gamma) {
    RAConfig cfg;
    cfg.gamma = gamma;
    cfg.actions = uniform_actions(pendulum().U, action_levels);
    cfg.disturbances = disturbance_samples(pendulum().D);
    return cfg;
}

ReachAvoidGrid pendulum_grid(int n, int action_levels, double gamma) {
    return ReachAvoidGrid(make_grid_problem(pendulum(), {n, n}), pendulum_config(action_levels, gamma));
}

GridValueFunction random_value(const ReachAvoidGrid& g, std::mt19937& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    GridValueFunction V = g.blank();
    for (int i = 0; i < V.size(); ++i) V[i] = u(rng);
    return V;
}

GridPolicy random_policy(int nodes, int choices, std::mt19937& rng) {
    std::uniform_int_distribution<int> u(0, choices - 1);
    GridPolicy p;
    for (int i = 0; i < nodes; ++i) p.index.push_back(u(rng));
    return p;
}

double sup_diff(const GridValueFunction& a, const GridValueFunction& b) {
    return (a.values() - b.values()).lpNorm<Eigen::Infinity>();
}

}  // namespace

TEST(GridValue, RejectsBadAxes) {
    EXPECT_THROW(GridValueFunction({linspace(0, 1, 2), Vec::Constant(1, 0.0)}), ConfigError);
    Vec bad(3);
    bad << 0, 1, 1;
    EXPECT_THROW(GridValueFunction({bad}), ConfigError);
    EXPECT_THROW(linspace(0, 1, 1), ConfigError);
}

TEST(GridValue, InterpolationIsExactAtNodes) {
    std::mt19937 rng(3);
    GridValueFunction V({linspace(-1, 1, 7), linspace(0, 3, 5)});
    std::uniform_real_distribution<double> u(-5, 5);
    for (int i = 0; i < V.size(); ++i) V[i] = u(rng);
    const auto never = [](const Vec&) -> double { throw std::logic_error("off grid"); };
    for (int i = 0; i < V.size(); ++i) EXPECT_EQ(V.interpolate(V.node(i), never), V[i]);
}

TEST(GridValue, CellCenterIsCornerMean) {
    GridValueFunction V({linspace(0, 2, 2), linspace(-1, 1, 2)});
    V[0] = 1.0;
    V[1] = -3.0;
    V[2] = 7.5;
    V[3] = 0.25;
    const double mean = (1.0 - 3.0 + 7.5 + 0.25) / 4;
    EXPECT_NEAR(V.interpolate(vec2(1, 0), [](const Vec&) { return 0.0; }), mean, 1e-15);
    // flat index: last axis fastest
    EXPECT_EQ(V.flat_index({1, 0}), 2);
    EXPECT_EQ(V.node(2), vec2(2, -1));
}

TEST(GridValue, OffGridUsesTerminalMargin) {
    const auto g = pendulum_grid(5, 3, 0.9);
    const auto V = g.blank();
    for (const Vec& x : {vec2(1.2, 0), vec2(0, 2.5), vec2(-3, -3)}) {
        const double v = g.interpolate(V, x);
        EXPECT_GT(v, 0.0);
        EXPECT_DOUBLE_EQ(v, std::max(pendulum().X.margin(x), pendulum().R.margin(x)));
    }
}

TEST(GridValue, BinaryAndCsvRoundTrip) {
    std::mt19937 rng(5);
    const auto g = pendulum_grid(6, 3, 0.9);
    const auto V = random_value(g, rng);
    std::stringstream bin;
    V.save(bin);
    const auto W = GridValueFunction::load(bin);
    ASSERT_EQ(W.dim(), 2);
    EXPECT_EQ(W.values(), V.values());
    EXPECT_EQ(W.axes()[0], V.axes()[0]);
    EXPECT_EQ(W.axes()[1], V.axes()[1]);

    std::stringstream csv;
    V.write_csv(csv);
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "x1,x2,value");
    int rows = 0;
    while (std::getline(csv, line)) {
        double a, b, v;
        char c1, c2;
        std::istringstream ls(line);
        ASSERT_TRUE(ls >> a >> c1 >> b >> c2 >> v);
        EXPECT_NEAR(v, V[rows], 1e-11);
        ++rows;
    }
    EXPECT_EQ(rows, V.size());

    const auto pi = random_policy(g.num_nodes(), 3, rng);
    std::stringstream pbin;
    pi.save(pbin);
    EXPECT_EQ(GridPolicy::load(pbin), pi);

    std::stringstream junk("PSFGRID1\x02");
    EXPECT_THROW(GridValueFunction::load(junk), ParseError);
}

TEST(Config, Validation) {
    auto cfg = pendulum_config(11, 0.999);
    EXPECT_EQ(cfg.actions.size(), 11u);
    EXPECT_EQ(cfg.disturbances.size(), 8u);
    EXPECT_DOUBLE_EQ(cfg.actions.front()(0), -5.0);
    EXPECT_DOUBLE_EQ(cfg.actions.back()(0), 5.0);
    EXPECT_NO_THROW(cfg.validate());
    cfg.gamma = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.gamma = 0.5;
    cfg.actions.clear();
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_EQ(disturbance_samples(pendulum().D, 3).size(), 27u);
}

TEST(Operators, SingleNodeClosedForm) {
    const auto g = pendulum_grid(5, 11, 0.9);
    const double c = -0.05;
    GridValueFunction V = g.blank();
    V.values().setConstant(c);
    const int origin = V.flat_index({2, 2});
    ASSERT_EQ(V.node(origin).norm(), 0.0);
    const double l = pendulum().R.margin(V.node(origin));
    const double h = pendulum().X.margin(V.node(origin));
    const double expect = 0.1 * std::max(l, h) + 0.9 * std::max(h, std::min(l, c));
    EXPECT_NEAR(g.apply_T(V)[origin], expect, 1e-14);
    GridPolicy pi;
    pi.index.assign(g.num_nodes(), 7);
    EXPECT_NEAR(g.apply_T_pi(V, pi)[origin], expect, 1e-14);
    GridPolicy mu;
    mu.index.assign(g.num_nodes(), 3);
    EXPECT_NEAR(g.apply_T_pi_mu(V, pi, mu)[origin], expect, 1e-14);
}

TEST(Operators, ContractionAndMonotonicity) {
    const auto g = pendulum_grid(5, 5, 0.95);
    std::mt19937 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto V = random_value(g, rng);
        const auto W = random_value(g, rng);
        const auto pi = random_policy(g.num_nodes(), 5, rng);
        const auto mu = random_policy(g.num_nodes(), 8, rng);
        const double d = sup_diff(V, W);
        EXPECT_LE(sup_diff(g.apply_T(V), g.apply_T(W)), 0.95 * d + 1e-12);
        EXPECT_LE(sup_diff(g.apply_T_pi(V, pi), g.apply_T_pi(W, pi)), 0.95 * d + 1e-12);
        EXPECT_LE(sup_diff(g.apply_T_pi_mu(V, pi, mu), g.apply_T_pi_mu(W, pi, mu)), 0.95 * d + 1e-12);

        GridValueFunction up = V;
        std::uniform_real_distribution<double> bump(0, 0.3);
        for (int i = 0; i < up.size(); ++i) up[i] += bump(rng);
        const auto check = [&](const GridValueFunction& hi, const GridValueFunction& lo) {
            for (int i = 0; i < hi.size(); ++i) EXPECT_GE(hi[i], lo[i]);
        };
        check(g.apply_T(up), g.apply_T(V));
        check(g.apply_T_pi(up, pi), g.apply_T_pi(V, pi));
        check(g.apply_T_pi_mu(up, pi, mu), g.apply_T_pi_mu(V, pi, mu));
    }
}

TEST(Operators, ParallelSweepMatchesSerial) {
    auto cfg = pendulum_config(5, 0.9);
    cfg.jobs = 3;
    const ReachAvoidGrid par(make_grid_problem(pendulum(), {9, 9}), cfg);
    const auto ser = pendulum_grid(9, 5, 0.9);
    std::mt19937 rng(2);
    const auto V = random_value(ser, rng);
    EXPECT_EQ(par.apply_T(V).values(), ser.apply_T(V).values());
}

TEST(Evaluation, ExitResidualAndSweepLimit) {
    const auto g = pendulum_grid(9, 5, 0.9);
    std::mt19937 rng(4);
    const auto pi = random_policy(g.num_nodes(), 5, rng);
    int sweeps = 0;
    const auto V = g.policy_evaluation(pi, nullptr, &sweeps);
    EXPECT_GT(sweeps, 1);
    EXPECT_LT(sup_diff(g.apply_T_pi(V, pi), V), 1e-9);

    auto cfg = pendulum_config(5, 0.9);
    cfg.max_sweeps = 2;
    const ReachAvoidGrid tight(make_grid_problem(pendulum(), {9, 9}), cfg);
    try {
        tight.policy_evaluation(pi);
        FAIL() << "expected non-convergence";
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.residual(), 1e-9);
    }
    GridPolicy bad = pi;
    bad.index[0] = 5;
    EXPECT_THROW(g.policy_evaluation(bad), ConfigError);
}

TEST(Evaluation, FiniteMdpMatchesOracle) {
    const ReachAvoidGrid g(finite_mdp(false), mdp_config(0.9));
    const TabularOracle oracle(false, 0.9);
    std::mt19937 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const auto pi = random_policy(25, 4, rng);
        const auto V = g.policy_evaluation(pi);
        const auto ref = oracle.solve(&pi.index);
        for (int i = 0; i < 25; ++i) EXPECT_NEAR(V[i], ref[i], 1e-8);
    }
}

TEST(Evaluation, DiscountedRolloutMatchesFixedPoint) {
    const double gamma = 0.9;
    auto cfg = mdp_config(gamma);
    cfg.disturbances = {vec2(-1, 0)};
    const auto prob = finite_mdp(true);
    const ReachAvoidGrid g(prob, cfg);
    std::mt19937 rng(21);
    const auto pi = random_policy(25, 4, rng);
    const auto V = g.policy_evaluation(pi);
    const GridValueFunction grid(prob.axes);
    for (int start : {0, 7, 12, 24}) {
        std::vector<Vec> xs{grid.node(start)};
        for (int t = 0; t < 500; ++t) {
            const int i = grid.flat_index({static_cast<int>(std::lround(xs.back()(0))),
                                           static_cast<int>(std::lround(xs.back()(1)))});
            xs.push_back(prob.step(xs.back(), cfg.actions[pi.index[i]], cfg.disturbances[0]));
        }
        double D = std::max(prob.l(xs.back()), prob.h(xs.back()));
        for (int t = 499; t >= 0; --t) {
            const double l = prob.l(xs[t]), h = prob.h(xs[t]);
            D = (1 - gamma) * std::max(l, h) + gamma * std::max(h, std::min(l, D));
        }
        EXPECT_NEAR(D, V[start], 1e-6);
    }
}

TEST(Improvement, TieBreaksToLowestIndex) {
    auto cfg = pendulum_config(3, 0.9);
    cfg.actions = {Vec::Constant(1, 2.0), Vec::Constant(1, -2.0)};
    const ReachAvoidGrid g(make_grid_problem(pendulum(), {5, 5}), cfg);
    GridValueFunction V = g.blank();
    const auto pi = g.policy_improvement(V);
    const int origin = V.flat_index({2, 2});
    EXPECT_EQ(pi.index[origin], 0);

    // identical actions at different indices: the lowest wins
    auto dup = pendulum_config(3, 0.9);
    dup.actions = {Vec::Constant(1, 3.0), Vec::Constant(1, -1.0), Vec::Constant(1, -1.0)};
    const ReachAvoidGrid gd(make_grid_problem(pendulum(), {9, 9}), dup);
    const auto pd = gd.policy_improvement(gd.terminal_value());
    for (int a : pd.index) EXPECT_NE(a, 2);
}

TEST(Improvement, SingleActionIsIdentity) {
    const auto g = pendulum_grid(7, 1, 0.9);
    std::mt19937 rng(6);
    const auto pi = g.policy_improvement(random_value(g, rng));
    for (int a : pi.index) EXPECT_EQ(a, 0);
}

TEST(Improvement, GreedyPolicyAttainsOptimalBackup) {
    const auto g = pendulum_grid(11, 5, 0.95);
    std::mt19937 rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const auto V = random_value(g, rng, 0.5);
        const auto pi = g.policy_improvement(V);
        EXPECT_EQ(g.apply_T(V).values(), g.apply_T_pi(V, pi).values());
        const auto mu = g.worst_disturbance(V, pi);
        EXPECT_EQ(g.apply_T_pi(V, pi).values(), g.apply_T_pi_mu(V, pi, mu).values());
    }
}

TEST(PolicyIteration, MonotoneOnPendulum) {
    const auto g = pendulum_grid(21, 5, 0.9);
    GridPolicy pi0;
    pi0.index.assign(g.num_nodes(), 2);  // u = 0
    const auto res = g.policy_iteration(pi0);
    ASSERT_GE(res.history.size(), 2u);
    for (std::size_t k = 0; k + 1 < res.history.size(); ++k) {
        const auto& Vk = res.history[k];
        const auto TVk = g.apply_T(Vk);
        const auto& Vn = res.history[k + 1];
        for (int i = 0; i < Vk.size(); ++i) {
            EXPECT_LE(TVk[i], Vk[i] + 1e-7);
            EXPECT_LE(Vn[i], TVk[i] + 1e-7);
        }
    }
    EXPECT_LT(sup_diff(g.apply_T(res.value), res.value), 1e-8);
}

TEST(PolicyIteration, FiniteMdpAgreesWithValueIterationAndOracle) {
    const ReachAvoidGrid g(finite_mdp(false), mdp_config(0.9));
    const auto ref = TabularOracle(false, 0.9).solve(nullptr);
    std::mt19937 rng(14);
    const auto pit = g.policy_iteration(random_policy(25, 4, rng));
    const auto vit = g.value_iteration();
    for (int i = 0; i < 25; ++i) {
        EXPECT_NEAR(pit.value[i], ref[i], 1e-8);
        EXPECT_NEAR(vit.value[i], ref[i], 1e-8);
    }
}

TEST(ValueIteration, ResidualsFollowContraction) {
    const auto g = pendulum_grid(15, 5, 0.97);
    const auto res = g.value_iteration();
    ASSERT_GE(res.residuals.size(), 2u);
    EXPECT_LT(res.residuals.back(), 1e-9);
    const double r0 = res.residuals.front();
    for (std::size_t k = 0; k < res.residuals.size(); ++k) {
        EXPECT_LE(res.residuals[k], std::pow(0.97, k) * r0 / (1 - 0.97) + 1e-15);
        if (k > 0) EXPECT_LE(res.residuals[k], 0.97 * res.residuals[k - 1] + 1e-15);
    }
}

TEST(ValueIteration, TrivialReachableTarget) {
    GridProblem p;
    p.axes = {linspace(0, 4, 9), linspace(0, 4, 9)};
    // drift half a cell toward the centre, target box of half-width 1
    p.step = [](const Vec& x, const Vec&, const Vec&) {
        Vec y = x;
        for (int i = 0; i < 2; ++i) y(i) += std::clamp(2.0 - x(i), -0.5, 0.5);
        return y;
    };
    p.h = [](const Vec&) { return -10.0; };
    p.l = [](const Vec& x) { return (x.array() - 2.0).abs().maxCoeff() - 1.0; };
    RAConfig cfg;
    cfg.gamma = 0.999;
    cfg.actions = {Vec::Zero(1)};
    cfg.disturbances = {Vec::Zero(1)};
    const ReachAvoidGrid g(p, cfg);
    const auto V = g.value_iteration().value;
    for (int i = 0; i < V.size(); ++i) {
        const Vec x = V.node(i);
        if (p.l(x) < 0) {
            EXPECT_LT(V[i], 0.0);
        }
        EXPECT_LE(V[i], 0.01);
    }
}

TEST(ValueIteration, PendulumSafeSetContainsTarget) {
    const auto g = pendulum_grid(31, 11, 0.999);
    const auto V = g.value_iteration().value;
    int inside = 0;
    for (int i = 0; i < V.size(); ++i) {
        const Vec x = V.node(i);
        if (V[i] <= 0) ++inside;
        if (pendulum().R.margin(x) <= 0) EXPECT_LE(V[i], 1e-3);
        if (pendulum().X.margin(x) > 0) EXPECT_GT(V[i], 0.0);
    }
    EXPECT_GT(inside, 0);
    EXPECT_LT(inside, V.size());
}

TEST(ValueIteration, DiscountBandIsThin) {
    auto run = [](double gamma, double tol) {
        auto cfg = pendulum_config(5, gamma);
        cfg.fixpoint_tol = tol;
        cfg.max_sweeps = 300000;
        return ReachAvoidGrid(make_grid_problem(pendulum(), {21, 21}), cfg).value_iteration();
    };
    const auto a = run(0.99, 1e-9);
    const auto b = run(0.9999, 1e-9);
    int flipped = 0;
    for (int i = 0; i < a.value.size(); ++i)
        if ((a.value[i] <= 0) != (b.value[i] <= 0)) ++flipped;
    EXPECT_LE(flipped, 0.05 * a.value.size()) << flipped << " of " << a.value.size();
}
