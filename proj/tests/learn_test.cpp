#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "psf/errors.hpp"
#include "psf/learn/actor_critic.hpp"

using namespace psf;

namespace {

const SystemSetup& pendulum() {
    static const SystemSetup setup = make_system(default_pendulum_config());
    return setup;
}

Vec random_vec(int n, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

Transition random_transition(std::mt19937_64& rng) {
    Transition t;
    t.x = random_vec(2, -1.0, 1.0, rng);
    t.u = random_vec(1, -5.0, 5.0, rng);
    t.d = random_vec(3, -0.01, 0.01, rng);
    t.x_next = random_vec(2, -1.0, 1.0, rng);
    t.h = pendulum().X.margin(t.x);
    t.l = pendulum().R.margin(t.x);
    t.h_next = pendulum().X.margin(t.x_next);
    t.l_next = pendulum().R.margin(t.x_next);
    return t;
}

Batch random_batch(int size, std::mt19937_64& rng) {
    std::vector<Transition> ts;
    for (int i = 0; i < size; ++i) ts.push_back(random_transition(rng));
    return make_batch(ts);
}

/// Networks with fewer than 100 parameters each, randomized off the init scale.
ActorCritic small_nets(std::uint64_t seed) {
    auto n = make_actor_critic(pendulum(), {6}, seed);
    std::mt19937_64 rng(seed + 100);
    for (Mlp* m : {&n.actor, &n.adversary, &n.critic, &n.critic_target})
        m->params() = random_vec(m->num_params(), -0.8, 0.8, rng);
    return n;
}

/// Central differences of f around p.
Vec numeric_gradient(Vec& p, const std::function<double()>& f, double step = 1e-6) {
    Vec g(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double keep = p(i);
        p(i) = keep + step;
        const double fp = f();
        p(i) = keep - step;
        const double fm = f();
        p(i) = keep;
        g(i) = (fp - fm) / (2 * step);
    }
    return g;
}

double relative_error(const Vec& analytic, const Vec& numeric) {
    return (analytic - numeric).lpNorm<Eigen::Infinity>() / std::max(numeric.lpNorm<Eigen::Infinity>(), 1e-8);
}

/// Independent evaluation of the reach-avoid target with scalar code.
double scalar_target(double gamma, double l, double h, double q_next) {
    double inner = q_next;
    if (l < inner) inner = l;
    double outer = inner;
    if (h > outer) outer = h;
    double stage = l;
    if (h > stage) stage = h;
    return (1 - gamma) * stage + gamma * outer;
}

}  // namespace

TEST(Mlp, ShapeAndZeroWeights) {
    Mlp critic({5, 7, 3, 1});
    EXPECT_EQ(critic.num_params(), 5 * 7 + 7 + 7 * 3 + 3 + 3 + 1);
    EXPECT_EQ(critic.forward(Vec::Ones(5))(0), 0.0);
    Vec lo(2), hi(2);
    lo << -5, 0;
    hi << 5, 2;
    Mlp head({3, 4, 2}, Mlp::Box{lo, hi});
    EXPECT_EQ(head.forward(Vec::Constant(3, 0.3)), 0.5 * (lo + hi));
    EXPECT_THROW(Mlp({3}), ConfigError);
    EXPECT_THROW(Mlp({3, 2}, Mlp::Box{lo.head(1), hi.head(1)}), ConfigError);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    Vec lo(2), hi(2);
    lo << -1, 2;
    hi << 1, 3;
    Mlp net({3, 5, 4, 2}, Mlp::Box{lo, hi});
    net.set_input_normalization(Vec::Constant(3, 0.5), Vec::Constant(3, 2.0));
    net.init(rng, 1.0);
    const Mat X = Mat::Random(3, 6);
    const Mat W = Mat::Random(2, 6);
    auto f = [&] { return net.forward_batch(X).cwiseProduct(W).sum(); };
    Mlp::Tape tape;
    net.forward_batch(X, tape);
    Mat dX;
    const Vec g = net.backward(tape, W, &dX);
    EXPECT_LT(relative_error(g, numeric_gradient(net.params(), f)), 1e-6);
    Mat Xp = X;
    Vec flat = Eigen::Map<Vec>(Xp.data(), Xp.size());
    auto fx = [&] {
        Eigen::Map<Mat> M(flat.data(), 3, 6);
        return net.forward_batch(Mat(M)).cwiseProduct(W).sum();
    };
    const Vec gx = numeric_gradient(flat, fx);
    EXPECT_LT(relative_error(Eigen::Map<const Vec>(dX.data(), dX.size()), gx), 1e-6);
}

TEST(Mlp, SquashedHeadsStayInBoxes) {
    auto nets = make_actor_critic(pendulum(), {16, 16}, 5);
    std::mt19937_64 rng(5);
    nets.actor.params() *= 20.0;
    nets.adversary.params() *= 20.0;
    std::uniform_real_distribution<double> wide(-50, 50);
    const auto [ulo, uhi] = pendulum().U.bounding_box();
    const auto [dlo, dhi] = pendulum().D.bounding_box();
    for (int i = 0; i < 100000; ++i) {
        Vec x(2);
        x << wide(rng), wide(rng);
        const Vec u = nets.act(x), d = nets.disturb(x);
        ASSERT_TRUE((u.array() >= ulo.array()).all() && (u.array() <= uhi.array()).all()) << u;
        ASSERT_TRUE((d.array() >= dlo.array()).all() && (d.array() <= dhi.array()).all()) << d;
    }
}

TEST(Mlp, SaveLoadRoundTrip) {
    const auto nets = make_actor_critic(pendulum(), {8, 4}, 9);
    std::stringstream ss;
    nets.save(ss);
    const auto back = ActorCritic::load(ss);
    EXPECT_EQ(back.actor.params(), nets.actor.params());
    EXPECT_EQ(back.critic.input_scale(), nets.critic.input_scale());
    EXPECT_EQ(back.adversary.head()->hi, nets.adversary.head()->hi);
    Vec x(2);
    x << 0.3, -0.7;
    EXPECT_EQ(back.q(x, back.act(x), back.disturb(x)), nets.q(x, nets.act(x), nets.disturb(x)));
    std::stringstream bad("PSFAC001PSFMLP01");
    EXPECT_THROW(ActorCritic::load(bad), ParseError);
}

TEST(Replay, RingCapacity) {
    ReplayBuffer buf(5, 1);
    for (int i = 0; i < 12; ++i) {
        Transition t;
        t.h = i;
        buf.push(t);
        EXPECT_LE(buf.size(), 5u);
    }
    std::vector<double> kept;
    for (std::size_t i = 0; i < buf.size(); ++i) kept.push_back(buf[i].h);
    std::sort(kept.begin(), kept.end());
    EXPECT_EQ(kept, (std::vector<double>{7, 8, 9, 10, 11}));
    EXPECT_THROW(buf.sample(6), ConfigError);
    const auto idx = buf.sample_indices(5);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 5u);
}

TEST(Replay, SamplingIsUniform) {
    ReplayBuffer buf(100, 17);
    for (int i = 0; i < 100; ++i) buf.push(Transition{});
    std::vector<int> counts(100, 0);
    const int batches = 10000, batch = 10;
    for (int b = 0; b < batches; ++b) {
        const auto idx = buf.sample_indices(batch);
        ASSERT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), idx.size());
        for (auto i : idx) ++counts[i];
    }
    const double expected = batches * batch / 100.0;
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // Wilson-Hilferty 0.99 quantile of chi-squared with 99 dof
    const double k = 99, z = 2.3263478740408408;
    const double crit = k * std::pow(1 - 2 / (9 * k) + z * std::sqrt(2 / (9 * k)), 3);
    EXPECT_LT(chi2, crit);
}

TEST(Target, DominatedByAvoidMargin) {
    const auto nets = small_nets(1);
    Transition t;
    t.x = Vec::Zero(2);
    t.u = Vec::Zero(1);
    t.d = Vec::Zero(3);
    t.x_next = Vec::Zero(2);
    t.h_next = -1;
    t.l_next = -1;
    const double q = nets.q(t.x_next, nets.act(t.x_next), nets.disturb(t.x_next), true);
    t.h = std::abs(q) + 1.0;
    t.l = t.h - 0.5;
    EXPECT_NEAR(critic_target(t, nets, 0.7), t.h, 1e-15);
}

TEST(Target, VanishingDiscount) {
    const auto nets = small_nets(2);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto t = random_transition(rng);
        EXPECT_NEAR(critic_target(t, nets, 1e-14), std::max(t.l, t.h), 1e-12);
    }
}

TEST(Target, MatchesScalarReimplementation) {
    const auto nets = small_nets(3);
    std::mt19937_64 rng(3);
    std::vector<Transition> ts;
    for (int i = 0; i < 200; ++i) ts.push_back(random_transition(rng));
    // a few successors outside X use the terminal margin
    ts[0].x_next << 2.0, 0.0;
    ts[0].h_next = pendulum().X.margin(ts[0].x_next);
    ts[0].l_next = pendulum().R.margin(ts[0].x_next);
    const Vec batch = critic_targets(make_batch(ts), nets, 0.95);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const auto& t = ts[i];
        const double qn = t.h_next > 0 ? std::max(t.l_next, t.h_next)
                                       : nets.q(t.x_next, nets.act(t.x_next), nets.disturb(t.x_next), true);
        const double ref = scalar_target(0.95, t.l, t.h, qn);
        EXPECT_NEAR(critic_target(t, nets, 0.95), ref, 1e-15);
        EXPECT_NEAR(batch(static_cast<Eigen::Index>(i)), ref, 1e-14);
    }
}

TEST(Losses, CriticZeroAtTargetsAndMeanInvariant) {
    const auto nets = small_nets(4);
    std::mt19937_64 rng(4);
    const Batch b = random_batch(16, rng);
    Mat in(6, b.size());
    in << b.x, b.u, b.d;
    const Vec q = nets.critic.forward_batch(in).row(0).transpose();
    const auto at = critic_loss(b, nets, q);
    EXPECT_EQ(at.loss, 0.0);
    EXPECT_EQ(at.grad.lpNorm<Eigen::Infinity>(), 0.0);

    std::vector<Transition> ts;
    std::mt19937_64 rng2(5);
    for (int i = 0; i < 8; ++i) ts.push_back(random_transition(rng2));
    auto doubled = ts;
    doubled.insert(doubled.end(), ts.begin(), ts.end());
    const auto l1 = critic_loss(make_batch(ts), nets, 0.9);
    const auto l2 = critic_loss(make_batch(doubled), nets, 0.9);
    EXPECT_NEAR(l1.loss, l2.loss, 1e-14);
    EXPECT_LT((l1.grad - l2.grad).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(Losses, AdversaryIsNegatedActor) {
    const auto nets = small_nets(6);
    std::mt19937_64 rng(6);
    const Batch b = random_batch(12, rng);
    EXPECT_EQ(adversary_loss(b, nets).loss, -actor_loss(b, nets).loss);
}

TEST(Losses, ConstantCriticGivesZeroPolicyGradients) {
    auto nets = small_nets(7);
    nets.critic.params().setZero();
    nets.critic.params()(nets.critic.num_params() - 1) = 0.4;
    std::mt19937_64 rng(7);
    const Batch b = random_batch(10, rng);
    EXPECT_DOUBLE_EQ(actor_loss(b, nets).loss, 0.4);
    EXPECT_EQ(actor_loss(b, nets).grad.lpNorm<Eigen::Infinity>(), 0.0);
    EXPECT_EQ(adversary_loss(b, nets).grad.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    for (int trial = 0; trial < 50; ++trial) {
        auto nets = small_nets(1000 + trial);
        ASSERT_LE(nets.critic.num_params(), 100);
        ASSERT_LE(nets.actor.num_params(), 100);
        ASSERT_LE(nets.adversary.num_params(), 100);
        std::mt19937_64 rng(trial);
        const Batch b = random_batch(8, rng);
        const Vec y = critic_targets(b, nets, 0.99);

        const auto lc = critic_loss(b, nets, y);
        const Vec nc = numeric_gradient(nets.critic.params(), [&] { return critic_loss(b, nets, y).loss; });
        EXPECT_LT(relative_error(lc.grad, nc), 1e-4) << "critic, batch " << trial;

        const auto la = actor_loss(b, nets);
        const Vec na = numeric_gradient(nets.actor.params(), [&] { return actor_loss(b, nets).loss; });
        EXPECT_LT(relative_error(la.grad, na), 1e-4) << "actor, batch " << trial;

        const auto lm = adversary_loss(b, nets);
        const Vec nm = numeric_gradient(nets.adversary.params(), [&] { return adversary_loss(b, nets).loss; });
        EXPECT_LT(relative_error(lm.grad, nm), 1e-4) << "adversary, batch " << trial;
    }
}

TEST(Training, SoftUpdateIsExact) {
    auto nets = small_nets(8);
    const Vec old = nets.critic_target.params();
    soft_update(nets.critic_target, nets.critic, 0.3);
    const Vec expect = 0.3 * nets.critic.params() + (1 - 0.3) * old;
    EXPECT_EQ((nets.critic_target.params() - expect).lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Training, ConfigValidation) {
    EXPECT_NO_THROW(train_config_from_json(Json::object()));
    EXPECT_THROW(train_config_from_json(Json{{"tau", 0.0}}), ConfigError);
    EXPECT_THROW(train_config_from_json(Json{{"gamma", 1.0}}), ConfigError);
    EXPECT_THROW(train_config_from_json(Json{{"eta", -1.0}}), ConfigError);
    EXPECT_THROW(train_config_from_json(Json{{"optimizer", "sgd"}}), ConfigError);
    const auto c = train_config_from_json(Json{{"optimizer", "adam"}, {"hidden", {32}}});
    EXPECT_EQ(c.optimizer, "adam");
    EXPECT_EQ(c.hidden, std::vector<int>{32});
}

TEST(Training, FixedSeedIsBitwiseReproducible) {
    TrainConfig c;
    c.steps = 1200;
    c.warmup = 300;
    c.steps_per_epoch = 400;
    c.batch = 16;
    c.hidden = {12};
    c.probe_rows = 4;
    c.probe_cols = 6;
    c.seed = 21;
    const auto a = train(pendulum(), c);
    const auto b = train(pendulum(), c);
    EXPECT_EQ(a.nets.actor.params(), b.nets.actor.params());
    EXPECT_EQ(a.nets.adversary.params(), b.nets.adversary.params());
    EXPECT_EQ(a.nets.critic.params(), b.nets.critic.params());
    EXPECT_EQ(a.nets.critic_target.params(), b.nets.critic_target.params());
    ASSERT_EQ(a.log.size(), 3u);
    EXPECT_EQ(a.log.back().critic_loss, b.log.back().critic_loss);
    c.seed = 22;
    EXPECT_NE(train(pendulum(), c).nets.actor.params(), a.nets.actor.params());

    std::ostringstream csv;
    write_train_log(csv, a.log);
    EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "epoch,steps,critic_loss,actor_loss,probe_fraction,horizon_fraction");
}

TEST(Training, HorizonFractionOnHandCases) {
    auto nets = make_actor_critic(pendulum(), {4}, 1);
    nets.actor.params().setZero();  // u = 0 everywhere
    Vec origin = Vec::Zero(2), fast(2), edge(2);
    fast << 1.0, 2.0;   // leaves X on the first step
    edge << 0.2, 0.0;   // inside R, stays close to it for two steps
    EXPECT_EQ(horizon_fraction(pendulum(), nets, {origin}, 25), 1.0);
    EXPECT_EQ(horizon_fraction(pendulum(), nets, {fast}, 25), 0.0);
    EXPECT_EQ(horizon_fraction(pendulum(), nets, {origin, fast, edge, fast}, 2), 0.5);
}

TEST(Training, ReturnsBestHorizonEpoch) {
    TrainConfig c;
    c.steps = 2400;
    c.warmup = 300;
    c.steps_per_epoch = 400;
    c.batch = 16;
    c.hidden = {12};
    c.probe_rows = 6;
    c.probe_cols = 8;
    c.select_horizon = 10;
    const auto r = train(pendulum(), c);
    ASSERT_EQ(r.log.size(), 6u);
    ASSERT_GE(r.selected_epoch, 1);
    double best = -1;
    int best_epoch = 0;
    for (const auto& e : r.log)
        if (e.horizon_fraction > best) {
            best = e.horizon_fraction;
            best_epoch = e.epoch;
        }
    EXPECT_EQ(r.selected_epoch, best_epoch);
    const auto probes = probe_states(pendulum().X, 6, 8);
    EXPECT_EQ(horizon_fraction(pendulum(), r.nets, probes, 10), best);

    c.select_horizon = 0;
    const auto last = train(pendulum(), c);
    EXPECT_EQ(last.selected_epoch, 6);
    EXPECT_EQ(last.log.back().horizon_fraction, 0.0);
}

TEST(Training, DivergenceAborts) {
    TrainConfig c;
    c.steps = 3000;
    c.warmup = 100;
    c.batch = 16;
    c.hidden = {8};
    c.eta = 50.0;
    c.probe_rows = c.probe_cols = 3;
    EXPECT_THROW(train(pendulum(), c), TrainingDiverged);
}

TEST(Training, AbsorbingTargetIsLearned) {
    // stable linear plant; R is forward invariant and X is far from R
    Json cfg = default_pendulum_config();
    cfg["model"] = {{"name", "linear"},
                    {"dt", 0.1},
                    {"A", {{-1.0, 0.0}, {0.0, -1.0}}},
                    {"B", {{0.0}, {1.0}}},
                    {"E", {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}}};
    cfg["sets"]["X"] = {{"lo", {-3.0, -3.0}}, {"hi", {3.0, 3.0}}};
    cfg["sets"]["R"] = {{"lo", {-1.0, -1.0}}, {"hi", {1.0, 1.0}}};
    cfg["sets"]["U"] = {{"lo", {-0.2}}, {"hi", {0.2}}};
    const SystemSetup s = make_system(cfg);
    TrainConfig c;
    c.steps = 50000;
    c.warmup = 1000;
    c.hidden = {32, 32};
    c.steps_per_epoch = 10000;
    c.probe_rows = c.probe_cols = 5;
    c.seed = 4;
    c.select_horizon = 0;
    const auto res = train(s, c);
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
        const Vec x = random_vec(2, -1.0, 1.0, rng);
        EXPECT_LE(res.nets.q(x, res.nets.act(x), res.nets.disturb(x)), 0.05) << x.transpose();
    }
}

TEST(Training, PendulumProbeFractionGrows) {
    // default configuration; up to three seeds
    std::string report;
    for (std::uint64_t seed : {1, 2, 3}) {
        TrainConfig c;
        c.seed = seed;
        const auto res = train(pendulum(), c);
        std::vector<double> smooth;
        for (std::size_t k = 4; k < res.log.size(); ++k) {
            double m = 0;
            for (std::size_t j = k - 4; j <= k; ++j) m += res.log[j].probe_fraction;
            smooth.push_back(m / 5);
        }
        ASSERT_FALSE(smooth.empty());
        const double final_fraction = res.log.back().probe_fraction;
        report += "seed " + std::to_string(seed) + ": smoothed " + std::to_string(smooth.front()) + " -> " +
                  std::to_string(smooth.back()) + ", final " + std::to_string(final_fraction) + "; ";
        if (smooth.back() > smooth.front() && final_fraction >= 0.5) return;
    }
    ADD_FAILURE() << report;
}
