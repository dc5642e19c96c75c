#include "psf/learn/actor_critic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "psf/sysmodel/model.hpp"

namespace psf {

void TrainConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (!(eta > 0.0)) throw ConfigError("eta must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (batch < 1) throw ConfigError("batch must be positive");
    if (steps < 0 || steps_per_epoch < 1 || warmup < 0) throw ConfigError("bad step counts");
    if (noise < 0.0 || noise_clip < 0.0) throw ConfigError("noise must be nonnegative");
    if (optimizer != "momentum" && optimizer != "adam") throw ConfigError("unknown optimizer '" + optimizer + "'");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (replay_capacity < static_cast<std::size_t>(batch)) throw ConfigError("replay capacity below batch size");
    if (episode_length < 1) throw ConfigError("episode_length must be positive");
    if (probe_rows < 2 || probe_cols < 2) throw ConfigError("probe grid must be at least 2x2");
    if (select_horizon < 0) throw ConfigError("select_horizon must be nonnegative");
    for (int h : hidden)
        if (h < 1) throw ConfigError("hidden layer sizes must be positive");
}

TrainConfig train_config_from_json(const Json& j) {
    TrainConfig c;
    c.gamma = j.value("gamma", c.gamma);
    c.eta = j.value("eta", c.eta);
    c.tau = j.value("tau", c.tau);
    c.batch = j.value("batch", c.batch);
    c.steps = j.value("steps", c.steps);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.warmup = j.value("warmup", c.warmup);
    c.noise = j.value("noise", c.noise);
    c.noise_clip = j.value("noise_clip", c.noise_clip);
    c.seed = j.value("seed", c.seed);
    c.hidden = j.value("hidden", c.hidden);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.momentum = j.value("momentum", c.momentum);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.episode_length = j.value("episode_length", c.episode_length);
    c.probe_rows = j.value("probe_rows", c.probe_rows);
    c.probe_cols = j.value("probe_cols", c.probe_cols);
    c.divergence_limit = j.value("divergence_limit", c.divergence_limit);
    c.select_horizon = j.value("select_horizon", c.select_horizon);
    c.validate();
    return c;
}

double ActorCritic::q(const Vec& x, const Vec& u, const Vec& d, bool target) const {
    Vec in(x.size() + u.size() + d.size());
    in << x, u, d;
    return (target ? critic_target : critic).forward(in)(0);
}

void ActorCritic::save(std::ostream& out) const {
    out.write("PSFAC001", 8);
    actor.save(out);
    adversary.save(out);
    critic.save(out);
    critic_target.save(out);
}

ActorCritic ActorCritic::load(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "PSFAC001", 8) != 0) throw ParseError("not an actor-critic checkpoint");
    ActorCritic n;
    n.actor = Mlp::load(in);
    n.adversary = Mlp::load(in);
    n.critic = Mlp::load(in);
    n.critic_target = Mlp::load(in);
    const int nx = n.actor.input_dim();
    if (n.adversary.input_dim() != nx || n.critic.input_dim() != nx + n.actor.output_dim() + n.adversary.output_dim() ||
        n.critic.output_dim() != 1 || n.critic_target.sizes() != n.critic.sizes())
        throw ParseError("checkpoint networks have inconsistent shapes");
    return n;
}

void ActorCritic::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    save(out);
}

ActorCritic ActorCritic::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    return load(in);
}

namespace {

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
}

Vec half_or_one(const Vec& lo, const Vec& hi) {
    Vec h = 0.5 * (hi - lo);
    for (Eigen::Index i = 0; i < h.size(); ++i)
        if (h(i) <= 0.0) h(i) = 1.0;
    return h;
}

}  // namespace

ActorCritic make_actor_critic(const SystemSetup& setup, const std::vector<int>& hidden, std::uint64_t seed) {
    const auto [xlo, xhi] = setup.X.bounding_box();
    const auto [ulo, uhi] = setup.U.bounding_box();
    const auto [dlo, dhi] = setup.D.bounding_box();
    const int nx = static_cast<int>(xlo.size()), nu = static_cast<int>(ulo.size()), nd = static_cast<int>(dlo.size());
    std::mt19937_64 rng(seed);
    ActorCritic n;
    n.actor = Mlp(layer_sizes(nx, hidden, nu), Mlp::Box{ulo, uhi});
    n.adversary = Mlp(layer_sizes(nx, hidden, nd), Mlp::Box{dlo, dhi});
    n.critic = Mlp(layer_sizes(nx + nu + nd, hidden, 1));
    const Vec xc = 0.5 * (xlo + xhi), xs = half_or_one(xlo, xhi);
    n.actor.set_input_normalization(xc, xs);
    n.adversary.set_input_normalization(xc, xs);
    Vec c(nx + nu + nd), s(nx + nu + nd);
    c << xc, 0.5 * (ulo + uhi), 0.5 * (dlo + dhi);
    s << xs, half_or_one(ulo, uhi), half_or_one(dlo, dhi);
    n.critic.set_input_normalization(c, s);
    n.actor.init(rng);
    n.adversary.init(rng);
    n.critic.init(rng, 1.0);
    n.critic_target = n.critic;
    return n;
}

namespace {

template <class Source>
Batch gather_batch(const Source& ts, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ConfigError("empty batch");
    const int B = static_cast<int>(idx.size());
    Batch b;
    b.x.resize(ts[idx[0]].x.size(), B);
    b.u.resize(ts[idx[0]].u.size(), B);
    b.d.resize(ts[idx[0]].d.size(), B);
    b.x_next.resize(ts[idx[0]].x.size(), B);
    b.h.resize(B);
    b.l.resize(B);
    b.h_next.resize(B);
    b.l_next.resize(B);
    for (int i = 0; i < B; ++i) {
        const Transition& t = ts[idx[i]];
        b.x.col(i) = t.x;
        b.u.col(i) = t.u;
        b.d.col(i) = t.d;
        b.x_next.col(i) = t.x_next;
        b.h(i) = t.h;
        b.l(i) = t.l;
        b.h_next(i) = t.h_next;
        b.l_next(i) = t.l_next;
    }
    return b;
}

}  // namespace

Batch make_batch(const std::vector<Transition>& ts) {
    std::vector<std::size_t> all(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) all[i] = i;
    return gather_batch(ts, all);
}

namespace {

Mat stack3(const Mat& a, const Mat& b, const Mat& c) {
    Mat s(a.rows() + b.rows() + c.rows(), a.cols());
    s << a, b, c;
    return s;
}

double backup(double gamma, double l, double h, double q) {
    return (1.0 - gamma) * std::max(l, h) + gamma * std::max(h, std::min(l, q));
}

}  // namespace

double critic_target(const Transition& t, const ActorCritic& nets, double gamma) {
    const double q = t.h_next > 0.0 ? std::max(t.l_next, t.h_next)
                                    : nets.q(t.x_next, nets.act(t.x_next), nets.disturb(t.x_next), true);
    return backup(gamma, t.l, t.h, q);
}

Vec critic_targets(const Batch& b, const ActorCritic& nets, double gamma) {
    const Mat qn = nets.critic_target.forward_batch(
        stack3(b.x_next, nets.actor.forward_batch(b.x_next), nets.adversary.forward_batch(b.x_next)));
    Vec y(b.size());
    for (int i = 0; i < b.size(); ++i) {
        const double q = b.h_next(i) > 0.0 ? std::max(b.l_next(i), b.h_next(i)) : qn(0, i);
        y(i) = backup(gamma, b.l(i), b.h(i), q);
    }
    return y;
}

LossGrad critic_loss(const Batch& b, const ActorCritic& nets, const Vec& targets) {
    Mlp::Tape tape;
    const Mat q = nets.critic.forward_batch(stack3(b.x, b.u, b.d), tape);
    const Vec err = q.row(0).transpose() - targets;
    const double B = b.size();
    LossGrad r;
    r.loss = err.squaredNorm() / B;
    const Mat dY = (2.0 / B) * err.transpose();
    r.grad = nets.critic.backward(tape, dY);
    return r;
}

LossGrad critic_loss(const Batch& b, const ActorCritic& nets, double gamma) {
    return critic_loss(b, nets, critic_targets(b, nets, gamma));
}

namespace {

/// Mean Q(x, pi(x), mu(x)) with gradients for both policies.
struct PolicyGrads {
    double value;
    Vec actor, adversary;
};

PolicyGrads policy_grads(const Batch& b, const ActorCritic& nets, bool want_actor, bool want_adversary) {
    Mlp::Tape ta, tm, tq;
    const Mat u = nets.actor.forward_batch(b.x, ta);
    const Mat d = nets.adversary.forward_batch(b.x, tm);
    const Mat q = nets.critic.forward_batch(stack3(b.x, u, d), tq);
    const double B = b.size();
    PolicyGrads g;
    g.value = q.sum() / B;
    Mat dIn;
    nets.critic.backward(tq, Mat::Constant(1, b.size(), 1.0 / B), &dIn);
    const int nx = static_cast<int>(b.x.rows()), nu = static_cast<int>(u.rows()), nd = static_cast<int>(d.rows());
    if (want_actor) g.actor = nets.actor.backward(ta, dIn.middleRows(nx, nu));
    if (want_adversary) g.adversary = nets.adversary.backward(tm, dIn.middleRows(nx + nu, nd));
    return g;
}

}  // namespace

LossGrad actor_loss(const Batch& b, const ActorCritic& nets) {
    auto g = policy_grads(b, nets, true, false);
    return {g.value, std::move(g.actor)};
}

LossGrad adversary_loss(const Batch& b, const ActorCritic& nets) {
    auto g = policy_grads(b, nets, false, true);
    return {-g.value, -g.adversary};
}

void soft_update(Mlp& target, const Mlp& source, double tau) {
    if (target.num_params() != source.num_params()) throw ConfigError("soft update between different shapes");
    target.params() = tau * source.params() + (1.0 - tau) * target.params();
}

Optimizer::Optimizer(std::string kind, double eta, double momentum, int n)
    : kind_(std::move(kind)), eta_(eta), beta_(momentum), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {
    if (kind_ != "momentum" && kind_ != "adam") throw ConfigError("unknown optimizer '" + kind_ + "'");
}

void Optimizer::step(Vec& params, const Vec& grad) {
    ++t_;
    if (kind_ == "momentum") {
        m_ = beta_ * m_ + grad;
        params -= eta_ * m_;
        return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m_ = b1 * m_ + (1 - b1) * grad;
    v_ = b2 * v_ + (1 - b2) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2, static_cast<double>(t_));
    params.array() -= eta_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
}

std::vector<Vec> probe_states(const Polytope& X, int rows, int cols) {
    const auto [lo, hi] = X.bounding_box();
    if (lo.size() != 2) throw ConfigError("probe grid needs a 2-d state");
    std::vector<Vec> out;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            Vec x(2);
            x << lo(0) + (hi(0) - lo(0)) * i / (rows - 1), lo(1) + (hi(1) - lo(1)) * j / (cols - 1);
            out.push_back(x);
        }
    }
    return out;
}

double probe_fraction(const ActorCritic& nets, const std::vector<Vec>& probes) {
    if (probes.empty()) return 0.0;
    Mat X(probes[0].size(), static_cast<Eigen::Index>(probes.size()));
    for (std::size_t i = 0; i < probes.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = probes[i];
    const Mat q = nets.critic.forward_batch(stack3(X, nets.actor.forward_batch(X), nets.adversary.forward_batch(X)));
    return static_cast<double>((q.array() < 0.0).count()) / static_cast<double>(probes.size());
}

double horizon_fraction(const SystemSetup& setup, const ActorCritic& nets, const std::vector<Vec>& probes,
                        int horizon) {
    if (probes.empty()) return 0.0;
    const DisturbedModel& model = *setup.model;
    int hits = 0;
    for (const Vec& x0 : probes) {
        Vec x = x0;
        bool safe = setup.X.margin(x) <= 0.0;
        for (int k = 0; k < horizon && safe; ++k) {
            x = model.f(x, nets.act(x));
            safe = x.allFinite() && setup.X.margin(x) <= 0.0;
        }
        hits += safe && setup.R.margin(x) <= 0.0;
    }
    return static_cast<double>(hits) / static_cast<double>(probes.size());
}

namespace {

Vec sample_box(const Vec& lo, const Vec& hi, std::mt19937_64& rng) {
    Vec x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) x(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
    return x;
}

Vec sample_in(const Polytope& P, std::mt19937_64& rng) {
    const auto [lo, hi] = P.bounding_box();
    for (int tries = 0; tries < 10000; ++tries) {
        Vec x = sample_box(lo, hi, rng);
        if (P.contains(x)) return x;
    }
    throw ConfigError("rejection sampling failed; set is too thin");
}

Vec perturb(const Vec& a, const Vec& lo, const Vec& hi, double scale, double clip, std::mt19937_64& rng) {
    Vec out = a;
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double half = 0.5 * (hi(i) - lo(i));
        const double e = std::clamp(scale * half * n(rng), -clip * half, clip * half);
        out(i) = std::clamp(a(i) + e, lo(i), hi(i));
    }
    return out;
}

}  // namespace

TrainResult train(const SystemSetup& setup, const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    const DisturbedModel& model = *setup.model;
    TrainResult res;
    res.nets = make_actor_critic(setup, cfg.hidden, cfg.seed);
    ActorCritic& nets = res.nets;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    ReplayBuffer buffer(cfg.replay_capacity, cfg.seed + 1);
    Optimizer opt_c(cfg.optimizer, cfg.eta, cfg.momentum, nets.critic.num_params());
    Optimizer opt_a(cfg.optimizer, cfg.eta, cfg.momentum, nets.actor.num_params());
    Optimizer opt_m(cfg.optimizer, cfg.eta, cfg.momentum, nets.adversary.num_params());
    const auto [ulo, uhi] = setup.U.bounding_box();
    const auto [dlo, dhi] = setup.D.bounding_box();
    const auto probes = probe_states(setup.X, cfg.probe_rows, cfg.probe_cols);

    Vec x = sample_in(setup.X, rng);
    int episode_step = 0;
    double closs_sum = 0.0, aloss_sum = 0.0;
    int updates = 0;
    ActorCritic best;
    double best_fraction = -1.0;
    for (long step = 0; step < cfg.steps; ++step) {
        Vec u, d;
        if (step < cfg.warmup) {
            u = sample_box(ulo, uhi, rng);
            d = sample_box(dlo, dhi, rng);
        } else {
            const double decay = 1.0 - static_cast<double>(step) / static_cast<double>(cfg.steps);
            u = perturb(nets.act(x), ulo, uhi, cfg.noise * decay, cfg.noise_clip, rng);
            d = perturb(nets.disturb(x), dlo, dhi, cfg.noise * decay, cfg.noise_clip, rng);
        }
        Transition t;
        t.x = x;
        t.u = u;
        t.d = d;
        t.h = setup.X.margin(x);
        t.l = setup.R.margin(x);
        t.x_next = step_disturbed(model, x, u, d);
        if (!t.x_next.allFinite()) throw NumericError("non-finite state during training rollout");
        t.h_next = setup.X.margin(t.x_next);
        t.l_next = setup.R.margin(t.x_next);
        const bool done = t.h_next > 0.0 || ++episode_step >= cfg.episode_length;
        x = t.x_next;
        buffer.push(std::move(t));
        if (done) {
            x = sample_in(setup.X, rng);
            episode_step = 0;
        }

        if (step >= cfg.warmup && buffer.size() >= static_cast<std::size_t>(cfg.batch)) {
            const Batch b = gather_batch(buffer, buffer.sample_indices(static_cast<std::size_t>(cfg.batch)));
            const LossGrad lc = critic_loss(b, nets, cfg.gamma);
            if (!std::isfinite(lc.loss) || lc.loss > cfg.divergence_limit) {
                std::ostringstream msg;
                msg << "training diverged at step " << step << ": critic loss " << lc.loss << " (eta " << cfg.eta
                    << ", optimizer " << cfg.optimizer << ")";
                throw TrainingDiverged(msg.str());
            }
            opt_c.step(nets.critic.params(), lc.grad);
            // both policies step against the updated critic from the same point
            const PolicyGrads pg = policy_grads(b, nets, true, true);
            opt_a.step(nets.actor.params(), pg.actor);
            opt_m.step(nets.adversary.params(), -pg.adversary);
            soft_update(nets.critic_target, nets.critic, cfg.tau);
            closs_sum += lc.loss;
            aloss_sum += pg.value;
            ++updates;
        }

        if ((step + 1) % cfg.steps_per_epoch == 0 || step + 1 == cfg.steps) {
            EpochLog e;
            e.epoch = static_cast<int>(res.log.size()) + 1;
            e.steps = step + 1;
            e.critic_loss = updates ? closs_sum / updates : 0.0;
            e.actor_loss = updates ? aloss_sum / updates : 0.0;
            e.probe_fraction = probe_fraction(nets, probes);
            if (cfg.select_horizon > 0) {
                e.horizon_fraction = horizon_fraction(setup, nets, probes, cfg.select_horizon);
                if (res.selected_epoch == 0 || e.horizon_fraction > best_fraction) {
                    best_fraction = e.horizon_fraction;
                    best = nets;
                    res.selected_epoch = e.epoch;
                }
            }
            res.log.push_back(e);
            if (on_epoch) on_epoch(e);
            closs_sum = aloss_sum = 0.0;
            updates = 0;
        }
    }
    if (cfg.select_horizon > 0) {
        res.nets = std::move(best);
    } else {
        res.selected_epoch = static_cast<int>(res.log.size());
    }
    return res;
}

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log) {
    out << "epoch,steps,critic_loss,actor_loss,probe_fraction,horizon_fraction\n" << std::setprecision(10);
    for (const auto& e : log)
        out << e.epoch << ',' << e.steps << ',' << e.critic_loss << ',' << e.actor_loss << ',' << e.probe_fraction << ','
            << e.horizon_fraction << '\n';
}

}  // namespace psf
