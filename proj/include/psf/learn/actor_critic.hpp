#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "psf/errors.hpp"
#include "psf/learn/mlp.hpp"
#include "psf/learn/replay.hpp"
#include "psf/sysmodel/config.hpp"

namespace psf {

struct TrainConfig {
    double gamma = 0.999;
    double eta = 3e-4;  // learning rate
    double tau = 0.005;
    int batch = 64;
    long steps = 40000;
    int steps_per_epoch = 2000;
    int warmup = 2000;  // uniformly random actions before the first update
    double noise = 0.1;  // exploration std as a fraction of the box half-width
    double noise_clip = 0.3;
    std::uint64_t seed = 1;
    std::vector<int> hidden{64, 64};
    std::string optimizer = "momentum";  // or "adam"
    double momentum = 0.9;
    std::size_t replay_capacity = 200000;
    int episode_length = 200;
    int probe_rows = 40, probe_cols = 60;
    double divergence_limit = 1e6;
    /// Horizon of the rollout check used to pick the returned epoch; 0 returns
    /// the final networks.
    int select_horizon = 25;

    void validate() const;
};

TrainConfig train_config_from_json(const Json& j);

/// Reach-avoid actor, disturbance adversary, critic and critic target.
struct ActorCritic {
    Mlp actor, adversary, critic, critic_target;

    int nx() const { return actor.input_dim(); }
    Vec act(const Vec& x) const { return actor.forward(x); }
    Vec disturb(const Vec& x) const { return adversary.forward(x); }
    double q(const Vec& x, const Vec& u, const Vec& d, bool target = false) const;

    /// Checkpoint: "PSFAC001" followed by the four networks.
    void save(std::ostream& out) const;
    static ActorCritic load(std::istream& in);
    void save(const std::string& path) const;
    static ActorCritic load(const std::string& path);
};

ActorCritic make_actor_critic(const SystemSetup& setup, const std::vector<int>& hidden, std::uint64_t seed);

/// Stacked batch, one transition per column.
struct Batch {
    Mat x, u, d, x_next;
    Vec h, l, h_next, l_next;
    int size() const { return static_cast<int>(x.cols()); }
};

Batch make_batch(const std::vector<Transition>& ts);

/// (1-g) max{l,h} + g max{h, min{l, q'}} with q' from the target critic at
/// (x', pi(x'), mu(x')); an x' outside the state constraints takes
/// q' = max{l', h'}.
double critic_target(const Transition& t, const ActorCritic& nets, double gamma);
Vec critic_targets(const Batch& b, const ActorCritic& nets, double gamma);

struct LossGrad {
    double loss = 0.0;
    Vec grad;
};

/// Mean squared error against fixed targets; gradient w.r.t. critic params.
LossGrad critic_loss(const Batch& b, const ActorCritic& nets, const Vec& targets);
LossGrad critic_loss(const Batch& b, const ActorCritic& nets, double gamma);
/// Mean Q(x, pi(x), mu(x)); gradient w.r.t. actor params.
LossGrad actor_loss(const Batch& b, const ActorCritic& nets);
/// Negated mean Q(x, pi(x), mu(x)); gradient w.r.t. adversary params.
LossGrad adversary_loss(const Batch& b, const ActorCritic& nets);

/// target <- tau * source + (1 - tau) * target
void soft_update(Mlp& target, const Mlp& source, double tau);

class Optimizer {
public:
    Optimizer(std::string kind, double eta, double momentum, int n);
    void step(Vec& params, const Vec& grad);

private:
    std::string kind_;
    double eta_, beta_;
    Vec m_, v_;
    long t_ = 0;
};

struct EpochLog {
    int epoch = 0;
    long steps = 0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double probe_fraction = 0.0;
    double horizon_fraction = 0.0;
};

class TrainingDiverged : public NumericError {
public:
    using NumericError::NumericError;
};

struct TrainResult {
    ActorCritic nets;
    std::vector<EpochLog> log;
    int selected_epoch = 0;  // epoch whose networks are returned
};

/// Probe states: rows x cols node grid over the bounding box of X.
std::vector<Vec> probe_states(const Polytope& X, int rows, int cols);
double probe_fraction(const ActorCritic& nets, const std::vector<Vec>& probes);
/// Fraction of probe states whose undisturbed actor rollout stays in X and
/// is in R after `horizon` steps.
double horizon_fraction(const SystemSetup& setup, const ActorCritic& nets, const std::vector<Vec>& probes,
                        int horizon);

TrainResult train(const SystemSetup& setup, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace psf
