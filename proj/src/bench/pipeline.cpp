#include "psf/bench/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "psf/errors.hpp"

namespace psf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    return out;
}

}  // namespace

bool all_pass(const std::vector<Check>& checks) {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

void print_checks(std::ostream& out, const std::vector<Check>& checks) {
    for (const auto& c : checks) out << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
}

const Check& find_check(const std::vector<Check>& checks, const std::string& name) {
    for (const auto& c : checks)
        if (c.name == name) return c;
    static const Check missing{"missing", false, "check was not run"};
    return missing;
}

std::function<double(const Vec&)> off_grid_value(const SystemSetup& setup) {
    return [&setup](const Vec& x) { return std::max(setup.l_margin(x), setup.h_margin(x)); };
}

OracleResult solve_oracle(const ExperimentConfig& cfg, const SystemSetup& setup) {
    const auto t0 = Clock::now();
    ReachAvoidGrid grid(make_grid_problem(setup, cfg.oracle_nodes), cfg.ra_config(setup));
    auto vi = grid.value_iteration();
    OracleResult r;
    r.value = std::move(vi.value);
    r.sweeps = vi.sweeps;
    r.seconds = seconds_since(t0);
    return r;
}

std::vector<Check> oracle_checks(const GridValueFunction& oracle, const SystemSetup& setup) {
    int negative = 0, in_r = 0, in_r_bad = 0;
    for (int i = 0; i < oracle.size(); ++i) {
        negative += oracle[i] <= 0.0;
        if (setup.l_margin(oracle.node(i)) <= 0.0) {
            ++in_r;
            in_r_bad += oracle[i] > 0.0;
        }
    }
    return {{"oracle_nonempty", negative > 0, std::to_string(negative) + " of " + std::to_string(oracle.size()) + " nodes <= 0"},
            {"oracle_contains_target", in_r > 0 && in_r_bad == 0,
             std::to_string(in_r - in_r_bad) + " of " + std::to_string(in_r) + " nodes in R have V <= 0"}};
}

TrainResult train_seed(const ExperimentConfig& cfg, const SystemSetup& setup, std::uint64_t seed, std::ostream& log) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto t0 = Clock::now();
    return train(setup, tc, [&](const EpochLog& e) {
        log << "  epoch " << e.epoch << " steps " << e.steps << " critic_loss " << fmt(e.critic_loss) << " probe "
            << fmt(e.probe_fraction, 3) << " horizon " << fmt(e.horizon_fraction, 3) << " (" << fmt(seconds_since(t0), 3)
            << " s)" << std::endl;
    });
}

Check training_check(const ExperimentConfig& cfg, const TrainResult& res) {
    const double last = res.log.empty() ? 0.0 : res.log.back().probe_fraction;
    return {"training_probe_fraction", last >= cfg.min_probe_fraction,
            "final probe fraction " + fmt(last, 3) + " (>= " + fmt(cfg.min_probe_fraction, 3) + "), returned epoch " +
                std::to_string(res.selected_epoch)};
}

SweepSummary summarize_sweep(std::vector<SweepRow> rows, const GridValueFunction& oracle, const SystemSetup& setup) {
    SweepSummary s;
    s.comparison = compare_with_oracle(rows, oracle, off_grid_value(setup));
    s.timing = timing_report(rows);
    for (const auto& r : rows) {
        if (r.status != SolveStatus::Solved) continue;
        ++s.solved;
        s.max_affine_residual = std::max(s.max_affine_residual, r.affine_residual);
        s.max_realization_residual = std::max(s.max_realization_residual, r.realization_residual);
        if (r.tube_sound) {
            ++s.tube_checked;
            s.tube_unsound += !*r.tube_sound;
        }
    }
    s.rows = std::move(rows);
    return s;
}

std::vector<Check> sweep_checks(const ExperimentConfig& cfg, const SweepSummary& s) {
    const auto& c = s.comparison;
    std::vector<Check> out;
    out.push_back({"safe_set_scale", c.oracle > 0 && c.area_ratio >= cfg.min_area_ratio && c.outside_dilated == 0,
                   "verified " + std::to_string(c.verified) + " / oracle " + std::to_string(c.oracle) +
                       " = " + fmt(c.area_ratio, 3) + " (>= " + fmt(cfg.min_area_ratio, 3) + "), " +
                       std::to_string(c.verified_in_oracle) + " verified inside the oracle set, outside dilated oracle " +
                       std::to_string(c.outside_dilated)});
    out.push_back({"solve_time", s.timing.count > 0 && s.timing.mean < cfg.max_mean_solve_time,
                   "mean " + fmt(s.timing.mean) + " s, std " + fmt(s.timing.std) + " s, max " + fmt(s.timing.max) +
                       " s over " + std::to_string(s.timing.count) + " solves (< " + fmt(cfg.max_mean_solve_time) + " s)"});
    out.push_back({"response_identities",
                   s.solved > 0 && s.max_affine_residual <= 1e-6 && s.max_realization_residual <= 1e-6,
                   "max affine residual " + fmt(s.max_affine_residual, 3) + ", max realization residual " +
                       fmt(s.max_realization_residual, 3) + " over " + std::to_string(s.solved) + " solved points"});
    out.push_back({"sweep_tube_soundness", s.tube_unsound == 0,
                   std::to_string(s.tube_unsound) + " unsound of " + std::to_string(s.tube_checked) + " verified points"});
    return out;
}

TubeSummary tube_check(const ExperimentConfig& cfg, const SystemSetup& setup, const Vec& mu, const Policy& policy,
                       const std::vector<SweepRow>& rows) {
    std::vector<std::size_t> verified;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].verified()) verified.push_back(i);
    TubeSummary t;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.tube_states), verified.size());
    for (std::size_t k = 0; k < n; ++k) {
        const Vec& x = rows[verified[k * verified.size() / n]].x;
        const Verification v = verify_action(setup, mu, policy, x, policy(x), cfg.horizon);
        if (!v.result.verified()) continue;
        TubeCheckOptions o;
        o.rollouts = cfg.tube_rollouts;
        o.seed = 1000 + k;
        const TubeCheckReport rep = tube_soundness_check(v.result, v.instance, *setup.model, o);
        const double V = v.result.V_ra_star;
        ++t.states;
        t.unsound += !rep.sound(V);
        t.worst_excess = std::max({t.worst_excess, rep.max_state_margin - V, rep.max_terminal_margin - V,
                                   rep.max_input_margin_initial - V, rep.max_input_margin});
        t.max_affine_residual =
            std::max(t.max_affine_residual, affine_residual(v.result, assemble_blocks(v.instance.bundle, cfg.horizon)));
        t.max_realization_residual = std::max(t.max_realization_residual, realization_residual(v.result));
    }
    return t;
}

Check tube_check_result(const TubeSummary& t) {
    return {"tube_soundness", t.states > 0 && t.unsound == 0,
            std::to_string(t.states) + " verified states, " + std::to_string(t.unsound) +
                " unsound, worst margin minus bound " + fmt(t.worst_excess, 3)};
}

ClosedLoopReport run_closed_loop(const ExperimentConfig& cfg, const SystemSetup& setup, const Vec& mu,
                                 const Policy& policy, const TerminalController& terminal) {
    ClosedLoopOptions o;
    o.steps = cfg.closed_loop_steps;
    o.horizon = cfg.horizon;
    o.adversarial_probability = cfg.adversarial_probability;
    const double u = cfg.nominal_input;
    o.nominal = [u, nu = setup.model->nu()](const Vec&, long) { return Vec::Constant(nu, u); };
    return closed_loop_experiment(setup, mu, policy, terminal, o);
}

ClosedLoopReport run_fault_injection(const ExperimentConfig& cfg, const SystemSetup& setup, const Vec& mu,
                                     const Policy& policy, const TerminalController& terminal) {
    ClosedLoopOptions o;
    o.steps = cfg.fault_run_steps;
    o.horizon = cfg.horizon;
    o.adversarial_probability = cfg.adversarial_probability;
    o.seed = 12;
    const double u = cfg.nominal_input;
    o.nominal = [u, nu = setup.model->nu()](const Vec&, long) { return Vec::Constant(nu, u); };
    const long a = cfg.fault_start, b = cfg.fault_start + cfg.fault_length;
    o.fault = [a, b](long s) { return s >= a && s < b; };
    return closed_loop_experiment(setup, mu, policy, terminal, o);
}

Check closed_loop_check(const ClosedLoopReport& r) {
    return {"closed_loop_safety", r.steps > 0 && r.violations == 0,
            std::to_string(r.violations) + " violations in " + std::to_string(r.steps) + " steps, worst margin " +
                fmt(r.worst_margin, 3) + "; verified " + std::to_string(r.verified) + ", tracking " +
                std::to_string(r.tracking) + ", terminal " + std::to_string(r.terminal) + ", mean solve " +
                fmt(r.timing.mean) + " s"};
}

Check fault_check(const ClosedLoopReport& r) {
    return {"fault_injection_safety", r.steps > 0 && r.violations == 0 && r.tracking > 0 && r.terminal > 0,
            std::to_string(r.violations) + " violations in " + std::to_string(r.steps) + " steps; verified " +
                std::to_string(r.verified) + ", tracking " + std::to_string(r.tracking) + ", terminal " +
                std::to_string(r.terminal)};
}

void write_telemetry_csv(const std::string& path, const ClosedLoopReport& r, int nx, int nu) {
    auto out = open_out(path);
    out << telemetry_csv_header(nx, nu) << '\n';
    for (const auto& t : r.telemetry) out << telemetry_csv_row(t) << '\n';
}

void write_safe_set_svg(const std::string& path, const std::vector<SweepRow>& rows, int nrows, int ncols,
                        const GridValueFunction& oracle, const SystemSetup& setup) {
    if (static_cast<int>(rows.size()) != nrows * ncols) throw ConfigError("sweep size does not match rows x cols");
    const Vec ax = linspace(rows.front().x(0), rows.back().x(0), nrows);
    const Vec ay = linspace(rows.front().x(1), rows.back().x(1), ncols);
    const Vec& ox = oracle.axes()[0];
    const Vec& oy = oracle.axes()[1];
    Mat of(ox.size(), oy.size());
    for (int i = 0; i < ox.size(); ++i)
        for (int j = 0; j < oy.size(); ++j) of(i, j) = oracle[oracle.flat_index({i, j})];
    const auto [lo, hi] = setup.X.bounding_box();
    auto out = open_out(path);
    write_contour_svg(out, lo, hi,
                      {{zero_contour(ox, oy, of), "#1f77b4", "grid-DP oracle V* = 0"},
                       {zero_contour(ax, ay, sweep_field(rows, nrows, ncols)), "#d62728", "verified V_ra* = 0"}});
}

BenchReport run_bench(const ExperimentConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto dir = [&](const std::string& f) { return (fs::path(cfg.out_dir) / f).string(); };
    const SystemSetup setup = cfg.system_setup();
    const Vec mu = setup.curvature_mu();
    BenchReport rep;

    log << "grid oracle " << cfg.oracle_nodes[0] << "x" << cfg.oracle_nodes[1] << std::endl;
    const OracleResult oracle = solve_oracle(cfg, setup);
    log << "  " << oracle.sweeps << " sweeps, " << fmt(oracle.seconds, 3) << " s" << std::endl;
    {
        std::ofstream out(dir("oracle.bin"), std::ios::binary);
        oracle.value.save(out);
        auto csv = open_out(dir("oracle.csv"));
        oracle.value.write_csv(csv);
    }
    for (auto& c : oracle_checks(oracle.value, setup)) rep.checks.push_back(c);

    ActorCritic nets;
    std::vector<Check> sweep_result;
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
        const std::uint64_t seed = cfg.seeds[k];
        log << "training seed " << seed << std::endl;
        const TrainResult tr = train_seed(cfg, setup, seed, log);
        const std::string tag = "seed" + std::to_string(seed);
        tr.nets.save(dir("actor_critic_" + tag + ".bin"));
        {
            auto out = open_out(dir("train_log_" + tag + ".csv"));
            write_train_log(out, tr.log);
        }
        const Check train_ok = training_check(cfg, tr);
        log << "  " << train_ok.detail << std::endl;

        log << "sweep " << cfg.rows << "x" << cfg.cols << std::endl;
        const Policy policy = [&n = tr.nets](const Vec& x) { return n.act(x); };
        SweepOptions so;
        so.horizon = cfg.horizon;
        so.jobs = cfg.jobs;
        so.soundness_rollouts = 100;
        const auto t0 = Clock::now();
        auto rows = sweep_safe_set(setup, mu, policy, sweep_points(setup.X, cfg.rows, cfg.cols), so,
                                   [&](std::size_t i, const SweepRow&) {
                                       if ((i + 1) % static_cast<std::size_t>(cfg.cols) == 0)
                                           log << "  row " << (i + 1) / cfg.cols << "/" << cfg.rows << " ("
                                               << fmt(seconds_since(t0), 3) << " s)" << std::endl;
                                   });
        {
            auto out = open_out(dir("sweep_" + tag + ".csv"));
            write_sweep_csv(out, rows);
        }
        SweepSummary summary = summarize_sweep(std::move(rows), oracle.value, setup);
        sweep_result = sweep_checks(cfg, summary);
        sweep_result.insert(sweep_result.begin(), train_ok);
        print_checks(log, sweep_result);
        rep.selected_seed = seed;
        rep.sweep = std::move(summary);
        nets = tr.nets;
        if (sweep_result[1].pass) break;
    }
    for (auto& c : sweep_result) rep.checks.push_back(c);
    {
        std::filesystem::copy_file(dir("sweep_seed" + std::to_string(rep.selected_seed) + ".csv"), dir("sweep.csv"),
                                   std::filesystem::copy_options::overwrite_existing);
        nets.save(dir("actor_critic.bin"));
    }
    write_safe_set_svg(dir("safe_set.svg"), rep.sweep.rows, cfg.rows, cfg.cols, oracle.value, setup);

    const Policy policy = [&nets](const Vec& x) { return nets.act(x); };
    log << "tube check on " << cfg.tube_states << " verified states" << std::endl;
    const auto tube_t0 = Clock::now();
    rep.tube = tube_check(cfg, setup, mu, policy, rep.sweep.rows);
    rep.tube_seconds = seconds_since(tube_t0);
    rep.checks.push_back(tube_check_result(rep.tube));
    rep.checks.push_back({"tube_identities",
                          rep.tube.states > 0 && rep.tube.max_affine_residual <= 1e-6 &&
                              rep.tube.max_realization_residual <= 1e-6,
                          "max affine residual " + fmt(rep.tube.max_affine_residual, 3) + ", max realization residual " +
                              fmt(rep.tube.max_realization_residual, 3)});

    const TerminalDesign term = design_terminal_controller(setup);
    rep.checks.push_back({"terminal_controller", term.validation.safe,
                          std::to_string(term.validation.rollouts) + " rollouts from R, worst margin " +
                              fmt(term.validation.worst_state_margin, 3)});
    log << "closed loop " << cfg.closed_loop_steps << " steps" << std::endl;
    rep.closed_loop = run_closed_loop(cfg, setup, mu, policy, term.controller);
    write_telemetry_csv(dir("closed_loop.csv"), rep.closed_loop, setup.model->nx(), setup.model->nu());
    rep.checks.push_back(closed_loop_check(rep.closed_loop));
    log << "fault injection " << cfg.fault_run_steps << " steps" << std::endl;
    rep.fault = run_fault_injection(cfg, setup, mu, policy, term.controller);
    write_telemetry_csv(dir("fault_injection.csv"), rep.fault, setup.model->nx(), setup.model->nu());
    rep.checks.push_back(fault_check(rep.fault));

    Json summary;
    summary["selected_seed"] = rep.selected_seed;
    summary["area_ratio"] = rep.sweep.comparison.area_ratio;
    summary["verified_points"] = rep.sweep.comparison.verified;
    summary["oracle_points"] = rep.sweep.comparison.oracle;
    summary["verified_in_oracle"] = rep.sweep.comparison.verified_in_oracle;
    summary["solve_time"] = {{"mean", rep.sweep.timing.mean}, {"std", rep.sweep.timing.std}, {"max", rep.sweep.timing.max}};
    summary["closed_loop"] = {{"violations", rep.closed_loop.violations},
                              {"verified", rep.closed_loop.verified},
                              {"tracking", rep.closed_loop.tracking},
                              {"terminal", rep.closed_loop.terminal}};
    summary["fault_injection"] = {{"violations", rep.fault.violations},
                                  {"verified", rep.fault.verified},
                                  {"tracking", rep.fault.tracking},
                                  {"terminal", rep.fault.terminal}};
    for (const auto& c : rep.checks) summary["checks"][c.name] = {{"pass", c.pass}, {"detail", c.detail}};
    auto out = open_out(dir("summary.json"));
    out << summary.dump(2) << '\n';
    return rep;
}

}  // namespace psf
