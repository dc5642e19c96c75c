#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "psf/bench/pipeline.hpp"
#include "psf/errors.hpp"

using namespace psf;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<int> jobs;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON experiment config");
    app->add_option("--seed", c.seed, "Training seed (overrides the config's seed list)");
    app->add_option("--out-dir", c.out_dir, "Output directory");
    app->add_option("--jobs", c.jobs, "Worker threads");
}

ExperimentConfig load_config(const Common& c) {
    Json j = c.config.empty() ? Json::object() : load_json_file(c.config);
    if (c.seed) j["seeds"] = {*c.seed};
    if (!c.out_dir.empty()) j["out_dir"] = c.out_dir;
    if (c.jobs) j["jobs"] = *c.jobs;
    ExperimentConfig cfg = experiment_config_from_json(j);
    fs::create_directories(cfg.out_dir);
    return cfg;
}

std::string in_dir(const ExperimentConfig& cfg, const std::string& given, const std::string& name) {
    return given.empty() ? (fs::path(cfg.out_dir) / name).string() : given;
}

int finish(const std::vector<Check>& checks) {
    print_checks(std::cout, checks);
    return all_pass(checks) ? 0 : 1;
}

GridValueFunction oracle_for(const ExperimentConfig& cfg, const SystemSetup& setup, const std::string& path) {
    if (fs::exists(path)) {
        std::ifstream in(path, std::ios::binary);
        return GridValueFunction::load(in);
    }
    std::cout << "no oracle at " << path << ", solving" << std::endl;
    return solve_oracle(cfg, setup).value;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Predictive safety filter experiments"};
    app.require_subcommand(1);

    Common train_c, grid_c, sweep_c, filter_c, bench_c, plot_c;
    std::optional<long> steps;
    std::string checkpoint, oracle_path, sweep_path, svg_path;

    auto* train_cmd = app.add_subcommand("train", "Train the reach-avoid actor-critic");
    add_common(train_cmd, train_c);
    train_cmd->add_option("--steps", steps, "Environment steps");
    train_cmd->add_option("--checkpoint", checkpoint, "Checkpoint output path");

    auto* grid_cmd = app.add_subcommand("grid-solve", "Grid value iteration oracle");
    add_common(grid_cmd, grid_c);

    auto* sweep_cmd = app.add_subcommand("sweep", "Verify the learned policy over the state grid");
    add_common(sweep_cmd, sweep_c);
    sweep_cmd->add_option("--checkpoint", checkpoint, "Actor-critic checkpoint");
    sweep_cmd->add_option("--oracle", oracle_path, "Oracle grid from grid-solve");

    auto* filter_cmd = app.add_subcommand("run-filter", "Closed-loop and fault-injection runs of the safety filter");
    add_common(filter_cmd, filter_c);
    filter_cmd->add_option("--checkpoint", checkpoint, "Actor-critic checkpoint");
    filter_cmd->add_option("--steps", steps, "Closed-loop steps");

    auto* bench_cmd = app.add_subcommand("bench", "Full experiment with all checks");
    add_common(bench_cmd, bench_c);

    auto* plot_cmd = app.add_subcommand("plot", "SVG of the verified and oracle safe sets");
    add_common(plot_cmd, plot_c);
    plot_cmd->add_option("--sweep", sweep_path, "Sweep CSV");
    plot_cmd->add_option("--oracle", oracle_path, "Oracle grid from grid-solve");
    plot_cmd->add_option("--svg", svg_path, "Output SVG");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*train_cmd) {
            ExperimentConfig cfg = load_config(train_c);
            if (steps) cfg.train.steps = *steps;
            const SystemSetup setup = cfg.system_setup();
            const std::uint64_t seed = cfg.seeds.front();
            const TrainResult tr = train_seed(cfg, setup, seed, std::cout);
            tr.nets.save(in_dir(cfg, checkpoint, "actor_critic.bin"));
            std::ofstream log(fs::path(cfg.out_dir) / "train_log.csv");
            write_train_log(log, tr.log);
            return finish({training_check(cfg, tr)});
        }
        if (*grid_cmd) {
            const ExperimentConfig cfg = load_config(grid_c);
            const SystemSetup setup = cfg.system_setup();
            const OracleResult r = solve_oracle(cfg, setup);
            std::cout << r.sweeps << " sweeps, " << r.seconds << " s" << std::endl;
            std::ofstream bin(fs::path(cfg.out_dir) / "oracle.bin", std::ios::binary);
            r.value.save(bin);
            std::ofstream csv(fs::path(cfg.out_dir) / "oracle.csv");
            r.value.write_csv(csv);
            return finish(oracle_checks(r.value, setup));
        }
        if (*sweep_cmd) {
            const ExperimentConfig cfg = load_config(sweep_c);
            const SystemSetup setup = cfg.system_setup();
            const ActorCritic nets = ActorCritic::load(in_dir(cfg, checkpoint, "actor_critic.bin"));
            const GridValueFunction oracle = oracle_for(cfg, setup, in_dir(cfg, oracle_path, "oracle.bin"));
            const Policy policy = [&nets](const Vec& x) { return nets.act(x); };
            SweepOptions so;
            so.horizon = cfg.horizon;
            so.jobs = cfg.jobs;
            so.soundness_rollouts = 100;
            auto rows = sweep_safe_set(setup, setup.curvature_mu(), policy, sweep_points(setup.X, cfg.rows, cfg.cols),
                                       so, [&](std::size_t i, const SweepRow&) {
                                           if ((i + 1) % static_cast<std::size_t>(cfg.cols) == 0)
                                               std::cout << "row " << (i + 1) / cfg.cols << "/" << cfg.rows << std::endl;
                                       });
            {
                std::ofstream out(fs::path(cfg.out_dir) / "sweep.csv");
                write_sweep_csv(out, rows);
            }
            const SweepSummary s = summarize_sweep(std::move(rows), oracle, setup);
            write_safe_set_svg((fs::path(cfg.out_dir) / "safe_set.svg").string(), s.rows, cfg.rows, cfg.cols, oracle,
                               setup);
            return finish(sweep_checks(cfg, s));
        }
        if (*filter_cmd) {
            ExperimentConfig cfg = load_config(filter_c);
            if (steps) cfg.closed_loop_steps = *steps;
            const SystemSetup setup = cfg.system_setup();
            const Vec mu = setup.curvature_mu();
            const ActorCritic nets = ActorCritic::load(in_dir(cfg, checkpoint, "actor_critic.bin"));
            const Policy policy = [&nets](const Vec& x) { return nets.act(x); };
            const TerminalDesign term = design_terminal_controller(setup);
            const ClosedLoopReport loop = run_closed_loop(cfg, setup, mu, policy, term.controller);
            write_telemetry_csv((fs::path(cfg.out_dir) / "closed_loop.csv").string(), loop, setup.model->nx(),
                                setup.model->nu());
            const ClosedLoopReport fault = run_fault_injection(cfg, setup, mu, policy, term.controller);
            write_telemetry_csv((fs::path(cfg.out_dir) / "fault_injection.csv").string(), fault, setup.model->nx(),
                                setup.model->nu());
            return finish({closed_loop_check(loop), fault_check(fault)});
        }
        if (*bench_cmd) {
            const ExperimentConfig cfg = load_config(bench_c);
            const BenchReport rep = run_bench(cfg, std::cout);
            return finish(rep.checks);
        }
        if (*plot_cmd) {
            const ExperimentConfig cfg = load_config(plot_c);
            const SystemSetup setup = cfg.system_setup();
            std::ifstream in(in_dir(cfg, sweep_path, "sweep.csv"));
            if (!in) throw ConfigError("cannot open sweep CSV");
            auto rows = read_sweep_csv(in);
            const GridValueFunction oracle = oracle_for(cfg, setup, in_dir(cfg, oracle_path, "oracle.bin"));
            write_safe_set_svg(in_dir(cfg, svg_path, "safe_set.svg"), rows, cfg.rows, cfg.cols, oracle, setup);
            const SweepSummary s = summarize_sweep(std::move(rows), oracle, setup);
            return finish({sweep_checks(cfg, s).front()});
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
