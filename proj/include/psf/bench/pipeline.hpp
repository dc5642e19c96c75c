#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "psf/bench/bench.hpp"

namespace psf {

/// One pass/fail line of an experiment run.
struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

bool all_pass(const std::vector<Check>& checks);
void print_checks(std::ostream& out, const std::vector<Check>& checks);

/// max{l, h}: the value assigned to states off the oracle grid.
std::function<double(const Vec&)> off_grid_value(const SystemSetup& setup);

struct OracleResult {
    GridValueFunction value;
    int sweeps = 0;
    double seconds = 0.0;
};

OracleResult solve_oracle(const ExperimentConfig& cfg, const SystemSetup& setup);
/// Oracle value is nonempty below zero and <= 0 on every node inside R.
std::vector<Check> oracle_checks(const GridValueFunction& oracle, const SystemSetup& setup);

/// Training with cfg.train and the given seed; the log is echoed to `log`.
TrainResult train_seed(const ExperimentConfig& cfg, const SystemSetup& setup, std::uint64_t seed, std::ostream& log);
Check training_check(const ExperimentConfig& cfg, const TrainResult& res);

struct SweepSummary {
    std::vector<SweepRow> rows;
    SetComparison comparison;
    TimingStats timing;
    int solved = 0;
    double max_affine_residual = 0.0;
    double max_realization_residual = 0.0;
    int tube_checked = 0, tube_unsound = 0;
};

SweepSummary summarize_sweep(std::vector<SweepRow> rows, const GridValueFunction& oracle, const SystemSetup& setup);
/// Safe-set scale, timing, residual identities and per-point soundness.
std::vector<Check> sweep_checks(const ExperimentConfig& cfg, const SweepSummary& s);

struct TubeSummary {
    int states = 0;
    int unsound = 0;
    double worst_excess = -1e300;  // largest margin minus its certified bound
    double max_affine_residual = 0.0;
    double max_realization_residual = 0.0;
};

/// Re-verifies up to cfg.tube_states verified sweep points (evenly spaced in
/// grid order) and runs cfg.tube_rollouts disturbed rollouts under each tube.
TubeSummary tube_check(const ExperimentConfig& cfg, const SystemSetup& setup, const Vec& mu, const Policy& policy,
                       const std::vector<SweepRow>& rows);
Check tube_check_result(const TubeSummary& t);

/// Unsafe constant nominal with adversarial disturbances from the origin.
ClosedLoopReport run_closed_loop(const ExperimentConfig& cfg, const SystemSetup& setup, const Vec& mu,
                                 const Policy& policy, const TerminalController& terminal);
/// Same loop with verification blocked over the configured fault window.
ClosedLoopReport run_fault_injection(const ExperimentConfig& cfg, const SystemSetup& setup, const Vec& mu,
                                     const Policy& policy, const TerminalController& terminal);
Check closed_loop_check(const ClosedLoopReport& r);
Check fault_check(const ClosedLoopReport& r);

void write_telemetry_csv(const std::string& path, const ClosedLoopReport& r, int nx, int nu);

/// SVG of the sweep's verified contour over the oracle's zero contour.
void write_safe_set_svg(const std::string& path, const std::vector<SweepRow>& rows, int nrows, int ncols,
                        const GridValueFunction& oracle, const SystemSetup& setup);

struct BenchReport {
    std::vector<Check> checks;
    std::uint64_t selected_seed = 0;
    SweepSummary sweep;
    TubeSummary tube;
    double tube_seconds = 0.0;
    ClosedLoopReport closed_loop, fault;
};

/// The named check, or a failing placeholder when it was not run.
const Check& find_check(const std::vector<Check>& checks, const std::string& name);

/// Full experiment into cfg.out_dir: oracle, training and sweep per seed
/// until the safe-set check passes, tube check, closed-loop and fault runs,
/// plot and summary.json.
BenchReport run_bench(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace psf
