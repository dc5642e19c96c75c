#include "psf/bench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "psf/errors.hpp"

namespace psf {

void ExperimentConfig::validate() const {
    if (rows < 2 || cols < 2) throw ConfigError("sweep resolution must be at least 2x2");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (oracle_nodes.size() != 2 || oracle_nodes[0] < 2 || oracle_nodes[1] < 2)
        throw ConfigError("oracle grid needs two axes of at least 2 nodes");
    if (!(gamma > 0 && gamma < 1)) throw ConfigError("gamma must lie in (0, 1)");
    if (action_levels < 1) throw ConfigError("action_levels must be >= 1");
    if (seeds.empty()) throw ConfigError("at least one training seed is required");
    if (closed_loop_steps < 1 || fault_run_steps < 1) throw ConfigError("closed-loop step counts must be positive");
    if (tube_states < 1 || tube_rollouts < 1) throw ConfigError("tube check counts must be positive");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    train.validate();
}

SystemSetup ExperimentConfig::system_setup() const { return make_system(system); }

RAConfig ExperimentConfig::ra_config(const SystemSetup& setup) const {
    RAConfig c;
    c.gamma = gamma;
    c.actions = uniform_actions(setup.U, action_levels);
    c.disturbances = disturbance_samples(setup.D, disturbance_lattice);
    c.fixpoint_tol = fixpoint_tol;
    c.max_sweeps = max_sweeps;
    c.jobs = jobs;
    return c;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
    ExperimentConfig c;
    c.system = j.contains("system") ? j.at("system") : default_pendulum_config();
    if (j.contains("sweep")) {
        const Json& s = j.at("sweep");
        c.rows = s.value("rows", c.rows);
        c.cols = s.value("cols", c.cols);
        c.horizon = s.value("horizon", c.horizon);
        c.min_area_ratio = s.value("min_area_ratio", c.min_area_ratio);
        c.max_mean_solve_time = s.value("max_mean_solve_time", c.max_mean_solve_time);
        c.tube_states = s.value("tube_states", c.tube_states);
        c.tube_rollouts = s.value("tube_rollouts", c.tube_rollouts);
    }
    if (j.contains("oracle")) {
        const Json& o = j.at("oracle");
        c.oracle_nodes = o.value("nodes", c.oracle_nodes);
        c.gamma = o.value("gamma", c.gamma);
        c.action_levels = o.value("action_levels", c.action_levels);
        c.disturbance_lattice = o.value("disturbance_lattice", c.disturbance_lattice);
        c.fixpoint_tol = o.value("fixpoint_tol", c.fixpoint_tol);
        c.max_sweeps = o.value("max_sweeps", c.max_sweeps);
    }
    if (j.contains("train")) {
        c.train = train_config_from_json(j.at("train"));
        c.min_probe_fraction = j.at("train").value("min_probe_fraction", c.min_probe_fraction);
    }
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("closed_loop")) {
        const Json& l = j.at("closed_loop");
        c.closed_loop_steps = l.value("steps", c.closed_loop_steps);
        c.nominal_input = l.value("nominal_input", c.nominal_input);
        c.adversarial_probability = l.value("adversarial_probability", c.adversarial_probability);
        c.fault_start = l.value("fault_start", c.fault_start);
        c.fault_length = l.value("fault_length", c.fault_length);
        c.fault_run_steps = l.value("fault_run_steps", c.fault_run_steps);
    }
    c.out_dir = j.value("out_dir", c.out_dir);
    c.jobs = j.value("jobs", c.jobs);
    c.validate();
    return c;
}

ExperimentConfig default_experiment_config() { return experiment_config_from_json(Json::object()); }

std::vector<Vec> sweep_points(const Polytope& X, int rows, int cols) { return probe_states(X, rows, cols); }

bool SweepRow::verified() const { return status == SolveStatus::Solved && V_ra <= VerificationResult::kAcceptTolerance; }

std::vector<SweepRow> sweep_safe_set(const SystemSetup& setup, const Vec& mu, const Policy& policy,
                                     const std::vector<Vec>& points, const SweepOptions& opts,
                                     const std::function<void(std::size_t, const SweepRow&)>& progress) {
    const int horizon = opts.horizon;
    std::vector<SweepRow> out(points.size());
    std::atomic<std::size_t> next{0};
    std::mutex report;
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            SweepRow r;
            r.x = points[i];
            try {
                const Verification v = verify_action(setup, mu, policy, r.x, policy(r.x), horizon);
                r.status = v.result.status;
                r.solve_time = v.result.solve_time;
                r.iterations = v.result.iterations;
                if (r.status == SolveStatus::Solved) {
                    r.V_ra = v.result.V_ra_star;
                    r.affine_residual = affine_residual(v.result, assemble_blocks(v.instance.bundle, horizon));
                    r.realization_residual = realization_residual(v.result);
                    if (opts.soundness_rollouts > 0 && r.verified()) {
                        TubeCheckOptions t;
                        t.rollouts = opts.soundness_rollouts;
                        t.seed = i + 1;
                        r.tube_sound = tube_soundness_check(v.result, v.instance, *setup.model, t).sound(r.V_ra);
                    }
                }
            } catch (const std::exception&) {
                r.status = SolveStatus::SolverError;
            }
            out[i] = r;
            if (progress) {
                std::lock_guard<std::mutex> lock(report);
                progress(i, out[i]);
            }
        }
    };
    const int n = std::max(1, std::min<int>(opts.jobs, static_cast<int>(points.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return out;
}

namespace {

void put_number(std::ostream& out, double v) {
    if (std::isnan(v)) {
        out << "nan";
    } else {
        out << v;
    }
}

SolveStatus parse_status(const std::string& s) {
    for (auto st : {SolveStatus::Solved, SolveStatus::Infeasible, SolveStatus::SolverError})
        if (to_string(st) == s) return st;
    throw ParseError("unknown status '" + s + "'");
}

double parse_number(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ParseError("bad number '" + s + "'");
    }
    if (used != s.size()) throw ParseError("bad number '" + s + "'");
    return v;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    return f;
}

}  // namespace

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "x1,x2,V_ra,solve_time,status,iterations,affine_residual,realization_residual\n" << std::setprecision(12);
    for (const auto& r : rows) {
        out << r.x(0) << ',' << r.x(1) << ',';
        put_number(out, r.status == SolveStatus::Solved ? r.V_ra : std::numeric_limits<double>::quiet_NaN());
        out << ',' << r.solve_time << ',' << to_string(r.status) << ',' << r.iterations << ',';
        put_number(out, r.affine_residual);
        out << ',';
        put_number(out, r.realization_residual);
        out << '\n';
    }
}

std::vector<SweepRow> read_sweep_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("sweep CSV is empty");
    if (line.rfind("x1,x2,V_ra,solve_time,status", 0) != 0) throw ParseError("line 1: unexpected sweep CSV header");
    std::vector<SweepRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto f = split(line);
            if (f.size() != 5 && f.size() != 8) throw ParseError("expected 5 or 8 fields, got " + std::to_string(f.size()));
            SweepRow r;
            r.x = Vec(2);
            r.x << parse_number(f[0]), parse_number(f[1]);
            r.V_ra = parse_number(f[2]);
            r.solve_time = parse_number(f[3]);
            r.status = parse_status(f[4]);
            if (f.size() == 8) {
                r.iterations = static_cast<int>(parse_number(f[5]));
                r.affine_residual = parse_number(f[6]);
                r.realization_residual = parse_number(f[7]);
            }
            if (!r.x.allFinite()) throw ParseError("non-finite state");
            rows.push_back(r);
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

TimingStats timing_report(const std::vector<SweepRow>& rows) {
    TimingStats s;
    double sum = 0.0;
    for (const auto& r : rows) {
        if (r.status != SolveStatus::Solved) continue;
        ++s.count;
        sum += r.solve_time;
        s.max = std::max(s.max, r.solve_time);
    }
    if (s.count == 0) return s;
    s.mean = sum / s.count;
    if (s.count > 1) {
        double ss = 0.0;
        for (const auto& r : rows)
            if (r.status == SolveStatus::Solved) ss += (r.solve_time - s.mean) * (r.solve_time - s.mean);
        s.std = std::sqrt(ss / (s.count - 1));
    }
    return s;
}

SetComparison compare_with_oracle(const std::vector<SweepRow>& rows, const GridValueFunction& oracle,
                                  const std::function<double(const Vec&)>& outside) {
    if (oracle.dim() != 2) throw ConfigError("oracle must be two-dimensional");
    const Vec& ax = oracle.axes()[0];
    const Vec& ay = oracle.axes()[1];
    auto cell = [](const Vec& a, double v) {
        const int n = static_cast<int>(a.size());
        int i = static_cast<int>(std::upper_bound(a.data(), a.data() + n, v) - a.data()) - 1;
        return std::clamp(i, 0, n - 2);
    };
    SetComparison c;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Vec& x = rows[r].x;
        const bool ver = rows[r].verified();
        const bool orc = oracle.interpolate(x, outside) <= 0.0;
        c.verified += ver;
        c.oracle += orc;
        c.verified_in_oracle += ver && orc;
        if (!ver) continue;
        bool near = false;
        if (oracle.inside(x)) {
            const int i = cell(ax, x(0)), j = cell(ay, x(1));
            for (int a = std::max(0, i - 1); a <= std::min<int>(static_cast<int>(ax.size()) - 1, i + 2) && !near; ++a)
                for (int b = std::max(0, j - 1); b <= std::min<int>(static_cast<int>(ay.size()) - 1, j + 2); ++b)
                    if (oracle[oracle.flat_index({a, b})] <= 0.0) {
                        near = true;
                        break;
                    }
        }
        if (!near) {
            ++c.outside_dilated;
            c.exceptions.push_back(r);
        }
    }
    c.area_ratio = c.oracle > 0 ? static_cast<double>(c.verified) / c.oracle : 0.0;
    return c;
}

std::vector<Segment> zero_contour(const Vec& ax, const Vec& ay, const Mat& values) {
    const int nx = static_cast<int>(ax.size()), ny = static_cast<int>(ay.size());
    if (values.rows() != nx || values.cols() != ny || nx < 2 || ny < 2) throw ConfigError("contour field shape mismatch");
    // padded axes and field
    Vec px(nx + 2), py(ny + 2);
    px << ax(0) - 0.5 * (ax(1) - ax(0)), ax, ax(nx - 1) + 0.5 * (ax(nx - 1) - ax(nx - 2));
    py << ay(0) - 0.5 * (ay(1) - ay(0)), ay, ay(ny - 1) + 0.5 * (ay(ny - 1) - ay(ny - 2));
    double big = 1.0;
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (std::isfinite(values.data()[i])) big = std::max(big, std::abs(values.data()[i]));
    Mat f = Mat::Constant(nx + 2, ny + 2, big);
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j) f(i + 1, j + 1) = std::isfinite(values(i, j)) ? values(i, j) : big;

    std::vector<Segment> segs;
    auto lerp = [](double a, double b, double fa, double fb) { return a + (b - a) * fa / (fa - fb); };
    for (int i = 0; i + 1 < nx + 2; ++i) {
        for (int j = 0; j + 1 < ny + 2; ++j) {
            // corners counter-clockwise: (i,j) (i+1,j) (i+1,j+1) (i,j+1)
            const double v[4] = {f(i, j), f(i + 1, j), f(i + 1, j + 1), f(i, j + 1)};
            const double X[4] = {px(i), px(i + 1), px(i + 1), px(i)};
            const double Y[4] = {py(j), py(j), py(j + 1), py(j + 1)};
            int mask = 0;
            for (int k = 0; k < 4; ++k)
                if (v[k] <= 0.0) mask |= 1 << k;
            if (mask == 0 || mask == 15) continue;
            std::vector<std::pair<double, double>> pts;
            for (int k = 0; k < 4; ++k) {
                const int n = (k + 1) % 4;
                if ((v[k] <= 0.0) != (v[n] <= 0.0))
                    pts.emplace_back(lerp(X[k], X[n], v[k], v[n]), lerp(Y[k], Y[n], v[k], v[n]));
            }
            if (pts.size() == 2) {
                segs.push_back({pts[0].first, pts[0].second, pts[1].first, pts[1].second});
            } else if (pts.size() == 4) {
                // saddle: decide by the cell-center average
                const double center = 0.25 * (v[0] + v[1] + v[2] + v[3]);
                if ((center <= 0.0) == ((mask & 1) != 0)) {
                    segs.push_back({pts[0].first, pts[0].second, pts[1].first, pts[1].second});
                    segs.push_back({pts[2].first, pts[2].second, pts[3].first, pts[3].second});
                } else {
                    segs.push_back({pts[0].first, pts[0].second, pts[3].first, pts[3].second});
                    segs.push_back({pts[1].first, pts[1].second, pts[2].first, pts[2].second});
                }
            }
        }
    }
    return segs;
}

void write_contour_svg(std::ostream& out, const Vec& lo, const Vec& hi, const std::vector<ContourLayer>& layers) {
    const double W = 640, H = 480, ml = 70, mr = 20, mt = 20, mb = 60;
    const double pw = W - ml - mr, ph = H - mt - mb;
    auto sx = [&](double x) { return ml + (x - lo(0)) / (hi(0) - lo(0)) * pw; };
    auto sy = [&](double y) { return mt + (1.0 - (y - lo(1)) / (hi(1) - lo(1))) * ph; };
    out << std::fixed << std::setprecision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
        << ' ' << H << "\">\n";
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"white\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = lo(0) + (hi(0) - lo(0)) * t / 4.0, yv = lo(1) + (hi(1) - lo(1)) * t / 4.0;
        out << "<text x=\"" << sx(xv) << "\" y=\"" << (mt + ph + 18) << "\" font-size=\"12\" text-anchor=\"middle\">"
            << std::setprecision(2) << xv << "</text>\n";
        out << "<text x=\"" << (ml - 6) << "\" y=\"" << (sy(yv) + 4) << "\" font-size=\"12\" text-anchor=\"end\">" << yv
            << "</text>\n";
    }
    out << "<text x=\"" << (ml + pw / 2) << "\" y=\"" << (H - 15)
        << "\" font-size=\"14\" text-anchor=\"middle\">x₁ (rad)</text>\n";
    out << "<text x=\"18\" y=\"" << (mt + ph / 2) << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << (mt + ph / 2) << ")\">x₂ (rad/s)</text>\n";
    int li = 0;
    for (const auto& layer : layers) {
        out << "<g stroke=\"" << layer.color << "\" stroke-width=\"1.5\" fill=\"none\">\n";
        for (const auto& s : layer.segments)
            out << "<line x1=\"" << sx(s.x0) << "\" y1=\"" << sy(s.y0) << "\" x2=\"" << sx(s.x1) << "\" y2=\"" << sy(s.y1)
                << "\"/>\n";
        out << "</g>\n";
        out << "<text x=\"" << (ml + 10) << "\" y=\"" << (mt + 16 + 16 * li) << "\" font-size=\"12\" fill=\""
            << layer.color << "\">" << layer.label << "</text>\n";
        ++li;
    }
    out << "</svg>\n";
}

Mat sweep_field(const std::vector<SweepRow>& rows, int nrows, int ncols) {
    if (static_cast<int>(rows.size()) != nrows * ncols) throw ConfigError("sweep row count does not match resolution");
    Mat f(nrows, ncols);
    for (int i = 0; i < nrows; ++i)
        for (int j = 0; j < ncols; ++j) {
            const auto& r = rows[static_cast<std::size_t>(i * ncols + j)];
            f(i, j) = r.status == SolveStatus::Solved ? r.V_ra - VerificationResult::kAcceptTolerance
                                                     : std::numeric_limits<double>::infinity();
        }
    return f;
}

ClosedLoopReport closed_loop_experiment(const SystemSetup& setup, const Vec& mu, const Policy& policy,
                                        const TerminalController& terminal, const ClosedLoopOptions& opts) {
    const DisturbedModel& model = *setup.model;
    FilterOptions fo;
    fo.horizon = opts.horizon;
    fo.fault = opts.fault;
    SafetyFilter filter(setup, mu, policy, terminal, fo);
    const auto [ulo, uhi] = setup.U.bounding_box();
    auto nominal = opts.nominal ? opts.nominal : [hi = uhi](const Vec&, long) { return hi; };
    const auto dverts = setup.D.vertices();
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, dverts.size() - 1);

    ClosedLoopReport rep;
    Vec x = opts.x0.size() ? opts.x0 : Vec::Zero(model.nx());
    rep.states.push_back(x);
    std::vector<SweepRow> timing_rows;
    for (long s = 0; s < opts.steps; ++s) {
        const FilterTelemetry t = filter.step(x, nominal(x, s));
        Vec d = dverts[pick(rng)];
        if (opts.disturbance == DisturbanceMode::Adversarial && unit(rng) < opts.adversarial_probability) {
            double worst = -std::numeric_limits<double>::infinity();
            for (const Vec& v : dverts) {
                const double m = setup.X.margin(step_disturbed(model, x, t.u_safe, v));
                if (m > worst) {
                    worst = m;
                    d = v;
                }
            }
        }
        x = step_disturbed(model, x, t.u_safe, d);
        const double m = setup.X.margin(x);
        rep.worst_margin = std::max(rep.worst_margin, m);
        if (m > 0.0) ++rep.violations;
        switch (t.branch) {
            case FilterBranch::Verified:
                ++rep.verified;
                break;
            case FilterBranch::Tracking:
                ++rep.tracking;
                break;
            case FilterBranch::Terminal:
                ++rep.terminal;
                break;
        }
        rep.clipped += t.clipped;
        if (!t.injected) {
            SweepRow r;
            r.status = t.status;
            r.solve_time = t.solve_time;
            timing_rows.push_back(r);
        }
        rep.telemetry.push_back(t);
        rep.states.push_back(x);
        ++rep.steps;
    }
    rep.timing = timing_report(timing_rows);
    return rep;
}

}  // namespace psf
