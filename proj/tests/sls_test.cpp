#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "psf/errors.hpp"
#include "psf/sls/sls.hpp"

using namespace psf;

namespace {

Policy saturated_feedback(double k1 = 8.0, double k2 = 2.0) {
    return [=](const Vec& x) {
        Vec u(1);
        u(0) = std::clamp(-(k1 * x(0) + k2 * x(1)), -5.0, 5.0);
        return u;
    };
}

const SystemSetup& pendulum() {
    static const SystemSetup setup = make_system(default_pendulum_config());
    return setup;
}

const Vec& pendulum_mu() {
    static const Vec mu = pendulum().curvature_mu();
    return mu;
}

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

const Verification& origin_verification() {
    static const Verification v = [] {
        const auto pol = saturated_feedback();
        return verify_action(pendulum(), pendulum_mu(), pol, vec2(0, 0), pol(vec2(0, 0)), 25);
    }();
    return v;
}

/// Stable 2-state linear system with a zero disturbance set.
SystemSetup quiet_linear() {
    Json cfg = default_pendulum_config();
    cfg["model"] = {{"name", "linear"},
                    {"dt", 0.1},
                    {"A", {{-0.5, 0.2}, {0.0, -0.3}}},
                    {"B", {{0.0}, {1.0}}},
                    {"E", {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}}};
    cfg["sets"]["D"] = {{"lo", {0.0, 0.0, 0.0}}, {"hi", {0.0, 0.0, 0.0}}};
    return make_system(cfg);
}

}  // namespace

TEST(Nominal, SingleStep) {
    const auto& s = pendulum();
    const auto pol = saturated_feedback();
    const Vec x = vec2(0.2, -0.1);
    Vec u(1);
    u << 1.5;
    const auto traj = generate_nominal(*s.model, x, u, pol, 1);
    ASSERT_EQ(traj.horizon(), 1);
    EXPECT_EQ(traj.z[0], x);
    EXPECT_EQ(traj.v[0], u);
    EXPECT_EQ(traj.z[1], step_nominal(*s.model, x, u));
    EXPECT_EQ(traj.v[1], pol(traj.z[1]));
}

TEST(Nominal, RolloutResidualAndEquilibrium) {
    const auto& s = pendulum();
    const auto pol = saturated_feedback();
    const auto traj = generate_nominal(*s.model, vec2(0.4, 0.3), pol(vec2(0.4, 0.3)), pol, 25);
    for (int k = 0; k < 25; ++k)
        EXPECT_LT((traj.z[k + 1] - step_nominal(*s.model, traj.z[k], traj.v[k])).lpNorm<Eigen::Infinity>(), 1e-12);
    const auto eq = generate_nominal(*s.model, vec2(0, 0), Vec::Zero(1), pol, 25);
    for (const auto& z : eq.z) EXPECT_EQ(z.lpNorm<Eigen::Infinity>(), 0.0);
    EXPECT_THROW(generate_nominal(*s.model, vec2(0, 0), Vec::Zero(1), pol, 0), ConfigError);
}

TEST(Blocks, DownshiftAndTrailingZero) {
    LinearizationBundle b;
    for (int k = 0; k < 2; ++k) {
        b.Af.push_back(Mat::Constant(2, 2, k + 1.0));
        b.Bf.push_back(Mat::Constant(2, 1, k + 2.0));
    }
    const auto blk = assemble_blocks(b, 2);
    Mat Z = Mat::Zero(4, 4);
    Z.block(2, 0, 2, 2).setIdentity();
    EXPECT_EQ(blk.Z, Z);
    EXPECT_EQ(blk.A.block(0, 0, 2, 2), b.Af[1]);
    EXPECT_TRUE(blk.A.block(2, 2, 2, 2).isZero(0));
    EXPECT_EQ(blk.B.block(0, 0, 2, 1), b.Bf[1]);
    EXPECT_TRUE(blk.B.block(2, 1, 2, 1).isZero(0));
    EXPECT_THROW(assemble_blocks(b, 3), ConfigError);
}

TEST(Blocks, DownshiftIsNilpotent) {
    LinearizationBundle b;
    for (int k = 0; k < 6; ++k) {
        b.Af.push_back(Mat::Identity(3, 3));
        b.Bf.push_back(Mat::Ones(3, 2));
    }
    const auto blk = assemble_blocks(b, 6);
    Mat P = Mat::Identity(18, 18);
    for (int i = 0; i < 6; ++i) P = P * blk.Z;
    EXPECT_TRUE(P.isZero(0));
    Mat P5 = Mat::Identity(18, 18);
    for (int i = 0; i < 5; ++i) P5 = P5 * blk.Z;
    EXPECT_FALSE(P5.isZero(0));
}

TEST(Program, PendulumFamilyCounts) {
    const auto& v = origin_verification();
    const auto prog = build_socp(v.instance);
    EXPECT_EQ(prog.counts.filter, 384);
    EXPECT_EQ(prog.counts.filter_initial, 2 * 8);
    EXPECT_EQ(prog.counts.affine, 25 * 26 / 2 * 4);
    EXPECT_EQ(prog.counts.eta_bound, 24 * 3);
    EXPECT_EQ(prog.counts.state, 26 * 4);
    EXPECT_EQ(prog.counts.input, 26 * 2);
    EXPECT_EQ(prog.counts.terminal, 4);
    EXPECT_EQ(prog.counts.cones, 24);
    EXPECT_EQ(prog.conic.num_eq(), prog.counts.affine);
    EXPECT_NO_THROW(prog.conic.validate());
}

TEST(Program, MissingCurvatureIsRejected) {
    auto inst = origin_verification().instance;
    inst.bundle.mu = Vec();
    EXPECT_THROW(build_socp(inst), ConfigError);
}

TEST(Program, DegenerateTubeGivesNominalMargin) {
    const auto s = quiet_linear();
    const Vec mu = s.curvature_mu();
    ASSERT_EQ(mu.lpNorm<Eigen::Infinity>(), 0.0);
    Policy zero = [](const Vec&) { return Vec::Zero(1); };
    for (const Vec& x : {vec2(0.5, 0.3), vec2(-0.9, 1.5), vec2(0.05, 0.0)}) {
        Vec u(1);
        u << 2.0;
        const auto v = verify_action(s, mu, zero, x, u, 10);
        ASSERT_EQ(v.result.status, SolveStatus::Solved) << v.result.detail;
        double expect = s.U.margin(u);
        for (const auto& z : v.instance.traj.z) expect = std::max(expect, s.h_margin(z));
        expect = std::max(expect, s.l_margin(v.instance.traj.z.back()));
        EXPECT_NEAR(v.result.V_ra_star, expect, 1e-7);
    }
}

TEST(Solve, OriginIsVerifiedAndRechecks) {
    const auto& v = origin_verification();
    const auto& r = v.result;
    ASSERT_EQ(r.status, SolveStatus::Solved) << r.detail;
    EXPECT_LE(r.V_ra_star, 0.0);
    EXPECT_TRUE(r.verified());
    const auto audit = audit_constraints(v.instance, r);
    EXPECT_LT(audit.worst(), 1e-8);
    EXPECT_EQ(audit.causality, 0.0);
    for (int k = 0; k < r.eta.size(); ++k) EXPECT_LE(r.eta(k) * r.eta(k), r.lambda(k) + 1e-8);
    EXPECT_GT(r.solve_time, 0.0);
    EXPECT_GT(r.iterations, 0);
}

TEST(Solve, AffineAndRealizationIdentities) {
    const auto& v = origin_verification();
    const auto& r = v.result;
    const auto blocks = assemble_blocks(v.instance.bundle, 25);
    EXPECT_LE(affine_residual(r, blocks), 1e-6);
    EXPECT_LE(realization_residual(r), 1e-6);
    // diagonal blocks of Phi_x equal Sigma
    for (int k = 0; k < 25; ++k) {
        const Mat D = r.Phi.Phi_x.block(2 * k, 2 * k, 2, 2);
        EXPECT_NEAR(D(0, 1), 0.0, 1e-8);
        EXPECT_NEAR(D(1, 0), 0.0, 1e-8);
        EXPECT_NEAR(D(0, 0), r.Sigma(k, 0), 1e-8);
        EXPECT_NEAR(D(1, 1), r.Sigma(k, 1), 1e-8);
    }
}

TEST(Solve, StateOutsideXHasPositiveValue) {
    const auto pol = saturated_feedback();
    const Vec x = vec2(M_PI / 3 + 0.05, 0.0);
    const auto v = verify_action(pendulum(), pendulum_mu(), pol, x, pol(x), 25);
    ASSERT_EQ(v.result.status, SolveStatus::Solved) << v.result.detail;
    EXPECT_GT(pendulum().h_margin(x), 0.0);
    EXPECT_GE(v.result.V_ra_star, pendulum().h_margin(x) - 1e-8);
    EXPECT_FALSE(v.result.verified());
}

TEST(Solve, DumpedProgramSolvesToSameValue) {
    const auto prog = build_socp(origin_verification().instance);
    std::stringstream ss;
    write_conic_program(ss, prog.conic);
    const auto back = read_conic_program(ss);
    const auto sol = solve_conic(back);
    ASSERT_EQ(sol.status, SolveStatus::Solved);
    EXPECT_NEAR(sol.pcost, origin_verification().result.V_ra_star, 1e-7);
    EXPECT_LT(max_constraint_violation(back, sol.x), 1e-7);
}

TEST(Solve, ShrinkingDisturbanceNeverHurts) {
    const auto& v = origin_verification();
    auto inst = v.instance;
    inst.d_vertices.setZero();
    inst.D = inst.D.scaled(0.0);
    const auto zero = solve_socp(build_socp(inst));
    ASSERT_EQ(zero.status, SolveStatus::Solved);
    EXPECT_LE(zero.V_ra_star, v.result.V_ra_star + 1e-8);
}

TEST(Encoding, RotatedConeMatchesSquareBound) {
    // [(l+1)/2, (l-1)/2, e] in Q3  <=>  e^2 <= l, l >= 0
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    for (int i = 0; i < 1000; ++i) {
        const double eta = U(rng);
        for (double off : {-1e-6, 1e-6}) {
            const double lam = eta * eta + off;
            const bool in_cone = std::hypot((lam - 1) / 2, eta) <= (lam + 1) / 2;
            EXPECT_EQ(in_cone, off > 0) << eta;
        }
    }
    EXPECT_FALSE(std::hypot((-0.1 - 1) / 2, 0.0) <= (-0.1 + 1) / 2);
}

TEST(Tube, ZeroDisturbanceFollowsNominal) {
    const auto& v = origin_verification();
    auto inst = v.instance;
    inst.d_vertices.setZero();
    const auto rep = tube_soundness_check(v.result, inst, *pendulum().model, {20, 0.5, 3});
    double nominal = -1e300;
    for (const auto& z : inst.traj.z) nominal = std::max(nominal, pendulum().h_margin(z));
    nominal = std::max(nominal, pendulum().l_margin(inst.traj.z.back()));
    EXPECT_NEAR(rep.max_value, nominal, 1e-12);
    EXPECT_LE(rep.max_value, v.result.V_ra_star + 1e-6);
}

TEST(Tube, VertexHeavyRolloutsStayInsideCertificate) {
    const auto& v = origin_verification();
    const auto rep = tube_soundness_check(v.result, v.instance, *pendulum().model, {1000, 0.9, 11});
    EXPECT_EQ(rep.rollouts, 1000);
    EXPECT_TRUE(rep.sound(v.result.V_ra_star)) << rep.max_state_margin << " " << rep.max_terminal_margin;
    EXPECT_LE(rep.max_input_margin, 1e-6);
}

TEST(Tube, DisturbanceFilterOverbound) {
    // Sample w~ in the unit box, propagate through the tube and compare the
    // exact lumped disturbance of the nonlinear model against sigma.
    const auto& v = origin_verification();
    const auto& r = v.result;
    const auto& inst = v.instance;
    const auto& model = *pendulum().model;
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(inst.d_vertices.cols()) - 1);
    double worst = -1e300;
    for (int n = 0; n < 10000; ++n) {
        Vec w(50);
        for (int i = 0; i < 50; ++i) w(i) = U(rng) > 0 ? 1.0 : U(rng);
        const Vec dx = r.Phi.Phi_x * w;
        const Vec du = r.Phi.Phi_u * w;
        const int k = 1 + n % 24;
        const Vec d = n % 2 ? inst.d_vertices.col(pick(rng)).eval() : (inst.d_vertices.col(pick(rng)) * U(rng)).eval();
        const Vec x = inst.traj.z[k] + dx.segment(2 * (k - 1), 2);
        const Vec u = inst.traj.v[k] + du.segment(k - 1, 1);
        const Vec wk = step_disturbed(model, x, u, d) - inst.traj.z[k + 1] -
                       inst.bundle.Af[k] * dx.segment(2 * (k - 1), 2) - inst.bundle.Bf[k] * du.segment(k - 1, 1);
        for (int i = 0; i < 2; ++i) worst = std::max(worst, std::abs(wk(i)) - r.Sigma(k, i));
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(Csv, RowFormat) {
    VerificationResult r;
    r.status = SolveStatus::Solved;
    r.V_ra_star = -0.25;
    r.solve_time = 0.5;
    EXPECT_EQ(verification_csv_header(2), "x1,x2,V_ra,solve_time,status");
    EXPECT_EQ(verification_csv_row(vec2(0.5, -1), r), "0.5,-1,-0.25,0.5,solved");
    r.status = SolveStatus::Infeasible;
    EXPECT_EQ(verification_csv_row(vec2(0, 0), r), "0,0,nan,0.5,infeasible");
}
