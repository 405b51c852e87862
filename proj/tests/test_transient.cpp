#include <catch2/catch_amalgamated.hpp>

#include "stabcert/transient.hpp"
#include "test_helpers.hpp"

using namespace stabcert;

namespace {

/// Single machine against an effectively infinite bus (huge inertia).
PowerSystemCase smib_case(double p_gen_mw, double damping = 0.0) {
    PowerSystemCase cs;
    cs.base_mva = 100.0;
    cs.buses = {{1, BusType::Slack, 1.0, 0.5, 1.5}, {2, BusType::PV, 1.0, 0.5, 1.5}};
    cs.lines = {{0, 1, 2, 0.0, 0.4, 0.0, 500.0}};
    cs.sgs = {{1, 1e6, 0.0, 1e-4, -50000.0, 50000.0, -50000.0, 50000.0, 0.0, 1.0, 0.0},
              {2, 0.05, damping, 0.3, 0.0, 500.0, -500.0, 500.0, 0.0, 1.0, 0.0}};
    cs.loads = {};
    cs.validate();
    (void)p_gen_mw;
    return cs;
}

InjectionSpec smib_injections(const PowerSystemCase& cs, double p_gen_mw) {
    InjectionSpec inj = base_injections(cs);
    inj.sg_p_mw = Vec::Zero(2);
    inj.sg_p_mw(1) = p_gen_mw;
    return inj;
}

struct SmibAnalysis {
    double pm, pmax, delta0, delta_s, t_cr;
};

/// Equal-area critical clearing prediction for a fault that zeroes the
/// electrical power, derived from the power-flow solution independently.
SmibAnalysis equal_area(const PowerSystemCase& cs, const OperatingPoint& op) {
    using cd = std::complex<double>;
    SmibAnalysis an{};
    cd e[2];
    for (int g = 0; g < 2; ++g) {
        const int bi = cs.bus_index(cs.sgs[static_cast<std::size_t>(g)].bus);
        const cd v = std::polar(op.vm(bi), op.theta(bi));
        const cd s(op.sg_p(g), op.sg_q(g));
        const cd i = std::conj(s / v);
        e[g] = v + cd(0.0, cs.sgs[static_cast<std::size_t>(g)].xd_t) * i;
    }
    const double x_total = cs.sgs[0].xd_t + cs.lines[0].x + cs.sgs[1].xd_t;
    an.pm = op.sg_p(1);
    an.pmax = std::abs(e[0]) * std::abs(e[1]) / x_total;
    an.delta0 = std::arg(e[1]) - std::arg(e[0]);
    an.delta_s = std::asin(an.pm / an.pmax);
    const double delta_m = kPi - an.delta_s;
    const double cos_cr = (an.pm / an.pmax) * (delta_m - an.delta0) + std::cos(delta_m);
    const double delta_cr = std::acos(std::clamp(cos_cr, -1.0, 1.0));
    const double m = cs.sgs[1].inertia_m;
    an.t_cr = std::sqrt(2.0 * m * (delta_cr - an.delta0) / an.pm);
    return an;
}

}  // namespace

TEST_CASE("tsi: closed-form values") {
    Trajectory t;
    t.h = 0.01;
    t.time = {0.0};
    t.omega = Mat::Zero(1, 2);
    t.delta_deg = Mat::Zero(1, 2);
    t.delta_deg << 0.0, 0.0;
    REQUIRE(compute_tsi(t) == Catch::Approx(100.0));
    t.delta_deg << 0.0, 360.0;
    REQUIRE(compute_tsi(t) == Catch::Approx(0.0).margin(1e-12));
    t.delta_deg << 0.0, 180.0;
    REQUIRE(compute_tsi(t) == Catch::Approx(100.0 * 180.0 / 540.0));
}

TEST_CASE("tsi: strictly decreasing in the angle gap and bounded") {
    double prev = 101.0;
    for (double gap = 0.0; gap <= 900.0; gap += 30.0) {
        Trajectory t;
        t.time = {0.0};
        t.omega = Mat::Zero(1, 2);
        t.delta_deg = Mat::Zero(1, 2);
        t.delta_deg << 0.0, gap;
        const double tsi = compute_tsi(t);
        REQUIRE(tsi < prev);
        REQUIRE(tsi > -100.0);
        REQUIRE(tsi <= 100.0);
        prev = tsi;
    }
}

TEST_CASE("tsi: single machine rejected") {
    Trajectory t;
    t.time = {0.0};
    t.delta_deg = Mat::Zero(1, 1);
    t.omega = Mat::Zero(1, 1);
    REQUIRE_THROWS_AS(compute_tsi(t), DomainError);
}

TEST_CASE("tds: unfaulted 9-bus equilibrium persists") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec inj = base_injections(cs);
    inj.sg_p_mw(1) = 163.0;
    inj.sg_p_mw(2) = 85.0;
    OperatingPoint op = solve_operating_point(cs, inj);
    FaultScenario scn;
    scn.fault_bus = -1;  // no fault
    scn.t_fault = 4.0;
    scn.t_clear = 4.5;
    scn.t_end = 5.0;
    scn.h = 0.005;
    scn.fault_bus = -1;
    Trajectory traj = run_tds(cs, op, scn);
    REQUIRE_FALSE(traj.diverged);
    double drift = 0.0;
    for (int t = 0; t < traj.n_steps(); ++t)
        for (int g = 0; g < traj.n_gens(); ++g)
            drift = std::max(drift, std::abs(traj.delta_deg(t, g) - traj.delta_deg(0, g)));
    REQUIRE(deg2rad(drift) < 1e-3);
}

TEST_CASE("tds: SMIB critical clearing time brackets the equal-area prediction") {
    PowerSystemCase cs = smib_case(60.0);
    InjectionSpec inj = smib_injections(cs, 60.0);
    OperatingPoint op = solve_operating_point(cs, inj);
    SmibAnalysis an = equal_area(cs, op);
    REQUIRE(an.t_cr > 0.05);

    const double h = 0.005;
    auto stable_with_clearing = [&](int steps_on) {
        FaultScenario scn;
        scn.line_id = -1;  // fault cleared without switching the line out
        scn.fault_bus = 2;
        scn.t_fault = 0.1;
        scn.t_clear = 0.1 + steps_on * h;
        scn.t_end = 5.0;
        scn.h = h;
        Trajectory traj = run_tds(cs, op, scn);
        return !traj.diverged && compute_tsi(traj) > 0.0;
    };

    int k = 1;
    while (stable_with_clearing(k + 1) && k < 400) ++k;
    REQUIRE(k < 400);
    REQUIRE(stable_with_clearing(k));
    REQUIRE_FALSE(stable_with_clearing(k + 1));
    const double t_emp = k * h;
    REQUIRE(std::abs(t_emp - an.t_cr) <= h + 1e-12);
}

TEST_CASE("tds: halving the step changes the peak angle by < 1e-4 rad") {
    PowerSystemCase cs = smib_case(60.0);
    InjectionSpec inj = smib_injections(cs, 60.0);
    OperatingPoint op = solve_operating_point(cs, inj);
    auto peak = [&](double h) {
        FaultScenario scn;
        scn.line_id = -1;
        scn.fault_bus = 2;
        scn.t_fault = 0.1;
        scn.t_clear = 0.2;
        scn.t_end = 5.0;
        scn.h = h;
        Trajectory traj = run_tds(cs, op, scn);
        REQUIRE_FALSE(traj.diverged);
        return deg2rad(max_angle_gap_deg(traj));
    };
    REQUIRE(std::abs(peak(0.005) - peak(0.0025)) < 1e-4);
}

TEST_CASE("tds: post-fault energy of the undamped SMIB is conserved") {
    PowerSystemCase cs = smib_case(60.0);
    InjectionSpec inj = smib_injections(cs, 60.0);
    OperatingPoint op = solve_operating_point(cs, inj);
    FaultScenario scn;
    scn.line_id = -1;
    scn.fault_bus = 2;
    scn.t_fault = 0.1;
    scn.t_clear = 0.15;  // well below critical
    scn.t_end = 5.0;
    scn.h = 0.005;
    Trajectory traj = run_tds(cs, op, scn);
    REQUIRE_FALSE(traj.diverged);

    SmibAnalysis an = equal_area(cs, op);
    const double m1 = cs.sgs[0].inertia_m, m2 = cs.sgs[1].inertia_m;
    const double pm1 = op.sg_p(0), pm2 = op.sg_p(1);
    auto energy = [&](int step) {
        const double d1 = deg2rad(traj.delta_deg(step, 0));
        const double d2 = deg2rad(traj.delta_deg(step, 1));
        const double w1 = traj.omega(step, 0), w2 = traj.omega(step, 1);
        return 0.5 * m1 * w1 * w1 + 0.5 * m2 * w2 * w2 - pm1 * d1 - pm2 * d2 -
               an.pmax * std::cos(d2 - d1);
    };
    const int first = static_cast<int>(std::llround(scn.t_clear / scn.h)) + 1;
    const double e0 = energy(first);
    double drift = 0.0;
    for (int t = first; t < traj.n_steps(); ++t) drift = std::max(drift, std::abs(energy(t) - e0));
    REQUIRE(drift < 1e-6);
}

TEST_CASE("tds: symmetric lossless 2-machine system keeps a zero gap") {
    PowerSystemCase cs;
    cs.base_mva = 100.0;
    cs.buses = {{1, BusType::Slack, 1.0, 0.5, 1.5},
                {2, BusType::PV, 1.0, 0.5, 1.5},
                {3, BusType::PQ, 1.0, 0.5, 1.5}};
    cs.lines = {{0, 1, 3, 0.0, 0.2, 0.0, 500.0}, {1, 2, 3, 0.0, 0.2, 0.0, 500.0}};
    SyncGen g;
    g.inertia_m = 0.04;
    g.damping_d = 0.0;
    g.xd_t = 0.25;
    g.p_min = -500.0;
    g.p_max = 500.0;
    g.q_min = -500.0;
    g.q_max = 500.0;
    g.bus = 1;
    cs.sgs.push_back(g);
    g.bus = 2;
    cs.sgs.push_back(g);
    cs.loads = {{3, 80.0, 20.0}};
    cs.validate();

    InjectionSpec inj = base_injections(cs);
    inj.sg_p_mw = Vec::Zero(2);
    inj.sg_p_mw(1) = 40.0;  // symmetric share; slack picks up the same by symmetry
    OperatingPoint op = solve_operating_point(cs, inj, 1e-13);
    REQUIRE(std::abs(op.sg_p(0) - op.sg_p(1)) < 1e-9);

    FaultScenario scn;
    scn.line_id = -1;
    scn.fault_bus = 3;
    scn.t_fault = 0.1;
    scn.t_clear = 0.15;
    scn.t_end = 3.0;
    scn.h = 0.005;
    Trajectory traj = run_tds(cs, op, scn);
    REQUIRE(max_angle_gap_deg(traj) - (traj.delta_deg(0, 0) - traj.delta_deg(0, 1)) ==
            Catch::Approx(0.0).margin(1e-7));
}

TEST_CASE("tds: islanding the reduction is a topology error") {
    PowerSystemCase cs;
    cs.base_mva = 100.0;
    cs.buses = {{1, BusType::Slack, 1.0, 0.5, 1.5},
                {2, BusType::PV, 1.0, 0.5, 1.5},
                {3, BusType::PQ, 1.0, 0.5, 1.5}};
    cs.lines = {{0, 1, 2, 0.0, 0.2, 0.0, 500.0}, {1, 2, 3, 0.0, 0.2, 0.0, 500.0}};
    cs.sgs = {{1, 0.1, 0.0, 0.1, -500.0, 500.0, -500.0, 500.0, 0.0, 1.0, 0.0},
              {2, 0.05, 0.0, 0.2, -500.0, 500.0, -500.0, 500.0, 0.0, 1.0, 0.0}};
    cs.loads = {};
    cs.validate();
    InjectionSpec inj = base_injections(cs);
    inj.sg_p_mw = Vec::Zero(2);
    inj.sg_p_mw(1) = 30.0;
    OperatingPoint op = solve_operating_point(cs, inj);
    FaultScenario scn;
    scn.line_id = 1;  // removing line 2-3 leaves bus 3 with an empty row
    scn.fault_bus = 2;
    scn.t_fault = 0.1;
    scn.t_clear = 0.15;
    scn.t_end = 1.0;
    scn.h = 0.005;
    REQUIRE_THROWS_AS(run_tds(cs, op, scn), DomainError);
}

TEST_CASE("fault scenario validation") {
    FaultScenario scn;
    scn.t_fault = 0.3;
    scn.t_clear = 0.2;
    REQUIRE_THROWS_AS(scn.validate(), DomainError);
    scn.t_clear = 0.4;
    scn.h = -1.0;
    REQUIRE_THROWS_AS(scn.validate(), DomainError);
}
