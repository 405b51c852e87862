#include <catch2/catch_amalgamated.hpp>

#include "stabcert/opf.hpp"
#include "test_helpers.hpp"

using namespace stabcert;

namespace {

/// Affine surrogate TSI = c0 + w.features, exact and analyzable.
Network affine_regressor(const Vec& w, double c0) {
    Mat W(1, static_cast<int>(w.size()));
    W.row(0) = w.transpose();
    std::vector<Layer> layers{{W, Vec::Constant(1, c0)}};
    return Network(std::move(layers), Head::RegressorScalar,
                   {Vec::Zero(w.size()), Vec::Ones(w.size())});
}

/// TSI rises with G1 output and falls with G3 output (case9 layout:
/// [ibr5, ibr6, sg1, sg2, sg3, pd..., qd...]).
Network case9_surrogate() {
    Vec w = Vec::Zero(11);
    w(2) = 0.10;   // sg_1
    w(3) = 0.02;   // sg_2
    w(4) = -0.15;  // sg_3
    return affine_regressor(w, 45.0);
}

double brute_force_two_bus_cost(const PowerSystemCase& cs, double* argmin = nullptr) {
    // Oracle: sweep P_SG2, solve the power flow with both voltages pinned,
    // price the slack make-up, then parabola-refine around the best knot.
    auto cost_at = [&](double p2_mw) {
        PfSpec spec;
        spec.p_spec = Vec::Zero(2);
        spec.q_spec = Vec::Zero(2);
        spec.v_set = Vec::Ones(2);
        spec.p_spec(1) = (p2_mw - cs.loads[0].pd) / cs.base_mva;
        spec.q_spec(1) = -cs.loads[0].qd / cs.base_mva;
        PfSolution sol = solve_power_flow(cs, spec);
        const double p1_mw = sol.p_inj(0) * cs.base_mva;
        const auto& g1 = cs.sgs[0];
        const auto& g2 = cs.sgs[1];
        return g1.cost_a * p1_mw * p1_mw + g1.cost_b * p1_mw + g1.cost_c +
               g2.cost_a * p2_mw * p2_mw + g2.cost_b * p2_mw + g2.cost_c;
    };
    double best_p = 0.0, best_c = std::numeric_limits<double>::infinity();
    for (double p = cs.sgs[1].p_min; p <= cs.sgs[1].p_max + 1e-9; p += 0.25) {
        const double c = cost_at(p);
        if (c < best_c) {
            best_c = c;
            best_p = p;
        }
    }
    // Parabolic refinement (cost is smooth in p2).
    double lo = std::max(cs.sgs[1].p_min, best_p - 0.25);
    double hi = std::min(cs.sgs[1].p_max, best_p + 0.25);
    for (int it = 0; it < 60; ++it) {
        const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (cost_at(m1) < cost_at(m2))
            hi = m2;
        else
            lo = m1;
    }
    best_p = 0.5 * (lo + hi);
    if (argmin) *argmin = best_p;
    return cost_at(best_p);
}

}  // namespace

TEST_CASE("objective: hand arithmetic and curtailment") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    // One SG with a=0.01, b=10, c=100 at P=50 MW costs 625.
    cs.sgs[0].cost_a = 0.01;
    cs.sgs[0].cost_b = 10.0;
    cs.sgs[0].cost_c = 100.0;
    cs.sgs[1].cost_a = cs.sgs[1].cost_b = cs.sgs[1].cost_c = 0.0;
    cs.sgs[2].cost_a = cs.sgs[2].cost_b = cs.sgs[2].cost_c = 0.0;
    InjectionSpec fc = base_injections(cs);
    OpfOptions opt;
    opt.use_nn = false;
    OpfModel model(cs, fc, nullptr, opt);
    Vec x = model.initial_point();
    x(model.psg_var(0)) = 0.5;  // 50 MW
    x(model.psg_var(1)) = 0.0;
    x(model.psg_var(2)) = 0.0;
    for (int r = 0; r < 2; ++r) x(model.pibr_var(r)) = fc.ibr_p_mw(r) / cs.base_mva;
    REQUIRE(model.objective(x) == Catch::Approx(625.0));  // no curtailment at forecast
    x(model.pibr_var(0)) = (fc.ibr_p_mw(0) - 10.0) / cs.base_mva;
    REQUIRE(model.objective(x) == Catch::Approx(625.0 + 10.0 * cs.ibrs[0].curtail_cost));
}

TEST_CASE("objective: gradient matches finite differences") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    OpfOptions opt;
    opt.use_nn = false;
    OpfModel model(cs, fc, nullptr, opt);
    std::mt19937_64 rng(7);
    Vec x = model.initial_point();
    for (int i = 0; i < x.size(); ++i) x(i) += 0.01 * testutil::random_vec(1, rng)(0);
    Vec grad;
    model.objective(x, &grad);
    const double h = 1e-6;
    for (int i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        const double fd = (model.objective(xp) - model.objective(xm)) / (2.0 * h);
        REQUIRE(grad(i) == Catch::Approx(fd).margin(1e-6 * (1.0 + std::abs(fd))));
    }
}

TEST_CASE("nn constraint: zero network and affine surrogate") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    Network zero = affine_regressor(Vec::Zero(11), 0.0);
    OpfOptions opt;
    OpfModel model(cs, fc, &zero, opt);
    Vec x = model.initial_point();
    Vec grad;
    REQUIRE(model.nn_constraint(x, 0.0, &grad) == Catch::Approx(0.0).margin(0.0));
    REQUIRE(grad.cwiseAbs().maxCoeff() == 0.0);

    Vec w = Vec::Zero(11);
    w(2) = 0.3;
    w(4) = -0.2;
    w(6) = 0.05;  // load column: not a decision variable
    Network aff = affine_regressor(w, 10.0);
    OpfModel m2(cs, fc, &aff, opt);
    const double v = m2.nn_constraint(x, 5.0, &grad);
    REQUIRE(v == Catch::Approx(5.0 - aff.forward(m2.features(x))(0)));
    REQUIRE(grad(m2.psg_var(0)) == Catch::Approx(-0.3 * cs.base_mva));
    REQUIRE(grad(m2.psg_var(2)) == Catch::Approx(0.2 * cs.base_mva));
    REQUIRE(grad(m2.vm_var(3)) == 0.0);  // loads and voltages do not enter
}

TEST_CASE("nn constraint: gradient matches finite differences through a trained net") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    // Train a small regressor on a synthetic smooth target over features.
    TrainingSet ts;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    const FeatureLayout lay(cs);
    const Vec base_feat = lay.pack(fc);
    for (int k = 0; k < 400; ++k) {
        Vec f = base_feat;
        for (int i = 0; i < f.size(); ++i) f(i) *= u(rng);
        ts.inputs.push_back(f);
        ts.targets.push_back(0.2 * f(2) - 0.3 * f(4) + 0.1 * f(0) + 20.0);
    }
    TrainingConfig tc;
    tc.hidden_sizes = {12};
    tc.epochs = 150;
    tc.learning_rate = 0.03;
    tc.loss = Loss::MeanSquaredError;
    tc.seed = 2;
    Network net = train(ts, tc).net;

    OpfOptions opt;
    OpfModel model(cs, fc, &net, opt);
    Vec x = model.initial_point();
    Vec grad;
    model.nn_constraint(x, 0.0, &grad);
    const double h = 1e-5;
    for (int i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        const double fd =
            (model.nn_constraint(xp, 0.0) - model.nn_constraint(xm, 0.0)) / (2.0 * h);
        const double denom = std::max(1.0, std::abs(fd));
        REQUIRE(std::abs(grad(i) - fd) / denom < 1e-5);
    }
}

TEST_CASE("pdipm: 2-bus optimum matches the grid-search oracle") {
    PowerSystemCase cs = load_case(testutil::data_path("case2.json"));
    InjectionSpec fc = base_injections(cs);
    OpfOptions opt;
    opt.use_nn = false;
    OpfSolution sol = pdipm_solve(cs, fc, nullptr, opt);
    REQUIRE(sol.converged);
    double p2_oracle = 0.0;
    const double oracle_cost = brute_force_two_bus_cost(cs, &p2_oracle);
    REQUIRE(std::abs(sol.cost - oracle_cost) <= 1e-4 * (1.0 + std::abs(oracle_cost)));
    REQUIRE(sol.sg_p_mw(1) == Catch::Approx(p2_oracle).margin(0.05));
}

TEST_CASE("pdipm: solution satisfies balance, boxes and the IBR circle") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    OpfOptions opt;
    opt.use_nn = false;
    OpfSolution sol = pdipm_solve(cs, fc, nullptr, opt);
    REQUIRE(sol.converged);
    // Re-solve the power flow at the dispatched injections.
    InjectionSpec strat = fc;
    strat.ibr_p_mw = sol.ibr_p_mw;
    strat.sg_p_mw = sol.sg_p_mw;
    OperatingPoint op = solve_operating_point(cs, strat);
    // The OPF optimizes the voltage profile while the re-solve holds the
    // case setpoints, so losses (and the slack make-up) differ slightly.
    const int slack = cs.slack_sg_index();
    REQUIRE(op.sg_p(slack) * cs.base_mva ==
            Catch::Approx(sol.sg_p_mw(slack)).margin(2.0));
    for (std::size_t g = 0; g < cs.sgs.size(); ++g) {
        REQUIRE(sol.sg_p_mw(static_cast<int>(g)) >= cs.sgs[g].p_min - 1e-6);
        REQUIRE(sol.sg_p_mw(static_cast<int>(g)) <= cs.sgs[g].p_max + 1e-6);
    }
    for (std::size_t r = 0; r < cs.ibrs.size(); ++r) {
        const double p = sol.ibr_p_mw(static_cast<int>(r));
        const double q = sol.ibr_q_mvar(static_cast<int>(r));
        REQUIRE(p >= -1e-8);
        REQUIRE(p <= cs.ibrs[r].p_forecast + 1e-6);
        REQUIRE(p * p + q * q <= cs.ibrs[r].s_rated_mva * cs.ibrs[r].s_rated_mva + 1e-8);
    }
    for (int i = 0; i < cs.n_buses(); ++i) {
        REQUIRE(sol.vm(i) >= cs.buses[static_cast<std::size_t>(i)].v_min - 1e-8);
        REQUIRE(sol.vm(i) <= cs.buses[static_cast<std::size_t>(i)].v_max + 1e-8);
    }
    // No curtailment at the plain optimum: curtailing is the dearest energy.
    REQUIRE((sol.ibr_p_mw - fc.ibr_p_mw).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("pdipm: infeasible margin fails to converge with diagnostics") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    Network net = case9_surrogate();
    OpfOptions opt;
    opt.lambda = 500.0;  // far above anything achievable
    opt.max_iter = 60;
    OpfSolution sol = pdipm_solve(cs, fc, &net, opt);
    REQUIRE_FALSE(sol.converged);
    REQUIRE(sol.feascond > 1e-6);
}

TEST_CASE("pdipm: binding stability constraint sits on the boundary") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    Network net = case9_surrogate();
    OpfOptions opt;
    opt.use_nn = false;
    OpfSolution plain = pdipm_solve(cs, fc, nullptr, opt);
    REQUIRE(plain.converged);
    OpfModel model(cs, fc, &net, opt);
    // Pick a margin above the unconstrained optimum's estimate.
    Vec w = Vec::Zero(11);
    const double tsi_plain = net.forward(plain.strategy_features(fc))(0);
    OpfOptions con;
    con.lambda = tsi_plain + 5.0;
    OpfSolution sol = pdipm_solve(cs, fc, &net, con);
    REQUIRE(sol.converged);
    REQUIRE(sol.tsi_estimate - con.lambda < 1e-4);
    REQUIRE(sol.tsi_estimate >= con.lambda - 1e-4);
    REQUIRE(sol.cost >= plain.cost - 1e-6);
}

TEST_CASE("pdipm: cost is non-decreasing in lambda") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    Network net = case9_surrogate();
    OpfOptions base_opt;
    base_opt.use_nn = false;
    const double tsi0 = net.forward(pdipm_solve(cs, fc, nullptr, base_opt)
                                        .strategy_features(fc))(0);
    double prev_cost = -std::numeric_limits<double>::infinity();
    int converged_count = 0;
    for (int k = 0; k < 10; ++k) {
        OpfOptions opt;
        opt.lambda = tsi0 - 4.0 + 2.0 * k;  // sweep across the binding threshold
        OpfSolution sol = pdipm_solve(cs, fc, &net, opt);
        if (!sol.converged) continue;
        ++converged_count;
        REQUIRE(sol.cost >= prev_cost - 1e-6);
        prev_cost = sol.cost;
    }
    REQUIRE(converged_count >= 8);
}

TEST_CASE("pdipm: the -inf sentinel equals the plain OPF exactly") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    Network net = case9_surrogate();
    OpfOptions off;
    off.use_nn = false;
    OpfOptions sentinel;
    sentinel.lambda = -1e9;
    OpfSolution a = pdipm_solve(cs, fc, nullptr, off);
    OpfSolution b = pdipm_solve(cs, fc, &net, sentinel);
    REQUIRE(a.cost == b.cost);
    REQUIRE(a.sg_p_mw == b.sg_p_mw);
    REQUIRE(a.vm == b.vm);
}
