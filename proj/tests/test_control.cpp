#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "stabcert/control.hpp"
#include "test_helpers.hpp"

using namespace stabcert;

namespace {

BisectionState paper_init() {
    BisectionState st;
    st.lambda = 0.0;
    st.lambda_left = 0.0;
    st.lambda_right = 90.0;
    st.delta = 2.0;
    st.zeta = 1.0;
    return st;
}

Network affine_classifier(const Vec& w, double b) {
    Mat W(2, static_cast<int>(w.size()));
    W.row(0).setZero();
    W.row(1) = w.transpose();
    Vec bias(2);
    bias << 0.0, b;
    std::vector<Layer> layers{{W, bias}};
    return Network(std::move(layers), Head::Classifier2Logit,
                   {Vec::Zero(w.size()), Vec::Ones(w.size())});
}

Network affine_regressor(const Vec& w, double c0) {
    Mat W(1, static_cast<int>(w.size()));
    W.row(0) = w.transpose();
    std::vector<Layer> layers{{W, Vec::Constant(1, c0)}};
    return Network(std::move(layers), Head::RegressorScalar,
                   {Vec::Zero(w.size()), Vec::Ones(w.size())});
}

}  // namespace

TEST_CASE("bisection: replaying the scripted outcomes reproduces the lambda trace") {
    struct Step {
        bool converged;
        VerifyStatus status;
    };
    const std::vector<Step> script{{true, VerifyStatus::Unsafe},
                                   {true, VerifyStatus::Unsafe},
                                   {false, VerifyStatus::SafeComplete},
                                   {true, VerifyStatus::Unsafe},
                                   {true, VerifyStatus::Unsafe},
                                   {true, VerifyStatus::SafeComplete},
                                   {true, VerifyStatus::SafeComplete}};
    const std::vector<double> expect{0.0, 45.0, 67.5, 56.25, 61.875, 64.6875, 63.28125};
    BisectionState st = paper_init();
    for (std::size_t k = 0; k < script.size(); ++k) {
        REQUIRE(st.lambda == expect[k]);  // exact dyadic arithmetic
        const BisectionBranch br = bisection_step(st, script[k].converged, script[k].status);
        REQUIRE(br != BisectionBranch::Infeasible);
    }
}

TEST_CASE("bisection: safe at lambda 0 exits immediately with lambda 0") {
    BisectionState st = paper_init();
    bisection_step(st, true, VerifyStatus::SafeIncomplete);
    REQUIRE(st.delta == 0.0);
    REQUIRE(st.lambda == 0.0);
    REQUIRE(st.done());
}

TEST_CASE("bisection: non-convergence with unsafe verification is terminal") {
    BisectionState st = paper_init();
    REQUIRE(bisection_step(st, false, VerifyStatus::Unsafe) == BisectionBranch::Infeasible);
    st = paper_init();
    REQUIRE(bisection_step(st, false, VerifyStatus::Unknown) == BisectionBranch::Infeasible);
    st = paper_init();
    // Non-converged but verified safe lowers lambda (the paper's else-branch).
    REQUIRE(bisection_step(st, false, VerifyStatus::SafeComplete) == BisectionBranch::Lowered);
}

TEST_CASE("bisection: deterministic trace, bracket invariant and bounded length") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        BisectionState st = paper_init();
        std::mt19937_64 seq_rng(trial);
        std::vector<double> trace_a;
        int iters = 0;
        while (!st.done() && iters < 50) {
            ++iters;
            trace_a.push_back(st.lambda);
            REQUIRE(st.lambda_left <= st.lambda + 1e-12);
            REQUIRE(st.lambda <= st.lambda_right + 1e-12);
            const bool safe = seq_rng() % 2 == 0;
            bisection_step(st, true, safe ? VerifyStatus::SafeComplete : VerifyStatus::Unsafe);
        }
        REQUIRE(iters <= 9);  // ceil(log2(90/1)) + 2
        // Replay determinism
        BisectionState st2 = paper_init();
        std::mt19937_64 seq2(trial);
        for (std::size_t k = 0; k < trace_a.size(); ++k) {
            REQUIRE(st2.lambda == trace_a[k]);
            const bool safe = seq2() % 2 == 0;
            bisection_step(st2, true, safe ? VerifyStatus::SafeComplete : VerifyStatus::Unsafe);
        }
    }
}

TEST_CASE("control loop: zero-radius ball collapses to the lambda-0 solution") {
    PowerSystemCase cs = load_case(testutil::data_path("case9.json"));
    InjectionSpec fc = base_injections(cs);
    FaultScenario fault = load_fault(testutil::data_path("fault9.json"));
    Vec wc = Vec::Zero(11);
    wc(2) = 0.05;
    wc(4) = -0.06;
    Network net_c = affine_classifier(wc, 8.0);  // confidently stable everywhere nearby
    Vec we = Vec::Zero(11);
    we(2) = 0.10;
    we(4) = -0.15;
    Network net_e = affine_regressor(we, 45.0);

    ControlConfig cfg;
    cfg.pct_ibr = cfg.pct_sg = cfg.pct_load = 0.0;  // stubbed-out uncertainty
    cfg.revalidate_tds = false;
    ControlStrategy out = run_preventive_control(cs, fc, fault, net_c, net_e, cfg);
    REQUIRE(out.certified);
    REQUIRE(out.lambda == 0.0);
    REQUIRE(out.log.size() == 1);
    REQUIRE(out.log[0].converged);

    OpfOptions opt;
    opt.lambda = 0.0;
    OpfSolution sol = pdipm_solve(cs, fc, &net_e, opt);
    REQUIRE(out.cost == Catch::Approx(sol.cost).margin(1e-9));
    REQUIRE((out.features - sol.strategy_features(fc)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("control log: Table-II-schema CSV") {
    std::vector<ControlIteration> log;
    ControlIteration a;
    a.ite = 1;
    a.lambda = 0.0;
    a.converged = true;
    a.status = VerifyStatus::Unsafe;
    a.cost = 19035.6;
    a.tsi = 61.26032;
    log.push_back(a);
    const std::string path = std::filesystem::temp_directory_path() / "stabcert_log.csv";
    save_control_log_csv(log, path);
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    REQUIRE(header == "ite,lambda,converge,verification,cost,tsi");
    REQUIRE(row.substr(0, 2) == "1,");
    REQUIRE(row.find("True") != std::string::npos);
    REQUIRE(row.find("unsafe") != std::string::npos);
    std::filesystem::remove(path);
}
