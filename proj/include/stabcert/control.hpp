#pragma once

#include "stabcert/bab.hpp"
#include "stabcert/opf.hpp"

namespace stabcert {

struct BisectionState {
    double lambda = 0.0;
    double lambda_left = 0.0;
    double lambda_right = 90.0;
    double delta = 2.0;
    double zeta = 1.0;

    bool done() const { return std::abs(delta) < zeta; }
};

enum class BisectionBranch { Raised, Lowered, Infeasible };

/// One update of the margin bisection. Three branches:
/// converged and not safe -> raise lambda toward lambda_right;
/// not converged and not safe -> infeasible, terminal;
/// otherwise (safe) -> lower lambda toward lambda_left.
inline BisectionBranch bisection_step(BisectionState& st, bool converged, VerifyStatus status) {
    const bool safe = is_safe(status);
    if (converged && !safe) {
        st.delta = st.lambda_right - st.lambda;
        st.lambda_left = st.lambda;
        st.lambda = st.lambda_left + st.delta / 2.0;
        return BisectionBranch::Raised;
    }
    if (!converged && !safe) return BisectionBranch::Infeasible;
    st.delta = st.lambda - st.lambda_left;
    st.lambda_right = st.lambda;
    st.lambda = st.lambda_left + st.delta / 2.0;
    return BisectionBranch::Lowered;
}

/// Ball around a control strategy: percent radii per device class, load
/// dimensions centered on the forecasts, active-power floors at zero.
inline PerturbationBall strategy_ball(const FeatureLayout& lay, const Vec& x, double pct_ibr,
                                      double pct_sg, double pct_load) {
    Vec pct(lay.dim()), floor_v(lay.dim());
    const double ninf = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < lay.n_ibr; ++i) {
        pct(lay.ibr_offset() + i) = pct_ibr;
        floor_v(lay.ibr_offset() + i) = 0.0;
    }
    for (int g = 0; g < lay.n_sg; ++g) {
        pct(lay.sg_offset() + g) = pct_sg;
        floor_v(lay.sg_offset() + g) = 0.0;
    }
    for (int l = 0; l < lay.n_load; ++l) {
        pct(lay.pd_offset() + l) = pct_load;
        floor_v(lay.pd_offset() + l) = 0.0;
        pct(lay.qd_offset() + l) = pct_load;
        floor_v(lay.qd_offset() + l) = ninf;
    }
    return ball_from_percent(x, pct, floor_v);
}

struct ControlConfig {
    double pct_ibr = 20.0;
    double pct_sg = 8.0;
    double pct_load = 10.0;
    double zeta = 1.0;
    double lambda0 = 0.0;
    double delta0 = 2.0;
    double lambda_right = 90.0;
    OpfOptions opf{};
    VerifyConfig verify{};
    int max_iterations = 64;
    bool revalidate_tds = true;
};

struct ControlIteration {
    int ite = 0;
    double lambda = 0.0;
    bool converged = false;
    VerifyStatus status = VerifyStatus::Unknown;
    double cost = 0.0;
    double tsi = 0.0;
};

struct ControlStrategy {
    bool certified = false;
    Vec features;  // x_tilde = [P_IBR, P_SG, Pd, Qd], MW/MVAr
    double lambda = 0.0;
    VerifyStatus status = VerifyStatus::Unknown;
    double cost = 0.0;
    double tds_tsi = std::numeric_limits<double>::quiet_NaN();
    std::string message;
    std::vector<ControlIteration> log;
};

/// The full preventive-control loop: TSC-OPF at the current lambda, verify
/// the strategy's ball, bisect, repeat while |delta| >= zeta. The final
/// certified strategy is re-validated with one TDS run.
inline ControlStrategy run_preventive_control(const PowerSystemCase& cs,
                                              const InjectionSpec& forecast,
                                              const FaultScenario& fault, const Network& net_c,
                                              const Network& net_e, const ControlConfig& cfg) {
    const FeatureLayout lay(cs);
    require(net_c.input_dim() == lay.dim() && net_e.input_dim() == lay.dim(),
            "preventive control: network feature layout does not match case");

    BisectionState st;
    st.lambda = cfg.lambda0;
    st.lambda_left = cfg.lambda0;
    st.lambda_right = cfg.lambda_right;
    st.delta = cfg.delta0;
    st.zeta = cfg.zeta;

    ControlStrategy out;
    std::optional<ControlIteration> best_safe;
    Vec best_features;

    int ite = 0;
    while (!st.done() && ite < cfg.max_iterations) {
        ++ite;
        OpfOptions opt = cfg.opf;
        opt.lambda = st.lambda;
        opt.use_nn = true;
        OpfSolution sol = pdipm_solve(cs, forecast, &net_e, opt);
        const Vec x = sol.strategy_features(forecast);
        const PerturbationBall ball = strategy_ball(lay, x, cfg.pct_ibr, cfg.pct_sg, cfg.pct_load);
        const VerifyOutcome v = verify_pipeline(net_c, ball, cfg.verify);

        ControlIteration row;
        row.ite = ite;
        row.lambda = st.lambda;
        row.converged = sol.converged;
        row.status = v.status;
        row.cost = sol.cost;
        row.tsi = sol.tsi_estimate;
        out.log.push_back(row);

        if (is_safe(v.status)) {
            best_safe = row;
            best_features = x;
        }
        const BisectionBranch br = bisection_step(st, sol.converged, v.status);
        if (br == BisectionBranch::Infeasible) {
            out.certified = false;
            out.message =
                "No feasible solution: reduce the perturbation range or apply other control "
                "measures such as load shedding.";
            return out;
        }
    }

    if (!best_safe) {
        out.certified = false;
        out.message = "bisection exhausted the margin range without a certified strategy";
        return out;
    }

    out.certified = true;
    out.features = best_features;
    out.lambda = best_safe->lambda;
    out.status = best_safe->status;
    out.cost = best_safe->cost;
    if (cfg.revalidate_tds) {
        InjectionSpec strat = lay.unpack(best_features);
        OperatingPoint op = solve_operating_point(cs, strat);
        Trajectory traj = run_tds(cs, op, fault);
        out.tds_tsi = compute_tsi(traj);
        if (out.tds_tsi <= 0.0)
            out.message = "warning: TDS re-validation of the certified strategy is unstable";
    }
    return out;
}

inline void save_control_log_csv(const std::vector<ControlIteration>& log,
                                 const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_control_log_csv: cannot open " + path);
    out << "ite,lambda,converge,verification,cost,tsi\n";
    char buf[64];
    for (const auto& r : log) {
        out << r.ite << ",";
        std::snprintf(buf, sizeof buf, "%.8f", r.lambda);
        out << buf << "," << (r.converged ? "True" : "False") << "," << to_string(r.status) << ",";
        std::snprintf(buf, sizeof buf, "%.6f", r.cost);
        out << buf << ",";
        std::snprintf(buf, sizeof buf, "%.6f", r.tsi);
        out << buf << "\n";
    }
}

}  // namespace stabcert
