#pragma once

#include "stabcert/power_case.hpp"

namespace stabcert {

/// Bus-level power flow specification, all per-unit on the case base.
/// p_spec/q_spec are net injections (generation minus load).
struct PfSpec {
    Vec p_spec;  // used at every non-slack bus
    Vec q_spec;  // used at PQ buses
    Vec v_set;   // used at slack and PV buses
};

struct PfSolution {
    Vec theta;   // rad, per bus
    Vec vm;      // p.u., per bus
    Vec p_inj;   // realized net injection, p.u.
    Vec q_inj;
    int iterations = 0;
    double max_mismatch = 0.0;
};

namespace detail {

inline void bus_injections(const Eigen::MatrixXcd& Y, const Vec& theta, const Vec& vm, Vec& p,
                           Vec& q) {
    const int n = static_cast<int>(theta.size());
    p = Vec::Zero(n);
    q = Vec::Zero(n);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < n; ++k) {
            const double g = Y(i, k).real(), b = Y(i, k).imag();
            if (g == 0.0 && b == 0.0) continue;
            const double dth = theta(i) - theta(k);
            const double c = std::cos(dth), s = std::sin(dth);
            p(i) += vm(i) * vm(k) * (g * c + b * s);
            q(i) += vm(i) * vm(k) * (g * s - b * c);
        }
    }
}

}  // namespace detail

/// Newton-Raphson AC power flow. Converges to max mismatch < tol p.u. or
/// throws ConvergenceError carrying the final mismatch.
inline PfSolution solve_power_flow(const PowerSystemCase& cs, const PfSpec& spec,
                                   double tol = 1e-8, int max_iter = 50) {
    const int n = cs.n_buses();
    require(spec.p_spec.size() == n && spec.q_spec.size() == n && spec.v_set.size() == n,
            "power flow: spec dimension mismatch");
    const Eigen::MatrixXcd Y = cs.ybus();

    std::vector<int> p_rows, q_rows;  // buses with P equations / Q equations
    for (int i = 0; i < n; ++i) {
        const BusType t = cs.buses[static_cast<std::size_t>(i)].type;
        if (t != BusType::Slack) p_rows.push_back(i);
        if (t == BusType::PQ) q_rows.push_back(i);
    }
    const int np = static_cast<int>(p_rows.size()), nq = static_cast<int>(q_rows.size());

    Vec theta = Vec::Zero(n);
    Vec vm(n);
    for (int i = 0; i < n; ++i) {
        const auto& b = cs.buses[static_cast<std::size_t>(i)];
        vm(i) = (b.type == BusType::PQ) ? 1.0 : spec.v_set(i);
    }

    Vec p, q;
    double max_mis = 0.0;
    for (int iter = 0; iter <= max_iter; ++iter) {
        detail::bus_injections(Y, theta, vm, p, q);
        Vec mis(np + nq);
        for (int r = 0; r < np; ++r) mis(r) = p(p_rows[static_cast<std::size_t>(r)]) - spec.p_spec(p_rows[static_cast<std::size_t>(r)]);
        for (int r = 0; r < nq; ++r) mis(np + r) = q(q_rows[static_cast<std::size_t>(r)]) - spec.q_spec(q_rows[static_cast<std::size_t>(r)]);
        max_mis = (np + nq) ? mis.cwiseAbs().maxCoeff() : 0.0;
        if (max_mis < tol) {
            PfSolution sol;
            sol.theta = theta;
            sol.vm = vm;
            sol.p_inj = p;
            sol.q_inj = q;
            sol.iterations = iter;
            sol.max_mismatch = max_mis;
            return sol;
        }
        if (iter == max_iter) break;

        Mat J = Mat::Zero(np + nq, np + nq);
        for (int r = 0; r < np; ++r) {
            const int i = p_rows[static_cast<std::size_t>(r)];
            for (int c = 0; c < np; ++c) {
                const int k = p_rows[static_cast<std::size_t>(c)];
                const double g = Y(i, k).real(), b = Y(i, k).imag();
                if (i == k)
                    J(r, c) = -q(i) - b * vm(i) * vm(i);
                else {
                    const double dth = theta(i) - theta(k);
                    J(r, c) = vm(i) * vm(k) * (g * std::sin(dth) - b * std::cos(dth));
                }
            }
            for (int c = 0; c < nq; ++c) {
                const int k = q_rows[static_cast<std::size_t>(c)];
                const double g = Y(i, k).real(), b = Y(i, k).imag();
                if (i == k)
                    J(r, np + c) = p(i) / vm(i) + g * vm(i);
                else {
                    const double dth = theta(i) - theta(k);
                    J(r, np + c) = vm(i) * (g * std::cos(dth) + b * std::sin(dth));
                }
            }
        }
        for (int r = 0; r < nq; ++r) {
            const int i = q_rows[static_cast<std::size_t>(r)];
            for (int c = 0; c < np; ++c) {
                const int k = p_rows[static_cast<std::size_t>(c)];
                const double g = Y(i, k).real(), b = Y(i, k).imag();
                if (i == k)
                    J(np + r, c) = p(i) - g * vm(i) * vm(i);
                else {
                    const double dth = theta(i) - theta(k);
                    J(np + r, c) = -vm(i) * vm(k) * (g * std::cos(dth) + b * std::sin(dth));
                }
            }
            for (int c = 0; c < nq; ++c) {
                const int k = q_rows[static_cast<std::size_t>(c)];
                const double g = Y(i, k).real(), b = Y(i, k).imag();
                if (i == k)
                    J(np + r, np + c) = q(i) / vm(i) - b * vm(i);
                else {
                    const double dth = theta(i) - theta(k);
                    J(np + r, np + c) = vm(i) * (g * std::sin(dth) - b * std::cos(dth));
                }
            }
        }
        Vec dx = J.partialPivLu().solve(-mis);
        if (!dx.allFinite())
            throw ConvergenceError("power flow: singular Jacobian", max_mis);
        for (int r = 0; r < np; ++r) theta(p_rows[static_cast<std::size_t>(r)]) += dx(r);
        for (int r = 0; r < nq; ++r) vm(q_rows[static_cast<std::size_t>(r)]) += dx(np + r);
    }
    throw ConvergenceError("power flow: no convergence after " + std::to_string(max_iter) +
                               " iterations, max mismatch " + std::to_string(max_mis),
                           max_mis);
}

/// One scenario's injection schedule in physical units. sg_p_mw carries an
/// entry for every SG; the slack machine's realized output comes from the
/// power flow (its entry here is only the dispatch target).
struct InjectionSpec {
    Vec ibr_p_mw;
    Vec sg_p_mw;
    Vec pd_mw;
    Vec qd_mvar;
};

/// Full steady-state operating point, per-unit on the case base.
struct OperatingPoint {
    Vec theta;
    Vec vm;
    Vec sg_p, sg_q;
    Vec ibr_p, ibr_q;
    Vec load_p, load_q;
    PfSolution pf;
};

inline InjectionSpec base_injections(const PowerSystemCase& cs) {
    InjectionSpec s;
    s.ibr_p_mw = Vec(cs.ibrs.size());
    for (std::size_t i = 0; i < cs.ibrs.size(); ++i) s.ibr_p_mw(static_cast<int>(i)) = cs.ibrs[i].p_forecast;
    s.sg_p_mw = Vec(cs.sgs.size());
    for (std::size_t g = 0; g < cs.sgs.size(); ++g)
        s.sg_p_mw(static_cast<int>(g)) = 0.5 * (cs.sgs[g].p_min + cs.sgs[g].p_max);
    s.pd_mw = Vec(cs.loads.size());
    s.qd_mvar = Vec(cs.loads.size());
    for (std::size_t l = 0; l < cs.loads.size(); ++l) {
        s.pd_mw(static_cast<int>(l)) = cs.loads[l].pd;
        s.qd_mvar(static_cast<int>(l)) = cs.loads[l].qd;
    }
    return s;
}

/// Solves the power flow for an injection schedule. IBRs inject at unity
/// power factor; the slack machine absorbs the imbalance; PV-bus SGs hold
/// their scheduled P and the bus voltage setpoint.
inline OperatingPoint solve_operating_point(const PowerSystemCase& cs, const InjectionSpec& inj,
                                            double tol = 1e-8) {
    const int n = cs.n_buses();
    require(inj.ibr_p_mw.size() == static_cast<int>(cs.ibrs.size()) &&
                inj.sg_p_mw.size() == static_cast<int>(cs.sgs.size()) &&
                inj.pd_mw.size() == static_cast<int>(cs.loads.size()) &&
                inj.qd_mvar.size() == static_cast<int>(cs.loads.size()),
            "operating point: injection dimensions do not match case");

    PfSpec spec;
    spec.p_spec = Vec::Zero(n);
    spec.q_spec = Vec::Zero(n);
    spec.v_set = Vec::Ones(n);
    for (int i = 0; i < n; ++i) spec.v_set(i) = cs.buses[static_cast<std::size_t>(i)].v_set;
    const double base = cs.base_mva;
    for (std::size_t g = 0; g < cs.sgs.size(); ++g)
        spec.p_spec(cs.bus_index(cs.sgs[g].bus)) += inj.sg_p_mw(static_cast<int>(g)) / base;
    for (std::size_t r = 0; r < cs.ibrs.size(); ++r)
        spec.p_spec(cs.bus_index(cs.ibrs[r].bus)) += inj.ibr_p_mw(static_cast<int>(r)) / base;
    for (std::size_t l = 0; l < cs.loads.size(); ++l) {
        spec.p_spec(cs.bus_index(cs.loads[l].bus)) -= inj.pd_mw(static_cast<int>(l)) / base;
        spec.q_spec(cs.bus_index(cs.loads[l].bus)) -= inj.qd_mvar(static_cast<int>(l)) / base;
    }

    OperatingPoint op;
    op.pf = solve_power_flow(cs, spec, tol);
    op.theta = op.pf.theta;
    op.vm = op.pf.vm;
    op.load_p = inj.pd_mw / base;
    op.load_q = inj.qd_mvar / base;
    op.ibr_p = inj.ibr_p_mw / base;
    op.ibr_q = Vec::Zero(static_cast<int>(cs.ibrs.size()));

    // Recover per-generator output from realized bus injections. At most one
    // SG and one IBR per bus (validated), so the split is unambiguous.
    op.sg_p = inj.sg_p_mw / base;
    op.sg_q = Vec::Zero(static_cast<int>(cs.sgs.size()));
    for (std::size_t g = 0; g < cs.sgs.size(); ++g) {
        const int bi = cs.bus_index(cs.sgs[g].bus);
        double p_other = 0.0, q_other = 0.0;
        for (std::size_t r = 0; r < cs.ibrs.size(); ++r)
            if (cs.bus_index(cs.ibrs[r].bus) == bi) {
                p_other += op.ibr_p(static_cast<int>(r));
                q_other += op.ibr_q(static_cast<int>(r));
            }
        for (std::size_t l = 0; l < cs.loads.size(); ++l)
            if (cs.bus_index(cs.loads[l].bus) == bi) {
                p_other -= op.load_p(static_cast<int>(l));
                q_other -= op.load_q(static_cast<int>(l));
            }
        op.sg_q(static_cast<int>(g)) = op.pf.q_inj(bi) - q_other;
        const BusType t = cs.buses[static_cast<std::size_t>(bi)].type;
        if (t == BusType::Slack) op.sg_p(static_cast<int>(g)) = op.pf.p_inj(bi) - p_other;
    }
    return op;
}

}  // namespace stabcert
