#pragma once

#include "stabcert/power_flow.hpp"

namespace stabcert {

struct FaultScenario {
    int line_id = -1;     // removed at t_clear; -1 = no line switching
    int fault_bus = -1;   // bus id shorted during the fault; -1 = no fault
    double t_fault = 0.1;
    double t_clear = 0.25;
    double t_end = 5.0;
    double h = 0.005;

    void validate() const {
        require(h > 0.0, "fault scenario: step size must be positive");
        require(0.0 <= t_fault && t_fault < t_clear && t_clear < t_end,
                "fault scenario: need 0 <= t_fault < t_clear < t_end");
    }

    bool has_fault() const { return fault_bus >= 0 && t_fault < t_end; }
};

inline FaultScenario fault_from_json(const nlohmann::json& j) {
    FaultScenario f;
    try {
        f.line_id = j.value("line", -1);
        f.fault_bus = j.at("fault_bus").get<int>();
        f.t_fault = j.value("t_fault", 0.1);
        f.t_clear = j.value("t_clear", 0.25);
        f.t_end = j.value("t_end", 5.0);
        f.h = j.value("h", 0.005);
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("fault file: ") + e.what());
    }
    f.validate();
    return f;
}

inline FaultScenario load_fault(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_fault: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("fault file parse error: ") + e.what());
    }
    return fault_from_json(j);
}

struct Trajectory {
    double h = 0.0;
    std::vector<double> time;
    Mat delta_deg;  // rows = time steps, cols = SGs
    Mat omega;      // rad/s deviation
    bool diverged = false;

    int n_steps() const { return static_cast<int>(time.size()); }
    int n_gens() const { return static_cast<int>(delta_deg.cols()); }
};

/// Maximum rotor-angle gap between any two machines over the trajectory, deg.
inline double max_angle_gap_deg(const Trajectory& traj) {
    double gap = 0.0;
    for (int t = 0; t < traj.n_steps(); ++t) {
        const double lo = traj.delta_deg.row(t).minCoeff();
        const double hi = traj.delta_deg.row(t).maxCoeff();
        gap = std::max(gap, hi - lo);
    }
    return gap;
}

/// TSI = (360 - dmax)/(360 + dmax) * 100, dmax in degrees. Positive = stable.
inline double compute_tsi(const Trajectory& traj) {
    require(traj.n_gens() >= 2, "compute_tsi: needs at least two machines");
    require(traj.n_steps() > 0, "compute_tsi: empty trajectory");
    const double dmax = max_angle_gap_deg(traj);
    return (360.0 - dmax) / (360.0 + dmax) * 100.0;
}

namespace detail {

/// Network reduced to SG internal nodes (G) and IBR buses (R), with all
/// other buses eliminated through the constant-impedance load model.
struct ReducedNetwork {
    Eigen::MatrixXcd ygg, ygr, yrg, yrr;
};

inline ReducedNetwork kron_reduce(const PowerSystemCase& cs, const Eigen::MatrixXcd& ybus_phase,
                                  const Eigen::VectorXcd& load_shunt, const Vec& xd_t) {
    const int n = cs.n_buses();
    const int ng = static_cast<int>(cs.sgs.size());
    const int nr = static_cast<int>(cs.ibrs.size());
    const int total = n + ng;

    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(total, total);
    Y.topLeftCorner(n, n) = ybus_phase;
    for (int i = 0; i < n; ++i) Y(i, i) += load_shunt(i);
    for (int g = 0; g < ng; ++g) {
        const int bi = cs.bus_index(cs.sgs[static_cast<std::size_t>(g)].bus);
        const std::complex<double> yg = 1.0 / std::complex<double>(0.0, xd_t(g));
        const int gi = n + g;
        Y(gi, gi) += yg;
        Y(bi, bi) += yg;
        Y(gi, bi) -= yg;
        Y(bi, gi) -= yg;
    }

    std::vector<int> keep, elim;
    for (int g = 0; g < ng; ++g) keep.push_back(n + g);
    std::vector<bool> is_ibr_bus(static_cast<std::size_t>(n), false);
    for (const auto& r : cs.ibrs) is_ibr_bus[static_cast<std::size_t>(cs.bus_index(r.bus))] = true;
    for (int i = 0; i < n; ++i)
        (is_ibr_bus[static_cast<std::size_t>(i)] ? keep : elim).push_back(i);

    const int nk = static_cast<int>(keep.size()), ne = static_cast<int>(elim.size());
    Eigen::MatrixXcd Ykk(nk, nk), Yke(nk, ne), Yek(ne, nk), Yee(ne, ne);
    for (int a = 0; a < nk; ++a)
        for (int b = 0; b < nk; ++b) Ykk(a, b) = Y(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
    for (int a = 0; a < nk; ++a)
        for (int b = 0; b < ne; ++b) Yke(a, b) = Y(keep[static_cast<std::size_t>(a)], elim[static_cast<std::size_t>(b)]);
    for (int a = 0; a < ne; ++a)
        for (int b = 0; b < nk; ++b) Yek(a, b) = Y(elim[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
    for (int a = 0; a < ne; ++a)
        for (int b = 0; b < ne; ++b) Yee(a, b) = Y(elim[static_cast<std::size_t>(a)], elim[static_cast<std::size_t>(b)]);

    Eigen::MatrixXcd Yred;
    if (ne > 0) {
        Eigen::FullPivLU<Eigen::MatrixXcd> lu(Yee);
        if (!lu.isInvertible())
            throw DomainError("transient simulation: singular network reduction (islanded bus?)");
        Yred = Ykk - Yke * lu.solve(Yek);
    } else {
        Yred = Ykk;
    }

    ReducedNetwork rn;
    rn.ygg = Yred.topLeftCorner(ng, ng);
    rn.ygr = Yred.topRightCorner(ng, nr);
    rn.yrg = Yred.bottomLeftCorner(nr, ng);
    rn.yrr = Yred.bottomRightCorner(nr, nr);
    return rn;
}

/// Solves the IBR bus voltages for fixed machine EMFs. IBRs inject
/// constant power while the required current stays within the inverter
/// rating; under deep voltage dips the injection current-limits to
/// i_max aligned with the local voltage. Newton with step damping.
inline Eigen::VectorXcd solve_ibr_voltages(const ReducedNetwork& rn, const Eigen::VectorXcd& emf,
                                           const Eigen::VectorXcd& s_ibr, const Vec& i_max,
                                           Eigen::VectorXcd v0) {
    using cd = std::complex<double>;
    const int nr = static_cast<int>(s_ibr.size());
    if (nr == 0) return v0;
    const Eigen::VectorXcd drive = rn.yrg * emf;
    auto limited = [&](int r, const cd& v) { return std::abs(s_ibr(r)) / std::abs(v) > i_max(r); };
    auto injection = [&](int r, const cd& v) -> cd {
        if (limited(r, v)) return i_max(r) * v / std::abs(v);
        return std::conj(s_ibr(r) / v);
    };
    auto residual = [&](const Eigen::VectorXcd& v) -> Eigen::VectorXcd {
        Eigen::VectorXcd f = drive + rn.yrr * v;
        for (int r = 0; r < nr; ++r) f(r) -= injection(r, v(r));
        return f;
    };
    Eigen::VectorXcd v = v0;
    double fn = residual(v).cwiseAbs().maxCoeff();
    for (int it = 0; it < 60; ++it) {
        if (fn < 1e-11) return v;
        Mat J(2 * nr, 2 * nr);
        for (int r = 0; r < nr; ++r) {
            for (int k = 0; k < nr; ++k) {
                cd de = rn.yrr(r, k);
                cd df = cd(0.0, 1.0) * rn.yrr(r, k);
                if (k == r) {
                    const cd w = v(r);
                    const double m2 = std::norm(w);
                    const double m1 = std::abs(w);
                    if (limited(r, w)) {
                        // d/dV of i_max * V/|V|
                        de -= i_max(r) * (cd(m2, 0.0) - w.real() * w) / (m2 * m1);
                        df -= i_max(r) * (cd(0.0, m2) - w.imag() * w) / (m2 * m1);
                    } else {
                        const cd sc = std::conj(s_ibr(r));
                        de += sc * (m2 - 2.0 * w.real() * w) / (m2 * m2);
                        df += sc * (cd(0.0, m2) - 2.0 * w.imag() * w) / (m2 * m2);
                    }
                }
                J(2 * r, 2 * k) = de.real();
                J(2 * r, 2 * k + 1) = df.real();
                J(2 * r + 1, 2 * k) = de.imag();
                J(2 * r + 1, 2 * k + 1) = df.imag();
            }
        }
        Eigen::VectorXcd f = residual(v);
        Vec rhs(2 * nr);
        for (int r = 0; r < nr; ++r) {
            rhs(2 * r) = -f(r).real();
            rhs(2 * r + 1) = -f(r).imag();
        }
        Vec dx = J.partialPivLu().solve(rhs);
        double step = 1.0;
        for (int halvings = 0; halvings < 14; ++halvings) {
            Eigen::VectorXcd vt = v;
            for (int r = 0; r < nr; ++r)
                vt(r) += step * cd(dx(2 * r), dx(2 * r + 1));
            const double ft = residual(vt).cwiseAbs().maxCoeff();
            if (ft < fn || halvings == 13) {
                v = vt;
                fn = ft;
                break;
            }
            step *= 0.5;
        }
    }
    if (fn > 1e-8)
        throw ConvergenceError("transient simulation: IBR algebraic solve failed", fn);
    return v;
}

}  // namespace detail

/// Classical-model time-domain simulation under a three-phase bus fault.
/// Loads become constant shunts at the pre-fault voltage; IBRs remain
/// constant-power injections; dynamics integrate with fixed-step RK4.
/// A pairwise angle gap above 1000 degrees sets the diverged flag.
inline Trajectory run_tds(const PowerSystemCase& cs, const OperatingPoint& op,
                          const FaultScenario& scn) {
    scn.validate();
    const int ng = static_cast<int>(cs.sgs.size());
    const int nr = static_cast<int>(cs.ibrs.size());
    require(ng >= 1, "transient simulation: case has no SGs");
    if (scn.line_id >= 0) cs.line_by_id(scn.line_id);
    if (scn.fault_bus >= 0) cs.bus_index(scn.fault_bus);

    using cd = std::complex<double>;

    // Machine EMFs behind transient reactance at the operating point.
    Vec emf_mag(ng), delta0(ng), pm(ng), inertia(ng), damping(ng), xd(ng);
    for (int g = 0; g < ng; ++g) {
        const auto& sg = cs.sgs[static_cast<std::size_t>(g)];
        const int bi = cs.bus_index(sg.bus);
        const cd v = std::polar(op.vm(bi), op.theta(bi));
        const cd s(op.sg_p(g), op.sg_q(g));
        const cd i = std::conj(s / v);
        const cd e = v + cd(0.0, sg.xd_t) * i;
        emf_mag(g) = std::abs(e);
        delta0(g) = std::arg(e);
        pm(g) = op.sg_p(g);
        inertia(g) = sg.inertia_m;
        damping(g) = sg.damping_d;
        xd(g) = sg.xd_t;
    }

    Eigen::VectorXcd load_shunt = Eigen::VectorXcd::Zero(cs.n_buses());
    for (std::size_t l = 0; l < cs.loads.size(); ++l) {
        const int bi = cs.bus_index(cs.loads[l].bus);
        const cd s(op.load_p(static_cast<int>(l)), op.load_q(static_cast<int>(l)));
        load_shunt(bi) += std::conj(s) / (op.vm(bi) * op.vm(bi));
    }

    Eigen::VectorXcd s_ibr(nr);
    Vec ibr_imax(nr);
    for (int r = 0; r < nr; ++r) {
        s_ibr(r) = cd(op.ibr_p(r), op.ibr_q(r));
        ibr_imax(r) = cs.ibrs[static_cast<std::size_t>(r)].s_rated_mva / cs.base_mva;
    }

    const detail::ReducedNetwork rn_pre =
        detail::kron_reduce(cs, cs.ybus(), load_shunt, xd);
    const bool faulted = scn.has_fault();
    detail::ReducedNetwork rn_fault, rn_post;
    if (faulted) {
        rn_fault = detail::kron_reduce(cs, cs.ybus(-1, cs.bus_index(scn.fault_bus)), load_shunt, xd);
        rn_post = detail::kron_reduce(cs, cs.ybus(scn.line_id), load_shunt, xd);
    }

    Eigen::VectorXcd v_ibr0(nr);
    for (int r = 0; r < nr; ++r) {
        const int bi = cs.bus_index(cs.ibrs[static_cast<std::size_t>(r)].bus);
        v_ibr0(r) = std::polar(op.vm(bi), op.theta(bi));
    }

    const int n_steps = static_cast<int>(std::llround(scn.t_end / scn.h));
    Trajectory traj;
    traj.h = scn.h;
    traj.time.reserve(static_cast<std::size_t>(n_steps + 1));
    traj.delta_deg = Mat(n_steps + 1, ng);
    traj.omega = Mat(n_steps + 1, ng);

    Vec delta = delta0, omega = Vec::Zero(ng);
    Eigen::VectorXcd v_ibr = v_ibr0;

    auto electrical_power = [&](const detail::ReducedNetwork& rn, const Vec& d,
                                Eigen::VectorXcd& v_warm) -> Vec {
        Eigen::VectorXcd e(ng);
        for (int g = 0; g < ng; ++g) e(g) = std::polar(emf_mag(g), d(g));
        v_warm = detail::solve_ibr_voltages(rn, e, s_ibr, ibr_imax, v_warm);
        Eigen::VectorXcd ig = rn.ygg * e;
        if (nr > 0) ig += rn.ygr * v_warm;
        Vec pe(ng);
        for (int g = 0; g < ng; ++g) pe(g) = (e(g) * std::conj(ig(g))).real();
        return pe;
    };

    auto record = [&](int step, double t) {
        traj.time.push_back(t);
        for (int g = 0; g < ng; ++g) {
            traj.delta_deg(step, g) = rad2deg(delta(g));
            traj.omega(step, g) = omega(g);
        }
    };

    record(0, 0.0);
    int recorded = 1;
    for (int step = 0; step < n_steps; ++step) {
        const double t = step * scn.h;
        const detail::ReducedNetwork* rn = &rn_pre;
        if (faulted && t >= scn.t_fault)
            rn = (t < scn.t_clear) ? &rn_fault : &rn_post;

        auto deriv = [&](const Vec& d, const Vec& w, Eigen::VectorXcd& v_warm, Vec& dd, Vec& dw) {
            const Vec pe = electrical_power(*rn, d, v_warm);
            dd = w;
            dw = (pm - pe - damping.cwiseProduct(w)).cwiseQuotient(inertia);
        };

        Vec k1d, k1w, k2d, k2w, k3d, k3w, k4d, k4w;
        Eigen::VectorXcd vw = v_ibr;
        deriv(delta, omega, vw, k1d, k1w);
        deriv(delta + 0.5 * scn.h * k1d, omega + 0.5 * scn.h * k1w, vw, k2d, k2w);
        deriv(delta + 0.5 * scn.h * k2d, omega + 0.5 * scn.h * k2w, vw, k3d, k3w);
        deriv(delta + scn.h * k3d, omega + scn.h * k3w, vw, k4d, k4w);
        delta += scn.h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        omega += scn.h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        v_ibr = vw;

        record(recorded, (step + 1) * scn.h);
        ++recorded;
        const double gap = delta.maxCoeff() - delta.minCoeff();
        if (rad2deg(gap) > 1000.0) {
            traj.diverged = true;
            break;
        }
    }
    traj.delta_deg.conservativeResize(recorded, ng);
    traj.omega.conservativeResize(recorded, ng);
    return traj;
}

inline void save_trajectory_csv(const Trajectory& traj, const PowerSystemCase& cs,
                                const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_trajectory_csv: cannot open " + path);
    out << "time";
    for (const auto& sg : cs.sgs) out << ",delta_" << sg.bus;
    out << "\n";
    char buf[64];
    for (int t = 0; t < traj.n_steps(); ++t) {
        std::snprintf(buf, sizeof buf, "%.6f", traj.time[static_cast<std::size_t>(t)]);
        out << buf;
        for (int g = 0; g < traj.n_gens(); ++g) {
            std::snprintf(buf, sizeof buf, "%.10g", traj.delta_deg(t, g));
            out << "," << buf;
        }
        out << "\n";
    }
}

}  // namespace stabcert
