#pragma once

#include <complex>
#include <fstream>
#include <json.hpp>
#include <map>

#include "stabcert/common.hpp"

namespace stabcert {

enum class BusType { Slack, PV, PQ };

inline std::string to_string(BusType t) {
    switch (t) {
        case BusType::Slack: return "slack";
        case BusType::PV: return "pv";
        default: return "pq";
    }
}

inline BusType bus_type_from_string(const std::string& s) {
    if (s == "slack") return BusType::Slack;
    if (s == "pv") return BusType::PV;
    if (s == "pq") return BusType::PQ;
    throw DomainError("unknown bus type: " + s);
}

struct Bus {
    int id = 0;
    BusType type = BusType::PQ;
    double v_set = 1.0;   // p.u., used by slack/PV buses
    double v_min = 0.9;   // p.u.
    double v_max = 1.1;   // p.u.
};

struct Line {
    int id = 0;
    int from = 0;
    int to = 0;
    double r = 0.0;        // p.u.
    double x = 0.0;        // p.u.
    double b = 0.0;        // total line charging, p.u.
    double rating_mw = 0.0;  // active power limit
};

/// Synchronous generator: classical model parameters plus dispatch limits
/// and quadratic fuel cost a*P^2 + b*P + c ($/h with P in MW).
struct SyncGen {
    int bus = 0;
    double inertia_m = 0.05;  // M = 2H/omega_s, s^2/rad
    double damping_d = 0.0;   // p.u. torque per rad/s
    double xd_t = 0.1;        // transient reactance, p.u.
    double p_min = 0.0, p_max = 0.0;  // MW
    double q_min = 0.0, q_max = 0.0;  // MVAr
    double cost_a = 0.0, cost_b = 0.0, cost_c = 0.0;
};

struct Ibr {
    int bus = 0;
    double s_rated_mva = 0.0;
    double curtail_cost = 0.0;  // $/MWh
    double p_forecast = 0.0;    // MW
};

struct LoadPoint {
    int bus = 0;
    double pd = 0.0;  // MW
    double qd = 0.0;  // MVAr
};

struct PowerSystemCase {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<SyncGen> sgs;
    std::vector<Ibr> ibrs;
    std::vector<LoadPoint> loads;

    int n_buses() const { return static_cast<int>(buses.size()); }

    int bus_index(int id) const {
        for (int i = 0; i < n_buses(); ++i)
            if (buses[static_cast<std::size_t>(i)].id == id) return i;
        throw DomainError("unknown bus id " + std::to_string(id));
    }

    int slack_index() const {
        for (int i = 0; i < n_buses(); ++i)
            if (buses[static_cast<std::size_t>(i)].type == BusType::Slack) return i;
        throw DomainError("case has no slack bus");
    }

    int slack_sg_index() const {
        const int sb = buses[static_cast<std::size_t>(slack_index())].id;
        for (std::size_t g = 0; g < sgs.size(); ++g)
            if (sgs[g].bus == sb) return static_cast<int>(g);
        throw DomainError("no SG attached to the slack bus");
    }

    const Line& line_by_id(int id) const {
        for (const auto& l : lines)
            if (l.id == id) return l;
        throw DomainError("unknown line id " + std::to_string(id));
    }

    void validate() const {
        require(base_mva > 0.0, "case: base MVA must be positive");
        require(!buses.empty(), "case: no buses");
        int n_slack = 0;
        for (const auto& b : buses) {
            if (b.type == BusType::Slack) ++n_slack;
            require(b.v_min <= b.v_max, "case: bus v_min > v_max");
        }
        require(n_slack == 1, "case: exactly one slack bus required");
        std::map<int, int> seen;
        for (const auto& l : lines) {
            bus_index(l.from);
            bus_index(l.to);
            require(l.rating_mw > 0.0, "case: line rating must be positive");
            require(std::abs(l.r) + std::abs(l.x) > 0.0, "case: line with zero impedance");
            require(++seen[l.id] == 1, "case: duplicate line id");
        }
        std::map<int, int> sg_per_bus, ibr_per_bus;
        for (const auto& g : sgs) {
            bus_index(g.bus);
            require(++sg_per_bus[g.bus] == 1, "case: more than one SG on a bus");
            require(g.inertia_m > 0.0, "case: SG inertia must be positive");
            require(g.xd_t > 0.0, "case: SG transient reactance must be positive");
            require(std::isfinite(g.p_min) && std::isfinite(g.p_max) && g.p_min <= g.p_max,
                    "case: SG P limits invalid");
            require(std::isfinite(g.q_min) && std::isfinite(g.q_max) && g.q_min <= g.q_max,
                    "case: SG Q limits invalid");
        }
        for (const auto& r : ibrs) {
            bus_index(r.bus);
            require(++ibr_per_bus[r.bus] == 1, "case: more than one IBR on a bus");
            require(r.s_rated_mva > 0.0, "case: IBR rating must be positive");
            require(r.p_forecast >= 0.0 && r.p_forecast <= r.s_rated_mva,
                    "case: IBR forecast outside [0, rated]");
        }
        for (const auto& l : loads) bus_index(l.bus);
    }

    /// Bus admittance matrix (pi-model lines, half charging at each end).
    /// `skip_line` removes one line by id; `fault_bus_index` adds a large
    /// shunt (three-phase fault through 1e-6 p.u.) at that bus index.
    Eigen::MatrixXcd ybus(int skip_line_id = -1, int fault_bus_index = -1) const {
        using cd = std::complex<double>;
        const int n = n_buses();
        Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
        for (const auto& l : lines) {
            if (l.id == skip_line_id) continue;
            const int i = bus_index(l.from), j = bus_index(l.to);
            const cd ys = 1.0 / cd(l.r, l.x);
            const cd ysh(0.0, l.b / 2.0);
            Y(i, i) += ys + ysh;
            Y(j, j) += ys + ysh;
            Y(i, j) -= ys;
            Y(j, i) -= ys;
        }
        if (fault_bus_index >= 0) Y(fault_bus_index, fault_bus_index) += 1.0 / cd(1e-6, 0.0);
        return Y;
    }
};

inline PowerSystemCase case_from_json(const nlohmann::json& j) {
    PowerSystemCase cs;
    try {
        cs.base_mva = j.at("base_mva").get<double>();
        for (const auto& bj : j.at("buses")) {
            Bus b;
            b.id = bj.at("id").get<int>();
            b.type = bus_type_from_string(bj.at("type").get<std::string>());
            b.v_set = bj.value("v_set", 1.0);
            b.v_min = bj.value("v_min", 0.9);
            b.v_max = bj.value("v_max", 1.1);
            cs.buses.push_back(b);
        }
        int auto_id = 0;
        for (const auto& lj : j.at("lines")) {
            Line l;
            l.id = lj.value("id", auto_id);
            ++auto_id;
            l.from = lj.at("from").get<int>();
            l.to = lj.at("to").get<int>();
            l.r = lj.at("r").get<double>();
            l.x = lj.at("x").get<double>();
            l.b = lj.value("b", 0.0);
            l.rating_mw = lj.at("rating_mw").get<double>();
            cs.lines.push_back(l);
        }
        for (const auto& gj : j.value("sgs", nlohmann::json::array())) {
            SyncGen g;
            g.bus = gj.at("bus").get<int>();
            g.inertia_m = gj.at("m").get<double>();
            g.damping_d = gj.value("d", 0.0);
            g.xd_t = gj.at("xd_t").get<double>();
            g.p_min = gj.at("p_min").get<double>();
            g.p_max = gj.at("p_max").get<double>();
            g.q_min = gj.at("q_min").get<double>();
            g.q_max = gj.at("q_max").get<double>();
            g.cost_a = gj.value("cost_a", 0.0);
            g.cost_b = gj.value("cost_b", 0.0);
            g.cost_c = gj.value("cost_c", 0.0);
            cs.sgs.push_back(g);
        }
        for (const auto& rj : j.value("ibrs", nlohmann::json::array())) {
            Ibr r;
            r.bus = rj.at("bus").get<int>();
            r.s_rated_mva = rj.at("s_rated_mva").get<double>();
            r.curtail_cost = rj.value("curtail_cost", 0.0);
            r.p_forecast = rj.value("p_forecast", 0.0);
            cs.ibrs.push_back(r);
        }
        for (const auto& lj : j.value("loads", nlohmann::json::array())) {
            LoadPoint l;
            l.bus = lj.at("bus").get<int>();
            l.pd = lj.at("pd").get<double>();
            l.qd = lj.value("qd", 0.0);
            cs.loads.push_back(l);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("case file: ") + e.what());
    }
    cs.validate();
    return cs;
}

inline nlohmann::json case_to_json(const PowerSystemCase& cs) {
    nlohmann::json j;
    j["base_mva"] = cs.base_mva;
    j["buses"] = nlohmann::json::array();
    for (const auto& b : cs.buses)
        j["buses"].push_back({{"id", b.id},
                              {"type", to_string(b.type)},
                              {"v_set", b.v_set},
                              {"v_min", b.v_min},
                              {"v_max", b.v_max}});
    j["lines"] = nlohmann::json::array();
    for (const auto& l : cs.lines)
        j["lines"].push_back({{"id", l.id},
                              {"from", l.from},
                              {"to", l.to},
                              {"r", l.r},
                              {"x", l.x},
                              {"b", l.b},
                              {"rating_mw", l.rating_mw}});
    j["sgs"] = nlohmann::json::array();
    for (const auto& g : cs.sgs)
        j["sgs"].push_back({{"bus", g.bus},
                            {"m", g.inertia_m},
                            {"d", g.damping_d},
                            {"xd_t", g.xd_t},
                            {"p_min", g.p_min},
                            {"p_max", g.p_max},
                            {"q_min", g.q_min},
                            {"q_max", g.q_max},
                            {"cost_a", g.cost_a},
                            {"cost_b", g.cost_b},
                            {"cost_c", g.cost_c}});
    j["ibrs"] = nlohmann::json::array();
    for (const auto& r : cs.ibrs)
        j["ibrs"].push_back({{"bus", r.bus},
                             {"s_rated_mva", r.s_rated_mva},
                             {"curtail_cost", r.curtail_cost},
                             {"p_forecast", r.p_forecast}});
    j["loads"] = nlohmann::json::array();
    for (const auto& l : cs.loads)
        j["loads"].push_back({{"bus", l.bus}, {"pd", l.pd}, {"qd", l.qd}});
    return j;
}

inline PowerSystemCase load_case(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_case: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("case file parse error: ") + e.what());
    }
    return case_from_json(j);
}

inline void save_case(const PowerSystemCase& cs, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_case: cannot open " + path);
    out << case_to_json(cs).dump(2) << "\n";
}

}  // namespace stabcert
