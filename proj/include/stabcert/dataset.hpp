#pragma once

#include <algorithm>
#include <sstream>

#include "stabcert/train.hpp"
#include "stabcert/transient.hpp"

namespace stabcert {

/// Canonical feature vector shared by the surrogates, the attack, the
/// verifier and the OPF coupling: [P_IBR..., P_SG..., Pd..., Qd...], MW/MVAr.
struct FeatureLayout {
    int n_ibr = 0, n_sg = 0, n_load = 0;

    explicit FeatureLayout(const PowerSystemCase& cs)
        : n_ibr(static_cast<int>(cs.ibrs.size())),
          n_sg(static_cast<int>(cs.sgs.size())),
          n_load(static_cast<int>(cs.loads.size())) {}

    int dim() const { return n_ibr + n_sg + 2 * n_load; }
    int ibr_offset() const { return 0; }
    int sg_offset() const { return n_ibr; }
    int pd_offset() const { return n_ibr + n_sg; }
    int qd_offset() const { return n_ibr + n_sg + n_load; }

    Vec pack(const InjectionSpec& s) const {
        Vec x(dim());
        x.segment(ibr_offset(), n_ibr) = s.ibr_p_mw;
        x.segment(sg_offset(), n_sg) = s.sg_p_mw;
        x.segment(pd_offset(), n_load) = s.pd_mw;
        x.segment(qd_offset(), n_load) = s.qd_mvar;
        return x;
    }

    InjectionSpec unpack(const Vec& x) const {
        require(x.size() == dim(), "feature layout: dimension mismatch");
        InjectionSpec s;
        s.ibr_p_mw = x.segment(ibr_offset(), n_ibr);
        s.sg_p_mw = x.segment(sg_offset(), n_sg);
        s.pd_mw = x.segment(pd_offset(), n_load);
        s.qd_mvar = x.segment(qd_offset(), n_load);
        return s;
    }

    std::vector<std::string> names(const PowerSystemCase& cs) const {
        std::vector<std::string> out;
        for (const auto& r : cs.ibrs) out.push_back("ibr_" + std::to_string(r.bus));
        for (const auto& g : cs.sgs) out.push_back("sg_" + std::to_string(g.bus));
        for (const auto& l : cs.loads) out.push_back("pd_" + std::to_string(l.bus));
        for (const auto& l : cs.loads) out.push_back("qd_" + std::to_string(l.bus));
        return out;
    }
};

struct ScenarioSampler {
    const PowerSystemCase* cs = nullptr;
    double ibr_range = 0.1;   // relative, 0.1 = +/-10%
    double sg_range = 0.1;
    double load_range = 0.1;
    int count = 100;
    std::uint64_t seed = 1;

    void validate() const {
        require(cs != nullptr, "sampler: case required");
        require(ibr_range >= 0.0 && sg_range >= 0.0 && load_range >= 0.0,
                "sampler: ranges must be >= 0");
        require(count >= 1, "sampler: count must be >= 1");
    }
};

/// Uniform independent sampling around the base injections; SG outputs are
/// rescaled so total generation tracks total load plus estimated losses.
/// Values that would go negative are clamped at zero.
inline std::vector<InjectionSpec> sample_scenarios(const ScenarioSampler& smp) {
    smp.validate();
    const PowerSystemCase& cs = *smp.cs;
    const InjectionSpec base = base_injections(cs);

    double loss_est = 0.0;
    try {
        OperatingPoint op = solve_operating_point(cs, base);
        loss_est = (op.sg_p.sum() + op.ibr_p.sum() - op.load_p.sum()) * cs.base_mva;
    } catch (const ConvergenceError&) {
        loss_est = 0.0;  // base case infeasible; sampled scenarios may still solve
    }

    Rng rng(smp.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<InjectionSpec> out;
    out.reserve(static_cast<std::size_t>(smp.count));
    for (int k = 0; k < smp.count; ++k) {
        InjectionSpec s = base;
        for (int i = 0; i < s.ibr_p_mw.size(); ++i)
            s.ibr_p_mw(i) = std::max(0.0, base.ibr_p_mw(i) * (1.0 + smp.ibr_range * u(rng)));
        for (int g = 0; g < s.sg_p_mw.size(); ++g)
            s.sg_p_mw(g) = std::max(0.0, base.sg_p_mw(g) * (1.0 + smp.sg_range * u(rng)));
        for (int l = 0; l < s.pd_mw.size(); ++l)
            s.pd_mw(l) = std::max(0.0, base.pd_mw(l) * (1.0 + smp.load_range * u(rng)));
        for (int l = 0; l < s.qd_mvar.size(); ++l)
            s.qd_mvar(l) = base.qd_mvar(l) * (1.0 + smp.load_range * u(rng));

        const double target = s.pd_mw.sum() + loss_est - s.ibr_p_mw.sum();
        const double got = s.sg_p_mw.sum();
        if (got > 1e-9 && target > 0.0) {
            const double f = target / got;
            for (int g = 0; g < s.sg_p_mw.size(); ++g) {
                const auto& sg = cs.sgs[static_cast<std::size_t>(g)];
                s.sg_p_mw(g) = std::clamp(s.sg_p_mw(g) * f, sg.p_min, sg.p_max);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct LabeledDataset {
    std::vector<std::string> feature_names;
    Mat features;            // rows x dim
    Vec tsi;
    std::vector<int> stable;
    int n_dropped = 0;

    int size() const { return static_cast<int>(features.rows()); }
};

/// Labels scenarios with TDS-based TSI. Power-flow-infeasible scenarios are
/// dropped and counted. Rows carry the realized slack output so each row
/// re-solves the power flow exactly as simulated.
inline LabeledDataset label_dataset(const std::vector<InjectionSpec>& scenarios,
                                    const PowerSystemCase& cs, const FaultScenario& fault,
                                    unsigned threads = 1) {
    const FeatureLayout lay(cs);
    const int slack_sg = cs.slack_sg_index();

    struct Row {
        bool ok = false;
        Vec x;
        double tsi = 0.0;
    };
    std::vector<Row> rows(scenarios.size());
    parallel_for(scenarios.size(), threads, [&](std::size_t k) {
        try {
            OperatingPoint op = solve_operating_point(cs, scenarios[k]);
            InjectionSpec realized = scenarios[k];
            realized.sg_p_mw(slack_sg) = op.sg_p(slack_sg) * cs.base_mva;
            Trajectory traj = run_tds(cs, op, fault);
            rows[k].x = lay.pack(realized);
            rows[k].tsi = compute_tsi(traj);
            rows[k].ok = true;
        } catch (const ConvergenceError&) {
            rows[k].ok = false;
        } catch (const DomainError&) {
            rows[k].ok = false;
        }
    });

    LabeledDataset ds;
    ds.feature_names = lay.names(cs);
    int kept = 0;
    for (const auto& r : rows) kept += r.ok ? 1 : 0;
    require(kept > 0, "label_dataset: every scenario was infeasible");
    ds.features = Mat(kept, lay.dim());
    ds.tsi = Vec(kept);
    ds.stable.reserve(static_cast<std::size_t>(kept));
    int i = 0;
    for (const auto& r : rows) {
        if (!r.ok) {
            ++ds.n_dropped;
            continue;
        }
        ds.features.row(i) = r.x.transpose();
        ds.tsi(i) = r.tsi;
        ds.stable.push_back(r.tsi > 0.0 ? 1 : 0);
        ++i;
    }
    return ds;
}

inline void save_dataset_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_dataset_csv: cannot open " + path);
    for (const auto& n : ds.feature_names) out << n << ",";
    out << "tsi,stable\n";
    char buf[64];
    for (int r = 0; r < ds.size(); ++r) {
        for (int c = 0; c < ds.features.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features(r, c));
            out << buf << ",";
        }
        std::snprintf(buf, sizeof buf, "%.17g", ds.tsi(r));
        out << buf << "," << ds.stable[static_cast<std::size_t>(r)] << "\n";
    }
}

inline LabeledDataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_dataset_csv: cannot open " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "dataset file: missing header");
    LabeledDataset ds;
    {
        std::stringstream ss(line);
        std::string tok;
        std::vector<std::string> cols;
        while (std::getline(ss, tok, ',')) cols.push_back(tok);
        require(cols.size() >= 3 && cols[cols.size() - 2] == "tsi" && cols.back() == "stable",
                "dataset file: header must end with tsi,stable");
        ds.feature_names.assign(cols.begin(), cols.end() - 2);
    }
    const int d = static_cast<int>(ds.feature_names.size());
    std::vector<Vec> feats;
    std::vector<double> tsis;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        Vec x(d);
        for (int c = 0; c < d; ++c) {
            require(static_cast<bool>(std::getline(ss, tok, ',')), "dataset file: short row");
            x(c) = std::stod(tok);
        }
        require(static_cast<bool>(std::getline(ss, tok, ',')), "dataset file: missing tsi");
        tsis.push_back(std::stod(tok));
        require(static_cast<bool>(std::getline(ss, tok, ',')), "dataset file: missing stable");
        ds.stable.push_back(std::stoi(tok));
        feats.push_back(std::move(x));
    }
    ds.features = Mat(static_cast<int>(feats.size()), d);
    ds.tsi = Vec(static_cast<int>(feats.size()));
    for (std::size_t r = 0; r < feats.size(); ++r) {
        ds.features.row(static_cast<int>(r)) = feats[r].transpose();
        ds.tsi(static_cast<int>(r)) = tsis[r];
    }
    return ds;
}

inline TrainingSet to_training_set(const LabeledDataset& ds, bool classification) {
    TrainingSet ts;
    for (int r = 0; r < ds.size(); ++r) {
        ts.inputs.push_back(ds.features.row(r).transpose());
        ts.targets.push_back(classification ? static_cast<double>(ds.stable[static_cast<std::size_t>(r)])
                                            : ds.tsi(r));
    }
    return ts;
}

}  // namespace stabcert
