#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>

#include "stabcert/control.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using namespace stabcert;
namespace fs = std::filesystem;

struct CommonArgs {
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& c) {
    const char* env_dir = std::getenv("STABCERT_OUT_DIR");
    if (env_dir) c.out_dir = env_dir;
    cmd->add_option("--out-dir", c.out_dir, "Directory for result files");
    cmd->add_option("--seed", c.seed, "RNG seed");
    cmd->add_option("--threads", c.threads, "Worker thread cap");
}

class Manifest {
public:
    Manifest(const std::string& command, const CommonArgs& c, int argc, char** argv)
        : dir_(c.out_dir), t0_(std::chrono::steady_clock::now()) {
        fs::create_directories(dir_);
        j_["command"] = command;
        j_["version"] = kVersion;
        j_["seed"] = c.seed;
        j_["threads"] = c.threads;
        nlohmann::json args = nlohmann::json::array();
        for (int i = 1; i < argc; ++i) args.push_back(argv[i]);
        j_["arguments"] = args;
    }

    void note(const std::string& key, const nlohmann::json& value) { j_[key] = value; }

    ~Manifest() {
        j_["timings"] = {{"total_s", std::chrono::duration<double>(
                                         std::chrono::steady_clock::now() - t0_)
                                         .count()}};
        std::ofstream out(fs::path(dir_) / "manifest.json");
        out << j_.dump(2) << "\n";
    }

private:
    std::string dir_;
    std::chrono::steady_clock::time_point t0_;
    nlohmann::json j_;
};

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    require(out.good(), "cannot open " + path.string());
    out << j.dump(2) << "\n";
}

Vec parse_csv_doubles(const std::string& text) {
    std::vector<double> vals;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
    Vec v(static_cast<int>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<int>(i)) = vals[i];
    return v;
}

nlohmann::json vec_json(const Vec& v) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

InjectionSpec strategy_to_injections(const PowerSystemCase& cs, const Vec& features) {
    return FeatureLayout(cs).unpack(features);
}

// ---------------------------------------------------------------- gen ----

struct GenArgs {
    CommonArgs common;
    std::string case_path, fault_path, out = "dataset.csv";
    int count = 500;
    double pct_ibr = 30.0, pct_sg = 60.0, pct_load = 15.0;
};

int run_gen(const GenArgs& a, int argc, char** argv) {
    Manifest mf("gen", a.common, argc, argv);
    PowerSystemCase cs = load_case(a.case_path);
    FaultScenario fault = load_fault(a.fault_path);
    ScenarioSampler smp;
    smp.cs = &cs;
    smp.count = a.count;
    smp.seed = a.common.seed;
    smp.ibr_range = a.pct_ibr / 100.0;
    smp.sg_range = a.pct_sg / 100.0;
    smp.load_range = a.pct_load / 100.0;
    LabeledDataset ds = label_dataset(sample_scenarios(smp), cs, fault, a.common.threads);
    const fs::path out = fs::path(a.common.out_dir) / a.out;
    save_dataset_csv(ds, out.string());
    int unstable = 0;
    for (int v : ds.stable) unstable += v == 0;
    mf.note("rows", ds.size());
    mf.note("dropped", ds.n_dropped);
    mf.note("unstable", unstable);
    std::cout << "dataset: " << ds.size() << " rows (" << unstable << " unstable, "
              << ds.n_dropped << " infeasible dropped) -> " << out.string() << "\n";
    return 0;
}

// -------------------------------------------------------------- train ----

struct TrainArgs {
    CommonArgs common;
    std::string data_path, out = "net.json";
    std::string type = "c";  // c = classifier, e = estimator
    std::vector<int> hidden{16, 16};
    int epochs = 400;
    int batch = 32;
    double lr = 0.05;
};

int run_train(const TrainArgs& a, int argc, char** argv) {
    Manifest mf("train", a.common, argc, argv);
    LabeledDataset ds = load_dataset_csv(a.data_path);
    const bool classify = a.type == "c";
    TrainingConfig cfg;
    cfg.hidden_sizes = a.hidden;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.learning_rate = a.lr;
    cfg.loss = classify ? Loss::CrossEntropy : Loss::MeanSquaredError;
    cfg.seed = a.common.seed;
    TrainResult res = train(to_training_set(ds, classify), cfg);
    const fs::path out = fs::path(a.common.out_dir) / a.out;
    save_network(res.net, out.string());
    {
        std::ofstream loss_out(out.string() + ".loss.csv");
        loss_out << "epoch,loss\n";
        char buf[64];
        for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, res.epoch_loss[e]);
            loss_out << buf;
        }
    }
    // Training-set quality summary.
    double correct = 0.0, abs_err = 0.0;
    for (int r = 0; r < ds.size(); ++r) {
        const Vec x = ds.features.row(r).transpose();
        if (classify) {
            const double m = res.net.margin(x);
            correct += ((m > 0.0) == (ds.stable[static_cast<std::size_t>(r)] == 1)) ? 1.0 : 0.0;
        } else {
            abs_err += std::abs(res.net.forward(x)(0) - ds.tsi(r));
        }
    }
    if (classify) {
        mf.note("train_accuracy", correct / ds.size());
        std::cout << "classifier accuracy on training set: " << correct / ds.size() << "\n";
    } else {
        mf.note("train_mae", abs_err / ds.size());
        std::cout << "estimator MAE on training set: " << abs_err / ds.size() << "\n";
    }
    mf.note("final_loss", res.epoch_loss.back());
    std::cout << "network -> " << out.string() << "\n";
    return 0;
}

// ------------------------------------------------------------- attack ----

struct AttackArgs {
    CommonArgs common;
    std::string network, center, radii, out = "attack.json";
    int steps = 50, restarts = 10;
    double eta = 0.1;
    bool unscaled = false;
};

int run_attack(const AttackArgs& a, int argc, char** argv) {
    Manifest mf("attack", a.common, argc, argv);
    Network net = load_network(a.network);
    PerturbationBall ball(parse_csv_doubles(a.center), parse_csv_doubles(a.radii));
    AttackConfig cfg;
    cfg.steps = a.steps;
    cfg.restarts = a.restarts;
    cfg.eta = a.eta;
    cfg.seed = a.common.seed;
    cfg.scale_step_by_radii = !a.unscaled;
    AttackResult res = pgd_attack(net, ball, cfg);
    nlohmann::json j;
    j["found"] = res.found;
    if (res.found) {
        j["x_adv"] = vec_json(res.x_adv);
        j["margin"] = res.margin;
    }
    write_json(fs::path(a.common.out_dir) / a.out, j);
    std::cout << (res.found ? "counterexample found, margin " + std::to_string(res.margin)
                            : std::string("no counterexample found"))
              << "\n";
    return 0;
}

// ------------------------------------------------------------- verify ----

struct VerifyArgs {
    CommonArgs common;
    std::string network, center, radii, case_path, out = "verify.json";
    double pct_ibr = -1.0, pct_sg = -1.0, pct_load = -1.0;
    bool no_pgd = false;
    long budget_domains = 200000;
    double budget_seconds = 120.0;
};

int run_verify(const VerifyArgs& a, int argc, char** argv) {
    Manifest mf("verify", a.common, argc, argv);
    Network net = load_network(a.network);
    const Vec center = parse_csv_doubles(a.center);
    PerturbationBall ball;
    if (!a.radii.empty()) {
        ball = PerturbationBall(center, parse_csv_doubles(a.radii));
    } else {
        require(!a.case_path.empty() && a.pct_ibr >= 0 && a.pct_sg >= 0 && a.pct_load >= 0,
                "verify: pass --radii, or --case with --pct-ibr/--pct-sg/--pct-load");
        PowerSystemCase cs = load_case(a.case_path);
        ball = strategy_ball(FeatureLayout(cs), center, a.pct_ibr, a.pct_sg, a.pct_load);
    }
    VerifyConfig cfg;
    cfg.use_pgd = !a.no_pgd;
    cfg.pgd.seed = a.common.seed;
    cfg.bab.max_domains = a.budget_domains;
    cfg.bab.max_seconds = a.budget_seconds;
    VerifyOutcome out = verify_pipeline(net, ball, cfg);
    nlohmann::json j;
    j["status"] = to_string(out.status);
    j["bound"] = out.bound;
    if (out.counterexample) {
        j["counterexample"] = vec_json(*out.counterexample);
        j["counterexample_margin"] = out.counterexample_margin;
    }
    j["domains"] = out.domains;
    j["stage_times"] = {{"pgd_s", out.t_pgd}, {"alpha_crown_s", out.t_alpha}, {"bab_s", out.t_bab}};
    write_json(fs::path(a.common.out_dir) / a.out, j);
    std::cout << "status: " << to_string(out.status) << ", bound " << out.bound << ", domains "
              << out.domains << "\n";
    return 0;
}

// ---------------------------------------------------------------- opf ----

struct OpfArgs {
    CommonArgs common;
    std::string case_path, network, out = "opf.json";
    double lambda = 0.0;
    bool disable_nn = false;
};

int run_opf(const OpfArgs& a, int argc, char** argv) {
    Manifest mf("opf", a.common, argc, argv);
    PowerSystemCase cs = load_case(a.case_path);
    InjectionSpec fc = base_injections(cs);
    std::optional<Network> net;
    if (!a.network.empty()) net = load_network(a.network);
    OpfOptions opt;
    opt.lambda = a.lambda;
    opt.use_nn = !a.disable_nn && net.has_value();
    OpfSolution sol = pdipm_solve(cs, fc, net ? &*net : nullptr, opt);
    nlohmann::json j;
    j["converged"] = sol.converged;
    j["iterations"] = sol.iterations;
    j["cost"] = sol.cost;
    j["dispatch_mw"] =
        nlohmann::json{{"sg", vec_json(sol.sg_p_mw)}, {"ibr", vec_json(sol.ibr_p_mw)}};
    j["qdispatch_mvar"] =
        nlohmann::json{{"sg", vec_json(sol.sg_q_mvar)}, {"ibr", vec_json(sol.ibr_q_mvar)}};
    if (std::isfinite(sol.tsi_estimate)) j["tsi_estimate"] = sol.tsi_estimate;
    j["kkt_residuals"] = {{"feasibility", sol.feascond},
                          {"gradient", sol.gradcond},
                          {"complementarity", sol.compcond}};
    j["strategy_features"] = vec_json(sol.strategy_features(fc));
    write_json(fs::path(a.common.out_dir) / a.out, j);
    std::cout << (sol.converged ? "converged" : "NOT converged") << ", cost " << sol.cost
              << " $/h, iterations " << sol.iterations << "\n";
    return sol.converged ? 0 : 1;
}

// ------------------------------------------------------------ control ----

struct ControlArgs {
    CommonArgs common;
    std::string case_path, fault_path, net_c, net_e;
    std::string log_out = "control_log.csv", strategy_out = "strategy.json";
    double pct_ibr = 20.0, pct_sg = 8.0, pct_load = 10.0;
    double zeta = 1.0, lambda_max = 90.0;
    long budget_domains = 200000;
    double budget_seconds = 120.0;
};

int run_control(const ControlArgs& a, int argc, char** argv) {
    Manifest mf("control", a.common, argc, argv);
    PowerSystemCase cs = load_case(a.case_path);
    FaultScenario fault = load_fault(a.fault_path);
    Network net_c = load_network(a.net_c);
    Network net_e = load_network(a.net_e);
    InjectionSpec fc = base_injections(cs);
    ControlConfig cfg;
    cfg.pct_ibr = a.pct_ibr;
    cfg.pct_sg = a.pct_sg;
    cfg.pct_load = a.pct_load;
    cfg.zeta = a.zeta;
    cfg.lambda_right = a.lambda_max;
    cfg.verify.pgd.seed = a.common.seed;
    cfg.verify.bab.max_domains = a.budget_domains;
    cfg.verify.bab.max_seconds = a.budget_seconds;
    ControlStrategy strat = run_preventive_control(cs, fc, fault, net_c, net_e, cfg);
    save_control_log_csv(strat.log, (fs::path(a.common.out_dir) / a.log_out).string());
    nlohmann::json j;
    j["certified"] = strat.certified;
    j["lambda"] = strat.lambda;
    j["status"] = to_string(strat.status);
    j["cost"] = strat.cost;
    if (strat.certified) j["features"] = vec_json(strat.features);
    if (std::isfinite(strat.tds_tsi)) j["tds_tsi"] = strat.tds_tsi;
    if (!strat.message.empty()) j["message"] = strat.message;
    write_json(fs::path(a.common.out_dir) / a.strategy_out, j);
    for (const auto& r : strat.log)
        std::cout << "ite " << r.ite << ": lambda " << r.lambda << ", converged "
                  << (r.converged ? "True" : "False") << ", " << to_string(r.status) << ", cost "
                  << r.cost << ", tsi " << r.tsi << "\n";
    if (!strat.certified) {
        std::cout << strat.message << "\n";
        return 1;
    }
    std::cout << "certified at lambda " << strat.lambda << " (" << to_string(strat.status)
              << "), cost " << strat.cost << ", TDS re-validation TSI " << strat.tds_tsi << "\n";
    return 0;
}

// ----------------------------------------------------------- simulate ----

struct SimulateArgs {
    CommonArgs common;
    std::string case_path, fault_path, strategy_path, out = "trajectory.csv";
};

int run_simulate(const SimulateArgs& a, int argc, char** argv) {
    Manifest mf("simulate", a.common, argc, argv);
    PowerSystemCase cs = load_case(a.case_path);
    FaultScenario fault = load_fault(a.fault_path);
    InjectionSpec inj = base_injections(cs);
    if (!a.strategy_path.empty()) {
        std::ifstream in(a.strategy_path);
        require(in.good(), "simulate: cannot open " + a.strategy_path);
        nlohmann::json j;
        in >> j;
        const auto& f = j.at("features");
        Vec x(static_cast<int>(f.size()));
        for (std::size_t i = 0; i < f.size(); ++i) x(static_cast<int>(i)) = f[i].get<double>();
        inj = strategy_to_injections(cs, x);
    }
    OperatingPoint op = solve_operating_point(cs, inj);
    Trajectory traj = run_tds(cs, op, fault);
    const double tsi = compute_tsi(traj);
    save_trajectory_csv(traj, cs, (fs::path(a.common.out_dir) / a.out).string());
    nlohmann::json j;
    j["tsi"] = tsi;
    j["stable"] = tsi > 0.0;
    j["diverged"] = traj.diverged;
    j["max_angle_gap_deg"] = max_angle_gap_deg(traj);
    write_json(fs::path(a.common.out_dir) / "simulate.json", j);
    std::cout << "TSI " << tsi << " (" << (tsi > 0.0 ? "stable" : "unstable") << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stabcert: certified transient-stability preventive control"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    GenArgs gen;
    auto* cmd_gen = app.add_subcommand("gen", "Sample and label operating scenarios");
    add_common(cmd_gen, gen.common);
    cmd_gen->add_option("--case", gen.case_path, "Power system case JSON")->required();
    cmd_gen->add_option("--fault", gen.fault_path, "Fault scenario JSON")->required();
    cmd_gen->add_option("--count", gen.count, "Number of scenarios");
    cmd_gen->add_option("--pct-ibr", gen.pct_ibr, "IBR sampling range, percent");
    cmd_gen->add_option("--pct-sg", gen.pct_sg, "SG sampling range, percent");
    cmd_gen->add_option("--pct-load", gen.pct_load, "Load sampling range, percent");
    cmd_gen->add_option("--out", gen.out, "Dataset CSV filename");

    TrainArgs tr;
    auto* cmd_train = app.add_subcommand("train", "Train a surrogate network");
    add_common(cmd_train, tr.common);
    cmd_train->add_option("--data", tr.data_path, "Dataset CSV")->required();
    cmd_train->add_option("--type", tr.type, "c (classifier) or e (estimator)")
        ->check(CLI::IsMember({"c", "e"}));
    cmd_train->add_option("--hidden", tr.hidden, "Hidden layer sizes");
    cmd_train->add_option("--epochs", tr.epochs, "Training epochs");
    cmd_train->add_option("--batch", tr.batch, "Minibatch size");
    cmd_train->add_option("--lr", tr.lr, "Learning rate");
    cmd_train->add_option("--out", tr.out, "Network JSON filename");

    AttackArgs atk;
    auto* cmd_attack = app.add_subcommand("attack", "PGD adversarial search in a ball");
    add_common(cmd_attack, atk.common);
    cmd_attack->add_option("--network", atk.network, "Classifier network JSON")->required();
    cmd_attack->add_option("--center", atk.center, "Ball center, comma-separated")->required();
    cmd_attack->add_option("--radii", atk.radii, "Ball radii, comma-separated")->required();
    cmd_attack->add_option("--steps", atk.steps, "PGD steps");
    cmd_attack->add_option("--eta", atk.eta, "Step size as a fraction of the radii");
    cmd_attack->add_option("--restarts", atk.restarts, "Random restarts");
    cmd_attack->add_flag("--unscaled-step", atk.unscaled, "Raw sign steps of size eta");
    cmd_attack->add_option("--out", atk.out, "Result JSON filename");

    VerifyArgs vf;
    auto* cmd_verify = app.add_subcommand("verify", "PGD, then alpha-CROWN, then BaB beta-CROWN");
    add_common(cmd_verify, vf.common);
    cmd_verify->add_option("--network", vf.network, "Classifier network JSON")->required();
    cmd_verify->add_option("--center", vf.center, "Ball center, comma-separated")->required();
    cmd_verify->add_option("--radii", vf.radii, "Ball radii, comma-separated");
    cmd_verify->add_option("--case", vf.case_path, "Case JSON for percent-based balls");
    cmd_verify->add_option("--pct-ibr", vf.pct_ibr, "IBR radius, percent of center");
    cmd_verify->add_option("--pct-sg", vf.pct_sg, "SG radius, percent of center");
    cmd_verify->add_option("--pct-load", vf.pct_load, "Load radius, percent of center");
    cmd_verify->add_flag("--no-pgd", vf.no_pgd, "Skip the PGD stage");
    cmd_verify->add_option("--budget-domains", vf.budget_domains, "BaB domain budget");
    cmd_verify->add_option("--budget-seconds", vf.budget_seconds, "BaB time budget");
    cmd_verify->add_option("--out", vf.out, "Result JSON filename");

    OpfArgs opf;
    auto* cmd_opf = app.add_subcommand("opf", "Stability-constrained optimal power flow");
    add_common(cmd_opf, opf.common);
    cmd_opf->add_option("--case", opf.case_path, "Case JSON")->required();
    cmd_opf->add_option("--network", opf.network, "Estimator network JSON");
    cmd_opf->add_option("--lambda", opf.lambda, "Required TSI margin");
    cmd_opf->add_flag("--disable-nn", opf.disable_nn, "Drop the stability constraint");
    cmd_opf->add_option("--out", opf.out, "Result JSON filename");

    ControlArgs ctl;
    auto* cmd_control = app.add_subcommand("control", "Bisection on the stability margin");
    add_common(cmd_control, ctl.common);
    cmd_control->add_option("--case", ctl.case_path, "Case JSON")->required();
    cmd_control->add_option("--fault", ctl.fault_path, "Fault scenario JSON")->required();
    cmd_control->add_option("--net-c", ctl.net_c, "Classifier network JSON")->required();
    cmd_control->add_option("--net-e", ctl.net_e, "Estimator network JSON")->required();
    cmd_control->add_option("--pct-ibr", ctl.pct_ibr, "IBR ball radius, percent");
    cmd_control->add_option("--pct-sg", ctl.pct_sg, "SG ball radius, percent");
    cmd_control->add_option("--pct-load", ctl.pct_load, "Load ball radius, percent");
    cmd_control->add_option("--zeta", ctl.zeta, "Bisection termination tolerance");
    cmd_control->add_option("--lambda-max", ctl.lambda_max, "Upper end of the margin range");
    cmd_control->add_option("--budget-domains", ctl.budget_domains, "BaB domain budget");
    cmd_control->add_option("--budget-seconds", ctl.budget_seconds, "BaB time budget");
    cmd_control->add_option("--log-out", ctl.log_out, "Iteration CSV filename");
    cmd_control->add_option("--strategy-out", ctl.strategy_out, "Strategy JSON filename");

    SimulateArgs sim;
    auto* cmd_sim = app.add_subcommand("simulate", "Time-domain simulation and TSI");
    add_common(cmd_sim, sim.common);
    cmd_sim->add_option("--case", sim.case_path, "Case JSON")->required();
    cmd_sim->add_option("--fault", sim.fault_path, "Fault scenario JSON")->required();
    cmd_sim->add_option("--strategy", sim.strategy_path, "Strategy JSON to dispatch");
    cmd_sim->add_option("--out", sim.out, "Trajectory CSV filename");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen(gen, argc, argv);
        if (cmd_train->parsed()) return run_train(tr, argc, argv);
        if (cmd_attack->parsed()) return run_attack(atk, argc, argv);
        if (cmd_verify->parsed()) return run_verify(vf, argc, argv);
        if (cmd_opf->parsed()) return run_opf(opf, argc, argv);
        if (cmd_control->parsed()) return run_control(ctl, argc, argv);
        if (cmd_sim->parsed()) return run_simulate(sim, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
