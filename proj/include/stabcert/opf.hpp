#pragma once

#include "stabcert/dataset.hpp"
#include "stabcert/network.hpp"
#include "stabcert/power_flow.hpp"

namespace stabcert {

struct OpfOptions {
    double lambda = 0.0;       // required surrogate TSI margin
    bool use_nn = true;        // false: plain OPF, constraint omitted
    double tol = 1e-6;
    int max_iter = 150;
    double sigma = 0.1;        // barrier reduction
    double step_scale = 0.995; // fraction-to-boundary
    double z0 = 0.1;           // slack floor and initial barrier
    bool gn_curvature = true;  // Gauss-Newton curvature for the NN row
    double nn_slack = 1e-6;    // strict ">" realized as ">= lambda + slack"
};

struct OpfSolution {
    bool converged = false;
    int iterations = 0;
    double cost = 0.0;
    Vec theta, vm;                       // per bus
    Vec sg_p_mw, sg_q_mvar;              // per SG
    Vec ibr_p_mw, ibr_q_mvar;            // per IBR
    double tsi_estimate = std::numeric_limits<double>::quiet_NaN();
    double feascond = 0.0, gradcond = 0.0, compcond = 0.0;

    /// The control strategy features [P_IBR, P_SG, Pd, Qd] in MW/MVAr.
    Vec strategy_features(const InjectionSpec& forecast) const {
        Vec x(ibr_p_mw.size() + sg_p_mw.size() + forecast.pd_mw.size() + forecast.qd_mvar.size());
        int o = 0;
        x.segment(o, ibr_p_mw.size()) = ibr_p_mw;
        o += static_cast<int>(ibr_p_mw.size());
        x.segment(o, sg_p_mw.size()) = sg_p_mw;
        o += static_cast<int>(sg_p_mw.size());
        x.segment(o, forecast.pd_mw.size()) = forecast.pd_mw;
        o += static_cast<int>(forecast.pd_mw.size());
        x.segment(o, forecast.qd_mvar.size()) = forecast.qd_mvar;
        return x;
    }
};

/// Variable layout and constraint assembly for the stability-constrained
/// OPF. Variables, per-unit: [theta(non-slack), Vm(all), P_SG, Q_SG,
/// P_IBR, Q_IBR]. Degenerate boxes become equality rows.
class OpfModel {
public:
    OpfModel(const PowerSystemCase& cs, const InjectionSpec& forecast, const Network* net_e,
             const OpfOptions& opt)
        : cs_(cs), forecast_(forecast), net_e_(net_e), opt_(opt), lay_(cs) {
        require(forecast.ibr_p_mw.size() == static_cast<int>(cs.ibrs.size()) &&
                    forecast.pd_mw.size() == static_cast<int>(cs.loads.size()) &&
                    forecast.qd_mvar.size() == static_cast<int>(cs.loads.size()),
                "opf: forecast dimensions do not match case");
        if (opt_.use_nn) {
            require(net_e_ != nullptr, "opf: NN constraint enabled but no network given");
            require(net_e_->head() == Head::RegressorScalar, "opf: estimator head required");
            require(net_e_->input_dim() == lay_.dim(),
                    "opf: estimator input layout does not match case");
        }
        n_ = cs.n_buses();
        slack_ = cs.slack_index();
        nsg_ = static_cast<int>(cs.sgs.size());
        nibr_ = static_cast<int>(cs.ibrs.size());
        nl_ = static_cast<int>(cs.lines.size());
        nth_ = n_ - 1;
        nv_ = nth_ + n_ + 2 * nsg_ + 2 * nibr_;
        build_boxes();
        ybus_ = cs.ybus();
    }

    int n_vars() const { return nv_; }
    int n_eq() const { return 2 * n_ + static_cast<int>(fixed_idx_.size()); }
    int n_ineq() const {
        return static_cast<int>(box_idx_.size()) * 2 + 4 * nl_ + nibr_ + (opt_.use_nn ? 1 : 0);
    }

    int theta_var(int bus) const { return bus < slack_ ? bus : (bus == slack_ ? -1 : bus - 1); }
    int vm_var(int bus) const { return nth_ + bus; }
    int psg_var(int g) const { return nth_ + n_ + g; }
    int qsg_var(int g) const { return nth_ + n_ + nsg_ + g; }
    int pibr_var(int r) const { return nth_ + n_ + 2 * nsg_ + r; }
    int qibr_var(int r) const { return nth_ + n_ + 2 * nsg_ + nibr_ + r; }

    Vec initial_point() const {
        Vec x = Vec::Zero(nv_);
        for (int i = 0; i < n_; ++i) {
            const auto& b = cs_.buses[static_cast<std::size_t>(i)];
            x(vm_var(i)) = std::clamp(1.0, b.v_min, b.v_max);
        }
        for (int g = 0; g < nsg_; ++g) {
            const auto& sg = cs_.sgs[static_cast<std::size_t>(g)];
            x(psg_var(g)) = 0.5 * (sg.p_min + sg.p_max) / cs_.base_mva;
            x(qsg_var(g)) = 0.5 * (sg.q_min + sg.q_max) / cs_.base_mva;
        }
        for (int r = 0; r < nibr_; ++r) {
            x(pibr_var(r)) = 0.5 * pibr_cap_(r);
            x(qibr_var(r)) = 0.0;
        }
        for (const auto& [var, val] : fixed_idx_) x(var) = val;
        return x;
    }

    /// Dispatch and curtailment cost in $/h, exact analytic derivatives.
    double objective(const Vec& x, Vec* grad = nullptr, Vec* hess_diag = nullptr) const {
        const double base = cs_.base_mva;
        double f = 0.0;
        if (grad) *grad = Vec::Zero(nv_);
        if (hess_diag) *hess_diag = Vec::Zero(nv_);
        for (int g = 0; g < nsg_; ++g) {
            const auto& sg = cs_.sgs[static_cast<std::size_t>(g)];
            const double p_mw = x(psg_var(g)) * base;
            f += sg.cost_a * p_mw * p_mw + sg.cost_b * p_mw + sg.cost_c;
            if (grad) (*grad)(psg_var(g)) = (2.0 * sg.cost_a * p_mw + sg.cost_b) * base;
            if (hess_diag) (*hess_diag)(psg_var(g)) = 2.0 * sg.cost_a * base * base;
        }
        for (int r = 0; r < nibr_; ++r) {
            const auto& ibr = cs_.ibrs[static_cast<std::size_t>(r)];
            const double p_mw = x(pibr_var(r)) * base;
            f += ibr.curtail_cost * (forecast_.ibr_p_mw(r) - p_mw);
            if (grad) (*grad)(pibr_var(r)) = -ibr.curtail_cost * base;
        }
        return f;
    }

    /// NN features (MW) assembled from the variables plus fixed loads.
    Vec features(const Vec& x) const {
        InjectionSpec s;
        const double base = cs_.base_mva;
        s.ibr_p_mw = Vec(nibr_);
        for (int r = 0; r < nibr_; ++r) s.ibr_p_mw(r) = x(pibr_var(r)) * base;
        s.sg_p_mw = Vec(nsg_);
        for (int g = 0; g < nsg_; ++g) s.sg_p_mw(g) = x(psg_var(g)) * base;
        s.pd_mw = forecast_.pd_mw;
        s.qd_mvar = forecast_.qd_mvar;
        return lay_.pack(s);
    }

    /// Stability constraint value lambda - TSI_est(x) and its gradient over
    /// the OPF variables (loads are parameters).
    double nn_constraint(const Vec& x, double lambda, Vec* grad = nullptr) const {
        require(net_e_ != nullptr, "nn_constraint: no estimator network");
        const Vec feat = features(x);
        double tsi = 0.0;
        const Vec gfeat = net_e_->input_gradient(feat, &tsi);
        if (grad) {
            *grad = Vec::Zero(nv_);
            const double base = cs_.base_mva;
            for (int r = 0; r < nibr_; ++r)
                (*grad)(pibr_var(r)) = -gfeat(lay_.ibr_offset() + r) * base;
            for (int g = 0; g < nsg_; ++g)
                (*grad)(psg_var(g)) = -gfeat(lay_.sg_offset() + g) * base;
        }
        return lambda - tsi;
    }

    double tsi_estimate(const Vec& x) const {
        if (!net_e_) return std::numeric_limits<double>::quiet_NaN();
        return net_e_->forward(features(x))(0);
    }

    void equalities(const Vec& x, Vec& g, Mat& Jg) const {
        g = Vec::Zero(n_eq());
        Jg = Mat::Zero(n_eq(), nv_);
        Vec p, q;
        bus_injection_jacobian(x, p, q, &Jg);
        const double inv = 1.0;
        for (int i = 0; i < n_; ++i) {
            g(i) = p(i) * inv;
            g(n_ + i) = q(i) * inv;
        }
        for (std::size_t l = 0; l < cs_.loads.size(); ++l) {
            const int bi = cs_.bus_index(cs_.loads[l].bus);
            g(bi) += forecast_.pd_mw(static_cast<int>(l)) / cs_.base_mva;
            g(n_ + bi) += forecast_.qd_mvar(static_cast<int>(l)) / cs_.base_mva;
        }
        for (int gi = 0; gi < nsg_; ++gi) {
            const int bi = cs_.bus_index(cs_.sgs[static_cast<std::size_t>(gi)].bus);
            g(bi) -= x(psg_var(gi));
            g(n_ + bi) -= x(qsg_var(gi));
            Jg(bi, psg_var(gi)) = -1.0;
            Jg(n_ + bi, qsg_var(gi)) = -1.0;
        }
        for (int r = 0; r < nibr_; ++r) {
            const int bi = cs_.bus_index(cs_.ibrs[static_cast<std::size_t>(r)].bus);
            g(bi) -= x(pibr_var(r));
            g(n_ + bi) -= x(qibr_var(r));
            Jg(bi, pibr_var(r)) = -1.0;
            Jg(n_ + bi, qibr_var(r)) = -1.0;
        }
        int row = 2 * n_;
        for (const auto& [var, val] : fixed_idx_) {
            g(row) = x(var) - val;
            Jg(row, var) = 1.0;
            ++row;
        }
    }

    void inequalities(const Vec& x, Vec& h, Mat& Jh) const {
        h = Vec::Zero(n_ineq());
        Jh = Mat::Zero(n_ineq(), nv_);
        int row = 0;
        for (const auto& bx : box_idx_) {
            h(row) = x(bx.var) - bx.hi;
            Jh(row, bx.var) = 1.0;
            ++row;
            h(row) = bx.lo - x(bx.var);
            Jh(row, bx.var) = -1.0;
            ++row;
        }
        Vec pf(nl_), pt(nl_);
        Mat Jf(nl_, nv_), Jt(nl_, nv_);
        line_flows(x, pf, pt, &Jf, &Jt);
        for (int l = 0; l < nl_; ++l) {
            const double cap = cs_.lines[static_cast<std::size_t>(l)].rating_mw / cs_.base_mva;
            h(row) = pf(l) - cap;
            Jh.row(row) = Jf.row(l);
            ++row;
            h(row) = -pf(l) - cap;
            Jh.row(row) = -Jf.row(l);
            ++row;
            h(row) = pt(l) - cap;
            Jh.row(row) = Jt.row(l);
            ++row;
            h(row) = -pt(l) - cap;
            Jh.row(row) = -Jt.row(l);
            ++row;
        }
        for (int r = 0; r < nibr_; ++r) {
            const double s_cap = cs_.ibrs[static_cast<std::size_t>(r)].s_rated_mva / cs_.base_mva;
            const double p = x(pibr_var(r)), q = x(qibr_var(r));
            h(row) = p * p + q * q - s_cap * s_cap;
            Jh(row, pibr_var(r)) = 2.0 * p;
            Jh(row, qibr_var(r)) = 2.0 * q;
            ++row;
        }
        if (opt_.use_nn) {
            Vec gnn;
            h(row) = nn_constraint(x, opt_.lambda + opt_.nn_slack, &gnn);
            Jh.row(row) = gnn.transpose();
            ++row;
        }
    }

    /// Hessian of f + lambda_eq.g + mu.h. Power-flow and line-flow blocks
    /// come from central differences of the analytic gradients; the IBR
    /// circle is analytic; the NN row uses a Gauss-Newton outer product
    /// weighted by its multiplier.
    Mat lagrangian_hessian(const Vec& x, const Vec& lam, const Vec& mu) const {
        Mat H = Mat::Zero(nv_, nv_);
        Vec grad, hdiag;
        objective(x, &grad, &hdiag);
        H.diagonal() += hdiag;

        // theta/Vm block by finite differences of the weighted gradient.
        const int ntv = nth_ + n_;
        Vec w_p = lam.head(n_), w_q = lam.segment(n_, n_);
        Vec mu_line = mu.segment(static_cast<int>(box_idx_.size()) * 2, 4 * nl_);
        Vec xt = x;
        for (int k = 0; k < ntv; ++k) {
            const int var = k;  // tv variables occupy the first nth_+n_ slots
            const double step = 1e-6 * std::max(1.0, std::abs(x(var)));
            xt(var) = x(var) + step;
            Vec gp = weighted_tv_gradient(xt, w_p, w_q, mu_line);
            xt(var) = x(var) - step;
            Vec gm = weighted_tv_gradient(xt, w_p, w_q, mu_line);
            xt(var) = x(var);
            H.block(0, var, ntv, 1) += (gp - gm) / (2.0 * step);
        }

        int row = static_cast<int>(box_idx_.size()) * 2 + 4 * nl_;
        for (int r = 0; r < nibr_; ++r) {
            H(pibr_var(r), pibr_var(r)) += 2.0 * mu(row);
            H(qibr_var(r), qibr_var(r)) += 2.0 * mu(row);
            ++row;
        }
        if (opt_.use_nn && opt_.gn_curvature) {
            Vec gnn;
            nn_constraint(x, opt_.lambda + opt_.nn_slack, &gnn);
            H += mu(row) * (gnn * gnn.transpose());
        }
        Mat Hs = 0.5 * (H + H.transpose());
        return Hs;
    }

    const std::vector<std::pair<int, double>>& fixed_vars() const { return fixed_idx_; }

private:
    struct BoxIneq {
        int var;
        double lo, hi;
    };

    void build_boxes() {
        auto add = [&](int var, double lo, double hi) {
            require(lo <= hi + 1e-12, "opf: box with lo > hi");
            if (hi - lo < 1e-9)
                fixed_idx_.emplace_back(var, 0.5 * (lo + hi));
            else
                box_idx_.push_back({var, lo, hi});
        };
        const double base = cs_.base_mva;
        for (int i = 0; i < n_; ++i) {
            const auto& b = cs_.buses[static_cast<std::size_t>(i)];
            add(vm_var(i), b.v_min, b.v_max);
        }
        for (int g = 0; g < nsg_; ++g) {
            const auto& sg = cs_.sgs[static_cast<std::size_t>(g)];
            add(psg_var(g), sg.p_min / base, sg.p_max / base);
            add(qsg_var(g), sg.q_min / base, sg.q_max / base);
        }
        pibr_cap_ = Vec(nibr_);
        for (int r = 0; r < nibr_; ++r) {
            const auto& ibr = cs_.ibrs[static_cast<std::size_t>(r)];
            pibr_cap_(r) = std::min(forecast_.ibr_p_mw(r), ibr.s_rated_mva) / base;
            add(pibr_var(r), 0.0, pibr_cap_(r));
        }
    }

    void theta_vm(const Vec& x, Vec& theta, Vec& vm) const {
        theta = Vec::Zero(n_);
        vm = Vec(n_);
        for (int i = 0; i < n_; ++i) {
            if (i != slack_) theta(i) = x(theta_var(i));
            vm(i) = x(vm_var(i));
        }
    }

    /// Bus injections P_bus, Q_bus and their Jacobian w.r.t. theta and Vm,
    /// written into the top 2n rows of Jg when given.
    void bus_injection_jacobian(const Vec& x, Vec& p, Vec& q, Mat* Jg) const {
        Vec theta, vm;
        theta_vm(x, theta, vm);
        detail::bus_injections(ybus_, theta, vm, p, q);
        if (!Jg) return;
        for (int i = 0; i < n_; ++i) {
            for (int k = 0; k < n_; ++k) {
                const double gg = ybus_(i, k).real(), bb = ybus_(i, k).imag();
                if (gg == 0.0 && bb == 0.0 && i != k) continue;
                const double dth = theta(i) - theta(k);
                const double cs = std::cos(dth), sn = std::sin(dth);
                double dp_dthk, dq_dthk, dp_dvk, dq_dvk;
                if (i == k) {
                    dp_dthk = -q(i) - bb * vm(i) * vm(i);
                    dq_dthk = p(i) - gg * vm(i) * vm(i);
                    dp_dvk = p(i) / vm(i) + gg * vm(i);
                    dq_dvk = q(i) / vm(i) - bb * vm(i);
                } else {
                    dp_dthk = vm(i) * vm(k) * (gg * sn - bb * cs);
                    dq_dthk = -vm(i) * vm(k) * (gg * cs + bb * sn);
                    dp_dvk = vm(i) * (gg * cs + bb * sn);
                    dq_dvk = vm(i) * (gg * sn - bb * cs);
                }
                if (k != slack_) {
                    (*Jg)(i, theta_var(k)) += dp_dthk;
                    (*Jg)(n_ + i, theta_var(k)) += dq_dthk;
                }
                (*Jg)(i, vm_var(k)) += dp_dvk;
                (*Jg)(n_ + i, vm_var(k)) += dq_dvk;
            }
        }
    }

    void line_flows(const Vec& x, Vec& pf, Vec& pt, Mat* Jf, Mat* Jt) const {
        Vec theta, vm;
        theta_vm(x, theta, vm);
        if (Jf) Jf->setZero();
        if (Jt) Jt->setZero();
        for (int l = 0; l < nl_; ++l) {
            const auto& ln = cs_.lines[static_cast<std::size_t>(l)];
            const int i = cs_.bus_index(ln.from), j = cs_.bus_index(ln.to);
            const std::complex<double> ys = 1.0 / std::complex<double>(ln.r, ln.x);
            const double gs = ys.real(), bs = ys.imag();
            const double dth = theta(i) - theta(j);
            const double cs = std::cos(dth), sn = std::sin(dth);
            pf(l) = gs * vm(i) * vm(i) - vm(i) * vm(j) * (gs * cs + bs * sn);
            pt(l) = gs * vm(j) * vm(j) - vm(i) * vm(j) * (gs * cs - bs * sn);
            if (!Jf) continue;
            const double df_dthi = vm(i) * vm(j) * (gs * sn - bs * cs);
            const double df_dvi = 2.0 * gs * vm(i) - vm(j) * (gs * cs + bs * sn);
            const double df_dvj = -vm(i) * (gs * cs + bs * sn);
            const double dt_dthi = -vm(i) * vm(j) * (gs * sn + bs * cs);
            const double dt_dvi = -vm(j) * (gs * cs - bs * sn);
            const double dt_dvj = 2.0 * gs * vm(j) - vm(i) * (gs * cs - bs * sn);
            if (i != slack_) {
                (*Jf)(l, theta_var(i)) = df_dthi;
                (*Jt)(l, theta_var(i)) = dt_dthi;
            }
            if (j != slack_) {
                (*Jf)(l, theta_var(j)) = -df_dthi;
                (*Jt)(l, theta_var(j)) = -dt_dthi;
            }
            (*Jf)(l, vm_var(i)) = df_dvi;
            (*Jf)(l, vm_var(j)) = df_dvj;
            (*Jt)(l, vm_var(i)) = dt_dvi;
            (*Jt)(l, vm_var(j)) = dt_dvj;
        }
    }

    /// Gradient over (theta, Vm) of w_p.P_bus + w_q.Q_bus + mu_line.P_lines.
    Vec weighted_tv_gradient(const Vec& x, const Vec& w_p, const Vec& w_q,
                             const Vec& mu_line) const {
        Vec p, q;
        Mat Jg = Mat::Zero(2 * n_, nv_);
        {
            Mat full = Mat::Zero(n_eq(), nv_);
            bus_injection_jacobian(x, p, q, &full);
            Jg = full.topRows(2 * n_);
        }
        Vec pf(nl_), pt(nl_);
        Mat Jf(nl_, nv_), Jt(nl_, nv_);
        line_flows(x, pf, pt, &Jf, &Jt);
        const int ntv = nth_ + n_;
        Vec gvec = Vec::Zero(ntv);
        gvec += (Jg.topRows(n_).leftCols(ntv).transpose() * w_p);
        gvec += (Jg.bottomRows(n_).leftCols(ntv).transpose() * w_q);
        for (int l = 0; l < nl_; ++l) {
            gvec += mu_line(4 * l + 0) * Jf.row(l).head(ntv).transpose();
            gvec -= mu_line(4 * l + 1) * Jf.row(l).head(ntv).transpose();
            gvec += mu_line(4 * l + 2) * Jt.row(l).head(ntv).transpose();
            gvec -= mu_line(4 * l + 3) * Jt.row(l).head(ntv).transpose();
        }
        return gvec;
    }

    const PowerSystemCase& cs_;
    InjectionSpec forecast_;
    const Network* net_e_;
    OpfOptions opt_;
    FeatureLayout lay_;
    Eigen::MatrixXcd ybus_;
    int n_ = 0, slack_ = 0, nsg_ = 0, nibr_ = 0, nl_ = 0, nth_ = 0, nv_ = 0;
    std::vector<BoxIneq> box_idx_;
    std::vector<std::pair<int, double>> fixed_idx_;
    Vec pibr_cap_;
};

/// Primal-dual interior-point iterations on the barrier KKT system with
/// fraction-to-boundary step control. Returns the final iterate whether or
/// not it converged; the control loop inspects the flag.
inline OpfSolution pdipm_solve(const PowerSystemCase& cs, const InjectionSpec& forecast,
                               const Network* net_e, const OpfOptions& opt_in) {
    OpfOptions opt = opt_in;
    if (opt.lambda <= -1e8) opt.use_nn = false;  // -inf sentinel disables the row
    OpfModel model(cs, forecast, net_e, opt);
    const int nx = model.n_vars(), neq = model.n_eq(), nin = model.n_ineq();

    Vec x = model.initial_point();
    Vec lam = Vec::Zero(neq);
    Vec g, h;
    Mat Jg, Jh;
    model.equalities(x, g, Jg);
    model.inequalities(x, h, Jh);
    Vec z(nin), mu(nin);
    for (int i = 0; i < nin; ++i) z(i) = std::max(opt.z0, -h(i));
    for (int i = 0; i < nin; ++i) mu(i) = opt.z0 / z(i);
    double gamma = opt.sigma * z.dot(mu) / std::max(1, nin);

    OpfSolution sol;
    int iter = 0;
    for (; iter <= opt.max_iter; ++iter) {
        Vec grad_f;
        model.objective(x, &grad_f);
        Vec rd = grad_f + Jg.transpose() * lam + Jh.transpose() * mu;

        const double feas =
            std::max(neq ? g.cwiseAbs().maxCoeff() : 0.0, nin ? h.maxCoeff() : 0.0) /
            (1.0 + std::max(x.cwiseAbs().maxCoeff(), nin ? z.maxCoeff() : 0.0));
        const double gradc = rd.cwiseAbs().maxCoeff() /
                             (1.0 + std::max(neq ? lam.cwiseAbs().maxCoeff() : 0.0,
                                             nin ? mu.maxCoeff() : 0.0));
        const double compc = nin ? z.dot(mu) / (1.0 + x.cwiseAbs().maxCoeff()) : 0.0;
        sol.feascond = feas;
        sol.gradcond = gradc;
        sol.compcond = compc;
        if (feas < opt.tol && gradc < opt.tol && compc < opt.tol) {
            sol.converged = true;
            break;
        }
        if (iter == opt.max_iter) break;

        Mat Lxx = model.lagrangian_hessian(x, lam, mu);
        Vec zinv = z.cwiseInverse();
        Mat M = Lxx + Jh.transpose() * (zinv.cwiseProduct(mu)).asDiagonal() * Jh;
        Vec N = rd + Jh.transpose() * (zinv.asDiagonal() * (gamma * Vec::Ones(nin) + mu.cwiseProduct(h)));

        Mat K = Mat::Zero(nx + neq, nx + neq);
        K.topLeftCorner(nx, nx) = M;
        K.topLeftCorner(nx, nx).diagonal().array() += 1e-11;
        K.topRightCorner(nx, neq) = Jg.transpose();
        K.bottomLeftCorner(neq, nx) = Jg;
        K.bottomRightCorner(neq, neq).diagonal().array() -= 1e-11;
        Vec rhs(nx + neq);
        rhs.head(nx) = -N;
        rhs.tail(neq) = -g;
        Vec d = K.partialPivLu().solve(rhs);
        if (!d.allFinite()) throw ConvergenceError("pdipm: singular KKT system", feas);

        const Vec dx = d.head(nx);
        const Vec dlam = d.tail(neq);
        const Vec dz = -h - z - Jh * dx;
        const Vec dmu = -mu + zinv.asDiagonal() * (gamma * Vec::Ones(nin) - mu.cwiseProduct(dz));

        double ap = 1.0, ad = 1.0;
        for (int i = 0; i < nin; ++i) {
            if (dz(i) < 0.0) ap = std::min(ap, -opt.step_scale * z(i) / dz(i));
            if (dmu(i) < 0.0) ad = std::min(ad, -opt.step_scale * mu(i) / dmu(i));
        }
        x += ap * dx;
        z += ap * dz;
        lam += ad * dlam;
        mu += ad * dmu;
        gamma = opt.sigma * z.dot(mu) / std::max(1, nin);

        model.equalities(x, g, Jg);
        model.inequalities(x, h, Jh);
    }

    sol.iterations = iter;
    sol.cost = model.objective(x);
    const int n = cs.n_buses();
    sol.theta = Vec::Zero(n);
    sol.vm = Vec(n);
    for (int i = 0; i < n; ++i) {
        if (i != cs.slack_index()) sol.theta(i) = x(model.theta_var(i));
        sol.vm(i) = x(model.vm_var(i));
    }
    const double base = cs.base_mva;
    sol.sg_p_mw = Vec(static_cast<int>(cs.sgs.size()));
    sol.sg_q_mvar = Vec(static_cast<int>(cs.sgs.size()));
    for (int gi = 0; gi < sol.sg_p_mw.size(); ++gi) {
        sol.sg_p_mw(gi) = x(model.psg_var(gi)) * base;
        sol.sg_q_mvar(gi) = x(model.qsg_var(gi)) * base;
    }
    sol.ibr_p_mw = Vec(static_cast<int>(cs.ibrs.size()));
    sol.ibr_q_mvar = Vec(static_cast<int>(cs.ibrs.size()));
    for (int r = 0; r < sol.ibr_p_mw.size(); ++r) {
        sol.ibr_p_mw(r) = x(model.pibr_var(r)) * base;
        sol.ibr_q_mvar(r) = x(model.qibr_var(r)) * base;
    }
    sol.tsi_estimate = model.tsi_estimate(x);
    return sol;
}

}  // namespace stabcert
