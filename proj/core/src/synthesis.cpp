#include "dcmg/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include <fmt/format.h>

namespace dcmg {

void LmiWeights::validate() const {
    if (!(alpha1 > 0 && alpha2 > 0 && alpha3 > 0)) throw InputError("LMI weights must be positive");
}

void SynthesisOptions::validate() const {
    if (eta && !(*eta > 0)) throw InputError("eta must be positive");
    if (!(feasibility_margin > 0)) throw InputError("feasibility margin must be positive");
    if (!(assumption2_tol > 0)) throw InputError("assumption-2 tolerance must be positive");
    if (!(target_bandwidth_hz >= 0)) throw InputError("target bandwidth must be non-negative");
    weights.validate();
}

double default_eta(const GridGraph& g, DguId id, double tol) {
    const auto& p = g.dgu(id);
    std::vector<LineParams> lines;
    for (const auto& [_, l] : g.attached(id)) lines.push_back(l);
    return default_eta(augmented_dgu(g, id), p, lines, tol);
}

double default_eta(const AugmentedDgu&, const DguParams& p, const std::vector<LineParams>& lines,
                   double tol) {
    double tc = p.r_t * p.c_t;
    if (!lines.empty()) {
        tc = std::numeric_limits<double>::infinity();
        for (const auto& l : lines) tc = std::min(tc, l.r * p.c_t);
    }
    return 1e-2 * tc * tol;
}

RowVector3d reference_gains(const DguParams& p, double bandwidth_hz) {
    const double w = 2.0 * std::numbers::pi * bandwidth_hz;
    const double d2 = 3.0 * w, d1 = 3.0 * w * w, d0 = w * w * w;
    const double lc = p.l_t * p.c_t;
    return {1.0 - lc * d1, p.r_t - p.l_t * d2, lc * d0};
}

namespace {

// Coefficients of det(sI − A) for a 3×3 matrix: s³ + c2 s² + c1 s + c0.
Vector3d charpoly3(const Matrix3d& a) {
    const double c2 = -a.trace();
    const double c1 = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0) + a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0) +
                      a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
    const double c0 = -a.determinant();
    return {c2, c1, c0};
}

Matrix3d closed_loop(const AugmentedDgu& aug, const RowVector3d& k) {
    return aug.a_hat() + aug.b_hat() * k;
}

}  // namespace

bool structurally_certifiable(const AugmentedDgu& aug, const RowVector3d& k) {
    const auto c = charpoly3(closed_loop(aug, k));
    const double a = std::abs(aug.coupling_self_term());
    if (!(c(0) > a)) return false;
    if (a == 0.0) return c(1) > 0.0 && c(1) * c(0) > c(2) && c(2) > 0.0;
    return c(2) > 0.0 && c(1) * (c(0) - a) >= c(2);
}

namespace {

// Variable layout of the scaled problem.
struct Layout {
    bool free_g = true;
    int y22 = 0, y23 = 1, y33 = 2;
    int g0 = 3;  // three entries when free
    int gamma = 0, beta = 0, delta = 0;
    int n = 0;

    explicit Layout(bool free) : free_g(free) {
        int next = free ? 6 : 3;
        gamma = next++;
        beta = next++;
        delta = next++;
        n = next;
    }
};

// Y = T·Ỹ·T with T diagonal, chosen so that Ỹ(1,1) = 1 and the remaining
// entries are of unit order for a typical certificate. The variables γ, β,
// δ are likewise rescaled. All constraints are congruence-transformed so
// the feasible set is exactly that of the unscaled problem.
struct Scaling {
    Vector3d t;
    double sigma;   // scales the scalar row of the gain-bound LMI
    double s_gamma, s_beta, s_delta;
};

Scaling make_scaling(const AugmentedDgu& aug, double eta) {
    const auto& a = aug.base.a;
    const double inv_c = a(0, 1), inv_l = -a(1, 0);
    const double c = 1.0 / inv_c, l = 1.0 / inv_l;
    const double w = 1.0 / std::sqrt(l * c);
    Scaling s;
    s.t = Vector3d(1.0 / std::sqrt(eta), std::sqrt(c / (l * eta)), 1.0 / (w * std::sqrt(eta)));
    s.sigma = std::sqrt(eta);
    s.s_gamma = 1.0 / (eta * w);
    s.s_beta = 1.0 / (eta * eta);
    s.s_delta = w * w * eta;
    return s;
}

struct Formulation {
    const AugmentedDgu* aug = nullptr;
    Layout layout{true};
    Scaling sc{};
    double eta = 0.0;
    std::optional<RowVector3d> kref;
    std::vector<int> forced;  // zero rows of S (0-based)
    std::vector<int> kept;

    Matrix3d y_tilde(const VectorXd& x) const {
        Matrix3d y = Matrix3d::Zero();
        y(0, 0) = 1.0;
        y(1, 1) = x(layout.y22);
        y(1, 2) = y(2, 1) = x(layout.y23);
        y(2, 2) = x(layout.y33);
        return y;
    }
    Matrix3d y_full(const VectorXd& x) const {
        return sc.t.asDiagonal() * y_tilde(x) * sc.t.asDiagonal();
    }
    RowVector3d g_full(const VectorXd& x) const {
        if (layout.free_g)
            return RowVector3d(x(layout.g0), x(layout.g0 + 1), x(layout.g0 + 2)).cwiseProduct(sc.t.transpose()) /
                   sc.sigma;
        return *kref * y_full(x);
    }
    // S̃ = T⁻¹ (ÂY + YÂᵀ + B̂G + GᵀB̂ᵀ) T⁻¹
    Matrix3d s_tilde(const VectorXd& x) const {
        const Matrix3d a = aug->a_hat();
        const Vector3d b = aug->b_hat();
        const Matrix3d y = y_full(x);
        const RowVector3d g = g_full(x);
        const Matrix3d s = a * y + y * a.transpose() + b * g + g.transpose() * b.transpose();
        const Vector3d ti = sc.t.cwiseInverse();
        return ti.asDiagonal() * s * ti.asDiagonal();
    }
    double gamma(const VectorXd& x) const { return x(layout.gamma) * sc.s_gamma; }
    double beta(const VectorXd& x) const { return x(layout.beta) * sc.s_beta; }
    double delta(const VectorXd& x) const { return x(layout.delta) * sc.s_delta; }

    // Each returns a matrix that must be positive (semi)definite.
    MatrixXd lmi_y(const VectorXd& x) const { return y_tilde(x); }
    MatrixXd lmi_stability(const VectorXd& x) const {
        const Matrix3d s = s_tilde(x);
        const Matrix3d y = y_tilde(x);
        const Vector3d tinv2 = sc.t.cwiseInverse().cwiseAbs2();
        const auto nk = static_cast<Eigen::Index>(kept.size());
        MatrixXd m = MatrixXd::Zero(2 * nk, 2 * nk);
        for (Eigen::Index i = 0; i < nk; ++i) {
            for (Eigen::Index j = 0; j < nk; ++j) {
                m(i, j) = s(kept[i], kept[j]);
                m(i, nk + j) = y(kept[i], kept[j]);
                m(nk + i, j) = y(kept[i], kept[j]);
            }
            m(nk + i, nk + i) = -gamma(x) * tinv2(kept[i]);
        }
        return -m;
    }
    MatrixXd lmi_gain(const VectorXd& x) const {
        const Vector3d tinv = sc.t.cwiseInverse();
        const RowVector3d gt = g_full(x).cwiseProduct(tinv.transpose()) * sc.sigma;
        MatrixXd m = MatrixXd::Zero(4, 4);
        m.topLeftCorner(3, 3) = -beta(x) * tinv.cwiseAbs2().asDiagonal().toDenseMatrix();
        m.block(0, 3, 3, 1) = gt.transpose();
        m.block(3, 0, 1, 3) = gt;
        m(3, 3) = -sc.sigma * sc.sigma;
        return -m;
    }
    MatrixXd lmi_delta(const VectorXd& x) const {
        MatrixXd m = MatrixXd::Zero(6, 6);
        m.topLeftCorner(3, 3) = y_tilde(x);
        m.topRightCorner(3, 3) = Matrix3d::Identity();
        m.bottomLeftCorner(3, 3) = Matrix3d::Identity();
        m.bottomRightCorner(3, 3) = delta(x) * sc.t.cwiseAbs2().asDiagonal().toDenseMatrix();
        return m;
    }

    using Fn = std::function<MatrixXd(const VectorXd&)>;
    std::vector<std::pair<std::string, Fn>> lmis() const {
        return {{"Y>0", [this](const VectorXd& x) { return lmi_y(x); }},
                {"stability", [this](const VectorXd& x) { return lmi_stability(x); }},
                {"gain-bound", [this](const VectorXd& x) { return lmi_gain(x); }},
                {"Y-delta", [this](const VectorXd& x) { return lmi_delta(x); }}};
    }

    // Points x of the scaled problem corresponding to stored gains.
    VectorXd point_from(const ControllerGains& g) const {
        VectorXd x = VectorXd::Zero(layout.n);
        const Matrix3d y = g.y();
        const Vector3d ti = sc.t.cwiseInverse();
        const Matrix3d yt = ti.asDiagonal() * y * ti.asDiagonal();
        x(layout.y22) = yt(1, 1);
        x(layout.y23) = yt(1, 2);
        x(layout.y33) = yt(2, 2);
        if (layout.free_g) {
            const RowVector3d gs = g.g().cwiseProduct(ti.transpose()) * sc.sigma;
            for (int i = 0; i < 3; ++i) x(layout.g0 + i) = gs(i);
        }
        x(layout.gamma) = g.gamma / sc.s_gamma;
        x(layout.beta) = g.beta / sc.s_beta;
        x(layout.delta) = g.delta / sc.s_delta;
        return x;
    }
};

Formulation make_formulation(const AugmentedDgu& aug, double eta, std::optional<RowVector3d> kref,
                             bool topology_robust) {
    Formulation f;
    f.aug = &aug;
    f.layout = Layout(!kref.has_value());
    f.sc = make_scaling(aug, eta);
    f.eta = eta;
    f.kref = kref;
    // Forcing the off-diagonal entries of row 1 leaves only the self term
    // 2·a11/η there, so the certificate holds for every a11 ≤ 0.
    if (topology_robust || aug.coupling_self_term() == 0.0) f.forced.push_back(0);
    f.forced.push_back(2);
    for (int i = 0; i < 3; ++i)
        if (std::find(f.forced.begin(), f.forced.end(), i) == f.forced.end()) f.kept.push_back(i);
    return f;
}

sdp::Lmi linearize(const std::string& name, const Formulation::Fn& fn, int n) {
    sdp::Lmi l;
    l.name = name;
    const VectorXd zero = VectorXd::Zero(n);
    l.f0 = fn(zero);
    for (int i = 0; i < n; ++i) {
        VectorXd e = zero;
        e(i) = 1.0;
        MatrixXd fi = fn(e) - l.f0;
        l.f.push_back(0.5 * (fi + fi.transpose()));
    }
    l.f0 = 0.5 * (l.f0 + l.f0.transpose());
    return l;
}

// Linear equalities S̃(f, :) = 0 for every forced row f.
void add_forced_rows(const Formulation& f, sdp::Problem& p) {
    const int n = f.layout.n;
    const VectorXd zero = VectorXd::Zero(n);
    const Matrix3d s0 = f.s_tilde(zero);
    std::vector<Matrix3d> si;
    for (int i = 0; i < n; ++i) {
        VectorXd e = zero;
        e(i) = 1.0;
        si.push_back(f.s_tilde(e) - s0);
    }
    for (int r : f.forced)
        for (int c = 0; c < 3; ++c) {
            if (c < r && std::find(f.forced.begin(), f.forced.end(), c) != f.forced.end()) continue;
            VectorXd row(n);
            for (int i = 0; i < n; ++i) row(i) = si[static_cast<std::size_t>(i)](r, c);
            if (row.cwiseAbs().maxCoeff() == 0.0) continue;
            p.add_equality(row, -s0(r, c));
        }
}

double normalized_min_eig(const MatrixXd& m) {
    const VectorXd d = m.diagonal().cwiseAbs();
    VectorXd w(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) w(i) = d(i) > 0 ? 1.0 / std::sqrt(d(i)) : 1.0;
    const MatrixXd n = w.asDiagonal() * m * w.asDiagonal();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (n + n.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

sdp::Problem build(const Formulation& f, const SynthesisOptions& opts,
                   const std::vector<VectorXd>& margin_diag, double margin) {
    sdp::Problem p;
    p.n = f.layout.n;
    p.cost = VectorXd::Zero(p.n);
    p.cost(f.layout.gamma) = opts.weights.alpha1 * f.sc.s_gamma;
    p.cost(f.layout.beta) = opts.weights.alpha2 * f.sc.s_beta;
    p.cost(f.layout.delta) = opts.weights.alpha3 * f.sc.s_delta;
    // Normalize the objective; the scale does not change the minimizer.
    p.cost /= p.cost.cwiseAbs().maxCoeff();
    const auto fns = f.lmis();
    for (std::size_t k = 0; k < fns.size(); ++k) {
        auto l = linearize(fns[k].first, fns[k].second, p.n);
        if (!margin_diag.empty()) l.f0 -= margin * margin_diag[k].asDiagonal().toDenseMatrix();
        p.lmis.push_back(std::move(l));
    }
    add_forced_rows(f, p);
    return p;
}

ControllerGains gains_from(const Formulation& f, const VectorXd& x) {
    ControllerGains g;
    const Matrix3d y = f.y_full(x);
    g.p = y.inverse();
    g.p = 0.5 * (g.p + g.p.transpose());
    // Exact structure: the (1,1) entry of Y⁻¹ is η whenever Y(1,2:3) = 0.
    g.p(0, 0) = f.eta;
    g.p(0, 1) = g.p(1, 0) = g.p(0, 2) = g.p(2, 0) = 0.0;
    g.k = f.kref ? *f.kref : RowVector3d(f.g_full(x) * g.p);
    g.eta = f.eta;
    g.gamma = f.gamma(x);
    g.beta = f.beta(x);
    g.delta = f.delta(x);
    return g;
}

}  // namespace

SynthesisResult solve_problem_O(const AugmentedDgu& aug, const SynthesisOptions& opts) {
    opts.validate();
    const auto& p = aug.base;
    DguParams params;
    params.c_t = 1.0 / p.a(0, 1);
    params.l_t = -1.0 / p.a(1, 0);
    params.r_t = -p.a(1, 1) * params.l_t;
    params.v_dc = 1.0;

    double eta = 0.0;
    if (opts.eta) {
        eta = *opts.eta;
    } else {
        // Recover R_ij C_t from the coupling blocks: entry = 1/(R_ij C_t).
        double tc = params.r_t * params.c_t;
        if (!aug.coupling.empty()) {
            tc = std::numeric_limits<double>::infinity();
            for (const auto& [_, a] : aug.coupling) tc = std::min(tc, 1.0 / a(0, 0));
        }
        eta = 1e-2 * tc * opts.assumption2_tol;
    }

    if (!check_local_controllability(aug).full())
        return NumericalFailure{aug.id, "(A, B) not controllable; check the electrical parameters"};

    std::optional<RowVector3d> kref;
    if (opts.target_bandwidth_hz > 0.0) kref = reference_gains(params, opts.target_bandwidth_hz);

    const auto f = make_formulation(aug, eta, kref, opts.topology_robust);
    const auto fns = f.lmis();

    // First pass without margin locates the solution; the second imposes the
    // strict inequalities with a margin relative to each LMI's diagonal there.
    auto first = sdp::solve(build(f, opts, {}, 0.0), opts.solver);
    if (first.status == sdp::Status::infeasible)
        return Infeasible{aug.id, first.message};
    if (first.status != sdp::Status::optimal)
        return NumericalFailure{aug.id, first.message + "; retry with a different eta or solver tolerance"};

    std::vector<VectorXd> diag;
    for (const auto& [_, fn] : fns) diag.push_back(fn(first.x).diagonal().cwiseAbs());
    auto second = sdp::solve(build(f, opts, diag, opts.feasibility_margin), opts.solver);
    if (second.status == sdp::Status::infeasible)
        return Infeasible{aug.id, fmt::format("infeasible with margin {:g}: {}", opts.feasibility_margin,
                                              second.message)};
    if (second.status != sdp::Status::optimal)
        return NumericalFailure{aug.id, second.message + "; retry with a smaller feasibility margin"};

    auto g = gains_from(f, second.x);
    g.solver_info = fmt::format("barrier-ipm newton={} mode={} margin={:g}",
                                first.newton_steps + second.newton_steps,
                                kref ? fmt::format("reference@{:g}Hz", opts.target_bandwidth_hz) : "free",
                                opts.feasibility_margin);
    return g;
}

ConstraintCheck check_problem_O_constraints(const AugmentedDgu& aug, const ControllerGains& g,
                                            const SynthesisOptions& opts) {
    ConstraintCheck out;
    const auto f = make_formulation(aug, g.eta, std::nullopt, opts.topology_robust);
    const VectorXd x = f.point_from(g);
    out.worst_slack = std::numeric_limits<double>::infinity();
    for (const auto& [name, fn] : f.lmis()) {
        const double s = normalized_min_eig(fn(x));
        if (s < out.worst_slack) {
            out.worst_slack = s;
            out.worst_constraint = name;
        }
    }
    const Matrix3d s = f.s_tilde(x);
    double scale = s.cwiseAbs().maxCoeff();
    double resid = 0.0;
    // S(1,1) = 2·a11/η involves no variable and is never forced.
    for (int r : f.forced)
        for (int c = 0; c < 3; ++c)
            if (r != 0 || c != 0) resid = std::max(resid, std::abs(s(r, c)));
    out.equality_residual = scale > 0 ? resid / scale : resid;
    out.feasible = out.worst_slack > 0.0 && out.equality_residual < 1e-8;
    return out;
}

CertificateReport verify_certificate(const AugmentedDgu& aug, const ControllerGains& g, double margin) {
    CertificateReport r;
    const Matrix3d p = 0.5 * (g.p + g.p.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix3d> pe(p);
    r.p_min_eig = pe.eigenvalues().minCoeff();
    r.p_positive = r.p_min_eig > 0.0;

    const double pscale = p.cwiseAbs().maxCoeff();
    r.structure_deviation = std::max({std::abs(p(0, 0) - g.eta) / std::max(g.eta, 1e-300),
                                      std::abs(p(0, 1)) / pscale, std::abs(p(0, 2)) / pscale});
    r.structure_ok = r.structure_deviation <= 1e-12;

    const Matrix3d acl = closed_loop(aug, g.k);
    const Matrix3d w = acl.transpose() * p + p * acl;
    Eigen::SelfAdjointEigenSolver<Matrix3d> we(0.5 * (w + w.transpose()));
    r.lyapunov_lambda_max = we.eigenvalues().maxCoeff();
    r.lyapunov_resolution = 8.0 * std::numeric_limits<double>::epsilon() * we.eigenvalues().cwiseAbs().maxCoeff();

    // Unit-free form: D·W·D with D = diag(|W_ii|^-1/2).
    Vector3d d;
    for (int i = 0; i < 3; ++i) d(i) = std::abs(w(i, i)) > 0 ? 1.0 / std::sqrt(std::abs(w(i, i))) : 1.0;
    const Matrix3d wn = d.asDiagonal() * w * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix3d> wne(0.5 * (wn + wn.transpose()));
    r.kernel_residual = std::max(0.0, wne.eigenvalues().maxCoeff());

    // Rows 3 (and 1 without lines) of the Y-form vanish; the remaining
    // coordinates must see strict decrease.
    std::vector<int> kept;
    if (aug.coupling_self_term() != 0.0) kept.push_back(0);
    kept.push_back(1);
    MatrixXd wk(kept.size(), kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i)
        for (std::size_t j = 0; j < kept.size(); ++j) wk(i, j) = wn(kept[i], kept[j]);
    Eigen::SelfAdjointEigenSolver<MatrixXd> ke(wk);
    r.lyapunov_margin = -ke.eigenvalues().maxCoeff();

    // LaSalle: the largest invariant set inside ker W is the origin.
    MatrixXd obs(9, 3);
    obs << w, w * acl, w * acl * acl;
    r.kernel_observable = numerical_rank(obs) == 3;
    r.lyapunov_ok = r.p_positive && r.lyapunov_margin >= margin && r.kernel_residual <= 1e-9 &&
                    r.kernel_observable;

    r.gain_norm = g.k.norm();
    r.gain_bound = std::sqrt(g.beta) * g.delta;
    r.gain_ok = r.gain_norm < r.gain_bound;
    return r;
}

Assumption2Report check_assumption_2(const GridGraph& g, const std::map<DguId, double>& etas, double tol) {
    Assumption2Report r;
    for (const auto& [e, l] : g.lines()) {
        for (DguId i : {e.first(), e.second()}) {
            auto it = etas.find(i);
            if (it == etas.end()) throw InputError(fmt::format("no eta for DGU {}", i.value()));
            const double ratio = it->second / (l.r * g.dgu(i).c_t);
            if (ratio > r.worst_ratio) {
                r.worst_ratio = ratio;
                r.worst_edge = e;
                r.worst_dgu = i;
            }
        }
    }
    r.passed = r.worst_ratio <= tol;
    return r;
}

MatrixXd closed_loop_matrix(const GridGraph& g, const std::map<DguId, ControllerGains>& gains) {
    const auto aug = assemble_augmented_overall(g);
    MatrixXd a = aug.a;
    for (const auto& id : g.ids()) {
        auto it = gains.find(id);
        if (it == gains.end()) throw InputError(fmt::format("no gains for DGU {}", id.value()));
        const auto k = static_cast<Eigen::Index>(3 * g.index_of(id));
        a.block(k, k, 3, 3) += aug.b.block(k, k / 3, 3, 1) * it->second.k;
    }
    return a;
}

GlobalCertificate certify_global_stability(const GridGraph& g,
                                           const std::map<DguId, ControllerGains>& gains, double tol) {
    GlobalCertificate c;
    const MatrixXd acl = closed_loop_matrix(g, gains);
    const auto n = acl.rows();
    Eigen::EigenSolver<MatrixXd> es(acl, false);
    c.max_real_eig = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
        c.eigenvalues.push_back(es.eigenvalues()(i));
        c.max_real_eig = std::max(c.max_real_eig, es.eigenvalues()(i).real());
    }
    c.spectral_ok = n == 0 || c.max_real_eig < 0.0;

    MatrixXd p = MatrixXd::Zero(n, n);
    MatrixXd ad = MatrixXd::Zero(n, n);
    for (const auto& id : g.ids()) {
        const auto k = static_cast<Eigen::Index>(3 * g.index_of(id));
        p.block(k, k, 3, 3) = gains.at(id).p;
        ad.block(k, k, 3, 3) = acl.block(k, k, 3, 3);
    }
    const MatrixXd ac = acl - ad;
    const MatrixXd term_a = ad.transpose() * p + p * ad;
    const MatrixXd term_b = ac.transpose() * p + p * ac;
    auto lmax = [](const MatrixXd& m) {
        if (m.size() == 0) return 0.0;
        Eigen::SelfAdjointEigenSolver<MatrixXd> e(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
        return e.eigenvalues().maxCoeff();
    };
    c.lyapunov_lambda_max = lmax(term_a + term_b);
    c.local_terms_lambda_max = lmax(term_a);
    c.coupling_term_max_abs = term_b.size() ? term_b.cwiseAbs().maxCoeff() : 0.0;
    c.coupling_term_norm = term_b.size() ? term_b.norm() : 0.0;
    c.coupling_small = c.coupling_term_max_abs <= tol;
    return c;
}

}  // namespace dcmg
