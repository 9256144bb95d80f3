#include "dcmg/model.hpp"

#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace dcmg {

namespace {

void check_unique(const std::vector<std::string>& labels, const char* axis) {
    std::set<std::string> seen(labels.begin(), labels.end());
    if (seen.size() != labels.size())
        throw std::logic_error(fmt::format("duplicate {} label", axis));
}

std::string tag(const char* base, DguId id) { return fmt::format("{}{}", base, id.value()); }

}  // namespace

void StateSpaceModel::validate() const {
    const auto n = a.rows();
    if (a.cols() != n) throw std::logic_error("A not square");
    if (b.rows() != n || m_dist.rows() != n || c.cols() != n)
        throw std::logic_error("state dimension mismatch");
    if (h.cols() != c.rows()) throw std::logic_error("H/C dimension mismatch");
    if (static_cast<Eigen::Index>(states.size()) != n ||
        static_cast<Eigen::Index>(inputs.size()) != b.cols() ||
        static_cast<Eigen::Index>(outputs.size()) != c.rows() ||
        static_cast<Eigen::Index>(disturbances.size()) != m_dist.cols() ||
        static_cast<Eigen::Index>(controlled.size()) != h.rows())
        throw std::logic_error("label count mismatch");
    check_unique(states, "state");
    check_unique(inputs, "input");
    check_unique(outputs, "output");
    check_unique(disturbances, "disturbance");
    check_unique(controlled, "controlled");
}

StateSpaceModel build_local_dgu(const DguParams& p, const std::vector<LineParams>& attached_lines,
                                DguId id) {
    p.validate();
    double self = 0.0;
    for (const auto& l : attached_lines) {
        l.validate();
        self -= 1.0 / (l.r * p.c_t);
    }
    StateSpaceModel m;
    m.a.resize(2, 2);
    m.a << self, 1.0 / p.c_t, -1.0 / p.l_t, -p.r_t / p.l_t;
    m.b.resize(2, 1);
    m.b << 0.0, 1.0 / p.l_t;
    m.m_dist.resize(2, 1);
    m.m_dist << -1.0 / p.c_t, 0.0;
    m.c = MatrixXd::Identity(2, 2);
    m.h.resize(1, 2);
    m.h << 1.0, 0.0;
    m.states = {tag("V", id), tag("It", id)};
    m.outputs = m.states;
    m.inputs = {tag("u", id)};
    m.disturbances = {tag("IL", id)};
    m.controlled = {tag("z", id)};
    return m;
}

Matrix2d build_coupling(const LineParams& line, double c_ti) {
    line.validate();
    if (!(c_ti > 0.0)) throw InputError("c_t must be positive");
    Matrix2d a = Matrix2d::Zero();
    a(0, 0) = 1.0 / (line.r * c_ti);
    return a;
}

LineSubsystem build_line_subsystem(const LineParams& line) {
    line.validate();
    return {-line.r / line.l, RowVector2d(-1.0 / line.l, 0.0), RowVector2d(1.0 / line.l, 0.0)};
}

AugmentedDgu augment_with_integrator(const StateSpaceModel& local, DguId id) {
    local.validate();
    if (local.n() != 2 || local.b.cols() != 1 || local.m_dist.cols() != 1 || local.h.rows() != 1)
        throw InputError("integrator augmentation expects a 2-state single-input DGU model");
    AugmentedDgu out;
    out.id = id;
    out.base = local;
    auto& s = out.aug;
    const MatrixXd hc = local.h * local.c;
    s.a = MatrixXd::Zero(3, 3);
    s.a.topLeftCorner(2, 2) = local.a;
    s.a.block(2, 0, 1, 2) = -hc;
    s.b = MatrixXd::Zero(3, 1);
    s.b.topRows(2) = local.b;
    s.c = MatrixXd::Zero(3, 3);
    s.c.topLeftCorner(2, 2) = local.c;
    s.c(2, 2) = 1.0;
    s.m_dist = MatrixXd::Zero(3, 2);
    s.m_dist.topLeftCorner(2, 1) = local.m_dist;
    s.m_dist(2, 1) = 1.0;
    s.h = MatrixXd::Zero(1, 3);
    s.h.leftCols(2) = local.h;
    s.states = local.states;
    s.states.push_back(tag("v", id));
    s.outputs = s.states;
    s.inputs = local.inputs;
    s.disturbances = local.disturbances;
    s.disturbances.push_back(tag("zref", id));
    s.controlled = local.controlled;
    return out;
}

AugmentedDgu augmented_dgu(const GridGraph& g, DguId id) {
    const auto& p = g.dgu(id);
    std::vector<LineParams> lines;
    std::map<DguId, Matrix3d> coupling;
    for (const auto& [j, l] : g.attached(id)) {
        lines.push_back(l);
        Matrix3d a = Matrix3d::Zero();
        a.topLeftCorner(2, 2) = build_coupling(l, p.c_t);
        coupling.emplace(j, a);
    }
    auto out = augment_with_integrator(build_local_dgu(p, lines, id), id);
    out.coupling = std::move(coupling);
    return out;
}

namespace {

StateSpaceModel assemble_blocks(const GridGraph& g, bool augmented) {
    const auto ids = g.ids();
    const auto n = static_cast<Eigen::Index>(ids.size());
    const Eigen::Index ns = augmented ? 3 : 2;
    const Eigen::Index nd = augmented ? 2 : 1;
    StateSpaceModel m;
    m.a = MatrixXd::Zero(ns * n, ns * n);
    m.b = MatrixXd::Zero(ns * n, n);
    m.m_dist = MatrixXd::Zero(ns * n, nd * n);
    m.c = MatrixXd::Zero(ns * n, ns * n);
    m.h = MatrixXd::Zero(n, ns * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto aug = augmented_dgu(g, ids[k]);
        const auto& s = augmented ? aug.aug : aug.base;
        m.a.block(ns * k, ns * k, ns, ns) = s.a;
        m.b.block(ns * k, k, ns, 1) = s.b;
        m.m_dist.block(ns * k, nd * k, ns, nd) = s.m_dist;
        m.c.block(ns * k, ns * k, ns, ns) = s.c;
        m.h.block(k, ns * k, 1, ns) = s.h;
        for (const auto& [j, aij] : aug.coupling) {
            const auto col = static_cast<Eigen::Index>(g.index_of(j));
            m.a.block(ns * k, ns * col, ns, ns) = aij.topLeftCorner(ns, ns);
        }
        m.states.insert(m.states.end(), s.states.begin(), s.states.end());
        m.outputs.insert(m.outputs.end(), s.outputs.begin(), s.outputs.end());
        m.inputs.insert(m.inputs.end(), s.inputs.begin(), s.inputs.end());
        m.disturbances.insert(m.disturbances.end(), s.disturbances.begin(), s.disturbances.end());
        m.controlled.insert(m.controlled.end(), s.controlled.begin(), s.controlled.end());
    }
    return m;
}

}  // namespace

StateSpaceModel assemble_qsl_overall(const GridGraph& g) { return assemble_blocks(g, false); }

StateSpaceModel assemble_augmented_overall(const GridGraph& g) { return assemble_blocks(g, true); }

StateSpaceModel assemble_full_line_model(const GridGraph& g, LineCoupling mode) {
    const auto qsl = assemble_qsl_overall(g);
    const auto nd = qsl.a.rows();
    const auto ne = static_cast<Eigen::Index>(g.edge_count());
    const auto n = nd + 2 * ne;
    StateSpaceModel m;
    m.a = MatrixXd::Zero(n, n);
    m.b = MatrixXd::Zero(n, qsl.b.cols());
    m.m_dist = MatrixXd::Zero(n, qsl.m_dist.cols());
    m.c = MatrixXd::Zero(qsl.c.rows(), n);
    m.b.topRows(nd) = qsl.b;
    m.m_dist.topRows(nd) = qsl.m_dist;
    m.c.leftCols(nd) = qsl.c;
    m.h = qsl.h;
    m.inputs = qsl.inputs;
    m.outputs = qsl.outputs;
    m.disturbances = qsl.disturbances;
    m.controlled = qsl.controlled;
    m.states = qsl.states;

    if (mode == LineCoupling::quasi_static) {
        m.a.topLeftCorner(nd, nd) = qsl.a;
    } else {
        for (const auto& [id, p] : g.dgus()) {
            const auto k = static_cast<Eigen::Index>(2 * g.index_of(id));
            m.a.block(k, k, 2, 2) = build_local_dgu(p, {}, id).a;
        }
    }

    Eigen::Index row = nd;
    for (const auto& [e, lp] : g.lines()) {
        const auto ls = build_line_subsystem(lp);
        for (const auto& [own, far] : {std::pair{e.first(), e.second()}, std::pair{e.second(), e.first()}}) {
            const auto io = static_cast<Eigen::Index>(2 * g.index_of(own));
            const auto jf = static_cast<Eigen::Index>(2 * g.index_of(far));
            m.a(row, row) = ls.a_ll;
            m.a.block(row, io, 1, 2) += ls.a_li;
            m.a.block(row, jf, 1, 2) += ls.a_lj;
            if (mode == LineCoupling::dynamic) m.a(io, row) = 1.0 / g.dgu(own).c_t;
            m.states.push_back(fmt::format("I{}_{}", own.value(), far.value()));
            ++row;
        }
    }
    return m;
}

double rank_tolerance(const Eigen::VectorXd& sv) {
    return sv.size() == 0 ? 0.0 : 1e-9 * sv.maxCoeff();
}

namespace {

// Alternating row/column max-norm scaling. Rank is invariant under
// nonsingular diagonal scaling; model matrices mix entries from 1 to 1e9.
MatrixXd equilibrate(MatrixXd m) {
    for (int sweep = 0; sweep < 8; ++sweep) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double s = m.row(i).cwiseAbs().maxCoeff();
            if (s > 0) m.row(i) /= s;
        }
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double s = m.col(j).cwiseAbs().maxCoeff();
            if (s > 0) m.col(j) /= s;
        }
    }
    return m;
}

RankReport rank_report(const MatrixXd& raw, int expected) {
    RankReport r;
    r.expected = expected;
    if (raw.size() == 0) return r;
    const MatrixXd m = equilibrate(raw);
    Eigen::JacobiSVD<MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    const double tol = rank_tolerance(sv);
    r.sigma_max = sv.maxCoeff();
    r.sigma_min = sv.minCoeff();
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++r.rank;
    return r;
}

}  // namespace

int numerical_rank(const MatrixXd& m) { return rank_report(m, 0).rank; }

RankReport check_rank_gamma(const StateSpaceModel& q) {
    q.validate();
    if (q.b.cols() != q.h.rows())
        throw InputError("rank test needs as many inputs as controlled outputs");
    const auto n = q.a.rows();
    const auto m = q.b.cols();
    MatrixXd gamma = MatrixXd::Zero(n + m, n + m);
    gamma.topLeftCorner(n, n) = q.a;
    gamma.topRightCorner(n, m) = q.b;
    gamma.bottomLeftCorner(m, n) = q.h * q.c;
    return rank_report(gamma, static_cast<int>(n + m));
}

RankReport check_local_controllability(const AugmentedDgu& aug) {
    const Matrix3d a = aug.aug.a;
    const Vector3d b = aug.aug.b.col(0);
    Matrix3d ctrb;
    ctrb.col(0) = b;
    ctrb.col(1) = a * b;
    ctrb.col(2) = a * a * b;
    return rank_report(ctrb, 3);
}

}  // namespace dcmg
