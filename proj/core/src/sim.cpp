#include "dcmg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <list>
#include <memory>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace dcmg {

void ControllerStackOptions::validate() const {
    if (prefilter_bw_hz && !(*prefilter_bw_hz > 0)) throw InputError("prefilter bandwidth must be positive");
    if (!(compensator_bw_hz > 0)) throw InputError("compensator bandwidth must be positive");
}

void SimConfig::validate() const {
    if (!(max_step > 0) || !(relaxed_max_step >= max_step)) throw InputError("invalid step limits");
    if (!(rtol > 0) || !(atol > 0)) throw InputError("tolerances must be positive");
    if (!(record_stride > 0) || !(window_record_stride > 0)) throw InputError("record strides must be positive");
    if (!(lambda_ratio > 0 && lambda_ratio < 1)) throw InputError("tracker ratio must lie in (0, 1) so that k_i > λ");
    if (!(commute_threshold > 0) || !(hold >= 0) || !(prearm >= 0) || !(switch_wait > 0))
        throw InputError("invalid bumpless transfer settings");
    if (!(event_window >= 0)) throw InputError("event window must be non-negative");
    stack.validate();
    synthesis.validate();
}

std::string to_string(Event::Kind k) {
    switch (k) {
        case Event::Kind::connect: return "connect";
        case Event::Kind::disconnect: return "disconnect";
        case Event::Kind::load_step: return "load_step";
        case Event::Kind::ref_step: return "ref_step";
        case Event::Kind::plug_in: return "plug_in";
        case Event::Kind::unplug: return "unplug";
        case Event::Kind::switch_controller: return "switch_controller";
    }
    return "?";
}

void Scenario::validate(const GridGraph& g) const {
    if (!(duration > 0)) throw InputError("scenario duration must be positive");
    std::set<DguId> known;
    for (const auto& id : g.ids()) known.insert(id);
    for (const auto& e : initially_open)
        if (!g.has_line(e.first(), e.second()))
            throw InputError(fmt::format("initially open line {}-{} is not in the grid", e.first().value(),
                                         e.second().value()));
    double last = 0.0;
    for (const auto& e : events)
        if (e.kind == Event::Kind::plug_in) known.insert(e.request.id);
    for (const auto& e : events) {
        if (!(e.time >= 0.0 && e.time <= duration))
            throw InputError(fmt::format("event '{}' at {} s outside [0, {}]", e.label, e.time, duration));
        if (e.time < last) throw InputError("event times must be nondecreasing");
        last = e.time;
        auto need = [&](DguId id) {
            if (!known.contains(id)) throw InputError(fmt::format("event '{}' names unknown DGU {}", e.label, id.value()));
        };
        switch (e.kind) {
            case Event::Kind::connect:
            case Event::Kind::disconnect:
                need(e.a);
                need(e.b);
                break;
            case Event::Kind::load_step:
                need(e.a);
                if (!(e.value > 0)) throw InputError("load resistance must be positive");
                break;
            case Event::Kind::ref_step:
            case Event::Kind::switch_controller:
                need(e.a);
                break;
            case Event::Kind::plug_in:
                if (g.has_dgu(e.request.id))
                    throw InputError(fmt::format("plug-in DGU {} already in the grid", e.request.id.value()));
                if (!e.request.new_dgu) throw InputError("plug-in event without DGU parameters");
                e.request.new_dgu->validate();
                break;
            case Event::Kind::unplug:
                need(e.request.id);
                break;
        }
    }
}

bool bumpless_update(BumplessState& s, double mismatch, double t, double switch_time) {
    if (std::abs(mismatch) < s.commute_threshold) {
        if (!s.ok_since) s.ok_since = t;
    } else {
        s.ok_since.reset();
    }
    s.armed = s.ok_since && t - *s.ok_since >= s.hold - 1e-12;
    return s.armed && t >= switch_time - 1e-12;
}

namespace {

bool same_realization(const std::optional<Realization>& a, const std::optional<Realization>& b) {
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    if (a->a.rows() != b->a.rows()) return false;
    return a->a == b->a && a->b == b->b && a->c == b->c && a->d == b->d;
}

}  // namespace

bool same_controller(const LocalController& a, const LocalController& b) {
    return a.k == b.k && a.lambda == b.lambda && same_realization(a.prefilter, b.prefilter) &&
           same_realization(a.compensator, b.compensator);
}

LocalController design_local_controller(const GridGraph& g, DguId id, const ControllerGains& gains,
                                        const ControllerStackOptions& stack, double lambda_ratio) {
    LocalController c;
    c.k = gains.k;
    c.lambda = lambda_ratio * gains.ki();
    if (!(c.lambda > 0.0 && gains.ki() > c.lambda))
        throw InputError(fmt::format("DGU {}: bumpless tracker needs 0 < λ < k_i (k_i = {:g})", id.value(), gains.ki()));
    const auto aug = augmented_dgu(g, id);
    std::vector<std::string> notes;
    if (stack.prefilter_bw_hz) {
        const double bw = *stack.prefilter_bw_hz;
        const auto f = closed_loop_reference_tf(aug, gains);
        const auto ft = desired_tf_template(bw, std::max(1, f.relative_degree()));
        auto r = with_fallback(design_prefilter(f, ft), bw);
        if (auto* d = std::get_if<FilterDesign>(&r)) {
            c.prefilter = realize(d->realized);
            notes.push_back(fmt::format("prefilter {} Hz order {} {}", bw, ft.den.degree(), d->note));
        } else {
            const auto& rej = std::get<Rejection>(r);
            spdlog::warn("DGU {}: prefilter rejected ({}): {}", id.value(), to_string(rej.kind), rej.message);
            notes.push_back("prefilter rejected: " + rej.message);
        }
    }
    if (stack.compensator) {
        const auto [gd, gu] = disturbance_tfs(aug, gains);
        auto r = with_fallback(design_disturbance_compensator(gd, gu), stack.compensator_bw_hz);
        if (auto* d = std::get_if<FilterDesign>(&r)) {
            c.compensator = realize(d->realized);
            notes.push_back("compensator " + d->note);
        } else {
            const auto& rej = std::get<Rejection>(r);
            spdlog::warn("DGU {}: compensator rejected ({}): {}", id.value(), to_string(rej.kind), rej.message);
            notes.push_back("compensator rejected: " + rej.message);
        }
    }
    for (std::size_t i = 0; i < notes.size(); ++i) c.note += (i ? "; " : "") + notes[i];
    return c;
}

std::size_t SimTrace::index(DguId id) const {
    auto it = std::find(dgus.begin(), dgus.end(), id);
    if (it == dgus.end()) throw InputError(fmt::format("DGU {} not in trace", id.value()));
    return static_cast<std::size_t>(it - dgus.begin());
}

std::size_t SimTrace::edge_index(const Edge& e) const {
    auto it = std::find(edges.begin(), edges.end(), e);
    if (it == edges.end()) throw InputError(fmt::format("line {}-{} not in trace", e.first().value(), e.second().value()));
    return static_cast<std::size_t>(it - edges.begin());
}

double SimTrace::line_current(DguId i, DguId j, std::size_t row) const {
    const Edge e(i, j);
    const double v = line[edge_index(e)][row];
    return e.first() == i ? v : -v;
}

namespace {

using Eigen::RowVectorXd;

struct Ctrl {
    std::shared_ptr<const LocalController> spec;
    double uhat = 0.0;
    VectorXd xpf, xn;
};

struct Incoming {
    Ctrl c;
    double t_switch = 0.0;
    bool bumpless = true;
    BumplessState bs;
    bool warned = false;
};

struct Unit {
    DguId id;
    DguParams p;
    double v = 0.0, it = 0.0;
    double load = open_load;
    double ref = 0.0;
    std::optional<Ctrl> ctrl;
    std::optional<Incoming> incoming;
    std::optional<double> sat_since;
    bool sat_warned = false;
};

struct ActiveLine {
    LineParams p;
    double i = 0.0;  // into first()
};

struct World {
    std::vector<Unit> units;
    std::map<Edge, ActiveLine> lines;

    std::size_t pos(DguId id) const {
        for (std::size_t k = 0; k < units.size(); ++k)
            if (units[k].id == id) return k;
        throw InputError(fmt::format("unknown DGU {}", id.value()));
    }
    GridGraph graph() const {
        GridGraph g;
        for (const auto& u : units) g.add_dgu(u.id, u.p);
        for (const auto& [e, l] : lines) g.add_line(e.first(), e.second(), l.p);
        return g;
    }
};

// Linear part of the closed loop plus one saturated actuator per unit:
// ẋ = A x + c + Σ e_k sat(g_k x).
struct System {
    struct UnitIdx {
        int v = -1, it = -1;
        int uh = -1, pf = -1, npf = 0, n = -1, nn = 0;
        int juh = -1, jpf = -1, jnpf = 0, jn = -1, jnn = 0;
    };
    struct Actuator {
        VectorXd e;
        RowVectorXd g;
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        bool present = false;
    };
    int n = 0;
    MatrixXd a;
    VectorXd c;
    std::vector<UnitIdx> ui;
    std::map<Edge, int> li;
    std::vector<Actuator> act;
};

struct Signal {
    RowVectorXd g;
    double k = 0.0;
};

System assemble(const World& w, const SimConfig& cfg) {
    System s;
    int n = 0;
    s.ui.resize(w.units.size());
    auto take = [&](int count) {
        const int at = n;
        n += count;
        return at;
    };
    for (std::size_t k = 0; k < w.units.size(); ++k) {
        const auto& u = w.units[k];
        auto& ix = s.ui[k];
        ix.v = take(1);
        ix.it = take(1);
        if (u.ctrl) {
            ix.uh = take(1);
            if (u.ctrl->spec->prefilter) ix.npf = static_cast<int>(u.ctrl->spec->prefilter->a.rows()), ix.pf = take(ix.npf);
            if (u.ctrl->spec->compensator) ix.nn = static_cast<int>(u.ctrl->spec->compensator->a.rows()), ix.n = take(ix.nn);
        }
        if (u.incoming) {
            const auto& sp = *u.incoming->c.spec;
            ix.juh = take(1);
            if (sp.prefilter) ix.jnpf = static_cast<int>(sp.prefilter->a.rows()), ix.jpf = take(ix.jnpf);
            if (sp.compensator) ix.jnn = static_cast<int>(sp.compensator->a.rows()), ix.jn = take(ix.jnn);
        }
    }
    for (const auto& [e, _] : w.lines) s.li[e] = take(1);
    s.n = n;
    s.a = MatrixXd::Zero(n, n);
    s.c = VectorXd::Zero(n);
    s.act.resize(w.units.size());

    auto unit_row = [&](int i) {
        RowVectorXd r = RowVectorXd::Zero(n);
        r(i) = 1.0;
        return r;
    };

    for (std::size_t k = 0; k < w.units.size(); ++k) {
        const auto& u = w.units[k];
        const auto& ix = s.ui[k];
        const auto& p = u.p;
        s.a(ix.v, ix.it) += 1.0 / p.c_t;
        const double gl = std::isfinite(u.load) ? 1.0 / u.load : 0.0;
        s.a(ix.v, ix.v) -= gl / p.c_t;
        s.a(ix.it, ix.v) -= 1.0 / p.l_t;
        s.a(ix.it, ix.it) -= p.r_t / p.l_t;
        const RowVectorXd load_row = gl * unit_row(ix.v);

        // Reference after the prefilter and load feedforward, as affine rows.
        auto filtered_ref = [&](const LocalController& sp, int pf) {
            Signal sig{RowVectorXd::Zero(n), u.ref};
            if (sp.prefilter) {
                const auto& r = *sp.prefilter;
                sig.g.segment(pf, r.a.rows()) = r.c;
                sig.k = r.d * u.ref;
                s.a.block(pf, pf, r.a.rows(), r.a.rows()) = r.a;
                s.c.segment(pf, r.a.rows()) += r.b * u.ref;
            }
            return sig;
        };
        auto feedforward = [&](const LocalController& sp, int nidx) {
            RowVectorXd row = RowVectorXd::Zero(n);
            if (sp.compensator) {
                const auto& r = *sp.compensator;
                row.segment(nidx, r.a.rows()) = r.c;
                row += r.d * load_row;
                s.a.block(nidx, nidx, r.a.rows(), r.a.rows()) = r.a;
                s.a.middleRows(nidx, r.a.rows()) += r.b * load_row;
            }
            return row;
        };

        if (!u.ctrl) continue;
        const auto& sp = *u.ctrl->spec;
        const Signal rt = filtered_ref(sp, ix.pf);
        const RowVectorXd ut = feedforward(sp, ix.n);
        auto& act = s.act[k];
        act.present = true;
        act.g = sp.k(0) * unit_row(ix.v) + sp.k(1) * unit_row(ix.it) + unit_row(ix.uh) + ut;
        act.e = VectorXd::Zero(n);
        act.e(ix.it) = 1.0 / p.l_t;
        if (cfg.saturation) {
            act.lo = 0.0;
            act.hi = p.v_dc;
        }
        // û' = k_i (r̃ − V)
        s.a.row(ix.uh) += sp.k(2) * (rt.g - unit_row(ix.v));
        s.c(ix.uh) += sp.k(2) * rt.k;

        if (u.incoming) {
            const auto& sj = *u.incoming->c.spec;
            const Signal rj = filtered_ref(sj, ix.jpf);
            const RowVectorXd uj = feedforward(sj, ix.jn);
            // û' = k_i (r̃ − V) + λ (ũ_prec − û), ũ_prec = u − k_v V − k_c I_t − ũ
            const double lam = sj.lambda;
            s.a.row(ix.juh) += sj.k(2) * (rj.g - unit_row(ix.v)) -
                               lam * (sj.k(0) * unit_row(ix.v) + sj.k(1) * unit_row(ix.it) + uj + unit_row(ix.juh));
            s.c(ix.juh) += sj.k(2) * rj.k;
            act.e(ix.juh) = lam;
        }
    }
    for (const auto& [e, l] : w.lines) {
        const int i = s.li.at(e);
        const auto& a = s.ui[w.pos(e.first())];
        const auto& b = s.ui[w.pos(e.second())];
        // L dI/dt = V_second − V_first − R I, I flowing into first().
        s.a(i, i) = -l.p.r / l.p.l;
        s.a(i, a.v) -= 1.0 / l.p.l;
        s.a(i, b.v) += 1.0 / l.p.l;
        s.a(a.v, i) += 1.0 / w.units[w.pos(e.first())].p.c_t;
        s.a(b.v, i) -= 1.0 / w.units[w.pos(e.second())].p.c_t;
    }
    return s;
}

VectorXd pack(const World& w, const System& s) {
    VectorXd x = VectorXd::Zero(s.n);
    for (std::size_t k = 0; k < w.units.size(); ++k) {
        const auto& u = w.units[k];
        const auto& ix = s.ui[k];
        x(ix.v) = u.v;
        x(ix.it) = u.it;
        if (u.ctrl) {
            x(ix.uh) = u.ctrl->uhat;
            if (ix.npf) x.segment(ix.pf, ix.npf) = u.ctrl->xpf;
            if (ix.nn) x.segment(ix.n, ix.nn) = u.ctrl->xn;
        }
        if (u.incoming) {
            x(ix.juh) = u.incoming->c.uhat;
            if (ix.jnpf) x.segment(ix.jpf, ix.jnpf) = u.incoming->c.xpf;
            if (ix.jnn) x.segment(ix.jn, ix.jnn) = u.incoming->c.xn;
        }
    }
    for (const auto& [e, l] : w.lines) x(s.li.at(e)) = l.i;
    return x;
}

void unpack(World& w, const System& s, const VectorXd& x) {
    for (std::size_t k = 0; k < w.units.size(); ++k) {
        auto& u = w.units[k];
        const auto& ix = s.ui[k];
        u.v = x(ix.v);
        u.it = x(ix.it);
        if (u.ctrl) {
            u.ctrl->uhat = x(ix.uh);
            if (ix.npf) u.ctrl->xpf = x.segment(ix.pf, ix.npf);
            if (ix.nn) u.ctrl->xn = x.segment(ix.n, ix.nn);
        }
        if (u.incoming) {
            u.incoming->c.uhat = x(ix.juh);
            if (ix.jnpf) u.incoming->c.xpf = x.segment(ix.jpf, ix.jnpf);
            if (ix.jnn) u.incoming->c.xn = x.segment(ix.jn, ix.jnn);
        }
    }
    for (auto& [e, l] : w.lines) l.i = x(s.li.at(e));
}

using Pattern = std::vector<signed char>;

double saturate(double v, const System::Actuator& a, signed char& side) {
    if (v > a.hi) {
        side = 1;
        return a.hi;
    }
    if (v < a.lo) {
        side = -1;
        return a.lo;
    }
    side = 0;
    return v;
}

Pattern pattern_of(const System& s, const VectorXd& x) {
    Pattern p(s.act.size(), 0);
    for (std::size_t k = 0; k < s.act.size(); ++k)
        if (s.act[k].present) saturate(s.act[k].g.dot(x), s.act[k], p[k]);
    return p;
}

VectorXd rhs(const System& s, const VectorXd& x) {
    VectorXd f = s.a * x + s.c;
    for (const auto& a : s.act) {
        if (!a.present) continue;
        signed char side = 0;
        f += a.e * saturate(a.g.dot(x), a, side);
    }
    return f;
}

MatrixXd jacobian(const System& s, const Pattern& p) {
    MatrixXd j = s.a;
    for (std::size_t k = 0; k < s.act.size(); ++k)
        if (s.act[k].present && p[k] == 0) j += s.act[k].e * s.act[k].g;
    return j;
}

// TR-BDF2 with γ = 2 − √2; both stages share the matrix I − d·h·J.
class Stepper {
public:
    static constexpr double gam = 2.0 - 1.41421356237309504880;
    static constexpr double dco = gam / 2.0;

    explicit Stepper(long& factorizations) : factorizations_(factorizations) {}
    void reset() { cache_.clear(); }

    struct Out {
        bool ok = false;
        VectorXd x;
        double err = 0.0;
    };

    Out step(const System& s, const VectorXd& x, double h, double rtol, double atol) {
        Out o;
        const VectorXd fn = rhs(s, x);
        VectorXd xg;
        if (!solve(s, x + dco * h * fn, x + gam * h * fn, h, xg)) return o;
        const double c1 = 1.0 / (gam * (2.0 - gam));
        const double c0 = (1.0 - gam) * (1.0 - gam) / (gam * (2.0 - gam));
        VectorXd x1;
        if (!solve(s, c1 * xg - c0 * x, xg + (xg - x) * ((1.0 - gam) / gam), h, x1)) return o;
        const VectorXd fg = rhs(s, xg);
        const VectorXd f1 = rhs(s, x1);
        const double kc = (-3.0 * gam * gam + 4.0 * gam - 2.0) / (12.0 * (2.0 - gam));
        const VectorXd tau = 2.0 * kc * h * (fn / gam - fg / (gam * (1.0 - gam)) + f1 / (1.0 - gam));
        const VectorXd est = lu(s, pattern_of(s, x1), h).solve(tau);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double sc = atol + rtol * std::max(std::abs(x(i)), std::abs(x1(i)));
            acc += (est(i) / sc) * (est(i) / sc);
        }
        o.err = x.size() ? std::sqrt(acc / static_cast<double>(x.size())) : 0.0;
        o.ok = x1.allFinite() && std::isfinite(o.err);
        o.x = std::move(x1);
        return o;
    }

private:
    struct Entry {
        double h;
        Pattern p;
        Eigen::PartialPivLU<MatrixXd> lu;
    };
    std::list<Entry> cache_;
    long& factorizations_;

    const Eigen::PartialPivLU<MatrixXd>& lu(const System& s, const Pattern& p, double h) {
        for (auto it = cache_.begin(); it != cache_.end(); ++it)
            if (it->h == h && it->p == p) {
                cache_.splice(cache_.begin(), cache_, it);
                return cache_.front().lu;
            }
        MatrixXd m = MatrixXd::Identity(s.n, s.n) - dco * h * jacobian(s, p);
        cache_.push_front(Entry{h, p, Eigen::PartialPivLU<MatrixXd>(m)});
        ++factorizations_;
        if (cache_.size() > 6) cache_.pop_back();
        return cache_.front().lu;
    }

    // y − d·h·f(y) = r. The right side is piecewise linear, so Newton ends
    // as soon as the saturation pattern is stable across an update.
    bool solve(const System& s, const VectorXd& r, VectorXd y, double h, VectorXd& out) {
        for (int it = 0; it < 12; ++it) {
            const Pattern p = pattern_of(s, y);
            const VectorXd res = y - dco * h * rhs(s, y) - r;
            y -= lu(s, p, h).solve(res);
            if (!y.allFinite()) return false;
            if (pattern_of(s, y) == p) {
                out = std::move(y);
                return true;
            }
        }
        return false;
    }
};

struct Action {
    enum class Kind { connect, disconnect, load, ref, begin_switch, due_switch, marker };
    double t = 0.0;
    Kind kind = Kind::marker;
    DguId a, b;
    LineParams line;
    double value = 0.0;
    std::shared_ptr<const LocalController> ctrl;
    bool bumpless = true;
    double t_switch = 0.0;
    std::string text;
};

VectorXd filter_steady_state(const Realization& r, double input) {
    if (r.a.rows() == 0) return VectorXd();
    return -r.a.fullPivLu().solve(r.b * input);
}

double applied_u(const System& s, std::size_t k, const VectorXd& x) {
    if (!s.act[k].present) return 0.0;
    signed char side = 0;
    return saturate(s.act[k].g.dot(x), s.act[k], side);
}

// Quantities of the incoming controller at state x.
double tracking_mismatch(const World& w, const System& s, std::size_t k, const VectorXd& x) {
    const auto& u = w.units[k];
    const auto& ix = s.ui[k];
    const auto& sj = *u.incoming->c.spec;
    double ut = 0.0;
    if (sj.compensator) {
        const auto& r = *sj.compensator;
        ut = r.c.dot(x.segment(ix.jn, ix.jnn)) + r.d * (std::isfinite(u.load) ? x(ix.v) / u.load : 0.0);
    }
    const double uprec = applied_u(s, k, x) - sj.k(0) * x(ix.v) - sj.k(1) * x(ix.it) - ut;
    return x(ix.juh) - uprec;
}

class Simulation {
public:
    Simulation(const GridGraph& g, const std::map<DguId, ControllerGains>& gains, const Scenario& sc,
               const SimConfig& cfg)
        : g_(g), gains_(gains), sc_(sc), cfg_(cfg), stepper_(trace_.stats.factorizations) {}

    SimTrace run() {
        plan();
        integrate();
        return std::move(trace_);
    }

private:
    const GridGraph& g_;
    const std::map<DguId, ControllerGains>& gains_;
    const Scenario& sc_;
    const SimConfig& cfg_;
    SimTrace trace_;
    World world_;
    std::vector<Action> actions_;
    Stepper stepper_;

    void warn(const std::string& msg) {
        spdlog::warn("{}", msg);
        trace_.warnings.push_back(msg);
    }

    std::shared_ptr<const LocalController> design(const GridGraph& g, DguId id, const ControllerGains& k) {
        return std::make_shared<const LocalController>(
            design_local_controller(g, id, k, cfg_.stack, cfg_.lambda_ratio));
    }

    ControllerGains synthesize(const GridGraph& g, DguId id) {
        auto r = solve_problem_O(augmented_dgu(g, id), cfg_.synthesis);
        if (auto* k = std::get_if<ControllerGains>(&r)) return *k;
        if (auto* i = std::get_if<Infeasible>(&r)) throw SimError(fmt::format("DGU {}: infeasible: {}", id.value(), i->reason));
        throw SimError(fmt::format("DGU {}: {}", id.value(), std::get<NumericalFailure>(r).reason));
    }

    void plan() {
        // Physical world at t = 0: grid units plus plug-in newcomers running
        // on their own.
        GridGraph net = g_;
        GridGraph pg = g_;
        for (const auto& e : sc_.initially_open) pg.remove_line(e.first(), e.second());
        for (const auto& e : sc_.events)
            if (e.kind == Event::Kind::plug_in) {
                net.add_dgu(e.request.id, *e.request.new_dgu);
                pg.add_dgu(e.request.id, *e.request.new_dgu);
                for (const auto& [j, l] : e.request.new_lines) net.add_line(e.request.id, j, l);
            }
        trace_.network = net;
        trace_.dgus = net.ids();
        for (const auto& [e, _] : net.lines()) trace_.edges.push_back(e);
        trace_.dgu.resize(trace_.dgus.size());
        trace_.line.resize(trace_.edges.size());

        std::map<DguId, ControllerGains> pgains;
        std::map<DguId, std::shared_ptr<const LocalController>> pctrl;
        for (const auto& id : pg.ids()) {
            if (auto it = gains_.find(id); it != gains_.end()) {
                pgains.emplace(id, it->second);
            } else if (!g_.has_dgu(id)) {
                spdlog::info("DGU {}: no gains given, synthesizing for its standalone model", id.value());
                pgains.emplace(id, synthesize(pg, id));
            } else if (!cfg_.open_loop) {
                throw InputError(fmt::format("no gains for DGU {}", id.value()));
            }
        }

        for (const auto& id : pg.ids()) {
            Unit u;
            u.id = id;
            u.p = pg.dgu(id);
            u.load = u.p.load_r.value_or(open_load);
            u.ref = sc_.refs.contains(id) ? sc_.refs.at(id) : sc_.default_ref;
            if (auto it = sc_.initial_dgu.find(id); it != sc_.initial_dgu.end()) {
                u.v = it->second.first;
                u.it = it->second.second;
            }
            if (!cfg_.open_loop) {
                auto spec = design(pg, id, pgains.at(id));
                pctrl[id] = spec;
                Ctrl c;
                c.spec = spec;
                c.xpf = VectorXd::Zero(spec->prefilter ? spec->prefilter->a.rows() : 0);
                c.xn = VectorXd::Zero(spec->compensator ? spec->compensator->a.rows() : 0);
                u.ctrl = std::move(c);
            }
            world_.units.push_back(std::move(u));
        }
        for (const auto& [e, l] : pg.lines()) {
            ActiveLine al{l, 0.0};
            if (auto it = sc_.initial_line.find(e); it != sc_.initial_line.end()) al.i = it->second;
            world_.lines.emplace(e, al);
        }

        struct PendingSwitch {
            DguId id;
            std::optional<ControllerGains> gains;
            bool bumpless;
        };
        std::vector<PendingSwitch> pending;
        PnpOptions popts;
        popts.synthesis = cfg_.synthesis;
        popts.policy = cfg_.policy;

        auto flush = [&](double t) {
            for (const auto& ps : pending) {
                if (cfg_.open_loop) break;
                const ControllerGains k = ps.gains ? *ps.gains : synthesize(pg, ps.id);
                pgains[ps.id] = k;
                auto spec = design(pg, ps.id, k);
                if (same_controller(*spec, *pctrl.at(ps.id))) {
                    actions_.push_back({t, Action::Kind::marker, ps.id, {}, {}, 0.0, nullptr, true, t,
                                        fmt::format("DGU {} controller unchanged", ps.id.value())});
                    continue;
                }
                pctrl[ps.id] = spec;
                Action b;
                b.kind = Action::Kind::begin_switch;
                b.a = ps.id;
                b.ctrl = spec;
                b.bumpless = ps.bumpless;
                b.t_switch = t;
                b.t = ps.bumpless ? std::max(0.0, t - cfg_.prearm) : t;
                b.text = fmt::format("DGU {} switch ({})", ps.id.value(), ps.bumpless ? "bumpless" : "direct");
                actions_.push_back(b);
                Action d = b;
                d.kind = Action::Kind::due_switch;
                d.t = t;
                actions_.push_back(d);
            }
            pending.clear();
        };

        for (std::size_t i = 0; i < sc_.events.size(); ++i) {
            const auto& e = sc_.events[i];
            const std::string label = e.label.empty() ? to_string(e.kind) : e.label;
            switch (e.kind) {
                case Event::Kind::connect: {
                    if (!net.has_line(e.a, e.b))
                        throw InputError(fmt::format("connect {}-{}: no such line in the grid", e.a.value(), e.b.value()));
                    if (pg.has_line(e.a, e.b)) {
                        warn(fmt::format("{}: line {}-{} already connected", label, e.a.value(), e.b.value()));
                        break;
                    }
                    const auto lp = net.line(e.a, e.b);
                    pg.add_line(e.a, e.b, lp);
                    actions_.push_back({e.time, Action::Kind::connect, e.a, e.b, lp, 0.0, nullptr, true, e.time,
                                        fmt::format("{}: line {}-{} connected", label, e.a.value(), e.b.value())});
                    break;
                }
                case Event::Kind::disconnect:
                    if (!pg.has_line(e.a, e.b)) {
                        warn(fmt::format("{}: line {}-{} not connected", label, e.a.value(), e.b.value()));
                        break;
                    }
                    pg.remove_line(e.a, e.b);
                    actions_.push_back({e.time, Action::Kind::disconnect, e.a, e.b, {}, 0.0, nullptr, true, e.time,
                                        fmt::format("{}: line {}-{} disconnected", label, e.a.value(), e.b.value())});
                    break;
                case Event::Kind::load_step:
                    actions_.push_back({e.time, Action::Kind::load, e.a, {}, {}, e.value, nullptr, true, e.time, fmt::format("{}: DGU {} load {:g} ohm", label, e.a.value(), e.value)});
                    break;
                case Event::Kind::ref_step:
                    actions_.push_back({e.time, Action::Kind::ref, e.a, {}, {}, e.value, nullptr, true, e.time, fmt::format("{}: DGU {} reference {:g} V", label, e.a.value(), e.value)});
                    break;
                case Event::Kind::switch_controller:
                    pending.push_back({e.a, e.gains, e.bumpless});
                    break;
                case Event::Kind::plug_in: {
                    const auto id = e.request.id;
                    if (!pg.neighbors(id).empty()) throw InputError(fmt::format("{}: DGU {} already connected", label, id.value()));
                    GridGraph before = pg;
                    before.remove_dgu(id);
                    auto cur = pgains;
                    cur.erase(id);
                    auto d = evaluate_plug_in(before, cur, e.request, popts);
                    actions_.push_back({e.time, Action::Kind::marker, id, {}, {}, 0.0, nullptr, true, e.time,
                                        fmt::format("{}: plug-in of DGU {} {}", label, id.value(),
                                                    d.allowed ? "allowed" : "denied: " + d.denial_reason)});
                    if (d.allowed) {
                        for (const auto& [j, l] : e.request.new_lines) {
                            pg.add_line(id, j, l);
                            actions_.push_back({e.time, Action::Kind::connect, id, j, l, 0.0, nullptr, true, e.time,
                                                fmt::format("{}: line {}-{} connected", label, id.value(), j.value())});
                        }
                        for (const auto& k : d.retune_set) pending.push_back({k, d.gains_after(cur).at(k), true});
                    } else {
                        warn(fmt::format("{}: plug-in of DGU {} denied: {}", label, id.value(), d.denial_reason));
                    }
                    trace_.decisions.push_back(std::move(d));
                    break;
                }
                case Event::Kind::unplug: {
                    const auto id = e.request.id;
                    auto d = evaluate_unplug(pg, pgains, e.request, popts);
                    actions_.push_back({e.time, Action::Kind::marker, id, {}, {}, 0.0, nullptr, true, e.time,
                                        fmt::format("{}: unplug of DGU {} {}", label, id.value(),
                                                    d.allowed ? "allowed" : "denied: " + d.denial_reason)});
                    if (d.allowed) {
                        for (const auto& j : pg.neighbors(id)) {
                            pg.remove_line(id, j);
                            actions_.push_back({e.time, Action::Kind::disconnect, id, j, {}, 0.0, nullptr, true, e.time,
                                                fmt::format("{}: line {}-{} disconnected", label, id.value(), j.value())});
                        }
                        const auto after = d.gains_after(pgains);
                        for (const auto& k : d.retune_set) pending.push_back({k, after.at(k), true});
                    } else {
                        warn(fmt::format("{}: unplug of DGU {} denied: {}", label, id.value(), d.denial_reason));
                    }
                    trace_.decisions.push_back(std::move(d));
                    break;
                }
            }
            if (i + 1 == sc_.events.size() || sc_.events[i + 1].time != e.time) flush(e.time);
        }
        std::stable_sort(actions_.begin(), actions_.end(), [](const Action& x, const Action& y) { return x.t < y.t; });
    }

    bool in_window(double t) const {
        if (t < cfg_.event_window) return true;
        for (const auto& a : actions_) {
            if (a.kind == Action::Kind::marker) continue;
            const double start = a.kind == Action::Kind::begin_switch ? a.t : a.t - 1e-12;
            if (t >= start && t < a.t + cfg_.event_window) return true;
        }
        return false;
    }

    // Applies one planned action to the world (state already unpacked).
    // Returns true for discontinuities that warrant a small restart step.
    bool apply(const Action& a, double t) {
        switch (a.kind) {
            case Action::Kind::connect:
                world_.lines.emplace(Edge(a.a, a.b), ActiveLine{a.line, 0.0});
                break;
            case Action::Kind::disconnect:
                world_.lines.erase(Edge(a.a, a.b));
                break;
            case Action::Kind::load:
                world_.units[world_.pos(a.a)].load = a.value;
                break;
            case Action::Kind::ref:
                world_.units[world_.pos(a.a)].ref = a.value;
                break;
            case Action::Kind::begin_switch: {
                auto& u = world_.units[world_.pos(a.a)];
                if (!u.ctrl) return false;
                if (u.incoming) warn(fmt::format("DGU {}: pending switch replaced at t = {:.6g} s", a.a.value(), t));
                Incoming in;
                in.c.spec = a.ctrl;
                in.t_switch = a.t_switch;
                in.bumpless = a.bumpless;
                in.bs.lambda = a.ctrl->lambda;
                in.bs.commute_threshold = cfg_.commute_threshold;
                in.bs.hold = cfg_.hold;
                in.c.xpf = a.ctrl->prefilter ? filter_steady_state(*a.ctrl->prefilter, u.ref) : VectorXd();
                const double il = std::isfinite(u.load) ? u.v / u.load : 0.0;
                in.c.xn = a.ctrl->compensator ? filter_steady_state(*a.ctrl->compensator, il) : VectorXd();
                u.incoming = std::move(in);
                // Start the tracker on its target so the transient is small.
                const System s = assemble(world_, cfg_);
                const VectorXd x = pack(world_, s);
                const auto k = world_.pos(a.a);
                u.incoming->c.uhat = x(s.ui[k].juh) - tracking_mismatch(world_, s, k, x);
                if (!a.bumpless) u.incoming->c.uhat = u.ctrl->uhat;
                break;
            }
            case Action::Kind::due_switch:
            case Action::Kind::marker:
                return false;
        }
        return a.kind != Action::Kind::begin_switch;
    }

    // Commutes pending switches whose tracking condition holds. Returns true
    // when the structure changed.
    bool commute(double t, const System& s, const VectorXd& x) {
        bool changed = false;
        for (std::size_t k = 0; k < world_.units.size(); ++k) {
            auto& u = world_.units[k];
            if (!u.incoming) continue;
            auto& in = *u.incoming;
            bool go = false;
            double mismatch = 0.0;
            if (!in.bumpless) {
                go = t >= in.t_switch - 1e-12;
            } else {
                mismatch = tracking_mismatch(world_, s, k, x);
                go = bumpless_update(in.bs, mismatch, t, in.t_switch);
                if (!go && t >= in.t_switch && t - in.t_switch > cfg_.switch_wait && !in.warned) {
                    in.warned = true;
                    warn(fmt::format("DGU {}: switch deferred, tracking mismatch {:.4g} after {:g} s", u.id.value(),
                                     mismatch, t - in.t_switch));
                }
            }
            if (!go) continue;
            if (!changed) unpack(world_, s, x);
            changed = true;
            u.ctrl = std::move(in.c);
            trace_.markers.push_back({t, fmt::format("DGU {} commuted (mismatch {:.3g})", u.id.value(), mismatch)});
            u.incoming.reset();
        }
        return changed;
    }

    void saturation_watch(double t, const System& s, const VectorXd& x) {
        for (std::size_t k = 0; k < world_.units.size(); ++k) {
            auto& u = world_.units[k];
            if (!s.act[k].present) continue;
            signed char side = 0;
            saturate(s.act[k].g.dot(x), s.act[k], side);
            if (side == 0) {
                u.sat_since.reset();
                u.sat_warned = false;
                continue;
            }
            if (!u.sat_since) u.sat_since = t;
            if (!u.sat_warned && t - *u.sat_since > cfg_.saturation_warn) {
                u.sat_warned = true;
                warn(fmt::format("DGU {}: actuator saturated {} since t = {:.6g} s", u.id.value(),
                                 side > 0 ? "high" : "low", *u.sat_since));
            }
        }
    }

    void record(double t, const System& s, const VectorXd& x) {
        trace_.t.push_back(t);
        for (std::size_t r = 0; r < trace_.dgus.size(); ++r) {
            auto& ser = trace_.dgu[r];
            const auto k = world_.pos(trace_.dgus[r]);
            const auto& u = world_.units[k];
            const auto& ix = s.ui[k];
            const double v = x(ix.v);
            ser.v.push_back(v);
            ser.it.push_back(x(ix.it));
            ser.il.push_back(std::isfinite(u.load) ? v / u.load : 0.0);
            ser.ref.push_back(u.ref);
            ser.u.push_back(applied_u(s, k, x));
            ser.integ.push_back(u.ctrl && u.ctrl->spec->k(2) != 0.0 ? x(ix.uh) / u.ctrl->spec->k(2) : 0.0);
        }
        for (std::size_t r = 0; r < trace_.edges.size(); ++r) {
            auto it = s.li.find(trace_.edges[r]);
            trace_.line[r].push_back(it == s.li.end() ? 0.0 : x(it->second));
        }
    }

    void integrate() {
        const double tend = sc_.duration;
        std::size_t next_action = 0;
        auto record_after = [&](double t) {
            const double st = in_window(t) ? cfg_.window_record_stride : cfg_.record_stride;
            return std::min(tend, (std::floor(t / st + 1e-9) + 1.0) * st);
        };
        double next_record = 0.0;
        bool recorded_end = false;

        double t = 0.0;
        double h = 1e-7;
        System sys = assemble(world_, cfg_);
        VectorXd x = pack(world_, sys);

        auto rebuild = [&]() {
            sys = assemble(world_, cfg_);
            x = pack(world_, sys);
            stepper_.reset();
        };

        while (true) {
            // Actions due now.
            bool touched = false, jump = false;
            while (next_action < actions_.size() && actions_[next_action].t <= t + 1e-12) {
                const auto& a = actions_[next_action++];
                if (!touched) unpack(world_, sys, x);
                touched = true;
                if (a.kind != Action::Kind::due_switch) trace_.markers.push_back({t, a.text});
                jump |= apply(a, t);
                if (a.kind == Action::Kind::begin_switch) rebuild();
            }
            if (touched) rebuild();
            if (commute(t, sys, x)) {
                rebuild();
                jump = true;
            }
            if (jump) h = std::min(h, 1e-7);
            saturation_watch(t, sys, x);
            if (!recorded_end && t >= next_record - 1e-12) {
                record(t, sys, x);
                recorded_end = t >= tend - 1e-12;
                next_record = record_after(t);
            }
            if (t >= tend - 1e-12) break;

            double stop = tend;
            if (next_action < actions_.size()) stop = std::min(stop, actions_[next_action].t);
            stop = std::min(stop, next_record);
            const double hmax = in_window(t) ? cfg_.max_step : cfg_.relaxed_max_step;

            while (true) {
                double hs = std::min(h, hmax);
                bool lands = false;
                if (t + hs >= stop - 1e-12 * std::max(1.0, stop)) {
                    hs = stop - t;
                    lands = true;
                }
                auto o = stepper_.step(sys, x, hs, cfg_.rtol, cfg_.atol);
                ++trace_.stats.steps;
                if (o.ok && o.err <= 1.0) {
                    x = std::move(o.x);
                    t = lands ? stop : t + hs;
                    const double grow = o.err > 0 ? 0.9 * std::pow(o.err, -1.0 / 3.0) : 2.0;
                    if (!lands || hs >= h) h = quantize(hs * std::clamp(grow, 0.2, 2.0), hmax);
                    break;
                }
                ++trace_.stats.rejected;
                const double shrink = o.ok ? std::clamp(0.9 * std::pow(o.err, -1.0 / 3.0), 0.1, 0.5) : 0.25;
                h = quantize(hs * shrink, hmax);
                if (h < cfg_.min_step) {
                    unpack(world_, sys, x);
                    throw SimError(fmt::format("step size below {:g} s at t = {:.9g} s (last good state kept)",
                                               cfg_.min_step, t));
                }
            }
            if (!x.allFinite()) throw SimError(fmt::format("non-finite state at t = {:.9g} s", t));
        }
    }

    // Largest hmax·2^−k not above h, so that few distinct step sizes (and
    // factorizations) occur.
    static double quantize(double h, double hmax) {
        if (h >= hmax) return hmax;
        return hmax * std::pow(2.0, -std::ceil(std::log2(hmax / h)));
    }
};

}  // namespace

SimTrace simulate(const GridGraph& g, const std::map<DguId, ControllerGains>& gains, const Scenario& sc,
                  const SimConfig& cfg) {
    cfg.validate();
    sc.validate(g);
    Simulation s(g, gains, sc, cfg);
    return s.run();
}

double stored_energy(const SimTrace& tr, std::size_t row) {
    double e = 0.0;
    for (std::size_t k = 0; k < tr.dgus.size(); ++k) {
        const auto& p = tr.network.dgu(tr.dgus[k]);
        const double v = tr.dgu[k].v[row], i = tr.dgu[k].it[row];
        e += 0.5 * p.c_t * v * v + 0.5 * p.l_t * i * i;
    }
    for (std::size_t k = 0; k < tr.edges.size(); ++k) {
        const auto& l = tr.network.line(tr.edges[k].first(), tr.edges[k].second());
        const double i = tr.line[k][row];
        e += 0.5 * l.l * i * i;
    }
    return e;
}

Metrics metrics(const SimTrace& tr, DguId id, double t0, double t1, double band) {
    if (!(t1 > t0)) throw InputError("metrics window must have positive length");
    const auto k = tr.index(id);
    const auto& s = tr.dgu[k];
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < tr.t.size(); ++r)
        if (tr.t[r] >= t0 - 1e-12 && (tr.t[r] < t1 - 1e-12 || (r + 1 == tr.t.size() && tr.t[r] <= t1 + 1e-12))) rows.push_back(r);
    if (rows.empty()) throw InputError("metrics window contains no samples");
    Metrics m;
    double start = t0;
    for (const auto& mk : tr.markers)
        if (mk.t >= t0 && mk.t < t1) start = std::max(start, mk.t);
    // Reference changes also count as events.
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (s.ref[rows[i]] != s.ref[rows[i - 1]]) start = std::max(start, tr.t[rows[i]]);

    std::optional<double> settle_at;
    for (auto r : rows) {
        const double dev = s.v[r] - s.ref[r];
        m.peak_deviation = std::max(m.peak_deviation, std::abs(dev));
        if (tr.t[r] < start - 1e-12) continue;
        if (std::abs(dev) >= band) settle_at.reset();
        else if (!settle_at) settle_at = tr.t[r];
    }
    m.settled = settle_at.has_value();
    m.settling_time = settle_at ? *settle_at - start : t1 - start;

    const double ref0 = s.ref[rows.front()], ref1 = s.ref[rows.back()];
    const double step = ref1 - ref0;
    if (step != 0.0) {
        double beyond = 0.0;
        for (auto r : rows) beyond = std::max(beyond, (s.v[r] - ref1) * (step > 0 ? 1.0 : -1.0));
        m.overshoot = beyond / std::abs(step);
    }
    const std::size_t tail = std::max<std::size_t>(1, rows.size() / 10);
    double acc = 0.0;
    for (std::size_t i = rows.size() - tail; i < rows.size(); ++i) acc += s.v[rows[i]] - s.ref[rows[i]];
    m.steady_state_error = acc / static_cast<double>(tail);
    return m;
}

}  // namespace dcmg
