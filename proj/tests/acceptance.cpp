// Acceptance checks. One line per criterion; the exit status is the number
// of failed criteria.

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "support.hpp"

using namespace dcmg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int n, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    fmt::print("criterion {}: {} ({})\n", n, o.pass ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
}

std::map<DguId, ControllerGains> isolated_gains(const GridGraph& g) {
    GridGraph iso = g;
    for (const auto& [e, l] : g.lines()) iso.remove_line(e.first(), e.second());
    return test::synthesize_all(iso);
}

bool spectrum_union(const std::vector<cplx>& got, std::vector<cplx> want, double rel) {
    if (got.size() != want.size()) return false;
    for (cplx g : got) {
        auto it = std::find_if(want.begin(), want.end(),
                               [&](cplx w) { return std::abs(g - w) <= rel * std::max(1.0, std::abs(w)); });
        if (it == want.end()) return false;
        want.erase(it);
    }
    return true;
}

double max_deviation(const SimTrace& tr, std::size_t k, double t0, double t1, double target) {
    double m = 0.0;
    for (std::size_t r = 0; r < tr.t.size(); ++r)
        if (tr.t[r] >= t0 && tr.t[r] <= t1) m = std::max(m, std::abs(tr.dgu[k].v[r] - target));
    return m;
}

Outcome rank_gamma() {
    const auto t0 = Clock::now();
    int fails = 0;
    if (!check_rank_gamma(assemble_qsl_overall(test::table1_grid())).full()) ++fails;
    test::RandomGrids rnd(1);
    const int trials = 200;
    for (int i = 0; i < trials; ++i)
        if (!check_rank_gamma(assemble_qsl_overall(rnd.grid(1, 8))).full()) ++fails;
    const double el = seconds_since(t0);
    return {fails == 0 && el < 5.0, fmt::format("Table 1 grid + {} random grids, {} failures, {:.2f} s", trials, fails, el)};
}

Outcome controllability() {
    test::RandomGrids rnd(2);
    int fails = 0;
    const int trials = 200;
    for (int i = 0; i < trials; ++i) {
        std::vector<LineParams> lines;
        const int n = static_cast<int>(rnd.uniform(0.0, 4.0));
        for (int j = 0; j < n; ++j) lines.push_back(rnd.line());
        if (!check_local_controllability(augment_with_integrator(build_local_dgu(rnd.dgu(), lines))).full()) ++fails;
    }
    return {fails == 0, fmt::format("{} random units, {} failures", trials, fails)};
}

Outcome lemma_round_trip() {
    test::RandomGrids rnd(3);
    int solves = 0, structured = 0, bounded = 0, strict = 0, certified = 0;
    const int grids = 50;
    for (int i = 0; i < grids; ++i) {
        auto g = rnd.grid(1, 4);
        for (DguId id : g.ids()) {
            auto aug = augmented_dgu(g, id);
            auto r = solve_problem_O(aug, {});
            auto* k = std::get_if<ControllerGains>(&r);
            if (!k) continue;
            ++solves;
            auto c = verify_certificate(aug, *k);
            structured += c.p_positive && c.structure_ok;
            bounded += c.gain_ok;
            strict += c.literal_strict();
            certified += c.passed();
        }
    }
    // The literal strict inequality is required by the criterion; the
    // semidefinite certificate with its kernel check is reported alongside.
    const bool pass = solves > 0 && structured == solves && bounded == solves && strict == solves;
    return {pass, fmt::format("{} solves on {} grids: structure {}/{}, gain bound {}/{}, literal lambda_max < 0 {}/{}, "
                              "semidefinite certificate with kernel check {}/{}",
                              solves, grids, structured, solves, bounded, solves, strict, solves, certified, solves)};
}

Outcome global_stability() {
    auto g = test::load_grid("scenario2/grid.ini");
    auto gains = test::synthesize_all(g);
    const double tol = SynthesisOptions{}.assumption2_tol;
    auto c = certify_global_stability(g, gains, tol);
    return {c.spectral_ok && c.coupling_term_max_abs <= tol,
            fmt::format("max Re(lambda) = {:.4g}, coupling term max |entry| = {:.3g} (tol {:g})", c.max_real_eig,
                        c.coupling_term_max_abs, tol)};
}

Outcome spectrum_remark() {
    const auto t0 = Clock::now();
    auto g = test::table1_grid();
    auto full = spectrum(assemble_full_line_model(g, LineCoupling::quasi_static).a).eigenvalues;
    auto want = spectrum(assemble_qsl_overall(g).a).eigenvalues;
    const double pole = -g.line(DguId{1}, DguId{2}).r / g.line(DguId{1}, DguId{2}).l;
    want.push_back(pole);
    want.push_back(pole);
    const bool ok = spectrum_union(full, want, 1e-6);
    const double el = seconds_since(t0);
    return {ok && el < 1.0, fmt::format("{} eigenvalues matched to 1e-6, {:.4f} s", full.size(), el)};
}

SimConfig scenario1_config() {
    SimConfig cfg;
    cfg.stack.prefilter_bw_hz = 100.0;
    cfg.stack.compensator = true;
    return cfg;
}

struct Scenario1Run {
    GridGraph grid;
    SimTrace trace;
    double seconds = 0.0;
};

const Scenario1Run& scenario1_run() {
    static const Scenario1Run run = [] {
        Scenario1Run r;
        r.grid = test::load_grid("scenario1/grid.ini");
        const auto t0 = Clock::now();
        r.trace = simulate(r.grid, isolated_gains(r.grid), test::load_scenario("scenario1/scenario.ini"),
                           scenario1_config());
        r.seconds = seconds_since(t0);
        return r;
    }();
    return run;
}

Outcome scenario1() {
    const auto& run = scenario1_run();
    const auto& tr = run.trace;
    const DguId d1{1}, d2{2};
    const auto k1 = tr.index(d1), k2 = tr.index(d2);

    const double startup = std::max(max_deviation(tr, k1, 0.5, 2.0 - 1e-9, 48.0), max_deviation(tr, k2, 0.5, 2.0 - 1e-9, 48.0));
    const bool a = startup < 0.05;

    double hot = 0.0;
    for (std::size_t r = 0; r < tr.t.size(); ++r)
        if (tr.t[r] >= 2.0 && tr.t[r] <= 2.2)
            for (auto k : {k1, k2}) hot = std::max(hot, std::abs(tr.dgu[k].v[r] - tr.dgu[k].ref[r]));
    int commuted = 0;
    for (const auto& m : tr.markers) commuted += m.what.find("commuted") != std::string::npos;
    const bool b = hot < 0.5 && commuted == 2;

    auto m1 = metrics(tr, d1, 3.0, 4.0), m2 = metrics(tr, d2, 3.0, 4.0);
    const bool c = m1.settled && m2.settled && m1.settling_time <= 0.5 && m2.settling_time <= 0.5;

    auto r1 = metrics(tr, d1, 4.0, 10.0);
    const double d2_end = max_deviation(tr, k2, 9.0, 10.0, 48.0);
    const bool d = std::abs(r1.steady_state_error) < 0.01 && r1.settled && d2_end < 0.05;

    const bool fast = run.seconds < 120.0;
    return {a && b && c && d && fast && tr.warnings.empty(),
            fmt::format("(a) startup max dev {:.2e} V; (b) hot plug max dev {:.3f} V, {} commutations; (c) load halving "
                        "settles in {:.4f}/{:.4f} s, peak {:.3f}/{:.3f} V; (d) DGU 1 sse {:.2e} V, DGU 2 max dev {:.2e} V; "
                        "{} warnings; {:.1f} s",
                        startup, hot, commuted, m1.settling_time, m2.settling_time, m1.peak_deviation,
                        m2.peak_deviation, r1.steady_state_error, d2_end, tr.warnings.size(), run.seconds)};
}

Outcome scenario2() {
    auto g = test::load_grid("scenario2/grid.ini");
    auto gains = test::synthesize_all(g);
    auto plug = evaluate(g, gains, test::load_request("scenario2/plug_dgu6.ini"), {});
    auto after_plug = plug.gains_after(gains);
    auto unplug = evaluate(plug.after, after_plug, test::load_request("scenario2/unplug_dgu3.ini"), {});

    auto contains = [](const std::set<DguId>& s, std::initializer_list<int> ids) {
        return std::all_of(ids.begin(), ids.end(), [&](int i) { return s.contains(DguId{i}); });
    };
    const bool plug_ok = plug.allowed && contains(plug.kept, {1, 5}) && plug.global && plug.global->spectral_ok;
    const bool unplug_ok = unplug.allowed && contains(unplug.kept, {1, 4}) && unplug.global && unplug.global->spectral_ok;

    Scenario sc = test::load_scenario("scenario2/scenario.ini");
    auto tr = simulate(g, gains, sc, {});
    std::vector<double> events{0.0};
    for (const auto& e : sc.events) events.push_back(e.time);
    double worst = 0.0;
    for (std::size_t r = 0; r < tr.t.size(); ++r) {
        const double t = tr.t[r];
        if (std::any_of(events.begin(), events.end(), [&](double e) { return t >= e && t < e + 0.2; })) continue;
        for (const auto& s : tr.dgu) worst = std::max(worst, std::abs(s.v[r] - s.ref[r]));
    }
    bool sim_plug = false, sim_unplug = false;
    for (const auto& d : tr.decisions) {
        if (d.kind == PlugRequest::Kind::plug_in) sim_plug = d.allowed;
        if (d.kind == PlugRequest::Kind::unplug) sim_unplug = d.allowed;
    }
    const bool sim_ok = worst < 0.5 && sim_plug && sim_unplug;
    auto list = [](const std::set<DguId>& s) {
        std::string out;
        for (DguId id : s) out += (out.empty() ? "" : ",") + to_string(id);
        return out;
    };
    return {plug_ok && unplug_ok && sim_ok,
            fmt::format("plug-in DGU 6 allowed={} kept {{{}}} max Re {:.3g}; unplug DGU 3 allowed={} kept {{{}}} max Re "
                        "{:.3g}; simulated max deviation outside windows {:.2e} V",
                        plug.allowed, list(plug.kept), plug.global ? plug.global->max_real_eig : NAN, unplug.allowed,
                        list(unplug.kept), unplug.global ? unplug.global->max_real_eig : NAN, worst)};
}

// Peak PCC deviation after a load change on the interconnected Scenario 1
// grid, with and without the load-current compensator.
struct LoadStep {
    double peak_with = 0.0, peak_without = 0.0;
    std::size_t warnings = 0;
};

LoadStep load_step(const std::map<DguId, double>& new_loads) {
    auto g = test::load_grid("scenario1/grid.ini");
    auto gains = test::synthesize_all(g);
    Scenario sc;
    sc.duration = 1.5;
    for (const auto& [id, r] : new_loads) {
        Event e;
        e.time = 1.0;
        e.kind = Event::Kind::load_step;
        e.a = id;
        e.value = r;
        sc.events.push_back(e);
    }
    LoadStep out;
    for (bool comp : {true, false}) {
        SimConfig cfg;
        cfg.stack.compensator = comp;
        cfg.window_record_stride = 1e-5;
        auto tr = simulate(g, gains, sc, cfg);
        double peak = 0.0;
        for (DguId id : g.ids()) peak = std::max(peak, metrics(tr, id, 1.0, 1.5).peak_deviation);
        (comp ? out.peak_with : out.peak_without) = peak;
        if (comp) out.warnings = tr.warnings.size();
    }
    return out;
}

Outcome exactness() {
    auto g = test::load_grid("scenario1/grid.ini");
    auto gains = test::synthesize_all(g);
    double pre = 0.0, comp = 0.0;
    bool designed = true;
    for (DguId id : g.ids()) {
        auto aug = augmented_dgu(g, id);
        auto f = closed_loop_reference_tf(aug, gains.at(id));
        auto ft = desired_tf_template(100.0, f.relative_degree());
        auto c = design_prefilter(f, ft);
        if (auto* tf = std::get_if<RationalTf>(&c)) pre = std::max(pre, rational_mismatch(*tf * f, ft));
        else designed = false;
        auto [gd, gu] = disturbance_tfs(aug, gains.at(id));
        auto n = design_disturbance_compensator(gd, gu);
        std::optional<RationalTf> exact;
        if (auto* tf = std::get_if<RationalTf>(&n)) exact = *tf;
        else if (std::get<Rejection>(n).kind == Rejection::Kind::improper) exact = std::get<Rejection>(n).candidate;
        if (exact) comp = std::max(comp, rational_mismatch(gd, -(gu * *exact)));
        else designed = false;
    }
    // A small step keeps the converter inside its voltage limits.
    const auto small = load_step({{DguId{2}, 5.8}});
    const double ratio = small.peak_with / small.peak_without;
    const auto halving = load_step({{DguId{1}, 5.0}, {DguId{2}, 3.0}});
    return {designed && pre <= 1e-9 && comp <= 1e-9 && ratio <= 0.1 && small.warnings == 0,
            fmt::format("prefilter mismatch {:.2e}, compensator mismatch {:.2e}; 6->5.8 ohm step peak {:.3e} V vs {:.3e} "
                        "V uncompensated (ratio {:.3f}); for reference, load halving with actuator saturation: ratio "
                        "{:.3f}",
                        pre, comp, small.peak_with, small.peak_without, ratio,
                        halving.peak_with / halving.peak_without)};
}

Outcome physics() {
    const auto& run = scenario1_run();
    const auto& tr = run.trace;
    double asym = 0.0;
    for (const auto& e : tr.edges)
        for (std::size_t r = 0; r < tr.t.size(); ++r)
            asym = std::max(asym, std::abs(tr.line_current(e.first(), e.second(), r) +
                                           tr.line_current(e.second(), e.first(), r)));

    GridGraph passive = test::load_grid("scenario1/grid.ini");
    for (DguId id : passive.ids()) passive.dgu_mut(id).load_r.reset();
    Scenario sc;
    sc.duration = 0.1;
    sc.initial_dgu[DguId{1}] = {48.0, 2.0};
    sc.initial_dgu[DguId{2}] = {10.0, -1.0};
    sc.initial_line[Edge(DguId{1}, DguId{2})] = 3.0;
    SimConfig open;
    open.open_loop = true;
    open.record_stride = 1e-5;
    auto p = simulate(passive, {}, sc, open);
    const double e0 = stored_energy(p, 0);
    double rise = 0.0;
    for (std::size_t r = 1; r < p.t.size(); ++r) rise = std::max(rise, stored_energy(p, r) - stored_energy(p, r - 1));

    SimConfig fine = scenario1_config();
    fine.max_step /= 2;
    fine.relaxed_max_step /= 2;
    auto h = simulate(run.grid, isolated_gains(run.grid), test::load_scenario("scenario1/scenario.ini"), fine);
    double diff = 0.0;
    for (std::size_t k = 0; k < tr.dgu.size(); ++k) diff = std::max(diff, std::abs(tr.dgu[k].v.back() - h.dgu[k].v.back()));

    return {asym == 0.0 && rise <= 0.0 && diff < 1e-6,
            fmt::format("max |I_ij + I_ji| = {:g}; largest energy increase between samples {:.3g} J (E0 {:.3g} J); "
                        "final V change under step halving {:.2e} V",
                        asym, rise, e0, diff)};
}

}  // namespace

int main() {
    spdlog::set_default_logger(spdlog::stderr_color_mt("dcmg"));
    report(1, rank_gamma);
    report(2, controllability);
    report(3, lemma_round_trip);
    report(4, global_stability);
    report(5, spectrum_remark);
    report(6, scenario1);
    report(7, scenario2);
    report(8, exactness);
    report(9, physics);
    fmt::print("{} of 9 criteria failed\n", failures);
    return failures;
}
