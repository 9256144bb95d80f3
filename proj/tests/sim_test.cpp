#include <doctest.h>

#include <cmath>
#include <functional>

#include "support.hpp"

using namespace dcmg;
using doctest::Approx;

namespace {

// Scenario 1 with its events cut at `until`.
Scenario scenario1(double until) {
    Scenario sc = test::load_scenario("scenario1/scenario.ini");
    sc.duration = until;
    std::erase_if(sc.events, [&](const Event& e) { return e.time > until; });
    return sc;
}

std::map<DguId, ControllerGains> isolated_gains(const GridGraph& g) {
    GridGraph iso = g;
    for (const auto& [e, l] : g.lines()) iso.remove_line(e.first(), e.second());
    return test::synthesize_all(iso);
}

Event switch_event(double t, DguId id, std::optional<ControllerGains> gains) {
    Event e;
    e.time = t;
    e.kind = Event::Kind::switch_controller;
    e.a = id;
    e.gains = std::move(gains);
    return e;
}

double max_step_of(const std::vector<double>& v, std::size_t from) {
    double m = 0.0;
    for (std::size_t r = from + 1; r < v.size(); ++r) m = std::max(m, std::abs(v[r] - v[r - 1]));
    return m;
}

std::size_t first_row_at(const SimTrace& tr, double t) {
    std::size_t r = 0;
    while (r < tr.t.size() && tr.t[r] < t) ++r;
    return r;
}

bool has_marker(const SimTrace& tr, const std::string& text) {
    for (const auto& m : tr.markers)
        if (m.what.find(text) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_SUITE("sim") {
    TEST_CASE("bumpless arming") {
        BumplessState s;
        s.commute_threshold = 0.01;
        s.hold = 0.01;
        CHECK_FALSE(bumpless_update(s, 0.001, 0.000, 0.005));
        CHECK_FALSE(bumpless_update(s, 0.001, 0.005, 0.005));
        CHECK(bumpless_update(s, 0.001, 0.010, 0.005));
        CHECK_FALSE(bumpless_update(s, 0.5, 0.011, 0.005));
        CHECK_FALSE(s.armed);
        CHECK_FALSE(bumpless_update(s, 0.001, 0.015, 0.005));
        CHECK(bumpless_update(s, 0.001, 0.025, 0.005));
        BumplessState early;
        CHECK_FALSE(bumpless_update(early, 0.0, 0.0, 1.0));
        CHECK_FALSE(bumpless_update(early, 0.0, 0.5, 1.0));
        CHECK(early.armed);
        CHECK(bumpless_update(early, 0.0, 1.0, 1.0));
    }

    TEST_CASE("controller design honours the tracker condition") {
        auto g = test::table1_grid();
        auto k = test::synthesize(g, DguId{1});
        auto c = design_local_controller(g, DguId{1}, k, {}, 0.1);
        CHECK(c.lambda == Approx(0.1 * k.ki()));
        CHECK_FALSE(c.prefilter);
        CHECK_FALSE(c.compensator);
        ControllerStackOptions stack;
        stack.prefilter_bw_hz = 100.0;
        stack.compensator = true;
        auto full = design_local_controller(g, DguId{1}, k, stack, 0.1);
        REQUIRE(full.prefilter);
        REQUIRE(full.compensator);
        CHECK(full.prefilter->a.rows() == 3);
        CHECK(full.compensator->a.rows() == 1);
        CHECK(same_controller(full, design_local_controller(g, DguId{1}, k, stack, 0.1)));
        CHECK_FALSE(same_controller(full, c));
        ControllerGains weak = k;
        weak.k(2) = -1.0;
        CHECK_THROWS_AS(design_local_controller(g, DguId{1}, weak, {}, 0.1), InputError);
    }

    TEST_CASE("configuration and scenario validation") {
        SimConfig cfg;
        cfg.lambda_ratio = 1.5;
        CHECK_THROWS_AS(cfg.validate(), InputError);
        auto g = test::table1_grid();
        Scenario sc = scenario1(10.0);
        std::swap(sc.events.front(), sc.events.back());
        CHECK_THROWS_AS(sc.validate(g), InputError);
        Scenario late = scenario1(10.0);
        late.duration = 1.0;
        CHECK_THROWS_AS(late.validate(g), InputError);
        Scenario ghost;
        Event e;
        e.kind = Event::Kind::load_step;
        e.a = DguId{7};
        e.value = 3.0;
        ghost.events.push_back(e);
        CHECK_THROWS_AS(ghost.validate(g), InputError);
        CHECK_THROWS_AS(simulate(g, {}, Scenario{}, SimConfig{}), InputError);
    }

    TEST_CASE("zero reference and no load stay at the origin") {
        GridGraph g = test::table1_grid();
        for (DguId id : g.ids()) g.dgu_mut(id).load_r.reset();
        Scenario sc;
        sc.duration = 0.2;
        sc.default_ref = 0.0;
        auto tr = simulate(g, test::synthesize_all(g), sc, {});
        for (const auto& s : tr.dgu) {
            for (double v : s.v) CHECK(v == 0.0);
            for (double u : s.u) CHECK(u == 0.0);
        }
        for (const auto& l : tr.line)
            for (double i : l) CHECK(i == 0.0);
    }

    TEST_CASE("Scenario 1 startup tracking") {
        auto g = test::load_grid("scenario1/grid.ini");
        auto tr = simulate(g, isolated_gains(g), scenario1(1.0), {});
        for (DguId id : g.ids()) {
            auto m = metrics(tr, id, 0.0, 1.0);
            CHECK(m.settled);
            CHECK(m.settling_time < 0.3);
            CHECK(std::abs(tr.dgu[tr.index(id)].v.back() - 48.0) < 1e-6);
        }
    }

    TEST_CASE("switch to identical gains is a no-op") {
        GridGraph g;
        g.add_dgu(DguId{1}, test::table1_dgu());
        auto gains = test::synthesize_all(g);
        Scenario sc;
        sc.duration = 1.0;
        sc.events.push_back(switch_event(0.5, DguId{1}, gains.at(DguId{1})));
        auto tr = simulate(g, gains, sc, {});
        CHECK(has_marker(tr, "controller unchanged"));
        CHECK_FALSE(has_marker(tr, "commuted"));
        CHECK(max_step_of(tr.dgu[0].u, first_row_at(tr, 0.3)) < 1e-9);
    }

    TEST_CASE("bumpless switch between different gains") {
        GridGraph g;
        g.add_dgu(DguId{1}, test::table1_dgu());
        auto gains = test::synthesize_all(g);
        SynthesisOptions slow;
        slow.target_bandwidth_hz = 50.0;
        Scenario sc;
        sc.duration = 1.0;
        sc.events.push_back(switch_event(0.5, DguId{1}, test::synthesize(g, DguId{1}, slow)));
        auto tr = simulate(g, gains, sc, {});
        REQUIRE(has_marker(tr, "commuted"));
        CHECK(tr.warnings.empty());
        const auto& s = tr.dgu[0];
        const auto from = first_row_at(tr, 0.45);
        for (std::size_t r = from; r < s.v.size(); ++r) CHECK(std::abs(s.v[r] - 48.0) < 1e-3);
        CHECK(max_step_of(s.u, from) < 0.01);
    }

    TEST_CASE("unreachable arming defers the switch without a jump") {
        GridGraph g;
        g.add_dgu(DguId{1}, test::table1_dgu());
        auto gains = test::synthesize_all(g);
        SynthesisOptions slow;
        slow.target_bandwidth_hz = 50.0;
        Scenario sc;
        sc.duration = 1.0;
        sc.events.push_back(switch_event(0.3, DguId{1}, test::synthesize(g, DguId{1}, slow)));
        SimConfig cfg;
        cfg.hold = 100.0;
        cfg.switch_wait = 0.2;
        auto tr = simulate(g, gains, sc, cfg);
        CHECK_FALSE(has_marker(tr, "commuted"));
        REQUIRE(tr.warnings.size() == 1);
        CHECK(tr.warnings[0].find("deferred") != std::string::npos);
        CHECK(max_step_of(tr.dgu[0].u, first_row_at(tr, 0.1)) < 1e-6);
    }

    TEST_CASE("line currents are antisymmetric and traces deterministic") {
        auto g = test::load_grid("scenario1/grid.ini");
        auto gains = isolated_gains(g);
        Scenario sc = scenario1(3.5);
        sc.initial_line[Edge(DguId{1}, DguId{2})] = 0.0;
        auto a = simulate(g, gains, sc, {});
        auto b = simulate(g, gains, sc, {});
        for (std::size_t r = 0; r < a.t.size(); ++r)
            CHECK(a.line_current(DguId{1}, DguId{2}, r) + a.line_current(DguId{2}, DguId{1}, r) == 0.0);
        CHECK(a.t == b.t);
        for (std::size_t k = 0; k < a.dgu.size(); ++k) {
            CHECK(a.dgu[k].v == b.dgu[k].v);
            CHECK(a.dgu[k].u == b.dgu[k].u);
        }
        CHECK(a.line == b.line);
    }

    TEST_CASE("passive network dissipates energy") {
        test::RandomGrids rnd(31);
        for (int trial = 0; trial < 5; ++trial) {
            GridGraph g = rnd.grid(2, 5);
            Scenario sc;
            sc.duration = 0.05;
            for (DguId id : g.ids()) {
                g.dgu_mut(id).load_r.reset();
                sc.initial_dgu[id] = {rnd.uniform(0.0, 50.0), rnd.uniform(-5.0, 5.0)};
            }
            for (const auto& [e, l] : g.lines()) sc.initial_line[e] = rnd.uniform(-5.0, 5.0);
            SimConfig cfg;
            cfg.open_loop = true;
            cfg.record_stride = 1e-4;
            auto tr = simulate(g, {}, sc, cfg);
            const double e0 = stored_energy(tr, 0);
            CHECK(e0 > 0.0);
            int rises = 0;
            for (std::size_t r = 1; r < tr.t.size(); ++r)
                if (stored_energy(tr, r) > stored_energy(tr, r - 1) + 1e-12 * e0) ++rises;
            CHECK(rises == 0);
            CHECK(stored_energy(tr, tr.t.size() - 1) < e0);
        }
    }

    TEST_CASE("constant references are tracked exactly") {
        test::RandomGrids rnd(17);
        for (int trial = 0; trial < 4; ++trial) {
            GridGraph g = rnd.grid(2, 4);
            Scenario sc;
            sc.duration = 3.0;
            for (DguId id : g.ids()) sc.refs[id] = rnd.uniform(45.0, 50.0);
            auto tr = simulate(g, test::synthesize_all(g), sc, {});
            for (DguId id : g.ids()) {
                const auto& s = tr.dgu[tr.index(id)];
                CHECK(std::abs(s.v.back() - sc.refs.at(id)) < 1e-6);
            }
        }
    }

    TEST_CASE("halving the step changes little") {
        auto g = test::load_grid("scenario1/grid.ini");
        auto gains = isolated_gains(g);
        Scenario sc = scenario1(3.5);
        SimConfig fine;
        fine.max_step /= 2;
        fine.relaxed_max_step /= 2;
        auto a = simulate(g, gains, sc, {});
        auto b = simulate(g, gains, sc, fine);
        for (std::size_t k = 0; k < a.dgu.size(); ++k) CHECK(std::abs(a.dgu[k].v.back() - b.dgu[k].v.back()) < 1e-6);
    }
}

TEST_SUITE("metrics") {
    SimTrace synthetic(const std::function<double(double)>& v, double t_end, double dt) {
        SimTrace tr;
        tr.dgus = {DguId{1}};
        tr.dgu.resize(1);
        for (double t = 0.0; t <= t_end + 1e-12; t += dt) {
            tr.t.push_back(t);
            tr.dgu[0].v.push_back(v(t));
            tr.dgu[0].ref.push_back(1.0);
        }
        return tr;
    }

    TEST_CASE("constant trace") {
        auto tr = synthetic([](double) { return 1.0; }, 1.0, 1e-3);
        auto m = metrics(tr, DguId{1}, 0.0, 1.0);
        CHECK(m.settled);
        CHECK(m.settling_time == 0.0);
        CHECK(m.steady_state_error == 0.0);
        CHECK(m.peak_deviation == 0.0);
    }

    TEST_CASE("first-order settling") {
        const double tau = 0.01;
        auto tr = synthetic([&](double t) { return 1.0 - std::exp(-t / tau); }, 0.2, 1e-6);
        auto m = metrics(tr, DguId{1}, 0.0, 0.2, 0.02);
        CHECK(m.settling_time == Approx(std::log(50.0) * tau).epsilon(1e-3));
    }

    TEST_CASE("bad windows") {
        auto tr = synthetic([](double) { return 1.0; }, 1.0, 1e-3);
        CHECK_THROWS_AS(metrics(tr, DguId{1}, 0.5, 0.5), InputError);
        CHECK_THROWS_AS(metrics(tr, DguId{1}, 2.0, 3.0), InputError);
        CHECK_THROWS_AS(metrics(tr, DguId{2}, 0.0, 1.0), InputError);
    }
}
