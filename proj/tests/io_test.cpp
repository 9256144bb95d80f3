#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace dcmg;
using doctest::Approx;

namespace {

template <class T, class Writer>
std::string written(const T& value, Writer w) {
    std::ostringstream os;
    w(os, value, io::Header{"test"});
    return os.str();
}

template <class Reader>
auto reread(const std::string& text, Reader r) {
    std::istringstream is(text);
    return r(is);
}

// write → read → write must reproduce the same bytes.
template <class T, class Writer, class Reader>
void check_stable(const T& value, Writer w, Reader r) {
    const std::string once = written(value, w);
    const std::string twice = written(reread(once, r), w);
    CHECK(once == twice);
}

}  // namespace

TEST_SUITE("io") {
    TEST_CASE("quantities") {
        CHECK(io::parse_quantity("2.2m") == Approx(2.2e-3));
        CHECK(io::parse_quantity("1.8u") == Approx(1.8e-6));
        CHECK(io::parse_quantity("1.8\xC2\xB5") == Approx(1.8e-6));
        CHECK(io::parse_quantity("10k") == 1e4);
        CHECK(io::parse_quantity(" 3 ") == 3.0);
        CHECK(io::parse_quantity("1e-3") == 1e-3);
        CHECK(std::isinf(io::parse_quantity("open")));
        CHECK_THROWS_AS(io::parse_quantity("abc"), InputError);
        CHECK_THROWS_AS(io::parse_quantity(""), InputError);
        CHECK_THROWS_AS(io::parse_quantity("1.2.3"), InputError);
        const double x = 0.1 + 0.2;
        CHECK(io::parse_quantity(io::format_number(x)) == x);
    }

    TEST_CASE("grid files") {
        test::RandomGrids rnd(4);
        for (int i = 0; i < 10; ++i) {
            GridGraph g = rnd.grid(1, 8);
            if (i % 3 == 0) g.dgu_mut(DguId{1}).load_r.reset();
            CHECK(reread(written(g, io::write_grid), io::read_grid) == g);
        }
        CHECK_THROWS_AS(reread("[dgu.1]\nr_t = 1\n", io::read_grid), InputError);
        CHECK_THROWS_AS(reread("[dgu.1]\nr_t=1\nl_t=1\nc_t=1\nv_dc=1\ncolour=red\n", io::read_grid), InputError);
        CHECK_THROWS_AS(reread("[wire.1-2]\nr=1\n", io::read_grid), InputError);
        CHECK_THROWS_AS(reread("[dgu.1]\nr_t=-1\nl_t=1\nc_t=1\nv_dc=1\n", io::read_grid), InputError);
    }

    TEST_CASE("gains files") {
        auto g = test::table1_grid();
        io::GainsFile f;
        f.gains = test::synthesize_all(g);
        f.prefilters[DguId{1}] = desired_tf_template(100.0, 3);
        f.compensators[DguId{2}] = RationalTf(Polynomial({1.8e-3, 3.39}), Polynomial({1.0 / 62831.85, 1.0}));
        auto back = reread(written(f, io::write_gains), io::read_gains);
        REQUIRE(back.gains.size() == 2);
        for (const auto& [id, k] : f.gains) {
            CHECK(back.gains.at(id).k == k.k);
            CHECK((back.gains.at(id).p - k.p).cwiseAbs().maxCoeff() <= 1e-15 * k.p.cwiseAbs().maxCoeff());
            CHECK(back.gains.at(id).beta == k.beta);
        }
        CHECK(back.prefilters.at(DguId{1}).den.coeffs() == f.prefilters.at(DguId{1}).den.coeffs());
        check_stable(f, io::write_gains, io::read_gains);
    }

    TEST_CASE("requests and scenarios") {
        auto plug = test::load_request("scenario2/plug_dgu6.ini");
        CHECK(plug.kind == PlugRequest::Kind::plug_in);
        CHECK(plug.new_lines.size() == 2);
        check_stable(plug, io::write_request, io::read_request);
        check_stable(test::load_request("scenario2/unplug_dgu3.ini"), io::write_request, io::read_request);

        for (const char* name : {"scenario1/scenario.ini", "scenario2/scenario.ini"}) {
            Scenario sc = test::load_scenario(name);
            check_stable(sc, io::write_scenario, io::read_scenario);
            Scenario back = reread(written(sc, io::write_scenario), io::read_scenario);
            REQUIRE(back.events.size() == sc.events.size());
            for (std::size_t i = 0; i < sc.events.size(); ++i) {
                CHECK(back.events[i].kind == sc.events[i].kind);
                CHECK(back.events[i].time == sc.events[i].time);
                CHECK(back.events[i].value == sc.events[i].value);
            }
            CHECK(back.initially_open == sc.initially_open);
        }
        Scenario s1 = test::load_scenario("scenario1/scenario.ini");
        CHECK(s1.duration == 10.0);
        CHECK(s1.events.size() == 6);
        CHECK_THROWS_AS(reread("[scenario]\nduration = 1\n[event.1]\ntime = 0.5\nkind = explode\n", io::read_scenario),
                        InputError);
    }

    TEST_CASE("decisions and certificates") {
        auto g = test::load_grid("scenario2/grid.ini");
        auto gains = test::synthesize_all(g);
        auto d = evaluate(g, gains, test::load_request("scenario2/plug_dgu6.ini"), {});
        auto back = reread(written(d, io::write_decision), io::read_decision);
        CHECK(back.allowed == d.allowed);
        CHECK(back.kept == d.kept);
        CHECK(back.retune_set == d.retune_set);
        CHECK(back.after == d.after);
        REQUIRE(back.new_gains.size() == d.new_gains.size());
        CHECK(back.new_gains.at(DguId{6}).k == d.new_gains.at(DguId{6}).k);

        io::CertificateFile c;
        c.global = certify_global_stability(g, gains);
        for (DguId id : g.ids()) c.local[id] = verify_certificate(augmented_dgu(g, id), gains.at(id));
        check_stable(c, io::write_certificate, io::read_certificate);
        auto cb = reread(written(c, io::write_certificate), io::read_certificate);
        CHECK(cb.global.max_real_eig == c.global.max_real_eig);
        CHECK(cb.local.at(DguId{3}).passed() == c.local.at(DguId{3}).passed());
    }

    TEST_CASE("trace csv") {
        GridGraph g = test::table1_grid();
        Scenario sc;
        sc.duration = 0.05;
        auto tr = simulate(g, test::synthesize_all(g), sc, {});
        std::ostringstream os;
        io::write_trace_csv(os, tr);
        std::istringstream is(os.str());
        auto back = io::read_trace_csv(is);
        CHECK(back.t == tr.t);
        REQUIRE(back.dgu.size() == tr.dgu.size());
        CHECK(back.dgu[1].v == tr.dgu[1].v);
        CHECK(back.dgu[0].u == tr.dgu[0].u);
        CHECK(back.line == tr.line);
        std::istringstream again(os.str());
        auto table = io::read_csv(again);
        const auto ij = table.column("I1_2"), ji = table.column("I2_1");
        for (const auto& row : table.rows) CHECK(row[ij] + row[ji] == 0.0);
    }
}
