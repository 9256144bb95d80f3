#include <doctest.h>

#include "support.hpp"

using namespace dcmg;

namespace {

struct Scenario2 {
    GridGraph grid = test::load_grid("scenario2/grid.ini");
    std::map<DguId, ControllerGains> gains = test::synthesize_all(grid);
    PlugRequest plug = test::load_request("scenario2/plug_dgu6.ini");
    PlugRequest unplug = test::load_request("scenario2/unplug_dgu3.ini");
};

const Scenario2& s2() {
    static const Scenario2 s;
    return s;
}

PlugRequest unplug_of(int id) {
    PlugRequest r;
    r.kind = PlugRequest::Kind::unplug;
    r.id = DguId{id};
    return r;
}

void check_locality(const GridGraph& before, const PnpDecision& d, const std::map<DguId, ControllerGains>& gains) {
    auto after = d.gains_after(gains);
    for (DguId id : before.ids()) {
        if (id == d.target || before.neighbors(d.target).contains(id)) continue;
        REQUIRE(after.contains(id));
        CHECK(after.at(id) == gains.at(id));
    }
}

}  // namespace

TEST_SUITE("pnp") {
    TEST_CASE("plug-in of DGU 6 keeps its neighbors") {
        PnpOptions opts;
        auto d = evaluate(s2().grid, s2().gains, s2().plug, opts);
        CHECK(d.allowed);
        CHECK(d.retune_set == std::set<DguId>{DguId{1}, DguId{5}, DguId{6}});
        CHECK(d.kept == std::set<DguId>{DguId{1}, DguId{5}});
        REQUIRE(d.new_gains.size() == 1);
        CHECK(d.new_gains.contains(DguId{6}));
        REQUIRE(d.global);
        CHECK(d.global->passed());
        CHECK(d.after.size() == 6);
        check_locality(s2().grid, d, s2().gains);
    }

    TEST_CASE("unplug of DGU 3 keeps its neighbors") {
        auto d = evaluate(s2().grid, s2().gains, s2().unplug, {});
        CHECK(d.allowed);
        CHECK(d.retune_set == std::set<DguId>{DguId{1}, DguId{4}});
        CHECK(d.kept == std::set<DguId>{DguId{1}, DguId{4}});
        CHECK_FALSE(d.after.has_dgu(DguId{3}));
        REQUIRE(d.global);
        CHECK(d.global->passed());
        check_locality(s2().grid, d, s2().gains);
    }

    TEST_CASE("retune policy re-synthesizes the neighborhood") {
        PnpOptions opts;
        opts.policy = Policy::retune;
        auto d = evaluate(s2().grid, s2().gains, s2().plug, opts);
        CHECK(d.allowed);
        CHECK(d.kept.empty());
        CHECK(d.new_gains.size() == 3);
        check_locality(s2().grid, d, s2().gains);
    }

    TEST_CASE("forced-infeasible neighbor denies the request") {
        PnpOptions opts;
        SynthesisOptions hard;
        hard.feasibility_margin = 1e12;
        opts.per_dgu[DguId{1}] = hard;
        auto d = evaluate(s2().grid, s2().gains, s2().plug, opts);
        CHECK_FALSE(d.allowed);
        REQUIRE(d.denied_by);
        CHECK(*d.denied_by == DguId{1});
        CHECK(d.denial_reason.find("DGU 1") != std::string::npos);
    }

    TEST_CASE("plug-in to an empty grid") {
        PlugRequest r = s2().plug;
        r.new_lines.clear();
        auto d = evaluate(GridGraph{}, {}, r, {});
        CHECK(d.allowed);
        CHECK(d.retune_set == std::set<DguId>{r.id});
    }

    TEST_CASE("unplug of an isolated unit") {
        GridGraph g = s2().grid;
        g.add_dgu(DguId{9}, test::table1_dgu());
        auto gains = s2().gains;
        gains[DguId{9}] = test::synthesize(g, DguId{9});
        auto d = evaluate(g, gains, unplug_of(9), {});
        CHECK(d.allowed);
        CHECK(d.retune_set.empty());
    }

    TEST_CASE("unplug that splits the grid is still evaluated per unit") {
        // DGU 4 is the only link to DGU 5.
        auto d = evaluate(s2().grid, s2().gains, unplug_of(4), {});
        CHECK(d.allowed);
        CHECK(d.retune_set == std::set<DguId>{DguId{2}, DguId{3}, DguId{5}});
        CHECK(d.after.neighbors(DguId{5}).empty());
    }

    TEST_CASE("evaluation is idempotent") {
        auto a = evaluate(s2().grid, s2().gains, s2().plug, {});
        auto b = evaluate(s2().grid, s2().gains, s2().plug, {});
        CHECK(a.allowed == b.allowed);
        CHECK(a.kept == b.kept);
        CHECK(a.new_gains == b.new_gains);
        CHECK(a.after == b.after);
    }

    TEST_CASE("malformed requests") {
        PlugRequest dup = s2().plug;
        dup.id = DguId{2};
        CHECK_THROWS_AS(evaluate(s2().grid, s2().gains, dup, {}), InputError);
        CHECK_THROWS_AS(evaluate(s2().grid, s2().gains, unplug_of(42), {}), InputError);
        PlugRequest dangling = s2().plug;
        dangling.new_lines[DguId{42}] = test::table1_line();
        CHECK_THROWS_AS(evaluate(s2().grid, s2().gains, dangling, {}), InputError);
    }

    TEST_CASE("policy names") {
        CHECK(parse_policy(to_string(Policy::keep_if_valid)) == Policy::keep_if_valid);
        CHECK(parse_policy(to_string(Policy::retune)) == Policy::retune);
        CHECK_THROWS_AS(parse_policy("sometimes"), InputError);
    }
}
