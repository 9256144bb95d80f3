#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>

#include "dcmg/io.hpp"
#include "dcmg/sim.hpp"

namespace dcmg::test {

inline std::filesystem::path data_dir() { return DCMG_TEST_DATA_DIR; }

inline DguParams table1_dgu(double load = 10.0) { return {0.2, 1.8e-3, 2.2e-3, 100.0, load}; }
inline LineParams table1_line() { return {0.05, 1.8e-6}; }

inline GridGraph table1_grid() {
    GridGraph g;
    g.add_dgu(DguId{1}, table1_dgu(10.0));
    g.add_dgu(DguId{2}, table1_dgu(6.0));
    g.add_line(DguId{1}, DguId{2}, table1_line());
    return g;
}

inline GridGraph load_grid(const std::string& rel) { return io::read_file(data_dir() / rel, io::read_grid); }
inline Scenario load_scenario(const std::string& rel) {
    return io::read_file(data_dir() / rel, io::read_scenario);
}
inline PlugRequest load_request(const std::string& rel) {
    return io::read_file(data_dir() / rel, io::read_request);
}

inline ControllerGains synthesize(const GridGraph& g, DguId id, const SynthesisOptions& opts = {}) {
    auto r = solve_problem_O(augmented_dgu(g, id), opts);
    if (auto* k = std::get_if<ControllerGains>(&r)) return *k;
    throw std::runtime_error("synthesis failed for DGU " + to_string(id));
}

inline std::map<DguId, ControllerGains> synthesize_all(const GridGraph& g, const SynthesisOptions& opts = {}) {
    std::map<DguId, ControllerGains> out;
    for (DguId id : g.ids()) out[id] = synthesize(g, id, opts);
    return out;
}

// Positive parameters spread around realistic converter values; connected
// by a random spanning tree plus a few chords.
class RandomGrids {
public:
    explicit RandomGrids(std::uint64_t seed) : rng_(seed) {}

    DguParams dgu() {
        return {uniform(0.05, 1.0), uniform(0.5e-3, 5e-3), uniform(1e-3, 5e-3), 100.0, uniform(2.0, 20.0)};
    }
    LineParams line() { return {uniform(0.02, 0.2), uniform(0.5e-6, 5e-6)}; }

    GridGraph grid(int min_units, int max_units) {
        std::uniform_int_distribution<int> count(min_units, max_units);
        const int n = count(rng_);
        GridGraph g;
        for (int i = 1; i <= n; ++i) g.add_dgu(DguId{i}, dgu());
        for (int i = 2; i <= n; ++i) {
            std::uniform_int_distribution<int> parent(1, i - 1);
            g.add_line(DguId{i}, DguId{parent(rng_)}, line());
        }
        std::bernoulli_distribution chord(0.2);
        for (int i = 1; i <= n; ++i)
            for (int j = i + 1; j <= n; ++j)
                if (!g.has_line(DguId{i}, DguId{j}) && chord(rng_)) g.add_line(DguId{i}, DguId{j}, line());
        return g;
    }

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

private:
    std::mt19937_64 rng_;
};

}  // namespace dcmg::test
