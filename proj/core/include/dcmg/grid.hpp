#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dcmg {

// Identifier of a distributed generation unit. Kept distinct from plain
// integers so that indices into matrices and unit labels cannot be mixed up.
class DguId {
public:
    constexpr DguId() = default;
    constexpr explicit DguId(int v) : v_(v) {}
    constexpr int value() const { return v_; }
    auto operator<=>(const DguId&) const = default;

private:
    int v_ = 0;
};

std::string to_string(DguId id);

class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DguParams {
    double r_t = 0.0;   // ohm
    double l_t = 0.0;   // H
    double c_t = 0.0;   // F
    double v_dc = 0.0;  // V
    std::optional<double> load_r;  // ohm

    void validate() const;
    bool operator==(const DguParams&) const = default;
};

struct LineParams {
    double r = 0.0;  // ohm
    double l = 0.0;  // H

    void validate() const;
    bool operator==(const LineParams&) const = default;
};

// Unordered DGU pair, stored with first < second.
class Edge {
public:
    Edge(DguId a, DguId b);
    DguId first() const { return a_; }
    DguId second() const { return b_; }
    DguId other(DguId id) const;
    bool touches(DguId id) const { return a_ == id || b_ == id; }
    auto operator<=>(const Edge&) const = default;

private:
    DguId a_, b_;
};

std::string to_string(const Edge& e);

// Units and lines of an islanded grid. One LineParams per unordered pair
// serves both current directions.
class GridGraph {
public:
    GridGraph() = default;

    void add_dgu(DguId id, const DguParams& p);
    void add_line(DguId a, DguId b, const LineParams& p);
    void remove_line(DguId a, DguId b);
    // Drops the unit and every line touching it.
    void remove_dgu(DguId id);

    bool has_dgu(DguId id) const { return dgus_.contains(id); }
    bool has_line(DguId a, DguId b) const;
    const DguParams& dgu(DguId id) const;
    DguParams& dgu_mut(DguId id);
    const LineParams& line(DguId a, DguId b) const;

    const std::map<DguId, DguParams>& dgus() const { return dgus_; }
    const std::map<Edge, LineParams>& lines() const { return lines_; }

    std::vector<DguId> ids() const;
    std::set<DguId> neighbors(DguId id) const;
    // Lines attached to `id`, keyed by the neighbor at the other end.
    std::map<DguId, LineParams> attached(DguId id) const;
    // Position of a unit in the stacked state ordering (ascending id).
    std::size_t index_of(DguId id) const;

    std::size_t size() const { return dgus_.size(); }
    std::size_t edge_count() const { return lines_.size(); }

    bool operator==(const GridGraph&) const = default;

private:
    std::map<DguId, DguParams> dgus_;
    std::map<Edge, LineParams> lines_;
};

}  // namespace dcmg
