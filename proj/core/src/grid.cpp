#include "dcmg/grid.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace dcmg {

std::string to_string(DguId id) { return std::to_string(id.value()); }

std::string to_string(const Edge& e) {
    return fmt::format("{}-{}", e.first().value(), e.second().value());
}

namespace {

void require_positive(double v, const char* what) {
    if (!(std::isfinite(v) && v > 0.0))
        throw InputError(fmt::format("{} must be positive and finite (got {})", what, v));
}

}  // namespace

void DguParams::validate() const {
    require_positive(r_t, "r_t");
    require_positive(l_t, "l_t");
    require_positive(c_t, "c_t");
    require_positive(v_dc, "v_dc");
    if (load_r) require_positive(*load_r, "load_r");
}

void LineParams::validate() const {
    require_positive(r, "line r");
    require_positive(l, "line l");
}

Edge::Edge(DguId a, DguId b) : a_(std::min(a, b)), b_(std::max(a, b)) {
    if (a == b) throw InputError(fmt::format("self-loop on DGU {}", a.value()));
}

DguId Edge::other(DguId id) const {
    if (id == a_) return b_;
    if (id == b_) return a_;
    throw std::invalid_argument("DGU not on edge");
}

void GridGraph::add_dgu(DguId id, const DguParams& p) {
    p.validate();
    if (dgus_.contains(id)) throw InputError(fmt::format("duplicate DGU {}", id.value()));
    dgus_.emplace(id, p);
}

void GridGraph::add_line(DguId a, DguId b, const LineParams& p) {
    p.validate();
    Edge e(a, b);
    if (!has_dgu(a) || !has_dgu(b))
        throw InputError(fmt::format("line {} references an unknown DGU", to_string(e)));
    if (lines_.contains(e)) throw InputError(fmt::format("duplicate line {}", to_string(e)));
    lines_.emplace(e, p);
}

void GridGraph::remove_line(DguId a, DguId b) {
    if (lines_.erase(Edge(a, b)) == 0)
        throw InputError(fmt::format("no line {}", to_string(Edge(a, b))));
}

void GridGraph::remove_dgu(DguId id) {
    if (dgus_.erase(id) == 0) throw InputError(fmt::format("no DGU {}", id.value()));
    std::erase_if(lines_, [id](const auto& kv) { return kv.first.touches(id); });
}

bool GridGraph::has_line(DguId a, DguId b) const {
    return a != b && lines_.contains(Edge(a, b));
}

const DguParams& GridGraph::dgu(DguId id) const {
    auto it = dgus_.find(id);
    if (it == dgus_.end()) throw InputError(fmt::format("no DGU {}", id.value()));
    return it->second;
}

DguParams& GridGraph::dgu_mut(DguId id) {
    auto it = dgus_.find(id);
    if (it == dgus_.end()) throw InputError(fmt::format("no DGU {}", id.value()));
    return it->second;
}

const LineParams& GridGraph::line(DguId a, DguId b) const {
    auto it = lines_.find(Edge(a, b));
    if (it == lines_.end()) throw InputError(fmt::format("no line {}", to_string(Edge(a, b))));
    return it->second;
}

std::vector<DguId> GridGraph::ids() const {
    std::vector<DguId> out;
    out.reserve(dgus_.size());
    for (const auto& [id, _] : dgus_) out.push_back(id);
    return out;
}

std::set<DguId> GridGraph::neighbors(DguId id) const {
    std::set<DguId> out;
    for (const auto& [e, _] : lines_)
        if (e.touches(id)) out.insert(e.other(id));
    return out;
}

std::map<DguId, LineParams> GridGraph::attached(DguId id) const {
    std::map<DguId, LineParams> out;
    for (const auto& [e, p] : lines_)
        if (e.touches(id)) out.emplace(e.other(id), p);
    return out;
}

std::size_t GridGraph::index_of(DguId id) const {
    auto it = dgus_.find(id);
    if (it == dgus_.end()) throw InputError(fmt::format("no DGU {}", id.value()));
    return static_cast<std::size_t>(std::distance(dgus_.begin(), it));
}

}  // namespace dcmg
