#include "dcmg/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace dcmg::io {

namespace {

using boost::property_tree::ptree;

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t at = 0;
    while (true) {
        auto p = s.find(sep, at);
        out.push_back(trim(s.substr(at, p == std::string_view::npos ? std::string_view::npos : p - at)));
        if (p == std::string_view::npos) break;
        at = p + 1;
    }
    return out;
}

ptree parse_ini(std::istream& is) {
    ptree pt;
    try {
        boost::property_tree::ini_parser::read_ini(is, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw InputError(fmt::format("line {}: {}", e.line(), e.message()));
    }
    return pt;
}

// Section keys may contain dots, so lookups bypass the path syntax.
const ptree* child(const ptree& s, const std::string& key) {
    auto c = s.get_child_optional(ptree::path_type(key, '/'));
    return c ? &*c : nullptr;
}

std::optional<std::string> field(const ptree& s, const std::string& key) {
    if (const auto* c = child(s, key)) return c->data();
    return std::nullopt;
}

std::string need(const ptree& s, const std::string& sec, const std::string& key) {
    auto v = field(s, key);
    if (!v) throw InputError(fmt::format("[{}]: missing '{}'", sec, key));
    return *v;
}

double number(const std::string& sec, const std::string& key, const std::string& text) {
    try {
        return parse_quantity(text);
    } catch (const InputError& e) {
        throw InputError(fmt::format("[{}] {}: {}", sec, key, e.what()));
    }
}

double need_number(const ptree& s, const std::string& sec, const std::string& key) {
    return number(sec, key, need(s, sec, key));
}

std::vector<double> numbers(const std::string& sec, const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& part : split(text, ',')) out.push_back(number(sec, key, part));
    return out;
}

bool boolean(const std::string& sec, const std::string& key, const std::string& text) {
    if (text == "true" || text == "yes" || text == "1") return true;
    if (text == "false" || text == "no" || text == "0") return false;
    throw InputError(fmt::format("[{}] {}: expected true or false, got '{}'", sec, key, text));
}

int integer(std::string_view text, std::string_view what) {
    const auto t = trim(text);
    int v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
        throw InputError(fmt::format("invalid {} '{}'", what, t));
    return v;
}

DguId unit_id(std::string_view text) {
    const int v = integer(text, "DGU id");
    if (v <= 0) throw InputError(fmt::format("DGU id must be positive, got {}", v));
    return DguId{v};
}

Edge edge(std::string_view text) {
    const auto parts = split(text, '-');
    if (parts.size() != 2) throw InputError(fmt::format("invalid line '{}' (expected i-j)", text));
    const auto a = unit_id(parts[0]), b = unit_id(parts[1]);
    if (a == b) throw InputError(fmt::format("line '{}' joins a unit to itself", text));
    return Edge(a, b);
}

void check_keys(const ptree& s, const std::string& sec, const std::set<std::string>& allowed,
                std::string_view prefix = {}) {
    for (const auto& [k, _] : s) {
        if (allowed.contains(k)) continue;
        if (!prefix.empty() && k.starts_with(prefix)) continue;
        throw InputError(fmt::format("[{}]: unknown key '{}'", sec, k));
    }
}

std::string joined(const std::vector<double>& v) {
    std::vector<std::string> parts;
    for (double x : v) parts.push_back(format_number(x));
    return fmt::format("{}", fmt::join(parts, ", "));
}

std::string id_list(const std::set<DguId>& ids) {
    std::vector<int> v;
    for (const auto& id : ids) v.push_back(id.value());
    return fmt::format("{}", fmt::join(v, ", "));
}

std::set<DguId> parse_id_list(const std::string& text) {
    std::set<DguId> out;
    if (trim(text).empty()) return out;
    for (const auto& p : split(text, ',')) out.insert(unit_id(p));
    return out;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

void put_header(std::ostream& os, const Header& h) {
    for (const auto& line : h) os << "# " << line << '\n';
    if (!h.empty()) os << '\n';
}

DguParams dgu_params(const ptree& s, const std::string& sec) {
    DguParams p;
    p.r_t = need_number(s, sec, "r_t");
    p.l_t = need_number(s, sec, "l_t");
    p.c_t = need_number(s, sec, "c_t");
    p.v_dc = need_number(s, sec, "v_dc");
    if (auto l = field(s, "load_r")) {
        const double r = number(sec, "load_r", *l);
        if (std::isfinite(r)) p.load_r = r;
    }
    try {
        p.validate();
    } catch (const InputError& e) {
        throw InputError(fmt::format("[{}]: {}", sec, e.what()));
    }
    return p;
}

void put_dgu_params(std::ostream& os, const DguParams& p) {
    os << "r_t = " << format_number(p.r_t) << '\n'
       << "l_t = " << format_number(p.l_t) << '\n'
       << "c_t = " << format_number(p.c_t) << '\n'
       << "v_dc = " << format_number(p.v_dc) << '\n';
    if (p.load_r) os << "load_r = " << format_number(*p.load_r) << '\n';
}

LineParams line_params(const std::string& sec, const std::string& key, const std::string& text) {
    const auto v = numbers(sec, key, text);
    if (v.size() != 2) throw InputError(fmt::format("[{}] {}: expected 'r, l'", sec, key));
    LineParams l{v[0], v[1]};
    try {
        l.validate();
    } catch (const InputError& e) {
        throw InputError(fmt::format("[{}] {}: {}", sec, key, e.what()));
    }
    return l;
}

bool is_section(const std::string& name, std::string_view prefix) { return name.starts_with(prefix); }

// Grid sections of a tree; other sections are rejected when `strict`.
GridGraph grid_from(const ptree& pt, bool strict) {
    GridGraph g;
    std::vector<std::pair<Edge, LineParams>> lines;
    for (const auto& [name, s] : pt) {
        if (is_section(name, "dgu.")) {
            check_keys(s, name, {"r_t", "l_t", "c_t", "v_dc", "load_r"});
            const auto id = unit_id(name.substr(4));
            if (g.has_dgu(id)) throw InputError(fmt::format("[{}]: duplicate unit", name));
            g.add_dgu(id, dgu_params(s, name));
        } else if (is_section(name, "line.")) {
            check_keys(s, name, {"r", "l"});
            LineParams l{need_number(s, name, "r"), need_number(s, name, "l")};
            try {
                l.validate();
            } catch (const InputError& e) {
                throw InputError(fmt::format("[{}]: {}", name, e.what()));
            }
            lines.emplace_back(edge(name.substr(5)), l);
        } else if (strict) {
            throw InputError(fmt::format("unknown section [{}]", name));
        }
    }
    for (const auto& [e, l] : lines) {
        if (!g.has_dgu(e.first()) || !g.has_dgu(e.second()))
            throw InputError(fmt::format("[line.{}-{}]: unknown unit", e.first().value(), e.second().value()));
        if (g.has_line(e.first(), e.second()))
            throw InputError(fmt::format("[line.{}-{}]: duplicate line", e.first().value(), e.second().value()));
        g.add_line(e.first(), e.second(), l);
    }
    return g;
}

void put_grid(std::ostream& os, const GridGraph& g) {
    for (const auto& [id, p] : g.dgus()) {
        os << "[dgu." << id.value() << "]\n";
        put_dgu_params(os, p);
        os << '\n';
    }
    for (const auto& [e, l] : g.lines()) {
        os << "[line." << e.first().value() << '-' << e.second().value() << "]\n"
           << "r = " << format_number(l.r) << '\n'
           << "l = " << format_number(l.l) << "\n\n";
    }
}

ControllerGains gains_from(const ptree& s, const std::string& sec) {
    check_keys(s, sec, {"k", "p", "eta", "gamma", "beta", "delta", "solver"});
    ControllerGains g;
    const auto k = numbers(sec, "k", need(s, sec, "k"));
    if (k.size() != 3) throw InputError(fmt::format("[{}] k: expected 3 numbers", sec));
    g.k << k[0], k[1], k[2];
    if (auto p = field(s, "p")) {
        const auto v = numbers(sec, "p", *p);
        if (v.size() != 6) throw InputError(fmt::format("[{}] p: expected 6 numbers (upper triangle)", sec));
        g.p << v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5];
    }
    auto opt = [&](const char* key, double& out) {
        if (auto f = field(s, key)) out = number(sec, key, *f);
    };
    opt("eta", g.eta);
    opt("gamma", g.gamma);
    opt("beta", g.beta);
    opt("delta", g.delta);
    if (auto f = field(s, "solver")) g.solver_info = *f;
    if (!g.k.allFinite()) throw InputError(fmt::format("[{}] k: non-finite gain", sec));
    return g;
}

void put_gains(std::ostream& os, const std::string& sec, const ControllerGains& g) {
    const auto& p = g.p;
    os << '[' << sec << "]\n"
       << "k = " << joined({g.k(0), g.k(1), g.k(2)}) << '\n'
       << "p = " << joined({p(0, 0), p(0, 1), p(0, 2), p(1, 1), p(1, 2), p(2, 2)}) << '\n'
       << "eta = " << format_number(g.eta) << '\n'
       << "gamma = " << format_number(g.gamma) << '\n'
       << "beta = " << format_number(g.beta) << '\n'
       << "delta = " << format_number(g.delta) << '\n';
    if (!g.solver_info.empty()) os << "solver = " << one_line(g.solver_info) << '\n';
    os << '\n';
}

RationalTf tf_from(const ptree& s, const std::string& sec) {
    check_keys(s, sec, {"num", "den"});
    const auto num = numbers(sec, "num", need(s, sec, "num"));
    const auto den = numbers(sec, "den", need(s, sec, "den"));
    if (std::all_of(den.begin(), den.end(), [](double c) { return c == 0.0; }))
        throw InputError(fmt::format("[{}] den: zero denominator", sec));
    return RationalTf(Polynomial(num), Polynomial(den));
}

void put_tf(std::ostream& os, const std::string& sec, const RationalTf& tf) {
    os << '[' << sec << "]\n"
       << "num = " << joined(tf.num.coeffs()) << '\n'
       << "den = " << joined(tf.den.coeffs()) << "\n\n";
}

PlugRequest request_from(const ptree& s, const std::string& sec, const std::set<std::string>& extra = {}) {
    std::set<std::string> allowed{"kind", "dgu", "r_t", "l_t", "c_t", "v_dc", "load_r"};
    allowed.insert(extra.begin(), extra.end());
    check_keys(s, sec, allowed, "line.");
    PlugRequest r;
    const auto kind = need(s, sec, "kind");
    if (kind == "plug_in") r.kind = PlugRequest::Kind::plug_in;
    else if (kind == "unplug") r.kind = PlugRequest::Kind::unplug;
    else throw InputError(fmt::format("[{}] kind: expected plug_in or unplug, got '{}'", sec, kind));
    r.id = unit_id(need(s, sec, "dgu"));
    if (r.kind == PlugRequest::Kind::plug_in) {
        r.new_dgu = dgu_params(s, sec);
        for (const auto& [k, v] : s)
            if (k.starts_with("line.")) r.new_lines[unit_id(k.substr(5))] = line_params(sec, k, v.data());
    } else {
        for (const auto& [k, _] : s)
            if (k != "kind" && k != "dgu" && !extra.contains(k))
                throw InputError(fmt::format("[{}]: '{}' does not apply to an unplug request", sec, k));
    }
    return r;
}

// Everything but the kind, which events already carry.
void put_request_body(std::ostream& os, const PlugRequest& r) {
    os << "dgu = " << r.id.value() << '\n';
    if (r.kind == PlugRequest::Kind::plug_in && r.new_dgu) {
        put_dgu_params(os, *r.new_dgu);
        for (const auto& [j, l] : r.new_lines)
            os << "line." << j.value() << " = " << format_number(l.r) << ", " << format_number(l.l) << '\n';
    }
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

Event::Kind event_kind(const std::string& sec, const std::string& s) {
    for (auto k : {Event::Kind::connect, Event::Kind::disconnect, Event::Kind::load_step, Event::Kind::ref_step,
                   Event::Kind::plug_in, Event::Kind::unplug, Event::Kind::switch_controller})
        if (to_string(k) == s) return k;
    throw InputError(fmt::format("[{}] kind: unknown event kind '{}'", sec, s));
}

}  // namespace

double parse_quantity(std::string_view text) {
    std::string t = trim(text);
    if (t.empty()) throw InputError("empty number");
    std::string lower = t;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "open" || lower == "inf" || lower == "+inf") return std::numeric_limits<double>::infinity();
    double mult = 1.0;
    if (t.ends_with("\xC2\xB5")) {
        mult = 1e-6;
        t.resize(t.size() - 2);
    } else {
        switch (t.back()) {
            case 'n': mult = 1e-9; break;
            case 'u': mult = 1e-6; break;
            case 'm': mult = 1e-3; break;
            case 'k': mult = 1e3; break;
            case 'M': mult = 1e6; break;
            default: break;
        }
        if (mult != 1.0) t.pop_back();
    }
    t = trim(t);
    double v = 0.0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
        throw InputError(fmt::format("invalid number '{}'", trim(text)));
    if (!std::isfinite(v)) throw InputError(fmt::format("non-finite number '{}'", trim(text)));
    return v * mult;
}

std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{}", v);  // shortest text that reads back exactly
}

GridGraph read_grid(std::istream& is) { return grid_from(parse_ini(is), true); }

void write_grid(std::ostream& os, const GridGraph& g, const Header& header) {
    put_header(os, header);
    put_grid(os, g);
}

GainsFile read_gains(std::istream& is) {
    const auto pt = parse_ini(is);
    GainsFile f;
    for (const auto& [name, s] : pt) {
        if (is_section(name, "gains.")) {
            f.gains[unit_id(name.substr(6))] = gains_from(s, name);
        } else if (is_section(name, "prefilter.")) {
            f.prefilters[unit_id(name.substr(10))] = tf_from(s, name);
        } else if (is_section(name, "compensator.")) {
            f.compensators[unit_id(name.substr(12))] = tf_from(s, name);
        } else {
            throw InputError(fmt::format("unknown section [{}]", name));
        }
    }
    return f;
}

void write_gains(std::ostream& os, const GainsFile& f, const Header& header) {
    put_header(os, header);
    for (const auto& [id, g] : f.gains) put_gains(os, fmt::format("gains.{}", id.value()), g);
    for (const auto& [id, tf] : f.prefilters) put_tf(os, fmt::format("prefilter.{}", id.value()), tf);
    for (const auto& [id, tf] : f.compensators) put_tf(os, fmt::format("compensator.{}", id.value()), tf);
}

PlugRequest read_request(std::istream& is) {
    const auto pt = parse_ini(is);
    const ptree* s = child(pt, "request");
    if (!s) throw InputError("missing [request] section");
    for (const auto& [name, _] : pt)
        if (name != "request") throw InputError(fmt::format("unknown section [{}]", name));
    return request_from(*s, "request");
}

void write_request(std::ostream& os, const PlugRequest& r, const Header& header) {
    put_header(os, header);
    os << "[request]\n"
       << "kind = " << (r.kind == PlugRequest::Kind::plug_in ? "plug_in" : "unplug") << '\n';
    put_request_body(os, r);
}

Scenario read_scenario(std::istream& is) {
    const auto pt = parse_ini(is);
    Scenario sc;
    std::vector<std::pair<int, Event>> events;
    bool seen = false;
    for (const auto& [name, s] : pt) {
        if (name == "scenario") {
            seen = true;
            check_keys(s, name, {"duration", "ref", "open"});
            sc.duration = need_number(s, name, "duration");
            if (auto r = field(s, "ref")) sc.default_ref = number(name, "ref", *r);
            if (auto o = field(s, "open"))
                if (!trim(*o).empty())
                    for (const auto& part : split(*o, ',')) sc.initially_open.insert(edge(part));
        } else if (name == "ref") {
            for (const auto& [k, v] : s) sc.refs[unit_id(k)] = number(name, k, v.data());
        } else if (name == "initial") {
            for (const auto& [k, v] : s) {
                const double x = number(name, k, v.data());
                if (k.starts_with("v.")) sc.initial_dgu[unit_id(k.substr(2))].first = x;
                else if (k.starts_with("it.")) sc.initial_dgu[unit_id(k.substr(3))].second = x;
                else if (k.starts_with("line.")) sc.initial_line[edge(k.substr(5))] = x;
                else throw InputError(fmt::format("[initial]: unknown key '{}'", k));
            }
        } else if (is_section(name, "event.")) {
            const int n = integer(name.substr(6), "event number");
            Event e;
            e.kind = event_kind(name, need(s, name, "kind"));
            e.time = need_number(s, name, "time");
            if (auto l = field(s, "label")) e.label = *l;
            const std::set<std::string> common{"kind", "time", "label"};
            auto keys = [&](std::set<std::string> more) {
                more.insert(common.begin(), common.end());
                check_keys(s, name, more);
            };
            switch (e.kind) {
                case Event::Kind::connect:
                case Event::Kind::disconnect: {
                    keys({"line"});
                    const auto ed = edge(need(s, name, "line"));
                    e.a = ed.first();
                    e.b = ed.second();
                    break;
                }
                case Event::Kind::load_step:
                    keys({"dgu", "load"});
                    e.a = unit_id(need(s, name, "dgu"));
                    e.value = need_number(s, name, "load");
                    break;
                case Event::Kind::ref_step:
                    keys({"dgu", "ref"});
                    e.a = unit_id(need(s, name, "dgu"));
                    e.value = need_number(s, name, "ref");
                    break;
                case Event::Kind::switch_controller:
                    keys({"dgu", "k", "bumpless"});
                    e.a = unit_id(need(s, name, "dgu"));
                    if (auto k = field(s, "k"); k && trim(*k) != "auto") {
                        const auto v = numbers(name, "k", *k);
                        if (v.size() != 3) throw InputError(fmt::format("[{}] k: expected 3 numbers or auto", name));
                        ControllerGains g;
                        g.k << v[0], v[1], v[2];
                        e.gains = g;
                    }
                    if (auto b = field(s, "bumpless")) e.bumpless = boolean(name, "bumpless", *b);
                    break;
                case Event::Kind::plug_in:
                case Event::Kind::unplug:
                    e.request = request_from(s, name, {"time", "label"});
                    if ((e.request.kind == PlugRequest::Kind::plug_in) != (e.kind == Event::Kind::plug_in))
                        throw InputError(fmt::format("[{}]: request kind does not match event kind", name));
                    e.a = e.request.id;
                    break;
            }
            events.emplace_back(n, std::move(e));
        } else {
            throw InputError(fmt::format("unknown section [{}]", name));
        }
    }
    if (!seen) throw InputError("missing [scenario] section");
    std::stable_sort(events.begin(), events.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t i = 1; i < events.size(); ++i)
        if (events[i].first == events[i - 1].first)
            throw InputError(fmt::format("duplicate [event.{}]", events[i].first));
    for (auto& [_, e] : events) sc.events.push_back(std::move(e));
    return sc;
}

void write_scenario(std::ostream& os, const Scenario& sc, const Header& header) {
    put_header(os, header);
    os << "[scenario]\n"
       << "duration = " << format_number(sc.duration) << '\n'
       << "ref = " << format_number(sc.default_ref) << '\n';
    if (!sc.initially_open.empty()) {
        std::vector<std::string> parts;
        for (const auto& e : sc.initially_open) parts.push_back(fmt::format("{}-{}", e.first().value(), e.second().value()));
        os << "open = " << fmt::format("{}", fmt::join(parts, ", ")) << '\n';
    }
    os << '\n';
    if (!sc.refs.empty()) {
        os << "[ref]\n";
        for (const auto& [id, v] : sc.refs) os << id.value() << " = " << format_number(v) << '\n';
        os << '\n';
    }
    if (!sc.initial_dgu.empty() || !sc.initial_line.empty()) {
        os << "[initial]\n";
        for (const auto& [id, vi] : sc.initial_dgu)
            os << "v." << id.value() << " = " << format_number(vi.first) << '\n'
               << "it." << id.value() << " = " << format_number(vi.second) << '\n';
        for (const auto& [e, i] : sc.initial_line)
            os << "line." << e.first().value() << '-' << e.second().value() << " = " << format_number(i) << '\n';
        os << '\n';
    }
    int n = 0;
    for (const auto& e : sc.events) {
        os << "[event." << ++n << "]\n"
           << "time = " << format_number(e.time) << '\n'
           << "kind = " << to_string(e.kind) << '\n';
        switch (e.kind) {
            case Event::Kind::connect:
            case Event::Kind::disconnect: {
                const Edge ed(e.a, e.b);
                os << "line = " << ed.first().value() << '-' << ed.second().value() << '\n';
                break;
            }
            case Event::Kind::load_step:
                os << "dgu = " << e.a.value() << '\n' << "load = " << format_number(e.value) << '\n';
                break;
            case Event::Kind::ref_step:
                os << "dgu = " << e.a.value() << '\n' << "ref = " << format_number(e.value) << '\n';
                break;
            case Event::Kind::switch_controller:
                os << "dgu = " << e.a.value() << '\n'
                   << "k = " << (e.gains ? joined({e.gains->k(0), e.gains->k(1), e.gains->k(2)}) : "auto") << '\n'
                   << "bumpless = " << bool_text(e.bumpless) << '\n';
                break;
            case Event::Kind::plug_in:
            case Event::Kind::unplug:
                put_request_body(os, e.request);
                break;
        }
        if (!e.label.empty()) os << "label = " << one_line(e.label) << '\n';
        os << '\n';
    }
}

PnpDecision read_decision(std::istream& is) {
    const auto pt = parse_ini(is);
    const ptree* s = child(pt, "decision");
    if (!s) throw InputError("missing [decision] section");
    const std::string sec = "decision";
    PnpDecision d;
    const auto kind = need(*s, sec, "kind");
    if (kind == "plug_in") d.kind = PlugRequest::Kind::plug_in;
    else if (kind == "unplug") d.kind = PlugRequest::Kind::unplug;
    else throw InputError(fmt::format("[decision] kind: unknown '{}'", kind));
    d.target = unit_id(need(*s, sec, "target"));
    d.allowed = boolean(sec, "allowed", need(*s, sec, "allowed"));
    d.retune_set = parse_id_list(field(*s, "retune_set").value_or(""));
    d.kept = parse_id_list(field(*s, "kept").value_or(""));
    if (auto b = field(*s, "denied_by"); b && !trim(*b).empty()) d.denied_by = unit_id(*b);
    d.denial_reason = field(*s, "reason").value_or("");
    for (const auto& [name, sub] : pt) {
        if (is_section(name, "gains.")) {
            d.new_gains[unit_id(name.substr(6))] = gains_from(sub, name);
        } else if (is_section(name, "verdict.")) {
            DguVerdict v;
            const auto o = need(sub, name, "outcome");
            if (o == "kept") v.outcome = DguVerdict::Outcome::kept;
            else if (o == "retuned") v.outcome = DguVerdict::Outcome::retuned;
            else if (o == "failed") v.outcome = DguVerdict::Outcome::failed;
            else throw InputError(fmt::format("[{}] outcome: unknown '{}'", name, o));
            v.note = field(sub, "note").value_or("");
            d.verdicts[unit_id(name.substr(8))] = std::move(v);
        } else if (name == "global") {
            GlobalCertificate g;
            g.max_real_eig = need_number(sub, name, "max_real_eig");
            g.spectral_ok = boolean(name, "spectral_ok", need(sub, name, "spectral_ok"));
            g.coupling_term_max_abs = need_number(sub, name, "coupling_term_max_abs");
            g.coupling_small = boolean(name, "coupling_small", need(sub, name, "coupling_small"));
            d.global = g;
        }
    }
    d.after = grid_from(pt, false);
    return d;
}

void write_decision(std::ostream& os, const PnpDecision& d, const Header& header) {
    put_header(os, header);
    os << "[decision]\n"
       << "kind = " << (d.kind == PlugRequest::Kind::plug_in ? "plug_in" : "unplug") << '\n'
       << "target = " << d.target.value() << '\n'
       << "allowed = " << bool_text(d.allowed) << '\n'
       << "retune_set = " << id_list(d.retune_set) << '\n'
       << "kept = " << id_list(d.kept) << '\n';
    std::set<DguId> retuned;
    for (const auto& [id, _] : d.new_gains) retuned.insert(id);
    os << "retuned = " << id_list(retuned) << '\n';
    if (d.denied_by) os << "denied_by = " << d.denied_by->value() << '\n';
    if (!d.denial_reason.empty()) os << "reason = " << one_line(d.denial_reason) << '\n';
    os << '\n';
    for (const auto& [id, v] : d.verdicts) {
        os << "[verdict." << id.value() << "]\n" << "outcome = " << to_string(v.outcome) << '\n';
        if (v.certificate) {
            const auto& c = *v.certificate;
            os << "certificate_passed = " << bool_text(c.passed()) << '\n'
               << "p_min_eig = " << format_number(c.p_min_eig) << '\n'
               << "lyapunov_margin = " << format_number(c.lyapunov_margin) << '\n'
               << "gain_norm = " << format_number(c.gain_norm) << '\n'
               << "gain_bound = " << format_number(c.gain_bound) << '\n';
        }
        if (v.constraints)
            os << "constraints_feasible = " << bool_text(v.constraints->feasible) << '\n'
               << "worst_slack = " << format_number(v.constraints->worst_slack) << '\n'
               << "worst_constraint = " << v.constraints->worst_constraint << '\n';
        if (!v.note.empty()) os << "note = " << one_line(v.note) << '\n';
        os << '\n';
    }
    if (d.global) {
        const auto& g = *d.global;
        os << "[global]\n"
           << "max_real_eig = " << format_number(g.max_real_eig) << '\n'
           << "spectral_ok = " << bool_text(g.spectral_ok) << '\n'
           << "coupling_term_max_abs = " << format_number(g.coupling_term_max_abs) << '\n'
           << "coupling_small = " << bool_text(g.coupling_small) << "\n\n";
    }
    for (const auto& [id, g] : d.new_gains) put_gains(os, fmt::format("gains.{}", id.value()), g);
    if (d.allowed) put_grid(os, d.after);
}

CertificateFile read_certificate(std::istream& is) {
    const auto pt = parse_ini(is);
    CertificateFile c;
    bool seen = false;
    for (const auto& [name, s] : pt) {
        if (name == "global") {
            seen = true;
            auto& g = c.global;
            g.max_real_eig = need_number(s, name, "max_real_eig");
            g.spectral_ok = boolean(name, "spectral_ok", need(s, name, "spectral_ok"));
            g.lyapunov_lambda_max = need_number(s, name, "lyapunov_lambda_max");
            g.local_terms_lambda_max = need_number(s, name, "local_terms_lambda_max");
            g.coupling_term_max_abs = need_number(s, name, "coupling_term_max_abs");
            g.coupling_term_norm = need_number(s, name, "coupling_term_norm");
            g.coupling_small = boolean(name, "coupling_small", need(s, name, "coupling_small"));
        } else if (is_section(name, "local.")) {
            CertificateReport r;
            r.p_min_eig = need_number(s, name, "p_min_eig");
            r.p_positive = boolean(name, "p_positive", need(s, name, "p_positive"));
            r.structure_deviation = need_number(s, name, "structure_deviation");
            r.structure_ok = boolean(name, "structure_ok", need(s, name, "structure_ok"));
            r.lyapunov_lambda_max = need_number(s, name, "lyapunov_lambda_max");
            r.lyapunov_resolution = need_number(s, name, "lyapunov_resolution");
            r.lyapunov_margin = need_number(s, name, "lyapunov_margin");
            r.kernel_residual = need_number(s, name, "kernel_residual");
            r.kernel_observable = boolean(name, "kernel_observable", need(s, name, "kernel_observable"));
            r.lyapunov_ok = boolean(name, "lyapunov_ok", need(s, name, "lyapunov_ok"));
            r.gain_norm = need_number(s, name, "gain_norm");
            r.gain_bound = need_number(s, name, "gain_bound");
            r.gain_ok = boolean(name, "gain_ok", need(s, name, "gain_ok"));
            c.local[unit_id(name.substr(6))] = r;
        } else {
            throw InputError(fmt::format("unknown section [{}]", name));
        }
    }
    if (!seen) throw InputError("missing [global] section");
    return c;
}

void write_certificate(std::ostream& os, const CertificateFile& c, const Header& header) {
    put_header(os, header);
    const auto& g = c.global;
    os << "[global]\n"
       << "passed = " << bool_text(g.passed()) << '\n'
       << "max_real_eig = " << format_number(g.max_real_eig) << '\n'
       << "spectral_ok = " << bool_text(g.spectral_ok) << '\n'
       << "lyapunov_lambda_max = " << format_number(g.lyapunov_lambda_max) << '\n'
       << "local_terms_lambda_max = " << format_number(g.local_terms_lambda_max) << '\n'
       << "coupling_term_max_abs = " << format_number(g.coupling_term_max_abs) << '\n'
       << "coupling_term_norm = " << format_number(g.coupling_term_norm) << '\n'
       << "coupling_small = " << bool_text(g.coupling_small) << "\n\n";
    for (const auto& [id, r] : c.local) {
        os << "[local." << id.value() << "]\n"
           << "passed = " << bool_text(r.passed()) << '\n'
           << "p_min_eig = " << format_number(r.p_min_eig) << '\n'
           << "p_positive = " << bool_text(r.p_positive) << '\n'
           << "structure_deviation = " << format_number(r.structure_deviation) << '\n'
           << "structure_ok = " << bool_text(r.structure_ok) << '\n'
           << "lyapunov_lambda_max = " << format_number(r.lyapunov_lambda_max) << '\n'
           << "lyapunov_resolution = " << format_number(r.lyapunov_resolution) << '\n'
           << "lyapunov_margin = " << format_number(r.lyapunov_margin) << '\n'
           << "kernel_residual = " << format_number(r.kernel_residual) << '\n'
           << "kernel_observable = " << bool_text(r.kernel_observable) << '\n'
           << "lyapunov_ok = " << bool_text(r.lyapunov_ok) << '\n'
           << "gain_norm = " << format_number(r.gain_norm) << '\n'
           << "gain_bound = " << format_number(r.gain_bound) << '\n'
           << "gain_ok = " << bool_text(r.gain_ok) << "\n\n";
    }
}

void write_trace_csv(std::ostream& os, const SimTrace& tr) {
    std::vector<std::string> cols{"t"};
    for (const auto& id : tr.dgus)
        for (const char* q : {"V", "It", "v", "u", "IL", "ref"}) cols.push_back(fmt::format("{}{}", q, id.value()));
    for (const auto& e : tr.edges) {
        cols.push_back(fmt::format("I{}_{}", e.first().value(), e.second().value()));
        cols.push_back(fmt::format("I{}_{}", e.second().value(), e.first().value()));
    }
    os << fmt::format("{}\n", fmt::join(cols, ","));
    std::string line;
    for (std::size_t r = 0; r < tr.t.size(); ++r) {
        line = format_number(tr.t[r]);
        for (const auto& s : tr.dgu)
            for (const auto* v : {&s.v, &s.it, &s.integ, &s.u, &s.il, &s.ref}) {
                line += ',';
                line += format_number((*v)[r]);
            }
        for (const auto& l : tr.line) {
            line += ',';
            line += format_number(l[r]);
            line += ',';
            line += format_number(l[r] == 0.0 ? 0.0 : -l[r]);
        }
        line += '\n';
        os << line;
    }
}

std::size_t CsvTable::column(std::string_view name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw InputError(fmt::format("CSV has no column '{}'", name));
    return static_cast<std::size_t>(it - columns.begin());
}

CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw InputError("empty CSV");
    t.columns = split(line, ',');
    std::size_t n = 1;
    while (std::getline(is, line)) {
        ++n;
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != t.columns.size())
            throw InputError(fmt::format("CSV line {}: {} cells, header has {}", n, cells.size(), t.columns.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (ec != std::errc() || p != c.data() + c.size())
                throw InputError(fmt::format("CSV line {}: invalid number '{}'", n, c));
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

SimTrace read_trace_csv(std::istream& is) {
    const auto tab = read_csv(is);
    SimTrace tr;
    if (tab.columns.empty() || tab.columns[0] != "t") throw InputError("trace CSV must start with column 't'");
    auto col = [&](std::size_t c) {
        std::vector<double> v;
        v.reserve(tab.rows.size());
        for (const auto& r : tab.rows) v.push_back(r[c]);
        return v;
    };
    tr.t = col(0);
    for (std::size_t c = 1; c < tab.columns.size(); ++c) {
        const auto& name = tab.columns[c];
        if (name.size() > 1 && name[0] == 'V') {
            const auto id = unit_id(name.substr(1));
            const auto base = std::to_string(id.value());
            tr.dgus.push_back(id);
            SimTrace::Series s;
            s.v = col(c);
            s.it = col(tab.column("It" + base));
            s.integ = col(tab.column("v" + base));
            s.u = col(tab.column("u" + base));
            s.il = col(tab.column("IL" + base));
            s.ref = col(tab.column("ref" + base));
            tr.dgu.push_back(std::move(s));
        } else if (name.size() > 1 && name[0] == 'I' && name.find('_') != std::string::npos && name[1] != 't' &&
                   name[1] != 'L') {
            const auto parts = split(name.substr(1), '_');
            if (parts.size() != 2) throw InputError(fmt::format("bad line column '{}'", name));
            const auto a = unit_id(parts[0]), b = unit_id(parts[1]);
            if (a < b) {
                tr.edges.emplace_back(a, b);
                tr.line.push_back(col(c));
            }
        }
    }
    return tr;
}

void write_metrics(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << "dgu,t0,t1,settling_time,overshoot,steady_state_error,peak_deviation,settled\n";
    for (const auto& [id, t0, t1, m] : rows)
        os << id.value() << ',' << format_number(t0) << ',' << format_number(t1) << ',' << format_number(m.settling_time) << ',' << format_number(m.overshoot) << ','
           << format_number(m.steady_state_error) << ',' << format_number(m.peak_deviation) << ','
           << (m.settled ? 1 : 0) << '\n';
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError(fmt::format("cannot open '{}'", p.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save(const std::filesystem::path& p, const std::string& contents) {
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InputError(fmt::format("cannot write '{}'", p.string()));
    out << contents;
    if (!out) throw InputError(fmt::format("write failed for '{}'", p.string()));
}

}  // namespace dcmg::io
