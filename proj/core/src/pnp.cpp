#include "dcmg/pnp.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace dcmg {

std::string to_string(Policy p) { return p == Policy::keep_if_valid ? "keep" : "retune"; }

Policy parse_policy(const std::string& s) {
    if (s == "keep" || s == "keep-if-valid") return Policy::keep_if_valid;
    if (s == "retune") return Policy::retune;
    throw InputError(fmt::format("unknown policy '{}' (expected keep or retune)", s));
}

std::string to_string(DguVerdict::Outcome o) {
    switch (o) {
        case DguVerdict::Outcome::kept: return "kept";
        case DguVerdict::Outcome::retuned: return "retuned";
        case DguVerdict::Outcome::failed: return "failed";
    }
    return "?";
}

void PlugRequest::validate(const GridGraph& g) const {
    if (kind == Kind::plug_in) {
        if (g.has_dgu(id)) throw InputError(fmt::format("DGU {} already exists", id.value()));
        if (!new_dgu) throw InputError("plug-in request without DGU parameters");
        new_dgu->validate();
        for (const auto& [j, l] : new_lines) {
            if (!g.has_dgu(j)) throw InputError(fmt::format("plug-in line to unknown DGU {}", j.value()));
            if (j == id) throw InputError("plug-in line to itself");
            l.validate();
        }
    } else {
        if (!g.has_dgu(id)) throw InputError(fmt::format("DGU {} does not exist", id.value()));
    }
}

const SynthesisOptions& PnpOptions::for_dgu(DguId id) const {
    auto it = per_dgu.find(id);
    return it == per_dgu.end() ? synthesis : it->second;
}

std::map<DguId, ControllerGains> PnpDecision::gains_after(const std::map<DguId, ControllerGains>& before) const {
    std::map<DguId, ControllerGains> out;
    for (const auto& id : after.ids()) {
        if (auto it = new_gains.find(id); it != new_gains.end()) {
            out.emplace(id, it->second);
        } else if (auto jt = before.find(id); jt != before.end()) {
            out.emplace(id, jt->second);
        }
    }
    return out;
}

DguVerdict revalidate(const AugmentedDgu& aug, const ControllerGains& g, const SynthesisOptions& opts) {
    DguVerdict v;
    v.certificate = verify_certificate(aug, g, 0.5 * opts.feasibility_margin);
    v.constraints = check_problem_O_constraints(aug, g, opts);
    const bool ok = v.certificate->passed() && v.constraints->feasible;
    v.outcome = ok ? DguVerdict::Outcome::kept : DguVerdict::Outcome::failed;
    if (!ok)
        v.note = fmt::format("stored gains invalid (margin {:.3g}, worst slack {:.3g} in {})",
                             v.certificate->lyapunov_margin, v.constraints->worst_slack,
                             v.constraints->worst_constraint);
    return v;
}

namespace {

void settle(PnpDecision& d, const GridGraph& post, const std::map<DguId, ControllerGains>& current,
            const PnpOptions& opts) {
    d.after = post;
    d.allowed = true;
    for (const auto& k : d.retune_set) {
        const auto aug = augmented_dgu(post, k);
        const auto& so = opts.for_dgu(k);
        auto old = current.find(k);
        if (opts.policy == Policy::keep_if_valid && old != current.end()) {
            auto v = revalidate(aug, old->second, so);
            if (v.outcome == DguVerdict::Outcome::kept) {
                d.kept.insert(k);
                d.verdicts[k] = std::move(v);
                continue;
            }
            spdlog::info("DGU {}: {}; retuning", k.value(), v.note);
        }
        auto r = solve_problem_O(aug, so);
        DguVerdict v;
        if (auto* g = std::get_if<ControllerGains>(&r)) {
            v.certificate = verify_certificate(aug, *g, 0.5 * so.feasibility_margin);
            if (v.certificate->passed()) {
                v.outcome = DguVerdict::Outcome::retuned;
                d.new_gains.emplace(k, *g);
            } else {
                v.note = "synthesized gains failed verification";
            }
        } else if (auto* inf = std::get_if<Infeasible>(&r)) {
            v.note = "infeasible: " + inf->reason;
        } else {
            v.note = "numerical failure: " + std::get<NumericalFailure>(r).reason;
        }
        if (v.outcome == DguVerdict::Outcome::failed && d.allowed) {
            d.allowed = false;
            d.denied_by = k;
            d.denial_reason = fmt::format("DGU {}: {}", k.value(), v.note);
        }
        d.verdicts[k] = std::move(v);
    }
    if (!d.allowed) return;
    d.global = certify_global_stability(post, d.gains_after(current), opts.synthesis.assumption2_tol);
    if (!d.global->spectral_ok) {
        d.allowed = false;
        d.denial_reason = fmt::format("closed loop not stable (max Re {:.6g})", d.global->max_real_eig);
    }
}

}  // namespace

PnpDecision evaluate_plug_in(const GridGraph& g, const std::map<DguId, ControllerGains>& current,
                             const PlugRequest& req, const PnpOptions& opts) {
    if (req.kind != PlugRequest::Kind::plug_in) throw InputError("not a plug-in request");
    req.validate(g);
    PnpDecision d;
    d.kind = req.kind;
    d.target = req.id;
    GridGraph post = g;
    post.add_dgu(req.id, *req.new_dgu);
    for (const auto& [j, l] : req.new_lines) post.add_line(req.id, j, l);
    d.retune_set = post.neighbors(req.id);
    d.retune_set.insert(req.id);
    // The newcomer has no stored gains even if the caller passed some.
    auto cur = current;
    cur.erase(req.id);
    settle(d, post, cur, opts);
    return d;
}

PnpDecision evaluate_unplug(const GridGraph& g, const std::map<DguId, ControllerGains>& current,
                            const PlugRequest& req, const PnpOptions& opts) {
    if (req.kind != PlugRequest::Kind::unplug) throw InputError("not an unplug request");
    req.validate(g);
    PnpDecision d;
    d.kind = req.kind;
    d.target = req.id;
    GridGraph post = g;
    d.retune_set = g.neighbors(req.id);
    post.remove_dgu(req.id);
    settle(d, post, current, opts);
    return d;
}

PnpDecision evaluate(const GridGraph& g, const std::map<DguId, ControllerGains>& current,
                     const PlugRequest& req, const PnpOptions& opts) {
    return req.kind == PlugRequest::Kind::plug_in ? evaluate_plug_in(g, current, req, opts)
                                                  : evaluate_unplug(g, current, req, opts);
}

}  // namespace dcmg
