#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>

#include "dcmg/synthesis.hpp"

namespace dcmg {

enum class Policy { keep_if_valid, retune };
std::string to_string(Policy p);
Policy parse_policy(const std::string& s);

struct PlugRequest {
    enum class Kind { plug_in, unplug };
    Kind kind = Kind::plug_in;
    DguId id;
    std::optional<DguParams> new_dgu;          // plug_in only
    std::map<DguId, LineParams> new_lines;     // plug_in only, keyed by neighbor

    void validate(const GridGraph& g) const;
};

struct PnpOptions {
    SynthesisOptions synthesis;
    // Overrides for individual units (e.g. a tighter margin).
    std::map<DguId, SynthesisOptions> per_dgu;
    Policy policy = Policy::keep_if_valid;

    const SynthesisOptions& for_dgu(DguId id) const;
};

struct DguVerdict {
    enum class Outcome { kept, retuned, failed };
    Outcome outcome = Outcome::failed;
    std::optional<CertificateReport> certificate;
    std::optional<ConstraintCheck> constraints;
    std::string note;
};
std::string to_string(DguVerdict::Outcome o);

struct PnpDecision {
    PlugRequest::Kind kind = PlugRequest::Kind::plug_in;
    DguId target;
    bool allowed = false;
    std::set<DguId> retune_set;
    std::map<DguId, ControllerGains> new_gains;
    std::set<DguId> kept;
    std::map<DguId, DguVerdict> verdicts;
    std::optional<DguId> denied_by;
    std::string denial_reason;
    std::optional<GlobalCertificate> global;
    GridGraph after;  // topology the decision refers to

    // Gains in force after the operation for every unit of `after`.
    std::map<DguId, ControllerGains> gains_after(const std::map<DguId, ControllerGains>& before) const;
};

// `current` holds the gains in force before the request.
PnpDecision evaluate_plug_in(const GridGraph& g, const std::map<DguId, ControllerGains>& current,
                             const PlugRequest& req, const PnpOptions& opts);
PnpDecision evaluate_unplug(const GridGraph& g, const std::map<DguId, ControllerGains>& current,
                            const PlugRequest& req, const PnpOptions& opts);
PnpDecision evaluate(const GridGraph& g, const std::map<DguId, ControllerGains>& current,
                     const PlugRequest& req, const PnpOptions& opts);

// Re-checks stored gains against a unit's current local model.
DguVerdict revalidate(const AugmentedDgu& aug, const ControllerGains& g, const SynthesisOptions& opts);

}  // namespace dcmg
