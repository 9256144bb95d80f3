#pragma once

#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcmg/analysis.hpp"
#include "dcmg/pnp.hpp"

namespace dcmg {

class SimError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double open_load = std::numeric_limits<double>::infinity();

struct ControllerStackOptions {
    std::optional<double> prefilter_bw_hz;  // reference prefilter, off when empty
    bool compensator = false;               // load-current feedforward
    double compensator_bw_hz = 1000.0;      // for the realizable fallback
    void validate() const;
};

// Realized local controller: u = K x̂ + ũ, with the integral term û = k_i v
// and optional prefilter / compensator state-space filters.
struct LocalController {
    RowVector3d k = RowVector3d::Zero();
    double lambda = 0.0;  // bumpless tracker pole Γ(s) = s + λ
    std::optional<Realization> prefilter;
    std::optional<Realization> compensator;
    std::string note;
};
bool same_controller(const LocalController& a, const LocalController& b);

LocalController design_local_controller(const GridGraph& g, DguId id, const ControllerGains& gains,
                                        const ControllerStackOptions& stack, double lambda_ratio = 0.1);

// Arming logic of the bumpless transfer. The tracked quantity is
// |û − ũ_prec| with ũ_prec = u_prec − k_v V − k_c I_t − ũ.
struct BumplessState {
    double lambda = 0.0;
    double commute_threshold = 0.01;
    double hold = 0.01;
    std::optional<double> ok_since;
    bool armed = false;
};
// Updates arming at time t; returns true when the switch may commute.
bool bumpless_update(BumplessState& s, double mismatch, double t, double switch_time);

struct Event {
    enum class Kind { connect, disconnect, load_step, ref_step, plug_in, unplug, switch_controller };
    double time = 0.0;
    Kind kind = Kind::connect;
    DguId a, b;
    double value = 0.0;  // load resistance (open_load for none) or reference voltage
    PlugRequest request;
    std::optional<ControllerGains> gains;  // switch_controller; empty means synthesize
    bool bumpless = true;
    std::string label;
};
std::string to_string(Event::Kind k);

struct Scenario {
    double duration = 1.0;
    double default_ref = 48.0;
    std::map<DguId, double> refs;
    std::set<Edge> initially_open;
    std::vector<Event> events;
    // Optional initial physical state (defaults to zero).
    std::map<DguId, std::pair<double, double>> initial_dgu;  // V, I_t
    std::map<Edge, double> initial_line;                      // current into edge.first()

    void validate(const GridGraph& g) const;
};

struct SimConfig {
    double max_step = 10e-6;          // inside event windows
    double relaxed_max_step = 1e-3;   // elsewhere
    double event_window = 0.2;
    double rtol = 1e-8;
    double atol = 1e-8;
    double min_step = 1e-13;
    double record_stride = 1e-3;
    double window_record_stride = 1e-4;  // inside event windows
    bool saturation = true;
    double saturation_warn = 1e-3;
    bool open_loop = false;           // u = 0 and no controllers

    ControllerStackOptions stack;
    double lambda_ratio = 0.1;
    double commute_threshold = 0.01;
    double hold = 0.01;
    double prearm = 0.1;
    double switch_wait = 1.0;

    SynthesisOptions synthesis;
    Policy policy = Policy::keep_if_valid;

    void validate() const;
};

struct SimTrace {
    struct Series {
        std::vector<double> v, it, integ, u, il, ref;
    };
    struct Marker {
        double t;
        std::string what;
    };
    struct Stats {
        long steps = 0, rejected = 0, factorizations = 0;
    };

    GridGraph network;  // every unit and every line that ever existed
    std::vector<DguId> dgus;
    std::vector<Edge> edges;
    std::vector<double> t;
    std::vector<Series> dgu;
    std::vector<std::vector<double>> line;  // current into edge.first()
    std::vector<Marker> markers;
    std::vector<std::string> warnings;
    std::vector<PnpDecision> decisions;
    Stats stats;

    std::size_t index(DguId id) const;
    std::size_t edge_index(const Edge& e) const;
    // I_ij: current from j into i.
    double line_current(DguId i, DguId j, std::size_t row) const;
};

// `gains` must cover the grid's units; plug-in newcomers without gains are
// synthesized for their isolated model.
SimTrace simulate(const GridGraph& g, const std::map<DguId, ControllerGains>& gains, const Scenario& sc,
                  const SimConfig& cfg);

// ½ΣC V² + ½ΣL_t I_t² + ½ΣL_line I_line² at one sample.
double stored_energy(const SimTrace& tr, std::size_t row);

struct Metrics {
    double settling_time = 0.0;       // after the last marker in the window
    double overshoot = 0.0;           // relative to the reference step
    double steady_state_error = 0.0;  // mean of V − ref over the last 10 %
    double peak_deviation = 0.0;      // max |V − ref|
    bool settled = false;
};
// Samples with t0 ≤ t < t1 (t1 included when it is the last sample).
Metrics metrics(const SimTrace& tr, DguId id, double t0, double t1, double band = 0.05);

}  // namespace dcmg
