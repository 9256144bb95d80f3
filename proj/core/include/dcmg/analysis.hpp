#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dcmg/synthesis.hpp"
#include "dcmg/tf.hpp"

namespace dcmg {

class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// F(s): integrator reference input to the PCC voltage. Throws AnalysisError
// when the closed loop is not Hurwitz.
RationalTf closed_loop_reference_tf(const AugmentedDgu& aug, const ControllerGains& g);

// Butterworth low-pass with unit DC gain and −3 dB at bandwidth_hz.
RationalTf desired_tf_template(double bandwidth_hz, int order);

struct Rejection {
    enum class Kind { rhp_zero, improper, unstable };
    Kind kind = Kind::rhp_zero;
    std::optional<cplx> root;  // offending zero or pole
    int deficit = 0;           // deg num − deg den when improper
    // The exact (unrealizable) inverse, when it could be formed.
    std::optional<RationalTf> candidate;
    std::string message;
};
std::string to_string(Rejection::Kind k);

using DesignResult = std::variant<RationalTf, Rejection>;

// A zero is unacceptable when Re ≥ −1e−9·max|root| (right half plane or
// imaginary axis).
bool zero_unacceptable(cplx z, double root_scale);

// C̃ = F̃ / F.
DesignResult design_prefilter(const RationalTf& f, const RationalTf& f_tilde);

struct DisturbanceTfs {
    RationalTf g_d;  // load current to PCC voltage
    RationalTf g_u;  // additional input to PCC voltage
};
DisturbanceTfs disturbance_tfs(const AugmentedDgu& aug, const ControllerGains& g);

// N = −g_d / g_u. Zeros of g_u shared with g_d cancel before the checks.
DesignResult design_disturbance_compensator(const RationalTf& g_d, const RationalTf& g_u);

// Appends first-order low-pass factors with a pole at 10·bandwidth until
// the result is proper. Throws AnalysisError if the result is not stable.
RationalTf bandwidth_limited(const RationalTf& exact, double bandwidth_hz);

// Realizable filter together with the exact design it approximates.
struct FilterDesign {
    RationalTf exact;
    RationalTf realized;
    bool approximate = false;
    std::optional<double> fallback_pole_hz;
    std::string note;
};
// Runs the design and, on an improper rejection, the bandwidth fallback.
// Other rejections are returned unchanged.
std::variant<FilterDesign, Rejection> with_fallback(const DesignResult& r, double bandwidth_hz);

bool asymptotically_stable(const RationalTf& tf);

struct Spectrum {
    std::vector<cplx> eigenvalues;
    double max_residual = 0.0;  // max ‖Av − λv‖ / ‖A‖
};
Spectrum spectrum(const MatrixXd& a);

enum class ResponseKind { bode_magnitude, singular_values };

struct FrequencyResponse {
    std::vector<double> freqs;           // Hz
    std::vector<Eigen::VectorXd> values; // magnitude, or singular values
    std::vector<cplx> gains;             // SISO complex gains
    ResponseKind kind = ResponseKind::bode_magnitude;
};

struct MimoSystem {
    MatrixXd a, b, c, d;
};

std::vector<double> log_grid(double f_lo = 0.1, double f_hi = 1e5, int points = 400);
FrequencyResponse frequency_response(const RationalTf& tf, const std::vector<double>& freqs);
FrequencyResponse frequency_response(const MimoSystem& sys, const std::vector<double>& freqs);

// Closed QSL loop from all integrator references to all PCC voltages.
MimoSystem reference_to_voltage(const GridGraph& g, const std::map<DguId, ControllerGains>& gains);

void write_spectrum_csv(std::ostream& os, const std::vector<cplx>& eigs);
void write_response_csv(std::ostream& os, const FrequencyResponse& fr);

}  // namespace dcmg
