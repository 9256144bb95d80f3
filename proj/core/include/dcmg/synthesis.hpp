#pragma once

#include <complex>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dcmg/model.hpp"
#include "dcmg/sdp.hpp"

namespace dcmg {

struct LmiWeights {
    double alpha1 = 1.0;  // on γ
    double alpha2 = 1.0;  // on β
    double alpha3 = 1.0;  // on δ
    void validate() const;
};

struct SynthesisOptions {
    std::optional<double> eta;  // default: default_eta()
    double feasibility_margin = 1e-6;
    double assumption2_tol = 1e-3;
    // Isolated closed-loop poles placed at a triple real pole −2π·f; the
    // gain is then certified by the LMI. Zero leaves G free.
    double target_bandwidth_hz = 100.0;
    // Certificate independent of the attached lines, so stored gains stay
    // valid when neighbors come and go.
    bool topology_robust = true;
    LmiWeights weights;
    sdp::Settings solver;

    void validate() const;
};

struct ControllerGains {
    RowVector3d k = RowVector3d::Zero();  // [k_v, k_c, k_i]
    Matrix3d p = Matrix3d::Identity();
    double eta = 0.0, gamma = 0.0, beta = 0.0, delta = 0.0;
    std::string solver_info;

    double kv() const { return k(0); }
    double kc() const { return k(1); }
    double ki() const { return k(2); }
    Matrix3d y() const { return p.inverse(); }
    RowVector3d g() const { return k * y(); }
    bool operator==(const ControllerGains&) const = default;
};

struct Infeasible {
    DguId id;
    std::string reason;
};

struct NumericalFailure {
    DguId id;
    std::string reason;  // includes retry guidance
};

using SynthesisResult = std::variant<ControllerGains, Infeasible, NumericalFailure>;

// 1e−2 · min_j(R_ij C_t) · tol; an isolated unit uses R_t C_t in place of
// the line time constants.
double default_eta(const GridGraph& g, DguId id, double assumption2_tol);
double default_eta(const AugmentedDgu& aug, const DguParams& p, const std::vector<LineParams>& lines,
                   double assumption2_tol);

// Gains giving the isolated closed loop the characteristic polynomial
// (s + 2πf)³. They do not depend on the attached lines.
RowVector3d reference_gains(const DguParams& p, double bandwidth_hz);

// Characteristic-coefficient test for the existence of a structured
// semidefinite certificate (c2 > |a11| and c1 (c2 − |a11|) ≥ c0).
bool structurally_certifiable(const AugmentedDgu& aug, const RowVector3d& k);

SynthesisResult solve_problem_O(const AugmentedDgu& aug, const SynthesisOptions& opts);

// Evaluates the (structure-restricted) constraints of the problem at stored
// gains, for re-validation after a topology change.
struct ConstraintCheck {
    bool feasible = false;
    double worst_slack = 0.0;        // min normalized eigenvalue over LMIs
    double equality_residual = 0.0;  // relative
    std::string worst_constraint;
};
ConstraintCheck check_problem_O_constraints(const AugmentedDgu& aug, const ControllerGains& g,
                                            const SynthesisOptions& opts);

struct CertificateReport {
    double p_min_eig = 0.0;
    bool p_positive = false;
    double structure_deviation = 0.0;
    bool structure_ok = false;
    // Literal largest eigenvalue of AclᵀP + P·Acl, and the round-off level
    // of that eigenvalue (a structural zero lands anywhere within it).
    double lyapunov_lambda_max = 0.0;
    double lyapunov_resolution = 0.0;
    // With W = AclᵀP + P·Acl normalized by its diagonal: minus the largest
    // eigenvalue on the coordinates outside the structural kernel, and the
    // largest eigenvalue overall (zero for a semidefinite certificate).
    double lyapunov_margin = 0.0;
    double kernel_residual = 0.0;
    bool kernel_observable = false;
    bool lyapunov_ok = false;
    double gain_norm = 0.0;
    double gain_bound = 0.0;
    bool gain_ok = false;

    bool passed() const { return p_positive && structure_ok && lyapunov_ok && gain_ok; }
    // The strict inequality read literally, which the structure rules out.
    bool literal_strict() const { return lyapunov_lambda_max < -lyapunov_resolution; }
};

CertificateReport verify_certificate(const AugmentedDgu& aug, const ControllerGains& g,
                                     double margin = 0.5e-6);

struct Assumption2Report {
    bool passed = true;
    double worst_ratio = 0.0;
    std::optional<Edge> worst_edge;
    std::optional<DguId> worst_dgu;
};

Assumption2Report check_assumption_2(const GridGraph& g, const std::map<DguId, double>& etas,
                                     double tol);

struct GlobalCertificate {
    double max_real_eig = 0.0;
    bool spectral_ok = false;
    double lyapunov_lambda_max = 0.0;     // whole left side
    double local_terms_lambda_max = 0.0;  // block-diagonal part alone
    double coupling_term_max_abs = 0.0;   // largest entry of the coupling part
    double coupling_term_norm = 0.0;
    bool coupling_small = false;          // coupling_term_max_abs ≤ tol
    std::vector<std::complex<double>> eigenvalues;

    bool passed() const { return spectral_ok && coupling_small; }
};

MatrixXd closed_loop_matrix(const GridGraph& g, const std::map<DguId, ControllerGains>& gains);
GlobalCertificate certify_global_stability(const GridGraph& g,
                                           const std::map<DguId, ControllerGains>& gains,
                                           double assumption2_tol = 1e-3);

}  // namespace dcmg
