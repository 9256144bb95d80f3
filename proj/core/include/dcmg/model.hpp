#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcmg/grid.hpp"

namespace dcmg {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::RowVector2d;
using Eigen::RowVector3d;
using Eigen::Vector3d;
using Eigen::VectorXd;

// x' = a x + b u + m_dist d,  y = c x,  z = h y
struct StateSpaceModel {
    MatrixXd a, b, c, m_dist, h;
    std::vector<std::string> states, inputs, outputs, disturbances, controlled;

    std::size_t n() const { return static_cast<std::size_t>(a.rows()); }
    // Throws std::logic_error on inconsistent shapes or duplicate labels.
    void validate() const;
};

struct AugmentedDgu {
    DguId id;
    StateSpaceModel base;  // V, I_t
    StateSpaceModel aug;   // V, I_t, integrator
    std::map<DguId, Matrix3d> coupling;

    Matrix3d a_hat() const { return aug.a; }
    Vector3d b_hat() const { return aug.b.col(0); }
    // Input column of the load current (first column of the augmented M).
    Vector3d load_column() const { return aug.m_dist.col(0); }
    // Self term Σ_j −1/(R_ij C_t), zero for an isolated unit.
    double coupling_self_term() const { return aug.a(0, 0); }
};

struct LineSubsystem {
    double a_ll;      // −R/L
    RowVector2d a_li; // on the unit the current is named after
    RowVector2d a_lj; // on the far-end unit
};

StateSpaceModel build_local_dgu(const DguParams& p, const std::vector<LineParams>& attached_lines,
                                DguId id = DguId{1});
Matrix2d build_coupling(const LineParams& line, double c_ti);
LineSubsystem build_line_subsystem(const LineParams& line);

AugmentedDgu augment_with_integrator(const StateSpaceModel& local, DguId id = DguId{1});
// Local augmented model of one unit inside `g`, including its coupling blocks.
AugmentedDgu augmented_dgu(const GridGraph& g, DguId id);

StateSpaceModel assemble_qsl_overall(const GridGraph& g);
// Integrator-augmented overall model (3N states).
StateSpaceModel assemble_augmented_overall(const GridGraph& g);

enum class LineCoupling {
    // DGU rows keep the algebraic line substitution; line states are driven
    // but do not feed back (block-triangular form).
    quasi_static,
    // DGU rows receive the line currents directly (electrical equations).
    dynamic,
};

// 2N DGU states followed by two line-current states per edge (ij, ji).
StateSpaceModel assemble_full_line_model(const GridGraph& g,
                                         LineCoupling mode = LineCoupling::quasi_static);

double rank_tolerance(const Eigen::VectorXd& singular_values);
int numerical_rank(const MatrixXd& m);

struct RankReport {
    int rank = 0;
    int expected = 0;
    double sigma_max = 0.0;
    double sigma_min = 0.0;
    bool full() const { return rank == expected; }
};

// rank([[A, B], [HC, 0]]) against 3N.
RankReport check_rank_gamma(const StateSpaceModel& qsl_overall);
// rank([B, AB, A²B]) against 3.
RankReport check_local_controllability(const AugmentedDgu& aug);

}  // namespace dcmg
