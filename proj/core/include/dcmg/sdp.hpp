#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dcmg::sdp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// F(x) = f0 + Σ x_i f[i]  ⪰ 0, all symmetric of equal size.
struct Lmi {
    std::string name;
    MatrixXd f0;
    std::vector<MatrixXd> f;

    MatrixXd eval(const VectorXd& x) const;
};

// minimize cᵀx  s.t.  every LMI ⪰ 0,  eq_a x = eq_b.
struct Problem {
    int n = 0;
    VectorXd cost;
    std::vector<Lmi> lmis;
    MatrixXd eq_a;
    VectorXd eq_b;

    void add_equality(const VectorXd& row, double rhs);
};

enum class Status { optimal, infeasible, numerical_failure };

std::string to_string(Status s);

struct Settings {
    double gap_tol = 1e-9;        // relative duality-gap bound at termination
    double radius = 1e8;          // ‖x‖ bound keeping the barrier bounded
    double growth = 20.0;         // barrier weight multiplier per outer step
    int max_newton = 500;         // per centering step
    int max_outer = 80;
};

struct Result {
    Status status = Status::numerical_failure;
    VectorXd x;
    double objective = 0.0;
    double feasibility = 0.0;  // phase-I optimum: min eigenvalue slack achieved
    int newton_steps = 0;
    std::string message;
};

// Log-det barrier path following. Infeasible is reported only when phase I
// converges with a strictly negative best slack.
Result solve(const Problem& p, const Settings& s = {});

}  // namespace dcmg::sdp
