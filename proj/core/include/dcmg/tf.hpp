#pragma once

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dcmg {

using cplx = std::complex<double>;

// Real polynomial, coefficients in descending powers. The zero polynomial
// is stored as {0}.
class Polynomial {
public:
    Polynomial() : c_{0.0} {}
    explicit Polynomial(std::vector<double> descending);
    static Polynomial constant(double v) { return Polynomial({v}); }
    // Monic product of (s − r); complex roots must come in conjugate pairs.
    static Polynomial from_roots(const std::vector<cplx>& roots, double gain = 1.0);

    const std::vector<double>& coeffs() const { return c_; }
    int degree() const { return static_cast<int>(c_.size()) - 1; }
    double leading() const { return c_.front(); }
    bool is_zero() const { return c_.size() == 1 && c_[0] == 0.0; }
    double max_abs() const;

    cplx operator()(cplx s) const;
    double operator()(double s) const;

    std::vector<cplx> roots() const;

    Polynomial operator+(const Polynomial& o) const;
    Polynomial operator-(const Polynomial& o) const;
    Polynomial operator*(const Polynomial& o) const;
    Polynomial operator*(double k) const;
    Polynomial operator-() const { return *this * -1.0; }

    // Drops leading coefficients below rel·max|c|.
    Polynomial trimmed(double rel = 0.0) const;

private:
    std::vector<double> c_;
};

struct RationalTf {
    Polynomial num;
    Polynomial den;  // monic after normalize()

    RationalTf() : num(Polynomial::constant(0.0)), den(Polynomial::constant(1.0)) {}
    RationalTf(Polynomial n, Polynomial d);
    static RationalTf gain(double k) { return {Polynomial::constant(k), Polynomial::constant(1.0)}; }

    cplx operator()(cplx s) const { return num(s) / den(s); }
    double dc_gain() const { return num(0.0) / den(0.0); }

    RationalTf operator*(const RationalTf& o) const;
    RationalTf operator+(const RationalTf& o) const;
    RationalTf operator-(const RationalTf& o) const;
    RationalTf operator-() const { return {-num, den}; }
    RationalTf inverse() const;

    bool proper() const { return num.degree() <= den.degree(); }
    int relative_degree() const { return den.degree() - num.degree(); }
    std::vector<cplx> zeros() const { return num.roots(); }
    std::vector<cplx> poles() const { return den.roots(); }

    // Removes pole/zero pairs closer than tol·(1 + |root|).
    RationalTf cancelled(double tol = 1e-7) const;
};

// Largest |coefficient| of a·d − c·b relative to the larger of the two
// products, for a = n1/d1 and b = n2/d2 compared as rational functions.
double rational_mismatch(const RationalTf& a, const RationalTf& b);

// SISO transfer function c (sI − A)⁻¹ b (+ d).
RationalTf transfer_function(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                             const Eigen::RowVectorXd& c, double d = 0.0);
// Coefficients of det(sI − A), descending, monic.
Polynomial characteristic_polynomial(const Eigen::MatrixXd& a);

// Controllable canonical realization, diagonally balanced.
struct Realization {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    Eigen::RowVectorXd c;
    double d = 0.0;
};
Realization realize(const RationalTf& tf);

std::string to_string(const Polynomial& p);

}  // namespace dcmg
