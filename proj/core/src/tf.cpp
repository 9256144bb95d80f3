#include "dcmg/tf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace dcmg {

namespace {

std::vector<double> strip_leading_zeros(std::vector<double> c) {
    auto it = std::find_if(c.begin(), c.end(), [](double v) { return v != 0.0; });
    if (it == c.end()) return {0.0};
    c.erase(c.begin(), it);
    return c;
}

}  // namespace

Polynomial::Polynomial(std::vector<double> descending) {
    if (descending.empty()) descending = {0.0};
    c_ = strip_leading_zeros(std::move(descending));
}

Polynomial Polynomial::from_roots(const std::vector<cplx>& roots, double gain) {
    std::vector<cplx> c{1.0};
    for (const auto& r : roots) {
        std::vector<cplx> next(c.size() + 1, 0.0);
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i] += c[i];
            next[i + 1] -= c[i] * r;
        }
        c = std::move(next);
    }
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = gain * c[i].real();
    return Polynomial(std::move(out));
}

double Polynomial::max_abs() const {
    double m = 0.0;
    for (double v : c_) m = std::max(m, std::abs(v));
    return m;
}

cplx Polynomial::operator()(cplx s) const {
    cplx acc = 0.0;
    for (double v : c_) acc = acc * s + v;
    return acc;
}

double Polynomial::operator()(double s) const {
    double acc = 0.0;
    for (double v : c_) acc = acc * s + v;
    return acc;
}

std::vector<cplx> Polynomial::roots() const {
    const int n = degree();
    if (n <= 0) return {};
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) comp(0, j) = -c_[j + 1] / c_[0];
    for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    std::vector<cplx> r(es.eigenvalues().data(), es.eigenvalues().data() + n);
    // Polish each root with a few Newton steps on the original polynomial.
    std::vector<double> d;
    for (int i = 0; i < n; ++i) d.push_back(c_[i] * (n - i));
    const Polynomial dp(d);
    for (auto& x : r) {
        for (int it = 0; it < 3; ++it) {
            const cplx f = (*this)(x);
            const cplx df = dp(x);
            if (std::abs(df) == 0.0) break;
            const cplx nx = x - f / df;
            if (!std::isfinite(nx.real()) || !std::isfinite(nx.imag())) break;
            if (std::abs((*this)(nx)) >= std::abs(f)) break;
            x = nx;
        }
    }
    std::sort(r.begin(), r.end(), [](cplx a, cplx b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return r;
}

Polynomial Polynomial::operator+(const Polynomial& o) const {
    const auto n = std::max(c_.size(), o.c_.size());
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < c_.size(); ++i) out[n - c_.size() + i] += c_[i];
    for (std::size_t i = 0; i < o.c_.size(); ++i) out[n - o.c_.size() + i] += o.c_[i];
    return Polynomial(std::move(out));
}

Polynomial Polynomial::operator-(const Polynomial& o) const { return *this + (-o); }

Polynomial Polynomial::operator*(const Polynomial& o) const {
    std::vector<double> out(c_.size() + o.c_.size() - 1, 0.0);
    for (std::size_t i = 0; i < c_.size(); ++i)
        for (std::size_t j = 0; j < o.c_.size(); ++j) out[i + j] += c_[i] * o.c_[j];
    return Polynomial(std::move(out));
}

Polynomial Polynomial::operator*(double k) const {
    auto out = c_;
    for (auto& v : out) v *= k;
    return Polynomial(std::move(out));
}

Polynomial Polynomial::trimmed(double rel) const {
    const double cut = rel * max_abs();
    auto out = c_;
    while (out.size() > 1 && std::abs(out.front()) <= cut) out.erase(out.begin());
    return Polynomial(std::move(out));
}

RationalTf::RationalTf(Polynomial n, Polynomial d) : num(std::move(n)), den(std::move(d)) {
    if (den.is_zero()) throw std::domain_error("zero denominator");
    const double lead = den.leading();
    num = num * (1.0 / lead);
    den = den * (1.0 / lead);
}

RationalTf RationalTf::operator*(const RationalTf& o) const { return {num * o.num, den * o.den}; }

RationalTf RationalTf::operator+(const RationalTf& o) const {
    return {num * o.den + o.num * den, den * o.den};
}

RationalTf RationalTf::operator-(const RationalTf& o) const { return *this + (-o); }

RationalTf RationalTf::inverse() const {
    if (num.is_zero()) throw std::domain_error("inverse of zero transfer function");
    return {den, num};
}

RationalTf RationalTf::cancelled(double tol) const {
    if (num.is_zero()) return RationalTf(Polynomial::constant(0.0), Polynomial::constant(1.0));
    auto z = num.roots();
    auto p = den.roots();
    std::vector<bool> zused(z.size(), false), pused(p.size(), false);
    for (std::size_t i = 0; i < z.size(); ++i) {
        std::size_t best = p.size();
        double bd = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (pused[j]) continue;
            const double d = std::abs(z[i] - p[j]);
            if (d <= tol * (1.0 + std::abs(p[j])) && (best == p.size() || d < bd)) {
                best = j;
                bd = d;
            }
        }
        if (best != p.size()) {
            zused[i] = true;
            pused[best] = true;
        }
    }
    if (std::none_of(zused.begin(), zused.end(), [](bool b) { return b; })) return *this;
    std::vector<cplx> zk, pk;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (!zused[i]) zk.push_back(z[i]);
    for (std::size_t j = 0; j < p.size(); ++j)
        if (!pused[j]) pk.push_back(p[j]);
    // Conjugate pairs are removed together since matching is symmetric; snap
    // tiny imaginary parts of survivors so the rebuilt coefficients stay real.
    return {Polynomial::from_roots(zk, num.leading()), Polynomial::from_roots(pk, den.leading())};
}

double rational_mismatch(const RationalTf& a, const RationalTf& b) {
    const Polynomial lhs = a.num * b.den;
    const Polynomial rhs = b.num * a.den;
    const double scale = std::max(lhs.max_abs(), rhs.max_abs());
    if (scale == 0.0) return 0.0;
    return (lhs - rhs).max_abs() / scale;
}

Polynomial characteristic_polynomial(const Eigen::MatrixXd& a) {
    const auto n = a.rows();
    if (a.cols() != n) throw std::invalid_argument("characteristic polynomial of non-square matrix");
    // Faddeev–LeVerrier; adequate for the small orders handled here.
    std::vector<double> c(n + 1, 0.0);
    c[0] = 1.0;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index k = 1; k <= n; ++k) {
        m = a * m + c[k - 1] * id;
        c[k] = -(a * m).trace() / static_cast<double>(k);
    }
    return Polynomial(std::move(c));
}

RationalTf transfer_function(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                             const Eigen::RowVectorXd& c, double d) {
    // c (sI − A)⁻¹ b = [det(sI − A + b c) − det(sI − A)] / det(sI − A)
    const Polynomial den = characteristic_polynomial(a);
    const Polynomial shifted = characteristic_polynomial(a - b * c);
    Polynomial num = shifted - den;
    if (d != 0.0) num = num + den * d;
    // The subtraction leaves round-off in the s^n slot.
    if (num.degree() == den.degree() && d == 0.0) {
        auto co = num.coeffs();
        co.front() = 0.0;
        num = Polynomial(co);
    }
    return RationalTf(num.trimmed(1e-14), den);
}

namespace {

// Parlett–Reinsch style diagonal balancing by powers of two.
Eigen::VectorXd balance_scaling(const Eigen::MatrixXd& a) {
    const auto n = a.rows();
    Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
    Eigen::MatrixXd m = a;
    bool changed = true;
    for (int sweep = 0; changed && sweep < 100; ++sweep) {
        changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            double r = 0.0, c = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                r += std::abs(m(i, j));
                c += std::abs(m(j, i));
            }
            if (r == 0.0 || c == 0.0) continue;
            double f = 1.0;
            const double s = r + c;
            while (c < r / 2.0) { c *= 2.0; r /= 2.0; f *= 2.0; }
            while (c >= r * 2.0) { c /= 2.0; r *= 2.0; f /= 2.0; }
            if ((c + r) < 0.95 * s) {
                changed = true;
                d(i) *= f;
                m.row(i) /= f;
                m.col(i) *= f;
            }
        }
    }
    return d;
}

}  // namespace

Realization realize(const RationalTf& tf) {
    if (!tf.proper()) throw std::domain_error("cannot realize an improper transfer function");
    const int n = tf.den.degree();
    Realization r;
    const auto& den = tf.den.coeffs();
    std::vector<double> num(n + 1, 0.0);
    const auto& nc = tf.num.coeffs();
    std::copy(nc.begin(), nc.end(), num.end() - static_cast<std::ptrdiff_t>(nc.size()));
    r.d = num[0];
    r.a = Eigen::MatrixXd::Zero(n, n);
    r.b = Eigen::VectorXd::Zero(n);
    r.c = Eigen::RowVectorXd::Zero(n);
    if (n == 0) return r;
    for (int j = 0; j < n; ++j) r.a(0, j) = -den[j + 1];
    for (int i = 1; i < n; ++i) r.a(i, i - 1) = 1.0;
    r.b(0) = 1.0;
    for (int j = 0; j < n; ++j) r.c(j) = num[j + 1] - num[0] * den[j + 1];
    // x = D x̃
    const Eigen::VectorXd d = balance_scaling(r.a);
    r.a = d.cwiseInverse().asDiagonal() * r.a * d.asDiagonal();
    r.b = d.cwiseInverse().asDiagonal() * r.b;
    r.c = r.c * d.asDiagonal();
    return r;
}

std::string to_string(const Polynomial& p) {
    std::string s = "[";
    for (std::size_t i = 0; i < p.coeffs().size(); ++i)
        s += fmt::format("{}{:.17g}", i ? ", " : "", p.coeffs()[i]);
    return s + "]";
}

}  // namespace dcmg
