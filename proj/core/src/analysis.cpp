#include "dcmg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <fmt/format.h>

namespace dcmg {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

Matrix3d closed_loop(const AugmentedDgu& aug, const ControllerGains& g) {
    return aug.a_hat() + aug.b_hat() * g.k;
}

void require_hurwitz(const Matrix3d& acl) {
    Eigen::EigenSolver<Matrix3d> es(acl, false);
    for (int i = 0; i < 3; ++i)
        if (!(es.eigenvalues()(i).real() < 0.0))
            throw AnalysisError(fmt::format("closed loop is not Hurwitz (eigenvalue {:.6g}{:+.6g}j)",
                                            es.eigenvalues()(i).real(), es.eigenvalues()(i).imag()));
}

RationalTf siso(const Matrix3d& acl, const Vector3d& col) {
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(3);
    c(0) = 1.0;
    return transfer_function(acl, col, c).cancelled();
}

double root_scale(const std::vector<cplx>& roots) {
    double s = 0.0;
    for (const auto& r : roots) s = std::max(s, std::abs(r));
    return s;
}

std::optional<cplx> first_bad_zero(const std::vector<cplx>& zeros) {
    const double scale = root_scale(zeros);
    for (const auto& z : zeros)
        if (zero_unacceptable(z, scale)) return z;
    return std::nullopt;
}

Rejection reject(Rejection::Kind k, std::string msg) {
    Rejection r;
    r.kind = k;
    r.message = std::move(msg);
    return r;
}

}  // namespace

std::string to_string(Rejection::Kind k) {
    switch (k) {
        case Rejection::Kind::rhp_zero: return "rhp_zero";
        case Rejection::Kind::improper: return "improper";
        case Rejection::Kind::unstable: return "unstable";
    }
    return "?";
}

bool zero_unacceptable(cplx z, double scale) { return z.real() >= -1e-9 * scale; }

bool asymptotically_stable(const RationalTf& tf) {
    for (const auto& p : tf.poles())
        if (!(p.real() < 0.0)) return false;
    return true;
}

RationalTf closed_loop_reference_tf(const AugmentedDgu& aug, const ControllerGains& g) {
    const Matrix3d acl = closed_loop(aug, g);
    require_hurwitz(acl);
    return siso(acl, Vector3d(0.0, 0.0, 1.0));
}

RationalTf desired_tf_template(double bandwidth_hz, int order) {
    if (!(bandwidth_hz > 0.0)) throw InputError("template bandwidth must be positive");
    if (order < 1) throw InputError("template order must be at least 1");
    const double wc = two_pi * bandwidth_hz;
    std::vector<cplx> poles;
    for (int k = 1; k <= order; ++k) {
        const double th = std::numbers::pi * (2.0 * k + order - 1) / (2.0 * order);
        poles.push_back(wc * std::polar(1.0, th));
    }
    if (order % 2 == 1) poles[static_cast<std::size_t>(order / 2)] = -wc;
    const Polynomial den = Polynomial::from_roots(poles);
    return {Polynomial::constant(std::pow(wc, order)), den};
}

DesignResult design_prefilter(const RationalTf& f, const RationalTf& f_tilde) {
    if (!asymptotically_stable(f)) return reject(Rejection::Kind::unstable, "closed loop is not stable");
    if (f.num.is_zero()) return reject(Rejection::Kind::rhp_zero, "closed loop is identically zero");
    if (auto z = first_bad_zero(f.zeros())) {
        auto r = reject(Rejection::Kind::rhp_zero,
                        fmt::format("closed loop has a zero at {:.6g}{:+.6g}j", z->real(), z->imag()));
        r.root = z;
        return r;
    }
    const RationalTf c = (f_tilde * f.inverse()).cancelled();
    if (!c.proper()) {
        auto r = reject(Rejection::Kind::improper,
                        fmt::format("prefilter improper by {}", -c.relative_degree()));
        r.deficit = -c.relative_degree();
        r.candidate = c;
        return r;
    }
    if (!asymptotically_stable(c)) return reject(Rejection::Kind::unstable, "prefilter is not stable");
    return c;
}

DisturbanceTfs disturbance_tfs(const AugmentedDgu& aug, const ControllerGains& g) {
    const Matrix3d acl = closed_loop(aug, g);
    require_hurwitz(acl);
    return {siso(acl, aug.load_column()), siso(acl, aug.b_hat())};
}

DesignResult design_disturbance_compensator(const RationalTf& g_d, const RationalTf& g_u) {
    if (g_u.num.is_zero()) return reject(Rejection::Kind::rhp_zero, "input transfer function is zero");
    if (g_d.num.is_zero()) return RationalTf::gain(0.0);
    const RationalTf n = (-(g_d * g_u.inverse())).cancelled();
    // Poles of N are the zeros of g_u left after cancellation.
    if (auto z = first_bad_zero(n.poles())) {
        auto r = reject(Rejection::Kind::rhp_zero,
                        fmt::format("input path has an uncancelled zero at {:.6g}{:+.6g}j", z->real(), z->imag()));
        r.root = z;
        return r;
    }
    if (!n.proper()) {
        auto r = reject(Rejection::Kind::improper, fmt::format("compensator improper by {}", -n.relative_degree()));
        r.deficit = -n.relative_degree();
        r.candidate = n;
        return r;
    }
    return n;
}

RationalTf bandwidth_limited(const RationalTf& exact, double bandwidth_hz) {
    if (!(bandwidth_hz > 0.0)) throw InputError("fallback bandwidth must be positive");
    const double p = two_pi * 10.0 * bandwidth_hz;
    RationalTf out = exact;
    while (!out.proper()) out = out * RationalTf(Polynomial::constant(p), Polynomial({1.0, p}));
    if (!asymptotically_stable(out)) throw AnalysisError("bandwidth-limited filter is not stable");
    return out;
}

std::variant<FilterDesign, Rejection> with_fallback(const DesignResult& r, double bandwidth_hz) {
    if (const auto* tf = std::get_if<RationalTf>(&r)) return FilterDesign{*tf, *tf, false, std::nullopt, "exact"};
    const auto& rej = std::get<Rejection>(r);
    if (rej.kind != Rejection::Kind::improper || !rej.candidate) return rej;
    FilterDesign d;
    d.exact = *rej.candidate;
    d.realized = bandwidth_limited(d.exact, bandwidth_hz);
    d.approximate = true;
    d.fallback_pole_hz = 10.0 * bandwidth_hz;
    d.note = fmt::format("approximate: {} low-pass factor(s) at {:g} Hz", rej.deficit, *d.fallback_pole_hz);
    return d;
}

Spectrum spectrum(const MatrixXd& a) {
    if (a.rows() != a.cols()) throw InputError("spectrum of a non-square matrix");
    Spectrum s;
    if (a.size() == 0) return s;
    Eigen::EigenSolver<MatrixXd> es(a, true);
    const Eigen::MatrixXcd ac = a.cast<cplx>();
    const double an = std::max(a.norm(), std::numeric_limits<double>::min());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const cplx lam = es.eigenvalues()(i);
        const Eigen::VectorXcd v = es.eigenvectors().col(i);
        s.eigenvalues.push_back(lam);
        s.max_residual = std::max(s.max_residual, (ac * v - lam * v).norm() / (v.norm() * an));
    }
    return s;
}

std::vector<double> log_grid(double f_lo, double f_hi, int points) {
    if (!(f_lo > 0.0 && f_hi > f_lo) || points < 2) throw InputError("invalid frequency grid");
    std::vector<double> f(static_cast<std::size_t>(points));
    const double l0 = std::log10(f_lo), l1 = std::log10(f_hi);
    for (int i = 0; i < points; ++i) f[static_cast<std::size_t>(i)] = std::pow(10.0, l0 + (l1 - l0) * i / (points - 1));
    return f;
}

namespace {

void check_freqs(const std::vector<double>& freqs) {
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        if (!(freqs[i] > 0.0) || !std::isfinite(freqs[i])) throw InputError("frequencies must be positive");
        if (i > 0 && !(freqs[i] > freqs[i - 1])) throw InputError("frequencies must be strictly increasing");
    }
}

constexpr double inf = std::numeric_limits<double>::infinity();

}  // namespace

FrequencyResponse frequency_response(const RationalTf& tf, const std::vector<double>& freqs) {
    check_freqs(freqs);
    FrequencyResponse fr;
    fr.kind = ResponseKind::bode_magnitude;
    fr.freqs = freqs;
    const auto poles = tf.poles();
    for (double f : freqs) {
        const cplx s(0.0, two_pi * f);
        const bool on_pole = std::any_of(poles.begin(), poles.end(), [&](cplx p) {
            return std::abs(s - p) <= 1e-12 * (1.0 + std::abs(p));
        });
        const cplx g = on_pole ? cplx(inf, 0.0) : tf(s);
        fr.gains.push_back(g);
        fr.values.push_back(Eigen::VectorXd::Constant(1, on_pole ? inf : std::abs(g)));
    }
    return fr;
}

FrequencyResponse frequency_response(const MimoSystem& sys, const std::vector<double>& freqs) {
    check_freqs(freqs);
    const auto n = sys.a.rows();
    const auto m = sys.b.cols();
    const auto p = sys.c.rows();
    if (sys.a.cols() != n || sys.b.rows() != n || sys.c.cols() != n)
        throw InputError("inconsistent state-space dimensions");
    const MatrixXd d = sys.d.size() ? sys.d : MatrixXd::Zero(p, m);
    if (d.rows() != p || d.cols() != m) throw InputError("inconsistent feedthrough dimensions");
    FrequencyResponse fr;
    fr.kind = ResponseKind::singular_values;
    fr.freqs = freqs;
    std::vector<cplx> eigs;
    if (n > 0) {
        Eigen::EigenSolver<MatrixXd> es(sys.a, false);
        eigs.assign(es.eigenvalues().data(), es.eigenvalues().data() + n);
    }
    const auto k = std::min(p, m);
    for (double f : freqs) {
        const cplx s(0.0, two_pi * f);
        const bool on_pole = std::any_of(eigs.begin(), eigs.end(), [&](cplx e) {
            return std::abs(s - e) <= 1e-12 * (1.0 + std::abs(e));
        });
        if (on_pole) {
            fr.values.push_back(Eigen::VectorXd::Constant(k, inf));
            continue;
        }
        Eigen::MatrixXcd h = d.cast<cplx>();
        if (n > 0) {
            const Eigen::MatrixXcd lhs = s * Eigen::MatrixXcd::Identity(n, n) - sys.a.cast<cplx>();
            h += sys.c.cast<cplx>() * lhs.partialPivLu().solve(sys.b.cast<cplx>());
        }
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(h);
        fr.values.push_back(svd.singularValues());
    }
    return fr;
}

MimoSystem reference_to_voltage(const GridGraph& g, const std::map<DguId, ControllerGains>& gains) {
    MimoSystem s;
    s.a = closed_loop_matrix(g, gains);
    const auto n = static_cast<Eigen::Index>(g.size());
    s.b = MatrixXd::Zero(3 * n, n);
    s.c = MatrixXd::Zero(n, 3 * n);
    s.d = MatrixXd::Zero(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        s.b(3 * k + 2, k) = 1.0;
        s.c(k, 3 * k) = 1.0;
    }
    return s;
}

void write_spectrum_csv(std::ostream& os, const std::vector<cplx>& eigs) {
    os << "re,im\n";
    for (const auto& e : eigs) os << fmt::format("{:.17g},{:.17g}\n", e.real(), e.imag());
}

void write_response_csv(std::ostream& os, const FrequencyResponse& fr) {
    const auto cols = fr.values.empty() ? 0 : fr.values.front().size();
    os << "freq_hz";
    if (fr.kind == ResponseKind::bode_magnitude) {
        os << ",magnitude";
    } else {
        for (Eigen::Index i = 0; i < cols; ++i) os << ",sv" << i + 1;
    }
    os << '\n';
    for (std::size_t r = 0; r < fr.freqs.size(); ++r) {
        os << fmt::format("{:.17g}", fr.freqs[r]);
        for (Eigen::Index i = 0; i < fr.values[r].size(); ++i) os << fmt::format(",{:.17g}", fr.values[r](i));
        os << '\n';
    }
}

}  // namespace dcmg
