#include "dcmg/sdp.hpp"

#include <cmath>
#include <limits>
#include <optional>

#include <fmt/format.h>

namespace dcmg::sdp {

MatrixXd Lmi::eval(const VectorXd& x) const {
    MatrixXd out = f0;
    for (std::size_t i = 0; i < f.size(); ++i) out += x(static_cast<Eigen::Index>(i)) * f[i];
    return out;
}

void Problem::add_equality(const VectorXd& row, double rhs) {
    const auto r = eq_a.rows();
    MatrixXd a(r + 1, n);
    if (r > 0) a.topRows(r) = eq_a;
    a.row(r) = row.transpose();
    VectorXd b(r + 1);
    if (r > 0) b.head(r) = eq_b;
    b(r) = rhs;
    eq_a = std::move(a);
    eq_b = std::move(b);
}

std::string to_string(Status s) {
    switch (s) {
        case Status::optimal: return "optimal";
        case Status::infeasible: return "infeasible";
        case Status::numerical_failure: return "numerical_failure";
    }
    return "?";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Barrier {
    std::vector<Lmi> lmis;
    VectorXd c;
    int m = 0;  // barrier parameter: total LMI dimension

    void finish() {
        m = 0;
        for (const auto& l : lmis) m += static_cast<int>(l.f0.rows());
    }

    // Returns +inf outside the domain.
    double value(const VectorXd& z, double t) const {
        double v = t * c.dot(z);
        for (const auto& l : lmis) {
            Eigen::LLT<MatrixXd> llt(l.eval(z));
            if (llt.info() != Eigen::Success) return kInf;
            const auto& lm = llt.matrixLLT();
            for (Eigen::Index i = 0; i < lm.rows(); ++i) {
                const double d = lm(i, i);
                if (!(d > 0.0) || !std::isfinite(d)) return kInf;
                v -= 2.0 * std::log(d);
            }
        }
        return v;
    }

    bool derivatives(const VectorXd& z, double t, VectorXd& g, MatrixXd& h) const {
        const auto k = z.size();
        g = t * c;
        h = MatrixXd::Zero(k, k);
        std::vector<MatrixXd> scaled(static_cast<std::size_t>(k));
        for (const auto& l : lmis) {
            Eigen::LLT<MatrixXd> llt(l.eval(z));
            if (llt.info() != Eigen::Success) return false;
            const auto lower = llt.matrixL();
            for (Eigen::Index i = 0; i < k; ++i) {
                MatrixXd tmp = lower.solve(l.f[static_cast<std::size_t>(i)]);
                scaled[static_cast<std::size_t>(i)] = lower.solve(tmp.transpose()).transpose();
                g(i) -= scaled[static_cast<std::size_t>(i)].trace();
            }
            for (Eigen::Index i = 0; i < k; ++i)
                for (Eigen::Index j = 0; j <= i; ++j) {
                    const double v = scaled[static_cast<std::size_t>(i)]
                                         .cwiseProduct(scaled[static_cast<std::size_t>(j)])
                                         .sum();
                    h(i, j) += v;
                    if (i != j) h(j, i) += v;
                }
        }
        return g.allFinite() && h.allFinite();
    }
};

enum class Centering { ok, stalled, failed };

// Damped Newton on t·cᵀz + barrier, starting from a strictly feasible z.
Centering center(const Barrier& b, VectorXd& z, double t, int max_iter, int& steps) {
    const auto k = z.size();
    if (k == 0) return Centering::ok;
    VectorXd g;
    MatrixXd h;
    for (int it = 0; it < max_iter; ++it) {
        if (!b.derivatives(z, t, g, h)) return Centering::failed;
        // Jacobi equilibration before the factorization; variables may be
        // badly scaled relative to each other.
        VectorXd d = h.diagonal().cwiseAbs().cwiseMax(std::numeric_limits<double>::min()).cwiseSqrt().cwiseInverse();
        MatrixXd hs = d.asDiagonal() * h * d.asDiagonal();
        // Near-singular Hessians lose definiteness in round-off; shift the
        // equilibrated matrix until the Newton direction descends.
        VectorXd step;
        double dec2 = -1.0;
        for (double shift = 0.0; shift < 1.0; shift = shift == 0.0 ? 1e-12 : shift * 100.0) {
            MatrixXd hr = hs;
            hr.diagonal().array() += shift;
            Eigen::LDLT<MatrixXd> ldlt(hr);
            if (ldlt.info() != Eigen::Success) continue;
            step = -(d.asDiagonal() * ldlt.solve(d.asDiagonal() * g));
            if (!step.allFinite()) continue;
            dec2 = -g.dot(step);
            if (dec2 >= 0.0) break;
        }
        ++steps;
        if (!(dec2 >= 0.0)) return Centering::failed;
        if (dec2 / 2.0 < 1e-11) return Centering::ok;
        const double f0 = b.value(z, t);
        double alpha = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 80; ++ls) {
            VectorXd trial = z + alpha * step;
            const double f1 = b.value(trial, t);
            if (std::isfinite(f1) && f1 <= f0 - 0.25 * alpha * dec2) {
                z = std::move(trial);
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) return dec2 < 1e-6 ? Centering::ok : Centering::stalled;
    }
    return Centering::stalled;
}

double min_eig(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

Lmi ball(int k, int offset, int total, double radius) {
    Lmi l;
    l.name = "radius";
    l.f0 = radius * MatrixXd::Identity(k + 1, k + 1);
    l.f.assign(static_cast<std::size_t>(total), MatrixXd::Zero(k + 1, k + 1));
    for (int i = 0; i < k; ++i) {
        auto& fi = l.f[static_cast<std::size_t>(offset + i)];
        fi(i, k) = 1.0;
        fi(k, i) = 1.0;
    }
    return l;
}

}  // namespace

Result solve(const Problem& p, const Settings& s) {
    Result res;
    const int n = p.n;
    if (p.cost.size() != n) {
        res.message = "cost size mismatch";
        return res;
    }

    // Affine parametrization x = x0 + N z of the equality constraints.
    VectorXd x0 = VectorXd::Zero(n);
    MatrixXd basis = MatrixXd::Identity(n, n);
    if (p.eq_a.rows() > 0) {
        Eigen::JacobiSVD<MatrixXd> svd(p.eq_a, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        const double tol = sv.size() ? 1e-12 * std::max(1.0, sv.maxCoeff()) * std::max(p.eq_a.rows(), p.eq_a.cols()) : 0.0;
        Eigen::Index rank = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv(i) > tol) ++rank;
        VectorXd utb = svd.matrixU().transpose() * p.eq_b;
        VectorXd y = VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < rank; ++i) y(i) = utb(i) / sv(i);
        x0 = svd.matrixV() * y;
        const double resid = (p.eq_a * x0 - p.eq_b).norm();
        if (resid > 1e-9 * (1.0 + p.eq_b.norm() + p.eq_a.norm() * x0.norm())) {
            res.status = Status::infeasible;
            res.message = fmt::format("inconsistent equality constraints (residual {:.3g})", resid);
            return res;
        }
        basis = svd.matrixV().rightCols(n - rank);
    }
    const int k = static_cast<int>(basis.cols());

    Barrier reduced;
    reduced.c = basis.transpose() * p.cost;
    for (const auto& l : p.lmis) {
        if (static_cast<int>(l.f.size()) != n) {
            res.message = fmt::format("LMI '{}' has wrong term count", l.name);
            return res;
        }
        Lmi r;
        r.name = l.name;
        r.f0 = l.eval(x0);
        r.f.assign(static_cast<std::size_t>(k), MatrixXd::Zero(l.f0.rows(), l.f0.cols()));
        for (int j = 0; j < k; ++j)
            for (int i = 0; i < n; ++i)
                if (basis(i, j) != 0.0) r.f[static_cast<std::size_t>(j)] += basis(i, j) * l.f[static_cast<std::size_t>(i)];
        reduced.lmis.push_back(std::move(r));
    }

    auto lift = [&](const VectorXd& z) -> VectorXd { return x0 + basis * z; };

    // Phase I: maximize s subject to F(z) ⪰ s·I, s ≤ 1, ‖z‖ ≤ radius.
    VectorXd z = VectorXd::Zero(k);
    double worst = kInf;
    for (const auto& l : reduced.lmis) worst = std::min(worst, min_eig(l.f0));
    if (!std::isfinite(worst)) {
        res.message = "non-finite problem data";
        return res;
    }

    if (worst <= 0.0 || k == 0) {
        if (k == 0) {
            res.feasibility = worst;
            if (worst > 0.0) {
                res.status = Status::optimal;
                res.x = x0;
                res.objective = p.cost.dot(x0);
            } else {
                res.status = Status::infeasible;
                res.message = fmt::format("no free variables and slack {:.3g}", worst);
            }
            return res;
        }
        Barrier ph1;
        const int k1 = k + 1;
        ph1.c = VectorXd::Zero(k1);
        ph1.c(k) = -1.0;
        for (const auto& l : reduced.lmis) {
            Lmi r;
            r.name = l.name;
            r.f0 = l.f0;
            r.f = l.f;
            r.f.push_back(-MatrixXd::Identity(l.f0.rows(), l.f0.cols()));
            ph1.lmis.push_back(std::move(r));
        }
        Lmi cap;
        cap.name = "cap";
        cap.f0 = MatrixXd::Ones(1, 1);
        cap.f.assign(static_cast<std::size_t>(k1), MatrixXd::Zero(1, 1));
        cap.f.back()(0, 0) = -1.0;
        ph1.lmis.push_back(std::move(cap));
        ph1.lmis.push_back(ball(k, 0, k1, s.radius));
        ph1.finish();

        VectorXd w(k1);
        w.head(k) = z;
        w(k) = worst - 1.0 - std::abs(worst);
        double t = 1.0 / (1.0 + std::abs(worst));
        bool feasible = false;
        for (int outer = 0; outer < s.max_outer; ++outer) {
            const auto c = center(ph1, w, t, s.max_newton, res.newton_steps);
            if (c == Centering::failed) {
                res.message = "phase I Newton failure";
                return res;
            }
            res.feasibility = w(k);
            if (w(k) > 0.0) {
                feasible = true;
                break;
            }
            const double gap = ph1.m / t;
            if (gap < s.gap_tol * std::max(1.0, std::abs(w(k)))) break;
            t *= s.growth;
        }
        if (!feasible) {
            const double gap = ph1.m / t;
            if (w(k) + gap < 0.0) {
                res.status = Status::infeasible;
                res.message = fmt::format("phase I optimum {:.6g} < 0", w(k));
            } else {
                res.message = fmt::format("marginal feasibility (phase I optimum {:.3g})", w(k));
            }
            res.x = lift(w.head(k));
            return res;
        }
        z = w.head(k);
    } else {
        res.feasibility = worst;
    }

    // Phase II.
    reduced.lmis.push_back(ball(k, 0, k, s.radius));
    reduced.finish();
    double t = 1.0;
    {
        // Initial weight from the gradient scale of the barrier.
        VectorXd g;
        MatrixXd h;
        Barrier pure = reduced;
        pure.c.setZero();
        if (pure.derivatives(z, 0.0, g, h) && reduced.c.norm() > 0.0)
            t = std::max(1e-12, g.norm() / reduced.c.norm());
    }
    for (int outer = 0; outer < s.max_outer; ++outer) {
        const auto c = center(reduced, z, t, s.max_newton, res.newton_steps);
        if (c == Centering::failed) {
            res.x = lift(z);
            if (outer == 0) {
                res.message = "phase II Newton failure";
                return res;
            }
            // z is still strictly feasible; keep it.
            res.status = Status::optimal;
            res.message = fmt::format("centering failed at gap {:.3g}; returning last central point", reduced.m / t);
            break;
        }
        const double obj = reduced.c.dot(z);
        if (reduced.m / t < s.gap_tol * std::max(1.0, std::abs(obj))) {
            res.status = Status::optimal;
            break;
        }
        t *= s.growth;
    }
    res.x = lift(z);
    res.objective = p.cost.dot(res.x);
    if (res.status != Status::optimal) {
        // Still strictly feasible; accept with a note when the gap is small
        // in absolute terms.
        res.status = Status::optimal;
        res.message = "stopped at iteration limit";
    }
    if (z.norm() > 0.99 * s.radius) res.message = "solution on the safety radius";
    return res;
}

}  // namespace dcmg::sdp
