/// @file basis.cpp
/// @brief Gauss-Legendre construction and the 1D operator matrices.

#include "stagdg/basis.hpp"

#include <cmath>

namespace stagdg {

// ============================================================================
// Gauss-Legendre nodes by Newton iteration on P_n with Chebyshev guesses
// ============================================================================

namespace {

/// Legendre P_n(x) and P'_n(x) on [-1,1] via the three-term recurrence.
void legendre(int n, double x, double& p, double& dp) {
    double p0 = 1.0, p1 = x;
    if (n == 0) { p = p0; dp = 0.0; return; }
    for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    p = p1;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
}

/// n-point rule on [0,1], no degree cap (internal oversampled quadrature).
Basis1D gl_rule(int n) {
    Basis1D b;
    b.N = n - 1;
    b.nodes.resize(n);
    b.weights.resize(n);
    const double pi = std::acos(-1.0);
    for (int i = 0; i < n; ++i) {
        // Chebyshev guess for the i-th root of P_n (descending in x)
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double p, dp;
        for (int it = 0; it < 100; ++it) {
            legendre(n, x, p, dp);
            const double dx = p / dp;
            x -= dx;
            if (std::fabs(dx) < 1e-15) break;
        }
        legendre(n, x, p, dp);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1,1] -> [0,1]; roots come out descending, store ascending
        b.nodes[n - 1 - i] = 0.5 * (x + 1.0);
        b.weights[n - 1 - i] = 0.5 * w;
    }
    return b;
}

}  // namespace

Basis1D gauss_legendre(int N) {
    if (N < 0 || N > 16)
        throw config_error("gauss_legendre: degree must be in [0,16], got " + std::to_string(N));
    return gl_rule(N + 1);
}

std::vector<double> eval_basis(const Basis1D& b, double xi) {
    const int n = b.npts();
    std::vector<double> v(n, 1.0);
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            if (q != p) v[p] *= (xi - b.nodes[q]) / (b.nodes[p] - b.nodes[q]);
    return v;
}

std::vector<double> eval_basis_deriv(const Basis1D& b, double xi) {
    const int n = b.npts();
    std::vector<double> d(n, 0.0);
    for (int p = 0; p < n; ++p) {
        // phi_p'(xi) = sum_r 1/(xi_p - xi_r) * prod_{q != p,r} (xi-xi_q)/(xi_p-xi_q)
        for (int r = 0; r < n; ++r) {
            if (r == p) continue;
            double term = 1.0 / (b.nodes[p] - b.nodes[r]);
            for (int q = 0; q < n; ++q) {
                if (q == p || q == r) continue;
                term *= (xi - b.nodes[q]) / (b.nodes[p] - b.nodes[q]);
            }
            d[p] += term;
        }
    }
    return d;
}

// ============================================================================
// Operator matrices
// ============================================================================

namespace {

/// Quadrature rule with 2(N+1) points: exact for every integrand that shows
/// up below (degree <= 2N per half-interval once the substitution is done).
struct Quad {
    std::vector<double> x, w;
    explicit Quad(int N) {
        const Basis1D q = gl_rule(2 * (N + 1));
        x = q.nodes;
        w = q.weights;
    }
};

}  // namespace

OperatorSet1D build_operators(const Basis1D& basis) {
    const int n = basis.npts();
    OperatorSet1D o;
    o.basis = basis;

    o.M = Mat(n, n);
    o.Minv = Mat(n, n);
    for (int p = 0; p < n; ++p) {
        o.M(p, p) = basis.weights[p];
        o.Minv(p, p) = 1.0 / basis.weights[p];
    }

    o.phi0 = eval_basis(basis, 0.0);
    o.phi1 = eval_basis(basis, 1.0);
    o.phih = eval_basis(basis, 0.5);

    const Quad quad(basis.N);
    const int nq = int(quad.x.size());

    o.Rt = Mat(n, n);
    o.Lt = Mat(n, n);
    o.ML = Mat(n, n);
    o.MR = Mat(n, n);
    o.K = Mat(n, n);
    o.Rbh = Mat(n, n);
    o.Lbh = Mat(n, n);
    o.AL = Mat(n, n);
    o.AR = Mat(n, n);

    for (int g = 0; g < nq; ++g) {
        const double s = quad.x[g], w = quad.w[g];
        const auto phi_lo = eval_basis(basis, 0.5 * s);         // phi(s/2)
        const auto phi_hi = eval_basis(basis, 0.5 + 0.5 * s);   // phi(1/2+s/2)
        const auto dphi_lo = eval_basis_deriv(basis, 0.5 * s);
        const auto dphi_hi = eval_basis_deriv(basis, 0.5 + 0.5 * s);
        const auto phi_s = eval_basis(basis, s);
        const auto dphi_s = eval_basis_deriv(basis, s);
        for (int p = 0; p < n; ++p) {
            for (int q = 0; q < n; ++q) {
                o.Rt(p, q) += 0.5 * w * phi_hi[p] * dphi_lo[q];
                o.Lt(p, q) -= 0.5 * w * phi_lo[p] * dphi_hi[q];
                o.ML(p, q) += 0.5 * w * phi_lo[p] * phi_hi[q];
                o.MR(p, q) += 0.5 * w * phi_hi[p] * phi_lo[q];
                o.K(p, q) += w * dphi_s[p] * phi_s[q];
                o.Rbh(p, q) += w * phi_hi[p] * dphi_s[q];
                o.Lbh(p, q) -= w * phi_lo[p] * dphi_s[q];
                o.AL(p, q) += 0.5 * w * phi_lo[p] * phi_s[q];
                o.AR(p, q) += 0.5 * w * phi_hi[p] * phi_s[q];
            }
        }
    }
    for (int p = 0; p < n; ++p) {
        for (int q = 0; q < n; ++q) {
            o.Rt(p, q) += o.phih[p] * o.phi0[q];
            o.Lt(p, q) += o.phih[p] * o.phi1[q];
            o.Rbh(p, q) += o.phih[p] * o.phi0[q];
            o.Lbh(p, q) += o.phih[p] * o.phi1[q];
        }
    }

    o.Rb = o.Lt.transposed();
    o.Lb = o.Rt.transposed();

    o.Rbw = o.Rbh;
    o.Lbw = o.Lbh;
    o.Rbs = o.Rb;
    o.Lbs = o.Lb;
    for (int p = 0; p < n; ++p) {
        for (int q = 0; q < n; ++q) {
            o.Rbw(p, q) -= o.phi1[p] * o.phi1[q];
            o.Lbw(p, q) -= o.phi0[p] * o.phi0[q];
            o.Rbs(p, q) -= o.phi1[p] * o.phih[q];
            o.Lbs(p, q) -= o.phi0[p] * o.phih[q];
        }
    }

    o.EL = Mat(n, n);
    o.ER = Mat(n, n);
    for (int p = 0; p < n; ++p) {
        const auto vlo = eval_basis(basis, 0.5 * basis.nodes[p]);
        const auto vhi = eval_basis(basis, 0.5 + 0.5 * basis.nodes[p]);
        for (int q = 0; q < n; ++q) {
            o.EL(p, q) = vlo[q];
            o.ER(p, q) = vhi[q];
        }
    }
    return o;
}

TimeOperatorSet build_time_operators(int M) {
    if (M < 0 || M > 16)
        throw config_error("build_time_operators: degree must be in [0,16], got " + std::to_string(M));
    TimeOperatorSet t;
    t.M = M;
    t.basis = gauss_legendre(M);
    const int n = M + 1;

    t.Mt = Mat(n, n);
    for (int p = 0; p < n; ++p) t.Mt(p, p) = t.basis.weights[p];

    const auto phi0 = eval_basis(t.basis, 0.0);
    const auto phi1 = eval_basis(t.basis, 1.0);
    t.Mt1 = Mat(n, n);
    t.Mt0 = Mat(n, n);
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) {
            t.Mt1(p, q) = phi1[p] * phi1[q];
            t.Mt0(p, q) = phi0[p] * phi1[q];
        }

    t.MtV = Mat(n, n);
    const Quad quad(M);
    for (size_t g = 0; g < quad.x.size(); ++g) {
        const auto phi = eval_basis(t.basis, quad.x[g]);
        const auto dphi = eval_basis_deriv(t.basis, quad.x[g]);
        for (int p = 0; p < n; ++p)
            for (int q = 0; q < n; ++q) t.MtV(p, q) += quad.w[g] * dphi[p] * phi[q];
    }

    t.T = t.Mt1 - t.MtV;
    t.Tinv = lu_invert(t.T);
    return t;
}

}  // namespace stagdg
