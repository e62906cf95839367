/// @file test_basis.cpp
/// @brief Gauss-Legendre basis, 1D operator matrices, time matrices, and the
///        shared utilities (dense LU, worker pool).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "stagdg/basis.hpp"
#include "stagdg/util.hpp"

using namespace stagdg;

namespace {

// Composite quadrature oracle: 10-point Gauss on 4 equal subintervals of
// [0,1] (40 points). Independent of the oversampled rule inside
// build_operators, and exact for every polynomial integrand used below.
double integrate01(const std::function<double(double)>& f) {
    const Basis1D g = gauss_legendre(9);
    double s = 0.0;
    for (int sub = 0; sub < 4; ++sub)
        for (int q = 0; q < 10; ++q)
            s += 0.25 * g.weights[q] * f(0.25 * (sub + g.nodes[q]));
    return s;
}

double phi(const Basis1D& b, int p, double xi) { return eval_basis(b, xi)[p]; }
double dphi(const Basis1D& b, int p, double xi) { return eval_basis_deriv(b, xi)[p]; }

}  // namespace

// ============================================================================
// Gauss-Legendre rule
// ============================================================================

TEST_CASE("gauss_legendre: N=0 is the midpoint rule") {
    const Basis1D b = gauss_legendre(0);
    CHECK(b.nodes.size() == 1);
    CHECK(b.nodes[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(b.weights[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("gauss_legendre: N=1 two-point rule on [0,1]") {
    const Basis1D b = gauss_legendre(1);
    const double s3 = std::sqrt(3.0);
    CHECK(std::fabs(b.nodes[0] - (3.0 - s3) / 6.0) < 1e-14);
    CHECK(std::fabs(b.nodes[1] - (3.0 + s3) / 6.0) < 1e-14);
    CHECK(std::fabs(b.weights[0] - 0.5) < 1e-14);
    CHECK(std::fabs(b.weights[1] - 0.5) < 1e-14);
}

TEST_CASE("gauss_legendre: node ordering, interval, weight sum") {
    for (int N = 0; N <= 16; ++N) {
        const Basis1D b = gauss_legendre(N);
        double wsum = 0.0;
        for (int p = 0; p <= N; ++p) {
            CHECK(b.nodes[p] > 0.0);
            CHECK(b.nodes[p] < 1.0);
            if (p > 0) CHECK(b.nodes[p] > b.nodes[p - 1]);
            wsum += b.weights[p];
        }
        CHECK(std::fabs(wsum - 1.0) < 1e-14);
    }
}

TEST_CASE("gauss_legendre: N=5 reproduces monomial integrals up to degree 11") {
    const Basis1D b = gauss_legendre(5);
    for (int k = 0; k <= 11; ++k) {
        double s = 0.0;
        for (int p = 0; p < 6; ++p) s += b.weights[p] * std::pow(b.nodes[p], k);
        CHECK(std::fabs(s - 1.0 / (k + 1)) < 1e-14);
    }
}

TEST_CASE("gauss_legendre: exact for random polynomials of degree 2N+1") {
    std::mt19937 rng(12345);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    for (int N = 0; N <= 16; ++N) {
        const Basis1D b = gauss_legendre(N);
        std::vector<double> c(2 * N + 2);
        for (double& v : c) v = coef(rng);
        double quad = 0.0, exact = 0.0;
        for (int p = 0; p <= N; ++p) {
            double val = 0.0, mono = 1.0;
            for (size_t k = 0; k < c.size(); ++k) {
                val += c[k] * mono;
                mono *= b.nodes[p];
            }
            quad += b.weights[p] * val;
        }
        for (size_t k = 0; k < c.size(); ++k) exact += c[k] / double(k + 1);
        CHECK(std::fabs(quad - exact) < 1e-13);
    }
}

TEST_CASE("gauss_legendre: degree out of range is a configuration error") {
    CHECK_THROWS_AS((void)gauss_legendre(-1), config_error);
    CHECK_THROWS_AS((void)gauss_legendre(17), config_error);
}

// ============================================================================
// Lagrange evaluation
// ============================================================================

TEST_CASE("eval_basis: cardinality and partition of unity") {
    const Basis1D b = gauss_legendre(4);
    for (int q = 0; q <= 4; ++q) {
        const auto v = eval_basis(b, b.nodes[q]);
        for (int p = 0; p <= 4; ++p)
            CHECK(std::fabs(v[p] - (p == q ? 1.0 : 0.0)) < 1e-13);
    }
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> xi(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto v = eval_basis(b, xi(rng));
        double s = 0.0;
        for (double x : v) s += x;
        CHECK(std::fabs(s - 1.0) < 1e-14);
    }
}

TEST_CASE("eval_basis_deriv: matches central finite differences") {
    const Basis1D b = gauss_legendre(3);
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> xi(0.0, 1.0);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const double x = xi(rng);
        const auto d = eval_basis_deriv(b, x);
        const auto vp = eval_basis(b, x + h);
        const auto vm = eval_basis(b, x - h);
        for (int p = 0; p <= 3; ++p)
            CHECK(std::fabs(d[p] - (vp[p] - vm[p]) / (2 * h)) < 1e-7);
    }
}

// ============================================================================
// Operator matrices
// ============================================================================

TEST_CASE("build_operators: N=0 collapses to the finite-volume matrices") {
    const OperatorSet1D o = build_operators(gauss_legendre(0));
    CHECK(o.M(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(o.Rt(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.Lt(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.Rb(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.Lb(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.ML(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(o.MR(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::fabs(o.K(0, 0)) < 1e-15);
    CHECK(o.Rbh(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.Lbh(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.AL(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(o.AR(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(o.EL(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.ER(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("build_operators: transpose identities hold exactly as stored") {
    for (int N = 0; N <= 8; ++N) {
        const OperatorSet1D o = build_operators(gauss_legendre(N));
        for (int p = 0; p <= N; ++p)
            for (int q = 0; q <= N; ++q) {
                CHECK(o.Rb(p, q) == o.Lt(q, p));
                CHECK(o.Lb(p, q) == o.Rt(q, p));
            }
    }
}

TEST_CASE("build_operators: N=1 gradient matrix equals the closed form") {
    // Hand-derived for the two-point basis: Rt = [[5/8, -1/8], [-1/8, 5/8]].
    const OperatorSet1D o = build_operators(gauss_legendre(1));
    CHECK(std::fabs(o.Rt(0, 0) - 0.625) < 1e-14);
    CHECK(std::fabs(o.Rt(0, 1) + 0.125) < 1e-14);
    CHECK(std::fabs(o.Rt(1, 0) + 0.125) < 1e-14);
    CHECK(std::fabs(o.Rt(1, 1) - 0.625) < 1e-14);
}

TEST_CASE("build_operators: N=2 entries match composite quadrature of the defining integrals") {
    const Basis1D b = gauss_legendre(2);
    const OperatorSet1D o = build_operators(b);
    for (int p = 0; p <= 2; ++p) {
        for (int q = 0; q <= 2; ++q) {
            const double rt = phi(b, p, 0.5) * phi(b, q, 0.0) +
                              integrate01([&](double x) { return 0.5 * phi(b, p, 0.5 + 0.5 * x) * dphi(b, q, 0.5 * x); });
            const double lt = phi(b, p, 0.5) * phi(b, q, 1.0) -
                              integrate01([&](double x) { return 0.5 * phi(b, p, 0.5 * x) * dphi(b, q, 0.5 + 0.5 * x); });
            const double rb = phi(b, p, 1.0) * phi(b, q, 0.5) -
                              integrate01([&](double x) { return 0.5 * dphi(b, p, 0.5 + 0.5 * x) * phi(b, q, 0.5 * x); });
            const double lb = phi(b, p, 0.0) * phi(b, q, 0.5) +
                              integrate01([&](double x) { return 0.5 * dphi(b, p, 0.5 * x) * phi(b, q, 0.5 + 0.5 * x); });
            const double ml = integrate01([&](double x) { return 0.5 * phi(b, p, 0.5 * x) * phi(b, q, 0.5 + 0.5 * x); });
            const double mr = integrate01([&](double x) { return 0.5 * phi(b, p, 0.5 + 0.5 * x) * phi(b, q, 0.5 * x); });
            const double k = integrate01([&](double x) { return dphi(b, p, x) * phi(b, q, x); });
            const double m = integrate01([&](double x) { return phi(b, p, x) * phi(b, q, x); });
            const double rbh = phi(b, p, 0.5) * phi(b, q, 0.0) +
                               integrate01([&](double x) { return phi(b, p, 0.5 + 0.5 * x) * dphi(b, q, x); });
            const double lbh = phi(b, p, 0.5) * phi(b, q, 1.0) -
                               integrate01([&](double x) { return phi(b, p, 0.5 * x) * dphi(b, q, x); });
            const double al = integrate01([&](double x) { return 0.5 * phi(b, p, 0.5 * x) * phi(b, q, x); });
            const double ar = integrate01([&](double x) { return 0.5 * phi(b, p, 0.5 + 0.5 * x) * phi(b, q, x); });
            CHECK(std::fabs(o.Rt(p, q) - rt) < 1e-13);
            CHECK(std::fabs(o.Lt(p, q) - lt) < 1e-13);
            CHECK(std::fabs(o.Rb(p, q) - rb) < 1e-13);
            CHECK(std::fabs(o.Lb(p, q) - lb) < 1e-13);
            CHECK(std::fabs(o.ML(p, q) - ml) < 1e-13);
            CHECK(std::fabs(o.MR(p, q) - mr) < 1e-13);
            CHECK(std::fabs(o.K(p, q) - k) < 1e-13);
            CHECK(std::fabs(o.M(p, q) - m) < 1e-13);
            CHECK(std::fabs(o.Rbh(p, q) - rbh) < 1e-13);
            CHECK(std::fabs(o.Lbh(p, q) - lbh) < 1e-13);
            CHECK(std::fabs(o.AL(p, q) - al) < 1e-13);
            CHECK(std::fabs(o.AR(p, q) - ar) < 1e-13);
        }
    }
}

TEST_CASE("build_operators: mass matrix is diagonal with the weights") {
    for (int N = 0; N <= 8; ++N) {
        const Basis1D b = gauss_legendre(N);
        const OperatorSet1D o = build_operators(b);
        for (int p = 0; p <= N; ++p)
            for (int q = 0; q <= N; ++q) {
                const double want = (p == q) ? b.weights[p] : 0.0;
                CHECK(std::fabs(o.M(p, q) - want) < 1e-15);
                // nodal orthogonality is a property of the basis itself:
                const double mint = integrate01([&](double x) { return phi(b, p, x) * phi(b, q, x); });
                CHECK(std::fabs(mint - want) < 1e-13);
            }
    }
}

TEST_CASE("build_operators: constants map consistently through every matrix") {
    // Divergence of a uniform velocity must see the same row images from the
    // interior and the boundary half-cell matrices; the gradient of a uniform
    // pressure must vanish.
    for (int N = 0; N <= 8; ++N) {
        const Basis1D b = gauss_legendre(N);
        const OperatorSet1D o = build_operators(b);
        for (int p = 0; p <= N; ++p) {
            double rb = 0, lb = 0, rbh = 0, lbh = 0, grad = 0, proj = 0, projL = 0, projR = 0, el = 0, er = 0;
            for (int q = 0; q <= N; ++q) {
                rb += o.Rb(p, q);
                lb += o.Lb(p, q);
                rbh += o.Rbh(p, q);
                lbh += o.Lbh(p, q);
                grad += o.Rt(p, q) - o.Lt(p, q);
                proj += o.ML(p, q) + o.MR(p, q);
                projL += o.AL(p, q) + o.MR(p, q);
                projR += o.ML(p, q) + o.AR(p, q);
                el += o.EL(p, q);
                er += o.ER(p, q);
            }
            const double ph = phi(b, p, 0.5);
            CHECK(std::fabs(rb - ph) < 1e-13);
            CHECK(std::fabs(lb - ph) < 1e-13);
            CHECK(std::fabs(rbh - ph) < 1e-13);
            CHECK(std::fabs(lbh - ph) < 1e-13);
            CHECK(std::fabs(grad) < 1e-13);
            CHECK(std::fabs(proj - b.weights[p]) < 1e-14);
            CHECK(std::fabs(projL - b.weights[p]) < 1e-14);
            CHECK(std::fabs(projR - b.weights[p]) < 1e-14);
            CHECK(std::fabs(el - 1.0) < 1e-13);
            CHECK(std::fabs(er - 1.0) < 1e-13);
        }
    }
}

TEST_CASE("build_operators: stiffness identity K + K^T = phi1 phi1^T - phi0 phi0^T") {
    for (int N = 0; N <= 8; ++N) {
        const OperatorSet1D o = build_operators(gauss_legendre(N));
        for (int p = 0; p <= N; ++p)
            for (int q = 0; q <= N; ++q)
                CHECK(std::fabs(o.K(p, q) + o.K(q, p) - (o.phi1[p] * o.phi1[q] - o.phi0[p] * o.phi0[q])) < 1e-13);
    }
}

// ============================================================================
// Time operator matrices
// ============================================================================

TEST_CASE("build_time_operators: M=0 is backward Euler") {
    const TimeOperatorSet t = build_time_operators(0);
    CHECK(t.Mt1(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(t.Mt0(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::fabs(t.MtV(0, 0)) < 1e-15);
    CHECK(t.Tinv(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("build_time_operators: M=2 rank-one matrices match direct evaluation") {
    const TimeOperatorSet t = build_time_operators(2);
    const auto p0 = eval_basis(t.basis, 0.0);
    const auto p1 = eval_basis(t.basis, 1.0);
    for (int p = 0; p <= 2; ++p)
        for (int q = 0; q <= 2; ++q) {
            CHECK(std::fabs(t.Mt0(p, q) - p0[p] * p1[q]) < 1e-14);
            CHECK(std::fabs(t.Mt1(p, q) - p1[p] * p1[q]) < 1e-14);
        }
}

TEST_CASE("build_time_operators: integration-by-parts identity and inverse residual") {
    for (int M = 0; M <= 12; ++M) {
        const TimeOperatorSet t = build_time_operators(M);
        const auto p0 = eval_basis(t.basis, 0.0);
        const auto p1 = eval_basis(t.basis, 1.0);
        for (int p = 0; p <= M; ++p)
            for (int q = 0; q <= M; ++q)
                CHECK(std::fabs(t.MtV(p, q) + t.MtV(q, p) - (p1[p] * p1[q] - p0[p] * p0[q])) < 1e-13);
        const Mat resid = t.T * t.Tinv - Mat::identity(M + 1);
        for (int p = 0; p <= M; ++p)
            for (int q = 0; q <= M; ++q) CHECK(std::fabs(resid(p, q)) < 1e-12);
    }
}

// ============================================================================
// Shared utilities
// ============================================================================

TEST_CASE("lu_invert / lu_solve: residuals on a random SPD-shifted matrix") {
    std::mt19937 rng(4242);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = 6;
    Mat B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B(i, j) = u(rng);
    Mat A = B.transposed() * B + Mat::identity(n);
    const Mat Ainv = lu_invert(A);
    const Mat resid = A * Ainv - Mat::identity(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) CHECK(std::fabs(resid(i, j)) < 1e-11);

    std::vector<double> b(n);
    for (double& v : b) v = u(rng);
    const std::vector<double> x = lu_solve(A, b);
    std::vector<double> ax(n);
    A.matvec(x.data(), ax.data());
    for (int i = 0; i < n; ++i) CHECK(std::fabs(ax[i] - b[i]) < 1e-11);
}

TEST_CASE("WorkerPool: covers the range exactly once and reduces deterministically") {
    WorkerPool wp(4);
    const size_t n = 1000;
    std::vector<int> hits(n, 0);
    wp.parallel_for(n, [&](size_t b, size_t e, int) {
        for (size_t i = b; i < e; ++i) hits[i] += 1;
    });
    for (size_t i = 0; i < n; ++i) CHECK(hits[i] == 1);

    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> x(n), y(n);
    for (size_t i = 0; i < n; ++i) { x[i] = u(rng); y[i] = u(rng); }
    const double d1 = wp.dot(x, y);
    const double d2 = wp.dot(x, y);
    CHECK(d1 == d2);  // bit-identical at fixed worker count
    double serial = 0.0;
    for (size_t i = 0; i < n; ++i) serial += x[i] * y[i];
    CHECK(std::fabs(d1 - serial) < 1e-12 * n);
}
