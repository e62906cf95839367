/// @file test_solvers.cpp
/// @brief Krylov solver oracles, dense assembly checks of the staggered
///        Laplacian (symmetry, PSD, stencil width, finite-volume limits),
///        and div/grad adjoint consistency.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <sstream>

#include "stagdg/solvers.hpp"
#include "stagdg/tensor.hpp"

using namespace stagdg;

namespace {

const double PI = std::acos(-1.0);

std::array<FaceSpec, 6> all_periodic() {
    std::array<FaceSpec, 6> f;
    for (int i = 0; i < 6; ++i) f[i] = FaceSpec(BoundaryCondition::make_periodic());
    return f;
}
std::array<FaceSpec, 6> all_walls() {
    std::array<FaceSpec, 6> f;
    for (int i = 0; i < 6; ++i) f[i] = FaceSpec(BoundaryCondition::make_wall());
    return f;
}

Field random_field(const StaggeredGrid& g, Binding b, int N, unsigned seed, int M = -1) {
    Field f = make_field(g, b, N, M);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : f.a) v = u(rng);
    return f;
}

/// Dense assembly of a matrix-free operator by probing unit vectors.
Eigen::MatrixXd dense_operator(const HOperator& H, const Field& shape) {
    const int n = int(shape.a.size());
    Eigen::MatrixXd A(n, n);
    Field e = shape, y = shape;
    for (int c = 0; c < n; ++c) {
        std::fill(e.a.begin(), e.a.end(), 0.0);
        e.a[c] = 1.0;
        H.apply(e, y);
        for (int r = 0; r < n; ++r) A(r, c) = y.a[r];
    }
    return A;
}

LinearOp dense_op(const Eigen::MatrixXd& A) {
    return [&A](const std::vector<double>& v, std::vector<double>& out) {
        out.assign(size_t(A.rows()), 0.0);
        for (int r = 0; r < A.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < A.cols(); ++c) s += A(r, c) * v[size_t(c)];
            out[size_t(r)] = s;
        }
    };
}

}  // namespace

// ============================================================================
// Krylov solvers on small dense systems
// ============================================================================

TEST_CASE("cg solves a 2x2 SPD system to machine precision") {
    Eigen::MatrixXd A(2, 2);
    A << 4, 1, 1, 3;
    std::vector<double> b = {1.0, 2.0}, x;
    SolverOptions opt;
    opt.tol = 1e-14;
    const SolveStats st = cg_solve(dense_op(A), b, x, opt);
    CHECK(st.iterations <= 2);
    CHECK(x[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(7.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("cg throws on indefinite curvature") {
    Eigen::MatrixXd A(2, 2);
    A << 0, 1, 1, 0;
    std::vector<double> b = {1.0, 0.0}, x;
    SolverOptions opt;
    CHECK_THROWS_AS(cg_solve(dense_op(A), b, x, opt), solver_error);
}

TEST_CASE("cg throws when the iteration budget is exhausted") {
    // 1D Laplacian, very tight tolerance, tiny budget
    const int n = 40;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        A(i, i) = 2.0;
        if (i > 0) A(i, i - 1) = -1.0;
        if (i + 1 < n) A(i, i + 1) = -1.0;
    }
    std::vector<double> b(n, 1.0), x;
    SolverOptions opt;
    opt.tol = 1e-14;
    opt.max_iterations = 3;
    CHECK_THROWS_AS(cg_solve(dense_op(A), b, x, opt), solver_error);
}

TEST_CASE("cg handles a consistent singular system via nullspace projection") {
    Eigen::MatrixXd A(2, 2);
    A << 1, -1, -1, 1;
    std::vector<double> b = {1.0, -1.0}, x;
    const double s = 1.0 / std::sqrt(2.0);
    std::vector<std::vector<double>> ns = {{s, s}};
    SolverOptions opt;
    opt.tol = 1e-13;
    opt.nullspace = &ns;
    cg_solve(dense_op(A), b, x, opt);
    CHECK(x[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(-0.5).epsilon(1e-12));
    // mean-free representative
    CHECK(std::fabs(x[0] + x[1]) < 1e-13);
}

TEST_CASE("gmres solves a nonsymmetric system and honours the restart length") {
    Eigen::MatrixXd A(2, 2);
    A << 2, 1, 0, 3;
    std::vector<double> b = {3.0, 3.0}, x;
    SolverOptions opt;
    opt.tol = 1e-13;
    const SolveStats st = gmres_solve(dense_op(A), b, x, opt);
    CHECK(st.iterations <= 2);
    CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-11));
    CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-11));

    // restarted cycles on a larger nonsymmetric diagonally dominant system
    const int n = 40;
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd B(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) B(r, c) = (r == c) ? 8.0 : 0.4 * u(rng);
    std::vector<double> rhs(n), y;
    for (double& v : rhs) v = u(rng);
    SolverOptions ropt;
    ropt.tol = 1e-12;
    ropt.restart = 5;
    const SolveStats rst = gmres_solve(dense_op(B), rhs, y, ropt);
    CHECK(rst.iterations > 5);  // needed more than one cycle
    Eigen::VectorXd yv(n), rv(n);
    for (int i = 0; i < n; ++i) yv(i) = y[size_t(i)];
    for (int i = 0; i < n; ++i) rv(i) = rhs[size_t(i)];
    CHECK((B * yv - rv).norm() <= 1e-12 * rv.norm() * 10);
}

TEST_CASE("gmres throws when the iteration budget is exhausted") {
    const int n = 30;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        A(i, i) = 2.0;
        if (i > 0) A(i, i - 1) = -1.0;
        if (i + 1 < n) A(i, i + 1) = -1.0;
    }
    std::vector<double> b(n, 1.0), x;
    SolverOptions opt;
    opt.tol = 1e-14;
    opt.max_iterations = 4;
    opt.restart = 2;
    CHECK_THROWS_AS(gmres_solve(dense_op(A), b, x, opt), solver_error);
}

TEST_CASE("solver diagnostics use the comma-separated line format") {
    Eigen::MatrixXd A(2, 2);
    A << 4, 1, 1, 3;
    std::vector<double> b = {1.0, 2.0}, x;
    std::ostringstream log;
    SolverOptions opt;
    opt.tol = 1e-12;
    opt.name = "pressure";
    opt.diag = &log;
    cg_solve(dense_op(A), b, x, opt);
    const std::string line = log.str();
    CHECK(line.substr(0, 16) == "solver,pressure,");
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
    CHECK(line.back() == '\n');
}

// ============================================================================
// Dense assembly of the Laplacian
// ============================================================================

TEST_CASE("periodic pressure operator is symmetric PSD with a block 5-point stencil") {
    const StaggeredGrid g = make_grid(2, {4, 3, 1}, {0, 1.3, 0, 1, 0, 0}, all_periodic());
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, -1);
    CHECK(H.has_nullspace());

    const Field shape = make_field(g, Binding::main, 2);
    const Eigen::MatrixXd A = dense_operator(H, shape);

    CHECK((A - A.transpose()).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);

    // constants are annihilated
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(A.rows());
    CHECK((A * ones).cwiseAbs().maxCoeff() < 1e-11);

    // block sparsity: columns of cell (1,1) only reach the 5-point neighbours
    const int npe = shape.npe();
    Field e = shape, y = shape;
    for (int c = 0; c < npe; ++c) {
        std::fill(e.a.begin(), e.a.end(), 0.0);
        e.a[shape.elem(1, 1, 0) + size_t(c)] = 1.0;
        H.apply(e, y);
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 4; ++i) {
                const bool neighbour = (i == 1 && j == 1) || (j == 1 && (i == 0 || i == 2)) ||
                                       (i == 1 && (j == 0 || j == 2));
                if (neighbour) continue;
                const double* blk = y.at(i, j, 0);
                for (int l = 0; l < npe; ++l) CHECK(blk[l] == 0.0);
            }
    }
}

TEST_CASE("three-dimensional operator has a block 7-point stencil and stays symmetric") {
    const StaggeredGrid g = make_grid(3, {3, 3, 3}, {0, 1, 0, 1.1, 0, 0.9}, all_periodic());
    const OperatorSet1D ops = build_operators(gauss_legendre(1));
    const HOperator H(g, ops, -1);
    const Field shape = make_field(g, Binding::main, 1);
    const Eigen::MatrixXd A = dense_operator(H, shape);
    CHECK((A - A.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(A.rows());
    CHECK((A * ones).cwiseAbs().maxCoeff() < 1e-11);

    const int npe = shape.npe();
    Field e = shape, y = shape;
    std::fill(e.a.begin(), e.a.end(), 0.0);
    e.a[shape.elem(1, 1, 1)] = 1.0;
    H.apply(e, y);
    int touched = 0;
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 3; ++i) {
                double mx = 0.0;
                const double* blk = y.at(i, j, k);
                for (int l = 0; l < npe; ++l) mx = std::max(mx, std::fabs(blk[l]));
                if (mx > 0.0) ++touched;
            }
    CHECK(touched <= 7);
}

TEST_CASE("degree-zero rows reproduce the classic finite-volume stencils") {
    const OperatorSet1D ops = build_operators(gauss_legendre(0));
    std::array<FaceSpec, 6> fx = all_walls();

    SUBCASE("periodic: (-1, 2, -1) / dx^2") {
        fx[0] = fx[1] = FaceSpec(BoundaryCondition::make_periodic());
        const StaggeredGrid g = make_grid(2, {4, 1, 1}, {0, 2, 0, 1, 0, 0}, fx);
        const HOperator H(g, ops, -1);
        const Field shape = make_field(g, Binding::main, 0);
        const Eigen::MatrixXd A = dense_operator(H, shape);
        const double s = 1.0 / (0.5 * 0.5);
        for (int i = 0; i < 4; ++i) {
            CHECK(A(i, i) == doctest::Approx(2.0 * s).epsilon(1e-13));
            CHECK(A(i, (i + 1) % 4) == doctest::Approx(-s).epsilon(1e-13));
            CHECK(A(i, (i + 3) % 4) == doctest::Approx(-s).epsilon(1e-13));
        }
        CHECK(H.has_nullspace());
    }

    SUBCASE("pressure faces: half-cell dirichlet rows (3, -1) / dx^2 and data 2 pb / dx^2") {
        const double pb = 0.7;
        fx[0] = FaceSpec(BoundaryCondition::make_pressure(
            [pb](double, double, double, double) { return pb; }));
        fx[1] = FaceSpec(BoundaryCondition::make_pressure(
            [pb](double, double, double, double) { return pb; }));
        const StaggeredGrid g = make_grid(2, {4, 1, 1}, {0, 2, 0, 1, 0, 0}, fx);
        const HOperator H(g, ops, -1);
        CHECK(!H.has_nullspace());
        const Field shape = make_field(g, Binding::main, 0);
        const Eigen::MatrixXd A = dense_operator(H, shape);
        const double s = 1.0 / (0.5 * 0.5);
        CHECK(A(0, 0) == doctest::Approx(3.0 * s).epsilon(1e-13));
        CHECK(A(0, 1) == doctest::Approx(-s).epsilon(1e-13));
        CHECK(A(0, 2) == doctest::Approx(0.0));
        CHECK(A(1, 1) == doctest::Approx(2.0 * s).epsilon(1e-13));
        CHECK(A(3, 3) == doctest::Approx(3.0 * s).epsilon(1e-13));
        CHECK(A(3, 2) == doctest::Approx(-s).epsilon(1e-13));

        const Field d = H.data_vector(0.0);
        CHECK(d.a[0] == doctest::Approx(2.0 * pb * s).epsilon(1e-13));
        CHECK(d.a[1] == doctest::Approx(0.0));
        CHECK(d.a[2] == doctest::Approx(0.0));
        CHECK(d.a[3] == doctest::Approx(2.0 * pb * s).epsilon(1e-13));

        // constant pb solves the homogeneous-divergence system exactly
        Eigen::VectorXd pc = Eigen::VectorXd::Constant(4, pb);
        Eigen::VectorXd dv(4);
        for (int i = 0; i < 4; ++i) dv(i) = d.a[size_t(i)];
        CHECK((A * pc - dv).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("walls: pure neumann rows (1, -1) / dx^2") {
        const StaggeredGrid g = make_grid(2, {4, 1, 1}, {0, 2, 0, 1, 0, 0}, fx);
        const HOperator H(g, ops, -1);
        CHECK(H.has_nullspace());
        const Field shape = make_field(g, Binding::main, 0);
        const Eigen::MatrixXd A = dense_operator(H, shape);
        const double s = 1.0 / (0.5 * 0.5);
        CHECK(A(0, 0) == doctest::Approx(s).epsilon(1e-13));
        CHECK(A(0, 1) == doctest::Approx(-s).epsilon(1e-13));
        CHECK(A(1, 1) == doctest::Approx(2.0 * s).epsilon(1e-13));
        const Field d = H.data_vector(0.0);
        for (double v : d.a) CHECK(v == 0.0);
    }
}

TEST_CASE("mixed-face operator stays symmetric positive definite") {
    std::array<FaceSpec, 6> f = all_walls();
    f[1] = FaceSpec(BoundaryCondition::make_pressure(nullptr));
    f[2] = f[3] = FaceSpec(BoundaryCondition::make_periodic());
    const StaggeredGrid g = make_grid(2, {4, 3, 1}, {0, 1, 0, 0.8, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, -1);
    CHECK(!H.has_nullspace());
    const Field shape = make_field(g, Binding::main, 2);
    const Eigen::MatrixXd A = dense_operator(H, shape);
    CHECK((A - A.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
}

// ============================================================================
// div / grad consistency
// ============================================================================

TEST_CASE("H equals minus the divergence of the discrete pressure gradient") {
    std::array<FaceSpec, 6> f;
    const auto pfun = [](double, double y, double, double) { return 1.0 + 0.3 * y; };
    f[0] = FaceSpec(BoundaryCondition::make_wall());
    f[1] = FaceSpec(BoundaryCondition::make_pressure(pfun));
    f[2] = f[3] = FaceSpec(BoundaryCondition::make_periodic());
    f[4] = f[5] = FaceSpec(BoundaryCondition::make_wall());
    const StaggeredGrid g = make_grid(2, {5, 4, 1}, {0, 1.2, 0, 1, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(3));
    const HOperator H(g, ops, -1);

    const Field p = random_field(g, Binding::main, 3, 42);
    const double t = 0.37;

    const Field gx = pressure_gradient_dual(g, ops, p, 0, t);
    const Field gy = pressure_gradient_dual(g, ops, p, 1, t);
    const Field div = divergence_main(g, ops, gx, gy, gx);

    Field Hp = p;
    H.apply(p, Hp);
    const Field d = H.data_vector(t);

    for (size_t l = 0; l < p.a.size(); ++l)
        CHECK(Hp.a[l] - d.a[l] == doctest::Approx(-div.a[l]).epsilon(1e-10).scale(1.0));
}

TEST_CASE("div/grad adjointness survives solid masking") {
    std::array<FaceSpec, 6> f = all_walls();
    f[1] = FaceSpec(BoundaryCondition::make_pressure(nullptr));
    StaggeredGrid g = make_grid(2, {5, 4, 1}, {0, 1, 0, 0.8, 0, 0}, f);
    set_solid_mask(g, [](double x, double y, double) {
        return x > 0.2 && x < 0.6 && y > 0.2 && y < 0.4;  // cells (1,1), (2,1)
    });
    REQUIRE(g.is_solid(1, 1, 0));
    REQUIRE(g.is_solid(2, 1, 0));
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, -1);

    const Field p = random_field(g, Binding::main, 2, 7);
    const Field gx = pressure_gradient_dual(g, ops, p, 0, 0.0);
    const Field gy = pressure_gradient_dual(g, ops, p, 1, 0.0);
    const Field div = divergence_main(g, ops, gx, gy, gx);

    Field Hp = p;
    H.apply(p, Hp);
    const Field d = H.data_vector(0.0);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            if (g.is_solid(i, j, 0)) continue;
            const double* hp = Hp.at(i, j, 0);
            const double* dd = d.at(i, j, 0);
            const double* dv = div.at(i, j, 0);
            for (int l = 0; l < p.npe(); ++l)
                CHECK(hp[l] - dd[l] == doctest::Approx(-dv[l]).epsilon(1e-10).scale(1.0));
        }
}

TEST_CASE("pressure gradient is exact for linear pressure with matching face data") {
    std::array<FaceSpec, 6> f;
    const auto pfun = [](double x, double y, double, double) { return 0.4 + 2.0 * x + 1.5 * y; };
    f[0] = FaceSpec(BoundaryCondition::make_pressure(pfun));
    f[1] = FaceSpec(BoundaryCondition::make_pressure(pfun));
    f[2] = f[3] = FaceSpec(BoundaryCondition::make_wall());
    const StaggeredGrid g = make_grid(2, {4, 3, 1}, {0, 1, 0, 1, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const Field p = project_field(g, Binding::main, 2,
                                  [](double x, double y, double) { return 0.4 + 2.0 * x + 1.5 * y; });

    const Field gx = pressure_gradient_dual(g, ops, p, 0, 0.0);
    for (double v : gx.a) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));

    // wall half slabs carry the natural one-sided gradient, exact for linears
    const Field gy = pressure_gradient_dual(g, ops, p, 1, 0.0);
    for (double v : gy.a) CHECK(v == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("space-time fields are processed one temporal node at a time") {
    const StaggeredGrid g = make_grid(2, {4, 3, 1}, {0, 1, 0, 1, 0, 0}, all_periodic());
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, -1);

    const Field ps = random_field(g, Binding::main, 2, 5);
    Field pst = make_field(g, Binding::main, 2, 2);  // M = 2: three temporal nodes
    const int per_slice = ps.npe();
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                for (int it = 0; it < pst.mt; ++it)
                    for (int l = 0; l < per_slice; ++l)
                        pst.at(i, j, k)[it * per_slice + l] = (it + 1.0) * ps.at(i, j, k)[l];

    Field Hs = ps, Hst = pst;
    H.apply(ps, Hs);
    H.apply(pst, Hst);
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                for (int it = 0; it < pst.mt; ++it)
                    for (int l = 0; l < per_slice; ++l)
                        CHECK(Hst.at(i, j, k)[it * per_slice + l] ==
                              doctest::Approx((it + 1.0) * Hs.at(i, j, k)[l]).epsilon(1e-13));
}

// ============================================================================
// Velocity-component closures
// ============================================================================

TEST_CASE("velocity closures follow the boundary type per component") {
    // lid-driven box: moving wall on top, static walls elsewhere
    std::array<FaceSpec, 6> f = all_walls();
    f[3] = FaceSpec(BoundaryCondition::make_moving_wall(
        [](double, double, double, double) { return std::array<double, 3>{1.0, 0.0, 0.0}; }));
    const StaggeredGrid g = make_grid(2, {3, 3, 1}, {0, 1, 0, 1, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(0));

    const HOperator Hu(g, ops, 0), Hv(g, ops, 1);
    CHECK(!Hu.has_nullspace());
    CHECK(!Hv.has_nullspace());

    // u data: 2/dy^2 on the top row only; v data identically zero
    const double s = 2.0 / sqr(g.dy);
    const Field du = Hu.data_vector(0.0);
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i)
            CHECK(du.at(i, j, 0)[0] == doctest::Approx(j == 2 ? s : 0.0).epsilon(1e-13));
    const Field dv = Hv.data_vector(0.0);
    for (double v : dv.a) CHECK(v == 0.0);

    // all-wall u operator: dirichlet everywhere -> positive definite
    const Field shape = make_field(g, Binding::main, 0);
    const Eigen::MatrixXd Au = dense_operator(Hu, shape);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Au);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("symmetry faces pin only the normal component") {
    std::array<FaceSpec, 6> f = all_periodic();
    f[2] = f[3] = FaceSpec(BoundaryCondition::make_symmetry());
    const StaggeredGrid g = make_grid(2, {3, 3, 1}, {0, 1, 0, 1, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(0));

    const HOperator Hu(g, ops, 0);  // tangential to the y faces: neumann
    const HOperator Hv(g, ops, 1);  // normal: dirichlet
    CHECK(Hu.has_nullspace());
    CHECK(!Hv.has_nullspace());
    CHECK(Hu.face_closure(2) == FaceClosure::neumann);
    CHECK(Hv.face_closure(2) == FaceClosure::dirichlet);

    const double s = 1.0 / sqr(g.dy);
    const Field shape = make_field(g, Binding::main, 0);
    const Eigen::MatrixXd Au = dense_operator(Hu, shape);
    const Eigen::MatrixXd Av = dense_operator(Hv, shape);
    // bottom-row diagonal: u keeps the one-sided row, v gains the half-cell block
    const int r = int(shape.elem(1, 0, 0));
    const double xpart = 2.0 / sqr(g.dx);
    CHECK(Au(r, r) == doctest::Approx(xpart + s).epsilon(1e-12));
    CHECK(Av(r, r) == doctest::Approx(xpart + 3.0 * s).epsilon(1e-12));
}

TEST_CASE("mixed closures within one face are resolved per node") {
    // bottom face: symmetry for x < 0.5, wall for x >= 0.5 (flat-plate layout)
    std::array<FaceSpec, 6> f = all_periodic();
    FaceSpec bottom;
    bottom.regions.push_back({[](double x, double, double) { return x < 0.5; },
                              BoundaryCondition::make_symmetry()});
    bottom.regions.push_back({nullptr, BoundaryCondition::make_wall()});
    f[2] = bottom;
    f[3] = FaceSpec(BoundaryCondition::make_wall());
    const StaggeredGrid g = make_grid(2, {4, 2, 1}, {0, 1, 0, 1, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(0));
    const HOperator Hu(g, ops, 0);

    const double s = 1.0 / sqr(g.dy);
    const Field shape = make_field(g, Binding::main, 0);
    const Eigen::MatrixXd A = dense_operator(Hu, shape);
    const double xpart = 2.0 / sqr(g.dx);
    // cells 0,1 sit over the symmetry region (neumann: only the interior leg
    // remains), cells 2,3 over the wall (dirichlet adds the half-cell block)
    const double a0 = A(int(shape.elem(0, 0, 0)), int(shape.elem(0, 0, 0)));
    const double a3 = A(int(shape.elem(3, 0, 0)), int(shape.elem(3, 0, 0)));
    CHECK(a0 == doctest::Approx(xpart + s).epsilon(1e-12));
    CHECK(a3 - a0 == doctest::Approx(2.0 * s).epsilon(1e-12));
}

// ============================================================================
// Solid cells
// ============================================================================

TEST_CASE("solid cells carry identity rows and act as walls on their neighbours") {
    StaggeredGrid g = make_grid(2, {4, 4, 1}, {0, 1, 0, 1, 0, 0}, all_walls());
    set_solid_mask(g, [](double x, double y, double) {
        return x > 0.25 && x < 0.5 && y > 0.25 && y < 0.5;  // cell (1,1)
    });
    REQUIRE(g.is_solid(1, 1, 0));
    const OperatorSet1D ops = build_operators(gauss_legendre(1));
    const HOperator H(g, ops, -1);
    CHECK(H.has_nullspace());  // only velocity conditions: constants survive

    const Field shape = make_field(g, Binding::main, 1);
    const Eigen::MatrixXd A = dense_operator(H, shape);

    // identity rows on the solid block
    const int base = int(shape.elem(1, 1, 0));
    for (int l = 0; l < shape.npe(); ++l)
        for (int c = 0; c < A.cols(); ++c)
            CHECK(A(base + l, c) == doctest::Approx(c == base + l ? 1.0 : 0.0));

    // fluid sub-block annihilates the fluid indicator
    Eigen::VectorXd ind = Eigen::VectorXd::Zero(A.rows());
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            if (g.is_solid(i, j, 0)) continue;
            for (int l = 0; l < shape.npe(); ++l) ind(int(shape.elem(i, j, 0)) + l) = 1.0;
        }
    Eigen::VectorXd Aind = A * ind;
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            if (g.is_solid(i, j, 0)) continue;
            for (int l = 0; l < shape.npe(); ++l)
                CHECK(std::fabs(Aind(int(shape.elem(i, j, 0)) + l)) < 1e-11);
        }

    // velocity operator: solid faces act as static walls (dirichlet, PD on fluid)
    const HOperator Hu(g, ops, 0);
    CHECK(!Hu.has_nullspace());
}

// ============================================================================
// End-to-end solves against dense references
// ============================================================================

TEST_CASE("viscous helmholtz solve matches a dense LU reference") {
    std::array<FaceSpec, 6> f = all_walls();
    f[1] = FaceSpec(BoundaryCondition::make_pressure(nullptr));
    f[2] = f[3] = FaceSpec(BoundaryCondition::make_periodic());
    const StaggeredGrid g = make_grid(2, {5, 4, 1}, {0, 1, 0, 0.9, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, 0);

    const double nu = 0.3, dt = 0.07;
    const Field rhs = random_field(g, Binding::main, 2, 11);
    Field q = rhs;
    SolverOptions opt;
    opt.tol = 1e-12;
    solve_viscous(H, nu, dt, rhs, q, opt);

    // dense reference: (Mw + nu dt H) x = rhs
    const Field shape = make_field(g, Binding::main, 2);
    Eigen::MatrixXd A = nu * dt * dense_operator(H, shape);
    Field wdiag = make_field(g, Binding::main, 2);
    wdiag.fill(1.0);
    apply_mass_weights(g, ops, wdiag);
    for (int i = 0; i < A.rows(); ++i) A(i, i) += wdiag.a[size_t(i)];
    Eigen::VectorXd b(A.rows());
    for (int i = 0; i < A.rows(); ++i) b(i) = rhs.a[size_t(i)];
    const Eigen::VectorXd x = A.partialPivLu().solve(b);
    for (size_t l = 0; l < q.a.size(); ++l)
        CHECK(q.a[l] == doctest::Approx(x(int(l))).epsilon(1e-8).scale(1.0));
}

TEST_CASE("viscous solve with zero viscosity reduces to a mass inversion") {
    const StaggeredGrid g = make_grid(2, {3, 3, 1}, {0, 1, 0, 1, 0, 0}, all_periodic());
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, 0);
    const Field rhs = random_field(g, Binding::main, 2, 3);
    Field q = rhs;
    const SolveStats st = solve_viscous(H, 0.0, 0.1, rhs, q, {});
    CHECK(st.iterations == 0);
    Field check = q;
    apply_mass_weights(g, ops, check);
    for (size_t l = 0; l < rhs.a.size(); ++l)
        CHECK(check.a[l] == doctest::Approx(rhs.a[l]).epsilon(1e-13));
}

TEST_CASE("pressure solve with a dirichlet face matches a dense LU reference") {
    std::array<FaceSpec, 6> f = all_walls();
    f[1] = FaceSpec(BoundaryCondition::make_pressure(nullptr));
    const StaggeredGrid g = make_grid(2, {4, 4, 1}, {0, 1, 0, 1, 0, 0}, f);
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, -1);
    REQUIRE(!H.has_nullspace());

    const double dt = 0.05;
    const Field rhs = random_field(g, Binding::main, 2, 21);
    Field p = rhs;
    SolverOptions opt;
    opt.tol = 1e-12;
    const SolveStats st = solve_pressure(H, dt, rhs, p, opt);
    CHECK(st.iterations > 0);
    CHECK(st.residual <= 1e-12 * st.rhs_norm);

    const Field shape = make_field(g, Binding::main, 2);
    const Eigen::MatrixXd A = dt * dense_operator(H, shape);
    Eigen::VectorXd b(A.rows());
    for (int i = 0; i < A.rows(); ++i) b(i) = rhs.a[size_t(i)];
    const Eigen::VectorXd x = A.partialPivLu().solve(b);
    for (size_t l = 0; l < p.a.size(); ++l)
        CHECK(p.a[l] == doctest::Approx(x(int(l))).epsilon(1e-7).scale(1.0));
}

TEST_CASE("singular periodic pressure solve converges on a consistent system") {
    const StaggeredGrid g = make_grid(2, {6, 5, 1}, {0, 1, 0, 1, 0, 0}, all_periodic());
    const OperatorSet1D ops = build_operators(gauss_legendre(2));
    const HOperator H(g, ops, -1);
    REQUIRE(H.has_nullspace());

    // consistent rhs: image of a random vector
    const Field z = random_field(g, Binding::main, 2, 9);
    Field rhs = z;
    H.apply(z, rhs);
    const double dt = 0.2;
    for (double& v : rhs.a) v *= dt;

    Field p = rhs;
    SolverOptions opt;
    opt.tol = 1e-11;
    const SolveStats st = solve_pressure(H, dt, rhs, p, opt);
    CHECK(st.residual <= 1e-11 * st.rhs_norm);

    // the representative is mean-free
    double mean = 0.0;
    for (double v : p.a) mean += v;
    CHECK(std::fabs(mean / double(p.a.size())) < 1e-12);
}

TEST_CASE("backward euler heat step reproduces the fourier decay factor") {
    const StaggeredGrid g = make_grid(2, {12, 3, 1}, {0, 2 * PI, 0, 1, 0, 0}, all_periodic());
    const int N = 4;
    const OperatorSet1D ops = build_operators(gauss_legendre(N));
    const HOperator H(g, ops, 0);

    const Field u0 = project_field(g, Binding::main, N,
                                   [](double x, double, double) { return std::sin(x); });
    const double nu = 0.5, dt = 0.2;
    Field rhs = u0;
    apply_mass_weights(g, ops, rhs);
    Field u1 = u0;
    SolverOptions opt;
    opt.tol = 1e-13;
    solve_viscous(H, nu, dt, rhs, u1, opt);

    const double factor = 1.0 / (1.0 + nu * dt);
    for (size_t l = 0; l < u0.a.size(); ++l)
        CHECK(u1.a[l] == doctest::Approx(factor * u0.a[l]).epsilon(1e-4).scale(factor));
}

