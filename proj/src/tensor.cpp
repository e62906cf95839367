/// @file tensor.cpp
/// @brief Pencil kernels and staggered-grid L2 projections.

#include "stagdg/tensor.hpp"

namespace stagdg {

void axis_accumulate(const Mat& Z, int axis, const double* src, double* dst,
                     int mx, int my, int mz, int mt, double scale) {
    const int m = axis == 0 ? mx : axis == 1 ? my : axis == 2 ? mz : mt;
    STAGDG_REQUIRE(Z.rows() == m && Z.cols() == m, "axis_accumulate dimension mismatch");
    const int stride = axis == 0 ? 1 : axis == 1 ? mx : axis == 2 ? mx * my : mx * my * mz;

    // enumerate pencil bases: all local indices with the axis index at 0
    const int n0 = axis == 0 ? 1 : mx;
    const int n1 = axis == 1 ? 1 : my;
    const int n2 = axis == 2 ? 1 : mz;
    const int n3 = axis == 3 ? 1 : mt;
    double x[32], y[32];
    for (int it = 0; it < n3; ++it)
        for (int kz = 0; kz < n2; ++kz)
            for (int jy = 0; jy < n1; ++jy)
                for (int ix = 0; ix < n0; ++ix) {
                    const int base = ix + mx * (jy + my * (kz + mz * it));
                    for (int l = 0; l < m; ++l) x[l] = src[base + l * stride];
                    Z.matvec(x, y);
                    for (int l = 0; l < m; ++l) dst[base + l * stride] += scale * y[l];
                }
}

Field apply_axis(const Mat& Z, int axis, const Field& f) {
    Field out = f;
    std::fill(out.a.begin(), out.a.end(), 0.0);
    const size_t nel = size_t(f.nx) * f.ny * f.nz;
    const size_t npe = size_t(f.npe());
    pool().parallel_for(nel, [&](size_t b, size_t e, int) {
        for (size_t el = b; el < e; ++el)
            axis_accumulate(Z, axis, f.a.data() + el * npe, out.a.data() + el * npe,
                            f.mx, f.my, f.mz, f.mt);
    });
    return out;
}

void apply_line_stencil(const StaggeredGrid& g, int axis, const Field& src, Field& dst,
                        const std::vector<std::vector<LineTerm>>& terms) {
    const int tn[3] = {dst.nx, dst.ny, dst.nz};
    STAGDG_REQUIRE(tn[axis] == int(terms.size()), "stencil size mismatch");
    (void)g;
    // iterate over all target elements; parallel over the flattened index
    const size_t nel = size_t(dst.nx) * dst.ny * dst.nz;
    pool().parallel_for(nel, [&](size_t b, size_t e, int) {
        for (size_t el = b; el < e; ++el) {
            const int i = int(el % dst.nx);
            const int j = int((el / dst.nx) % dst.ny);
            const int k = int(el / (size_t(dst.nx) * dst.ny));
            const int ti = axis == 0 ? i : axis == 1 ? j : k;
            double* out = dst.at(i, j, k);
            for (const LineTerm& t : terms[ti]) {
                const int si = axis == 0 ? t.src : i;
                const int sj = axis == 1 ? t.src : j;
                const int sk = axis == 2 ? t.src : k;
                axis_accumulate(*t.mat, axis, src.at(si, sj, sk), out,
                                dst.mx, dst.my, dst.mz, dst.mt);
            }
        }
    });
}

Field project_dual_to_main(const StaggeredGrid& g, const OperatorSet1D& ops, const Field& f) {
    const int axis = StaggeredGrid::normal_axis(f.binding);
    STAGDG_REQUIRE(axis >= 0, "project_dual_to_main needs a dual-grid field");
    Field out = make_field(g, Binding::main, f.N, f.M);
    const int n = g.count(axis);

    const Mat PL = ops.Minv * ops.ML;
    const Mat PR = ops.Minv * ops.MR;
    const Mat PAL = ops.Minv * ops.AL;
    const Mat PAR = ops.Minv * ops.AR;

    std::vector<std::vector<LineTerm>> terms(n);
    for (int i = 0; i < n; ++i) {
        if (g.periodic[axis]) {
            terms[i] = {{i, &PL}, {(i + 1) % n, &PR}};
        } else {
            const Mat* left = (i == 0) ? &PAL : &PL;
            const Mat* right = (i == n - 1) ? &PAR : &PR;
            terms[i] = {{i, left}, {i + 1, right}};
        }
    }
    apply_line_stencil(g, axis, f, out, terms);
    return out;
}

Field project_main_to_dual(const StaggeredGrid& g, const OperatorSet1D& ops, const Field& f,
                           int direction) {
    STAGDG_REQUIRE(f.binding == Binding::main, "project_main_to_dual needs a main-grid field");
    const Binding b = direction == 0 ? Binding::dual_x : direction == 1 ? Binding::dual_y : Binding::dual_z;
    Field out = make_field(g, b, f.N, f.M);
    const int n = g.count(direction);
    const int nd = g.binding_count(b, direction);

    const Mat PL = ops.Minv * ops.ML;
    const Mat PR = ops.Minv * ops.MR;

    std::vector<std::vector<LineTerm>> terms(nd);
    for (int id = 0; id < nd; ++id) {
        if (g.periodic[direction]) {
            terms[id] = {{(id - 1 + n) % n, &PL}, {id, &PR}};
        } else if (id == 0) {
            terms[id] = {{0, &ops.EL}};
        } else if (id == n) {
            terms[id] = {{n - 1, &ops.ER}};
        } else {
            terms[id] = {{id - 1, &PL}, {id, &PR}};
        }
    }
    apply_line_stencil(g, direction, f, out, terms);
    return out;
}

double integrate(const StaggeredGrid& g, const OperatorSet1D& ops, const Field& f) {
    STAGDG_REQUIRE(f.M < 0, "integrate expects a spatial field");
    const auto& w = ops.basis.weights;
    double total = 0.0;
    for (int k = 0; k < f.nz; ++k)
        for (int j = 0; j < f.ny; ++j)
            for (int i = 0; i < f.nx; ++i) {
                const double* e = f.at(i, j, k);
                double s = 0.0;
                for (int kz = 0; kz < f.mz; ++kz)
                    for (int jy = 0; jy < f.my; ++jy)
                        for (int ix = 0; ix < f.mx; ++ix) {
                            double ww = w[ix];
                            if (f.my > 1) ww *= w[jy];
                            if (f.mz > 1) ww *= w[kz];
                            s += ww * e[f.local(ix, jy, kz)];
                        }
                total += s * g.volume(f.binding, i, j, k);
            }
    return total;
}

}  // namespace stagdg
