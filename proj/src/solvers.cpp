/// @file solvers.cpp
/// @brief Matrix-free staggered Laplacian, discrete div/grad pair, CG and
///        restarted GMRES.

#include "stagdg/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "stagdg/util.hpp"

namespace stagdg {

namespace {

// Tangential axes of a normal axis, in fixed order (the pair (ta, tb) with
// ta < tb).
inline void tangential_axes(int d, int& ta, int& tb) {
    ta = (d == 0) ? 1 : 0;
    tb = (d == 2) ? 1 : 2;
}

// Pencil stride of an axis within an element block.
inline int axis_stride(int axis, int mx, int my, int mz) {
    return axis == 0 ? 1 : axis == 1 ? mx : axis == 2 ? mx * my : mx * my * mz;
}

}  // namespace

// ============================================================================
// HOperator
// ============================================================================

HOperator::HOperator(const StaggeredGrid& g, const OperatorSet1D& ops, int component)
    : g_(&g), ops_(&ops), component_(component) {
    STAGDG_REQUIRE(component >= -1 && component <= 2, "HOperator component must be -1..2");

    const int m = ops.basis.npts();
    Mat Winv(m, m);
    for (int p = 0; p < m; ++p) Winv(p, p) = 1.0 / ops.basis.weights[p];

    const Mat RtT = ops.Rt.transposed();
    const Mat LtT = ops.Lt.transposed();
    diag_from_left_ = Winv * (RtT * (ops.Minv * ops.Rt));
    diag_from_right_ = Winv * (LtT * (ops.Minv * ops.Lt));
    couple_left_ = -1.0 * (Winv * (RtT * (ops.Minv * ops.Lt)));
    couple_right_ = -1.0 * (Winv * (LtT * (ops.Minv * ops.Rt)));
    diag_dirichlet_lo_ = 2.0 * (Winv * (ops.Lbh * (ops.Minv * ops.Lbh.transposed())));
    diag_dirichlet_hi_ = 2.0 * (Winv * (ops.Rbh * (ops.Minv * ops.Rbh.transposed())));
    diag_wall_lo_ = 2.0 * (Winv * (ops.Lbw * (ops.Minv * ops.Lbw.transposed())));
    diag_wall_hi_ = 2.0 * (Winv * (ops.Rbw * (ops.Minv * ops.Rbw.transposed())));
    solid_lo_ = Winv * (ops.Lbs * (ops.Minv * ops.Lbs.transposed()));
    solid_hi_ = Winv * (ops.Rbs * (ops.Minv * ops.Rbs.transposed()));

    data_lo_.assign(m, 0.0);
    data_hi_.assign(m, 0.0);
    std::vector<double> tmp(m, 0.0);
    for (int p = 0; p < m; ++p) tmp[p] = ops.phi0[p] / ops.basis.weights[p];
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q) data_lo_[p] += 2.0 * ops.Lbh(p, q) * tmp[q];
    for (int p = 0; p < m; ++p) tmp[p] = ops.phi1[p] / ops.basis.weights[p];
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q) data_hi_[p] += 2.0 * ops.Rbh(p, q) * tmp[q];

    // Per-node closure tables for the six domain faces.
    bool any_dirichlet = false;
    for (int f = 0; f < 6; ++f) {
        const int d = f / 2;
        if (!g.axis_active(d) || g.periodic[d]) continue;
        int ta, tb;
        tangential_axes(d, ta, tb);
        const int nta = g.axis_active(ta) ? g.count(ta) : 1;
        const int ntb = g.axis_active(tb) ? g.count(tb) : 1;
        const int mta = g.axis_active(ta) ? m : 1;
        const int mtb = g.axis_active(tb) ? m : 1;
        closure_tab_[f].assign(size_t(nta) * ntb * mta * mtb, 0);
        const double plane = (f % 2 == 0) ? g.lo(d) : g.hi(d);
        for (int eb = 0; eb < ntb; ++eb)
            for (int ea = 0; ea < nta; ++ea)
                for (int b = 0; b < mtb; ++b)
                    for (int a = 0; a < mta; ++a) {
                        double pos[3] = {g.x0, g.y0, g.z0};
                        pos[d] = plane;
                        if (g.axis_active(ta))
                            pos[ta] = g.coord(Binding::main, ta, ea, ops.basis.nodes[a]);
                        if (g.axis_active(tb))
                            pos[tb] = g.coord(Binding::main, tb, eb, ops.basis.nodes[b]);
                        const BoundaryCondition& bc = g.faces[f].resolve(pos[0], pos[1], pos[2]);
                        const FaceClosure cl = closure_for(bc.kind, d);
                        const size_t idx = ((size_t(eb) * nta + ea) * mtb + b) * size_t(mta) + a;
                        closure_tab_[f][idx] = std::uint8_t(cl);
                        if (cl == FaceClosure::dirichlet) any_dirichlet = true;
                    }
    }
    if (component_ >= 0 && g.any_solid()) any_dirichlet = true;
    nullspace_ = !any_dirichlet;
}

FaceClosure HOperator::closure_for(BCKind kind, int axis) const {
    if (component_ < 0)
        return kind == BCKind::pressure ? FaceClosure::dirichlet : FaceClosure::wall;
    switch (kind) {
        case BCKind::wall:
        case BCKind::moving_wall:
        case BCKind::inflow:
            return FaceClosure::dirichlet;
        case BCKind::pressure:
            return FaceClosure::neumann;
        case BCKind::symmetry:
            return component_ == axis ? FaceClosure::dirichlet : FaceClosure::neumann;
        default:
            return FaceClosure::neumann;
    }
}

FaceClosure HOperator::face_closure(int face) const {
    STAGDG_REQUIRE(face >= 0 && face < 6, "face index out of range");
    const int d = face / 2;
    if (!g_->axis_active(d) || g_->periodic[d]) return FaceClosure::neumann;
    STAGDG_REQUIRE(!g_->faces[face].regions.empty(), "face has no condition");
    return closure_for(g_->faces[face].regions.front().bc.kind, d);
}

std::uint8_t HOperator::closure_at(int face, int be1, int be2, int n1, int n2) const {
    const int d = face / 2;
    int ta, tb;
    tangential_axes(d, ta, tb);
    const int m = ops_->basis.npts();
    const int nta = g_->axis_active(ta) ? g_->count(ta) : 1;
    const int mta = g_->axis_active(ta) ? m : 1;
    const int mtb = g_->axis_active(tb) ? m : 1;
    const size_t idx = ((size_t(be2) * nta + be1) * mtb + n2) * size_t(mta) + n1;
    return closure_tab_[face][idx];
}

void HOperator::apply(const Field& x, Field& y) const {
    STAGDG_REQUIRE(x.binding == Binding::main, "HOperator acts on main-grid fields");
    y.binding = x.binding;
    y.N = x.N;
    y.M = x.M;
    y.nx = x.nx; y.ny = x.ny; y.nz = x.nz;
    y.mx = x.mx; y.my = x.my; y.mz = x.mz; y.mt = x.mt;
    y.a.assign(x.a.size(), 0.0);

    const StaggeredGrid& g = *g_;
    const int m = ops_->basis.npts();
    const auto& w = ops_->basis.weights;
    const size_t nel = size_t(x.nx) * x.ny * x.nz;
    const int npe = x.npe();

    pool().parallel_for(nel, [&](size_t b0, size_t e0, int) {
        for (size_t el = b0; el < e0; ++el) {
            const int i = int(el % x.nx);
            const int j = int((el / x.nx) % x.ny);
            const int k = int(el / (size_t(x.nx) * x.ny));
            const double* xe = x.a.data() + el * npe;
            double* ye = y.a.data() + el * npe;
            if (g.is_solid(i, j, k)) {
                std::copy(xe, xe + npe, ye);
                continue;
            }
            const int cell[3] = {i, j, k};
            for (int d = 0; d < 3; ++d) {
                if (!g.axis_active(d)) continue;
                const double inv2 = 1.0 / sqr(g.spacing(d));
                const int n = g.count(d);
                const bool per = g.periodic[d];
                // two sides: side 0 = min (left), side 1 = max (right)
                for (int side = 0; side < 2; ++side) {
                    const int c = cell[d];
                    const int cn = side == 0 ? c - 1 : c + 1;
                    const bool is_cell = per || (cn >= 0 && cn < n);
                    int nb[3] = {i, j, k};
                    nb[d] = per ? (cn + n) % n : cn;
                    const Mat& diag_blk = side == 0 ? diag_from_left_ : diag_from_right_;
                    const Mat& cpl_blk = side == 0 ? couple_left_ : couple_right_;
                    const Mat& dir_blk = side == 0 ? diag_dirichlet_lo_ : diag_dirichlet_hi_;
                    const Mat& wall_blk = side == 0 ? diag_wall_lo_ : diag_wall_hi_;
                    const Mat& solid_blk = side == 0 ? solid_lo_ : solid_hi_;
                    if (is_cell && !g.is_solid(nb[0], nb[1], nb[2])) {
                        axis_accumulate(diag_blk, d, xe, ye, x.mx, x.my, x.mz, x.mt, inv2);
                        axis_accumulate(cpl_blk, d, x.at(nb[0], nb[1], nb[2]), ye,
                                        x.mx, x.my, x.mz, x.mt, inv2);
                    } else if (is_cell) {
                        // solid neighbour: static wall for a velocity, interface
                        // trace closure for the pressure
                        axis_accumulate(component_ >= 0 ? dir_blk : solid_blk, d, xe, ye,
                                        x.mx, x.my, x.mz, x.mt, inv2);
                    } else {
                        // domain face, per-node closure
                        const int f = 2 * d + side;
                        int ta, tb;
                        tangential_axes(d, ta, tb);
                        const int marr[4] = {x.mx, x.my, x.mz, x.mt};
                        const int stride_d = axis_stride(d, x.mx, x.my, x.mz);
                        const int stride_a = axis_stride(ta, x.mx, x.my, x.mz);
                        const int stride_b = axis_stride(tb, x.mx, x.my, x.mz);
                        const int stride_t = x.mx * x.my * x.mz;
                        for (int it = 0; it < x.mt; ++it)
                            for (int nb2 = 0; nb2 < marr[tb]; ++nb2)
                                for (int na = 0; na < marr[ta]; ++na) {
                                    const std::uint8_t cl =
                                        closure_at(f, cell[ta], cell[tb], na, nb2);
                                    if (cl == std::uint8_t(FaceClosure::neumann)) continue;
                                    const Mat& blk = cl == std::uint8_t(FaceClosure::dirichlet)
                                                         ? dir_blk
                                                         : wall_blk;
                                    const int base = na * stride_a + nb2 * stride_b + it * stride_t;
                                    for (int p = 0; p < m; ++p) {
                                        double s = 0.0;
                                        for (int q = 0; q < m; ++q)
                                            s += blk(p, q) * xe[base + q * stride_d];
                                        ye[base + p * stride_d] += inv2 * s;
                                    }
                                }
                    }
                }
            }
            // tangential mass weights (full tensor weight; the blocks carry
            // the 1/w of their own axis)
            for (int it = 0; it < x.mt; ++it)
                for (int kz = 0; kz < x.mz; ++kz)
                    for (int jy = 0; jy < x.my; ++jy)
                        for (int ix = 0; ix < x.mx; ++ix) {
                            double ww = w[ix];
                            if (x.my > 1) ww *= w[jy];
                            if (x.mz > 1) ww *= w[kz];
                            ye[x.local(ix, jy, kz, it)] *= ww;
                        }
        }
    });
}

Field HOperator::apply(const Field& x) const {
    Field y = x;
    apply(x, y);
    return y;
}

Field HOperator::data_vector(double t) const {
    const StaggeredGrid& g = *g_;
    const int m = ops_->basis.npts();
    const auto& w = ops_->basis.weights;
    Field out = make_field(g, Binding::main, ops_->basis.N);

    for (int f = 0; f < 6; ++f) {
        const int d = f / 2;
        if (!g.axis_active(d) || g.periodic[d]) continue;
        const int side = f % 2;
        int ta, tb;
        tangential_axes(d, ta, tb);
        const int nta = g.axis_active(ta) ? g.count(ta) : 1;
        const int ntb = g.axis_active(tb) ? g.count(tb) : 1;
        const int mta = g.axis_active(ta) ? m : 1;
        const int mtb = g.axis_active(tb) ? m : 1;
        const double inv2 = 1.0 / sqr(g.spacing(d));
        const double plane = (side == 0) ? g.lo(d) : g.hi(d);
        const std::vector<double>& dv = side == 0 ? data_lo_ : data_hi_;
        const int cslab = side == 0 ? 0 : g.count(d) - 1;

        for (int eb = 0; eb < ntb; ++eb)
            for (int ea = 0; ea < nta; ++ea) {
                int cell[3] = {0, 0, 0};
                cell[d] = cslab;
                cell[ta] = ea;
                cell[tb] = eb;
                if (g.is_solid(cell[0], cell[1], cell[2])) continue;
                double* oe = out.at(cell[0], cell[1], cell[2]);
                const int stride_d = axis_stride(d, out.mx, out.my, out.mz);
                const int stride_a = axis_stride(ta, out.mx, out.my, out.mz);
                const int stride_b = axis_stride(tb, out.mx, out.my, out.mz);
                for (int b = 0; b < mtb; ++b)
                    for (int a = 0; a < mta; ++a) {
                        if (closure_at(f, ea, eb, a, b) != std::uint8_t(FaceClosure::dirichlet))
                            continue;
                        double pos[3] = {g.x0, g.y0, g.z0};
                        pos[d] = plane;
                        if (g.axis_active(ta))
                            pos[ta] = g.coord(Binding::main, ta, ea, ops_->basis.nodes[a]);
                        if (g.axis_active(tb))
                            pos[tb] = g.coord(Binding::main, tb, eb, ops_->basis.nodes[b]);
                        const BoundaryCondition& bc = g.faces[f].resolve(pos[0], pos[1], pos[2]);
                        const double gb = component_ < 0
                                              ? bc.pressure_at(pos[0], pos[1], pos[2], t)
                                              : bc.velocity_at(pos[0], pos[1], pos[2], t)[component_];
                        if (gb == 0.0) continue;
                        double wtang = 1.0;
                        if (g.axis_active(ta)) wtang *= w[a];
                        if (g.axis_active(tb)) wtang *= w[b];
                        const int base = a * stride_a + b * stride_b;
                        for (int p = 0; p < m; ++p)
                            oe[base + p * stride_d] += inv2 * wtang * dv[p] * gb;
                    }
            }
    }
    return out;
}

// ============================================================================
// div / grad pair
// ============================================================================

Field divergence_main(const StaggeredGrid& g, const OperatorSet1D& ops,
                      const Field& ux, const Field& vy, const Field& wz) {
    STAGDG_REQUIRE(ux.binding == Binding::dual_x && vy.binding == Binding::dual_y,
                   "divergence_main expects dual-bound velocity fields");
    const int m = ops.basis.npts();
    Mat Winv(m, m);
    for (int p = 0; p < m; ++p) Winv(p, p) = 1.0 / ops.basis.weights[p];

    Field out = make_field(g, Binding::main, ux.N, ux.M);

    for (int d = 0; d < 3; ++d) {
        if (!g.axis_active(d)) continue;
        const Field& src = d == 0 ? ux : d == 1 ? vy : wz;
        STAGDG_REQUIRE(StaggeredGrid::normal_axis(src.binding) == d,
                       "divergence_main component bound to wrong dual grid");
        const double invd = 1.0 / g.spacing(d);
        const Mat DivR = invd * (Winv * ops.Rb);
        const Mat DivLm = -invd * (Winv * ops.Lb);
        const Mat DivRbh = invd * (Winv * ops.Rbh);
        const Mat DivLbhm = -invd * (Winv * ops.Lbh);
        const int n = g.count(d);
        std::vector<std::vector<LineTerm>> terms(n);
        for (int i = 0; i < n; ++i) {
            if (g.periodic[d]) {
                terms[i] = {{(i + 1) % n, &DivR}, {i, &DivLm}};
            } else {
                terms[i].push_back({i + 1, (i + 1 == n) ? &DivRbh : &DivR});
                terms[i].push_back({i, (i == 0) ? &DivLbhm : &DivLm});
            }
        }
        apply_line_stencil(g, d, src, out, terms);

        int ta, tb;
        tangential_axes(d, ta, tb);
        const int marr[3] = {out.mx, out.my, out.mz};
        const int stride_d = axis_stride(d, out.mx, out.my, out.mz);
        const int stride_a = axis_stride(ta, out.mx, out.my, out.mz);
        const int stride_b = axis_stride(tb, out.mx, out.my, out.mz);
        const int stride_t = out.mx * out.my * out.mz;
        // rank-1 trace term over one element pair: out_p += scale vp_p/w_p (vq . u)
        const auto add_trace = [&](double* oe, const double* se, const std::vector<double>& vp,
                                   const std::vector<double>& vq, double scale, int base) {
            double s = 0.0;
            for (int q = 0; q < m; ++q) s += vq[q] * se[base + q * stride_d];
            s *= scale;
            for (int p = 0; p < m; ++p)
                oe[base + p * stride_d] += vp[p] / ops.basis.weights[p] * s;
        };

        // velocity-type face nodes complete the half-cell blocks with the
        // boundary trace (Rbh/Lbh -> Rbw/Lbw, a rank-1 difference)
        if (!g.periodic[d]) {
            const int nta = g.axis_active(ta) ? g.count(ta) : 1;
            const int ntb = g.axis_active(tb) ? g.count(tb) : 1;
            for (int side = 0; side < 2; ++side) {
                const FaceSpec& fs = g.faces[2 * d + side];
                const double plane = side == 0 ? g.lo(d) : g.hi(d);
                const int cmain = side == 0 ? 0 : n - 1;
                const int id = side == 0 ? 0 : n;
                const std::vector<double>& tr = side == 0 ? ops.phi0 : ops.phi1;
                const double scale = side == 0 ? invd : -invd;
                for (int eb = 0; eb < ntb; ++eb)
                    for (int ea = 0; ea < nta; ++ea) {
                        int mcell[3] = {0, 0, 0}, dcell[3] = {0, 0, 0};
                        mcell[d] = cmain;
                        dcell[d] = id;
                        mcell[ta] = dcell[ta] = ea;
                        mcell[tb] = dcell[tb] = eb;
                        if (g.is_solid(mcell[0], mcell[1], mcell[2])) continue;
                        double* oe = out.at(mcell[0], mcell[1], mcell[2]);
                        const double* se = src.at(dcell[0], dcell[1], dcell[2]);
                        for (int nb2 = 0; nb2 < marr[tb]; ++nb2)
                            for (int na = 0; na < marr[ta]; ++na) {
                                double pos[3] = {g.x0, g.y0, g.z0};
                                pos[d] = plane;
                                if (g.axis_active(ta))
                                    pos[ta] = g.coord(Binding::main, ta, ea, ops.basis.nodes[na]);
                                if (g.axis_active(tb))
                                    pos[tb] = g.coord(Binding::main, tb, eb, ops.basis.nodes[nb2]);
                                if (fs.resolve(pos[0], pos[1], pos[2]).kind == BCKind::pressure)
                                    continue;
                                for (int it = 0; it < out.mt; ++it)
                                    add_trace(oe, se, tr, tr, scale,
                                              na * stride_a + nb2 * stride_b + it * stride_t);
                            }
                    }
            }
        }

        // fluid/solid interfaces: the straddling slab enters through its
        // midpoint trace (Rb/Lb -> Rbs/Lbs)
        if (g.any_solid()) {
            for (int k = 0; k < out.nz; ++k)
                for (int j = 0; j < out.ny; ++j)
                    for (int i = 0; i < out.nx; ++i) {
                        if (g.is_solid(i, j, k)) continue;
                        int cell[3] = {i, j, k};
                        for (int side = 0; side < 2; ++side) {
                            const int cn = cell[d] + (side == 0 ? -1 : 1);
                            int nb[3] = {i, j, k};
                            if (g.periodic[d]) nb[d] = (cn + n) % n;
                            else if (cn < 0 || cn >= n) continue;
                            else nb[d] = cn;
                            if (!g.is_solid(nb[0], nb[1], nb[2])) continue;
                            int dcell[3] = {i, j, k};
                            dcell[d] = g.periodic[d] ? (cell[d] + side) % n : cell[d] + side;
                            double* oe = out.at(i, j, k);
                            const double* se = src.at(dcell[0], dcell[1], dcell[2]);
                            const std::vector<double>& tr = side == 0 ? ops.phi0 : ops.phi1;
                            const double scale = side == 0 ? invd : -invd;
                            for (int it = 0; it < out.mt; ++it)
                                for (int nb2 = 0; nb2 < marr[tb]; ++nb2)
                                    for (int na = 0; na < marr[ta]; ++na)
                                        add_trace(oe, se, tr, ops.phih, scale,
                                                  na * stride_a + nb2 * stride_b + it * stride_t);
                        }
                    }
        }
    }
    apply_mass_weights(g, ops, out);
    if (g.any_solid()) {
        const int npe = out.npe();
        for (int k = 0; k < out.nz; ++k)
            for (int j = 0; j < out.ny; ++j)
                for (int i = 0; i < out.nx; ++i)
                    if (g.is_solid(i, j, k)) {
                        double* e = out.at(i, j, k);
                        std::fill(e, e + npe, 0.0);
                    }
    }
    return out;
}

Field pressure_gradient_dual(const StaggeredGrid& g, const OperatorSet1D& ops,
                             const Field& p, int axis, double t, double dt,
                             bool with_data) {
    STAGDG_REQUIRE(p.binding == Binding::main, "pressure_gradient_dual expects a main field");
    STAGDG_REQUIRE(g.axis_active(axis), "pressure_gradient_dual on inactive axis");
    const Binding b = axis == 0 ? Binding::dual_x : axis == 1 ? Binding::dual_y : Binding::dual_z;
    Field out = make_field(g, b, p.N, p.M);
    const int n = g.count(axis);
    const int nd = g.binding_count(b, axis);
    const double invd = 1.0 / g.spacing(axis);
    const Mat GR = invd * (ops.Minv * ops.Rt);
    const Mat GLm = -invd * (ops.Minv * ops.Lt);

    std::vector<std::vector<LineTerm>> terms(nd);
    for (int id = 0; id < nd; ++id) {
        if (g.periodic[axis]) {
            terms[id] = {{id, &GR}, {(id - 1 + n) % n, &GLm}};
        } else if (id == 0 || id == n) {
            terms[id] = {};  // handled below (closure varies per node)
        } else {
            terms[id] = {{id, &GR}, {id - 1, &GLm}};
        }
    }
    apply_line_stencil(g, axis, p, out, terms);

    const int m = ops.basis.npts();
    int ta, tb;
    tangential_axes(axis, ta, tb);
    const int marr[3] = {out.mx, out.my, out.mz};
    const int stride_d = axis_stride(axis, out.mx, out.my, out.mz);
    const int stride_a = axis_stride(ta, out.mx, out.my, out.mz);
    const int stride_b = axis_stride(tb, out.mx, out.my, out.mz);
    const int stride_t = out.mx * out.my * out.mz;

    // Slabs straddling a fluid/solid interface: drop the solid-side leg of
    // the interior stencil and close with the fluid cell's one-sided gradient
    // plus its trace at the interface (the exact negative transpose of the
    // Rbs / Lbs divergence closure).
    if (g.any_solid()) {
        const Mat GRm = -1.0 * GR;
        const Mat GL = -1.0 * GLm;
        const int n1 = g.axis_active(ta) ? g.count(ta) : 1;
        const int n2 = g.axis_active(tb) ? g.count(tb) : 1;
        for (int e2 = 0; e2 < n2; ++e2)
            for (int e1 = 0; e1 < n1; ++e1)
                for (int id = g.periodic[axis] ? 0 : 1; id < n; ++id) {
                    int dcell[3], lcell[3], rcell[3];
                    dcell[axis] = id;
                    dcell[ta] = e1;
                    dcell[tb] = e2;
                    lcell[axis] = g.periodic[axis] ? (id - 1 + n) % n : id - 1;
                    rcell[axis] = id % n;
                    lcell[ta] = rcell[ta] = e1;
                    lcell[tb] = rcell[tb] = e2;
                    const bool ls = g.is_solid(lcell[0], lcell[1], lcell[2]);
                    const bool rs = g.is_solid(rcell[0], rcell[1], rcell[2]);
                    if (!ls && !rs) continue;
                    double* oe = out.at(dcell[0], dcell[1], dcell[2]);
                    if (ls)  // cancel the solid-side leg GLm p_l
                        axis_accumulate(GL, axis, p.at(lcell[0], lcell[1], lcell[2]), oe,
                                        out.mx, out.my, out.mz, out.mt);
                    if (rs)  // cancel the solid-side leg GR p_r
                        axis_accumulate(GRm, axis, p.at(rcell[0], rcell[1], rcell[2]), oe,
                                        out.mx, out.my, out.mz, out.mt);
                    if (ls == rs) continue;  // both solid: inert slab
                    const double* pe = ls ? p.at(rcell[0], rcell[1], rcell[2])
                                          : p.at(lcell[0], lcell[1], lcell[2]);
                    const std::vector<double>& tr = ls ? ops.phi0 : ops.phi1;
                    const double scale = ls ? -invd : invd;
                    for (int it = 0; it < out.mt; ++it)
                        for (int nb2 = 0; nb2 < marr[tb]; ++nb2)
                            for (int na = 0; na < marr[ta]; ++na) {
                                const int base =
                                    na * stride_a + nb2 * stride_b + it * stride_t;
                                double tv = 0.0;
                                for (int r = 0; r < m; ++r)
                                    tv += tr[r] * pe[base + r * stride_d];
                                tv *= scale;
                                for (int q = 0; q < m; ++q)
                                    oe[base + q * stride_d] +=
                                        ops.phih[q] / ops.basis.weights[q] * tv;
                            }
                }
    }

    if (g.periodic[axis]) return out;

    // Boundary half slabs: weak one-sided gradient, driven by the prescribed
    // boundary pressure on pressure faces and by the cell's own trace on
    // velocity-type faces (zero jump, i.e. the natural gradient).
    const Mat LbhT = ops.Lbh.transposed();
    const Mat RbhT = ops.Rbh.transposed();
    std::vector<double> tau;  // temporal nodes for space-time data
    if (out.mt > 1) tau = gauss_legendre(p.M).nodes;

    for (int side = 0; side < 2; ++side) {
        const int f = 2 * axis + side;
        const int id = side == 0 ? 0 : n;
        const int cmain = side == 0 ? 0 : n - 1;
        const double plane = side == 0 ? g.lo(axis) : g.hi(axis);
        const FaceSpec& fs = g.faces[f];
        const int nta = g.axis_active(ta) ? g.count(ta) : 1;
        const int ntb = g.axis_active(tb) ? g.count(tb) : 1;
        for (int eb = 0; eb < ntb; ++eb)
            for (int ea = 0; ea < nta; ++ea) {
                int dcell[3] = {0, 0, 0}, mcell[3] = {0, 0, 0};
                dcell[axis] = id;
                mcell[axis] = cmain;
                dcell[ta] = mcell[ta] = ea;
                dcell[tb] = mcell[tb] = eb;
                if (g.is_solid(mcell[0], mcell[1], mcell[2])) continue;
                double* oe = out.at(dcell[0], dcell[1], dcell[2]);
                const double* pe = p.at(mcell[0], mcell[1], mcell[2]);
                for (int it = 0; it < out.mt; ++it)
                    for (int nb2 = 0; nb2 < marr[tb]; ++nb2)
                        for (int na = 0; na < marr[ta]; ++na) {
                            double pos[3] = {g.x0, g.y0, g.z0};
                            pos[axis] = plane;
                            if (g.axis_active(ta))
                                pos[ta] = g.coord(Binding::main, ta, ea, ops.basis.nodes[na]);
                            if (g.axis_active(tb))
                                pos[tb] = g.coord(Binding::main, tb, eb, ops.basis.nodes[nb2]);
                            const BoundaryCondition& bc = fs.resolve(pos[0], pos[1], pos[2]);
                            const int base = na * stride_a + nb2 * stride_b + it * stride_t;
                            double pb;
                            if (bc.kind == BCKind::pressure) {
                                const double tq = out.mt > 1 ? t + dt * tau[it] : t;
                                pb = with_data ? bc.pressure_at(pos[0], pos[1], pos[2], tq)
                                               : 0.0;
                            } else {
                                // own trace: the half slab sees no pressure jump
                                const std::vector<double>& tr =
                                    side == 0 ? ops.phi0 : ops.phi1;
                                pb = 0.0;
                                for (int r = 0; r < m; ++r)
                                    pb += tr[r] * pe[base + r * stride_d];
                            }
                            for (int q = 0; q < m; ++q) {
                                double s = 0.0;
                                if (side == 0) {
                                    for (int r = 0; r < m; ++r)
                                        s += LbhT(q, r) * pe[base + r * stride_d];
                                    s -= ops.phi0[q] * pb;
                                } else {
                                    for (int r = 0; r < m; ++r)
                                        s -= RbhT(q, r) * pe[base + r * stride_d];
                                    s += ops.phi1[q] * pb;
                                }
                                oe[base + q * stride_d] +=
                                    2.0 * invd * s / ops.basis.weights[q];
                            }
                        }
            }
    }
    return out;
}

void apply_mass_weights(const StaggeredGrid& g, const OperatorSet1D& ops, Field& f) {
    const auto& w = ops.basis.weights;
    const size_t nel = size_t(f.nx) * f.ny * f.nz;
    const int npe = f.npe();
    (void)g;
    pool().parallel_for(nel, [&](size_t b, size_t e, int) {
        for (size_t el = b; el < e; ++el) {
            double* fe = f.a.data() + el * npe;
            for (int it = 0; it < f.mt; ++it)
                for (int kz = 0; kz < f.mz; ++kz)
                    for (int jy = 0; jy < f.my; ++jy)
                        for (int ix = 0; ix < f.mx; ++ix) {
                            double ww = w[ix];
                            if (f.my > 1) ww *= w[jy];
                            if (f.mz > 1) ww *= w[kz];
                            fe[f.local(ix, jy, kz, it)] *= ww;
                        }
        }
    });
}

void apply_inverse_mass_weights(const StaggeredGrid& g, const OperatorSet1D& ops, Field& f) {
    const auto& w = ops.basis.weights;
    const size_t nel = size_t(f.nx) * f.ny * f.nz;
    const int npe = f.npe();
    (void)g;
    pool().parallel_for(nel, [&](size_t b, size_t e, int) {
        for (size_t el = b; el < e; ++el) {
            double* fe = f.a.data() + el * npe;
            for (int it = 0; it < f.mt; ++it)
                for (int kz = 0; kz < f.mz; ++kz)
                    for (int jy = 0; jy < f.my; ++jy)
                        for (int ix = 0; ix < f.mx; ++ix) {
                            double ww = w[ix];
                            if (f.my > 1) ww *= w[jy];
                            if (f.mz > 1) ww *= w[kz];
                            fe[f.local(ix, jy, kz, it)] /= ww;
                        }
        }
    });
}

// ============================================================================
// Krylov solvers
// ============================================================================

namespace {

void project_out(const std::vector<std::vector<double>>* ns, std::vector<double>& v) {
    if (!ns) return;
    for (const auto& z : *ns) {
        const double c = pool().dot(z, v);
        for (size_t l = 0; l < v.size(); ++l) v[l] -= c * z[l];
    }
}

void report(const SolverOptions& opt, int iters, double resid) {
    if (!opt.diag) return;
    char line[128];
    std::snprintf(line, sizeof line, "solver,%s,%d,%.6e\n", opt.name.c_str(), iters, resid);
    (*opt.diag) << line;
    opt.diag->flush();
}

}  // namespace

SolveStats cg_solve(const LinearOp& A, const std::vector<double>& b,
                    std::vector<double>& x, const SolverOptions& opt) {
    const size_t n = b.size();
    x.assign(n, 0.0);
    std::vector<double> r = b;
    project_out(opt.nullspace, r);
    const double bnorm = std::sqrt(pool().dot(r, r));
    SolveStats stats;
    stats.rhs_norm = bnorm;
    if (bnorm == 0.0) {
        report(opt, 0, 0.0);
        return stats;
    }
    const double target = opt.tol * bnorm;

    std::vector<double> p = r, Ap(n);
    double rr = pool().dot(r, r);
    for (int it = 1; it <= opt.max_iterations; ++it) {
        A(p, Ap);
        project_out(opt.nullspace, Ap);
        const double pAp = pool().dot(p, Ap);
        if (!std::isfinite(pAp) || pAp <= 0.0)
            throw solver_error("cg breakdown in '" + opt.name +
                               "': non-positive curvature at iteration " + std::to_string(it));
        const double alpha = rr / pAp;
        for (size_t l = 0; l < n; ++l) x[l] += alpha * p[l];
        for (size_t l = 0; l < n; ++l) r[l] -= alpha * Ap[l];
        project_out(opt.nullspace, r);
        const double rn = pool().dot(r, r);
        if (std::sqrt(rn) <= target) {
            project_out(opt.nullspace, x);
            stats.iterations = it;
            stats.residual = std::sqrt(rn);
            report(opt, it, std::sqrt(rn));
            return stats;
        }
        const double beta = rn / rr;
        for (size_t l = 0; l < n; ++l) p[l] = r[l] + beta * p[l];
        rr = rn;
    }
    throw solver_error("cg '" + opt.name + "' did not converge within " +
                       std::to_string(opt.max_iterations) + " iterations");
}

SolveStats gmres_solve(const LinearOp& A, const std::vector<double>& b,
                       std::vector<double>& x, const SolverOptions& opt) {
    const size_t n = b.size();
    x.assign(n, 0.0);
    std::vector<double> bp = b;
    project_out(opt.nullspace, bp);
    const double bnorm = std::sqrt(pool().dot(bp, bp));
    SolveStats stats;
    stats.rhs_norm = bnorm;
    if (bnorm == 0.0) {
        report(opt, 0, 0.0);
        return stats;
    }
    const double target = opt.tol * bnorm;
    const int kmax = std::max(1, opt.restart);

    std::vector<double> r = bp;  // x0 = 0
    int total = 0;
    std::vector<std::vector<double>> V;
    Mat Hm(kmax + 1, kmax);
    std::vector<double> cs(kmax), sn(kmax), gvec(kmax + 1);
    std::vector<double> wv(n);

    while (true) {
        double beta = std::sqrt(pool().dot(r, r));
        if (beta <= target) {
            stats.iterations = total;
            stats.residual = beta;
            report(opt, total, beta);
            return stats;
        }
        if (!std::isfinite(beta))
            throw solver_error("gmres breakdown in '" + opt.name + "': non-finite residual");
        V.assign(1, r);
        for (size_t l = 0; l < n; ++l) V[0][l] /= beta;
        std::fill(gvec.begin(), gvec.end(), 0.0);
        gvec[0] = beta;

        int j = 0;
        bool stop = false;
        for (; j < kmax && !stop; ++j) {
            ++total;
            A(V[j], wv);
            project_out(opt.nullspace, wv);
            for (int i = 0; i <= j; ++i) {
                Hm(i, j) = pool().dot(wv, V[i]);
                for (size_t l = 0; l < n; ++l) wv[l] -= Hm(i, j) * V[i][l];
            }
            const double hnorm = std::sqrt(pool().dot(wv, wv));
            Hm(j + 1, j) = hnorm;
            if (!std::isfinite(hnorm))
                throw solver_error("gmres breakdown in '" + opt.name + "': non-finite Krylov vector");
            if (hnorm > 1e-300) {
                V.push_back(wv);
                for (size_t l = 0; l < n; ++l) V.back()[l] /= hnorm;
            } else {
                stop = true;  // invariant subspace reached
            }
            // Givens rotations
            for (int i = 0; i < j; ++i) {
                const double t0 = cs[i] * Hm(i, j) + sn[i] * Hm(i + 1, j);
                const double t1 = -sn[i] * Hm(i, j) + cs[i] * Hm(i + 1, j);
                Hm(i, j) = t0;
                Hm(i + 1, j) = t1;
            }
            const double denom = std::hypot(Hm(j, j), Hm(j + 1, j));
            if (denom == 0.0) {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = Hm(j, j) / denom;
                sn[j] = Hm(j + 1, j) / denom;
            }
            Hm(j, j) = cs[j] * Hm(j, j) + sn[j] * Hm(j + 1, j);
            Hm(j + 1, j) = 0.0;
            const double g1 = -sn[j] * gvec[j];
            gvec[j] = cs[j] * gvec[j];
            gvec[j + 1] = g1;
            if (std::fabs(gvec[j + 1]) <= target || total >= opt.max_iterations) stop = true;
        }
        // solve the small triangular system and update x
        std::vector<double> y(j, 0.0);
        for (int i = j - 1; i >= 0; --i) {
            double s = gvec[i];
            for (int l = i + 1; l < j; ++l) s -= Hm(i, l) * y[l];
            STAGDG_REQUIRE(Hm(i, i) != 0.0, "gmres triangular solve hit a zero pivot");
            y[i] = s / Hm(i, i);
        }
        for (int i = 0; i < j; ++i)
            for (size_t l = 0; l < n; ++l) x[l] += y[i] * V[i][l];
        project_out(opt.nullspace, x);

        // explicit residual for the restart / convergence decision
        A(x, wv);
        project_out(opt.nullspace, wv);
        for (size_t l = 0; l < n; ++l) r[l] = bp[l] - wv[l];
        project_out(opt.nullspace, r);
        const double resid = std::sqrt(pool().dot(r, r));
        if (resid <= target) {
            stats.iterations = total;
            stats.residual = resid;
            report(opt, total, resid);
            return stats;
        }
        if (total >= opt.max_iterations)
            throw solver_error("gmres '" + opt.name + "' did not converge within " +
                               std::to_string(opt.max_iterations) + " iterations");
    }
}

// ============================================================================
// Nullspace recovery
// ============================================================================

namespace {

/// Cyclic Jacobi diagonalisation of a small dense symmetric matrix (row
/// major).  On return diag(A) holds the eigenvalues and the columns of V the
/// eigenvectors.
void jacobi_eigen(int n, std::vector<double>& A, std::vector<double>& V) {
    auto at = [&](int r, int c) -> double& { return A[size_t(r) * n + c]; };
    V.assign(size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i) V[size_t(i) * n + i] = 1.0;
    double frob = 0.0;
    for (double v : A) frob += v * v;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
        if (off <= 1e-28 * (frob + 1e-300)) return;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) continue;
                const double theta = 0.5 * (at(q, q) - at(p, p)) / apq;
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int l = 0; l < n; ++l) {
                    const double alp = at(p, l), alq = at(q, l);
                    at(p, l) = c * alp - s * alq;
                    at(q, l) = s * alp + c * alq;
                }
                for (int l = 0; l < n; ++l) {
                    const double alp = at(l, p), alq = at(l, q);
                    at(l, p) = c * alp - s * alq;
                    at(l, q) = s * alp + c * alq;
                }
                for (int l = 0; l < n; ++l) {
                    const double vlp = V[size_t(l) * n + p], vlq = V[size_t(l) * n + q];
                    V[size_t(l) * n + p] = c * vlp - s * vlq;
                    V[size_t(l) * n + q] = s * vlp + c * vlq;
                }
            }
    }
}

/// Near-null eigenvectors of the per-axis pencil operator, obtained by
/// probing `op` with fields that vary along `axis` only (the transverse
/// factors reduce to a common positive scale, so the probed block keeps the
/// pencil kernel intact).
std::vector<std::vector<double>> pencil_kernel(const HOperator& op, int axis) {
    const StaggeredGrid& g = op.grid();
    const int N = op.ops().basis.N;
    Field x = make_field(g, Binding::main, N);
    Field y = x;
    const int ncell = axis == 0 ? x.nx : (axis == 1 ? x.ny : x.nz);
    const int m = axis == 0 ? x.mx : (axis == 1 ? x.my : x.mz);
    const int n1 = ncell * m;
    std::vector<double> A(size_t(n1) * n1, 0.0);
    for (int ic = 0; ic < ncell; ++ic)
        for (int lc = 0; lc < m; ++lc) {
            x.fill(0.0);
            for (int k = 0; k < x.nz; ++k)
                for (int j = 0; j < x.ny; ++j)
                    for (int i = 0; i < x.nx; ++i) {
                        const int ca = axis == 0 ? i : (axis == 1 ? j : k);
                        if (ca != ic) continue;
                        double* e = x.at(i, j, k);
                        for (int lz = 0; lz < x.mz; ++lz)
                            for (int ly = 0; ly < x.my; ++ly)
                                for (int lx = 0; lx < x.mx; ++lx) {
                                    const int la = axis == 0 ? lx : (axis == 1 ? ly : lz);
                                    if (la == lc) e[x.local(lx, ly, lz)] = 1.0;
                                }
                    }
            op.apply(x, y);
            for (int ir = 0; ir < ncell; ++ir)
                for (int lr = 0; lr < m; ++lr) {
                    const int i = axis == 0 ? ir : 0;
                    const int j = axis == 1 ? ir : 0;
                    const int k = axis == 2 ? ir : 0;
                    const int lx = axis == 0 ? lr : 0;
                    const int ly = axis == 1 ? lr : 0;
                    const int lz = axis == 2 ? lr : 0;
                    A[size_t(ir * m + lr) * n1 + (ic * m + lc)] =
                        y.at(i, j, k)[y.local(lx, ly, lz)];
                }
        }
    // symmetrise away the probing roundoff before diagonalising
    for (int r = 0; r < n1; ++r)
        for (int c = r + 1; c < n1; ++c) {
            const double s = 0.5 * (A[size_t(r) * n1 + c] + A[size_t(c) * n1 + r]);
            A[size_t(r) * n1 + c] = A[size_t(c) * n1 + r] = s;
        }
    std::vector<double> V;
    jacobi_eigen(n1, A, V);
    double lmax = 0.0;
    for (int i = 0; i < n1; ++i) lmax = std::max(lmax, std::fabs(A[size_t(i) * n1 + i]));
    std::vector<std::vector<double>> kernel;
    for (int i = 0; i < n1; ++i) {
        if (std::fabs(A[size_t(i) * n1 + i]) > 1e-9 * lmax) continue;
        std::vector<double> v(n1);
        for (int r = 0; r < n1; ++r) v[size_t(r)] = V[size_t(r) * n1 + i];
        kernel.push_back(std::move(v));
    }
    return kernel;
}

}  // namespace

const std::vector<std::vector<double>>& HOperator::nullspace_basis() const {
    if (kernel_built_) return kernel_;
    kernel_built_ = true;
    if (!nullspace_) return kernel_;
    const StaggeredGrid& g = *g_;
    const int N = ops_->basis.N;

    // The kernel of the masked operator is the fluid restriction of the
    // unmasked one, so always probe a mask-free twin of the grid.
    StaggeredGrid bare = g;
    bare.solid.clear();
    const HOperator bare_op(bare, *ops_, component_);

    std::array<std::vector<std::vector<double>>, 3> k1d;
    for (int axis = 0; axis < 3; ++axis) {
        if (g.axis_active(axis)) {
            k1d[axis] = pencil_kernel(bare_op, axis);
        } else {
            k1d[axis] = {{1.0}};
        }
    }

    // tensor products of the per-axis kernels, restricted to fluid cells
    Field shape = make_field(g, Binding::main, N);
    std::vector<std::vector<double>> cand;
    for (const auto& kx : k1d[0])
        for (const auto& ky : k1d[1])
            for (const auto& kz : k1d[2]) {
                std::vector<double> v(shape.a.size(), 0.0);
                for (int k = 0; k < shape.nz; ++k)
                    for (int j = 0; j < shape.ny; ++j)
                        for (int i = 0; i < shape.nx; ++i) {
                            if (g.is_solid(i, j, k)) continue;
                            const size_t base = shape.elem(i, j, k);
                            for (int lz = 0; lz < shape.mz; ++lz)
                                for (int ly = 0; ly < shape.my; ++ly)
                                    for (int lx = 0; lx < shape.mx; ++lx)
                                        v[base + size_t(shape.local(lx, ly, lz))] =
                                            kx[size_t(i * shape.mx + lx)] *
                                            ky[size_t(j * shape.my + ly)] *
                                            kz[size_t(k * shape.mz + lz)];
                        }
                cand.push_back(std::move(v));
            }

    // modified Gram-Schmidt (the restriction breaks orthogonality), then
    // keep only the candidates the actual operator annihilates
    Field xf = shape, yf = shape;
    for (auto& v : cand) {
        for (const auto& u : kernel_) {
            double c = 0.0;
            for (size_t l = 0; l < v.size(); ++l) c += u[l] * v[l];
            for (size_t l = 0; l < v.size(); ++l) v[l] -= c * u[l];
        }
        double nrm = 0.0;
        for (double z : v) nrm += z * z;
        nrm = std::sqrt(nrm);
        if (nrm < 1e-8) continue;
        for (double& z : v) z /= nrm;
        xf.a = v;
        apply(xf, yf);
        double resid = 0.0;
        for (double z : yf.a) resid += z * z;
        if (std::sqrt(resid) > 1e-7) continue;
        kernel_.push_back(std::move(v));
    }
    return kernel_;
}

// ============================================================================
// Scheme-level wrappers
// ============================================================================

std::vector<std::vector<double>> pressure_nullspace_vectors(const HOperator& H,
                                                            const Field& shape) {
    std::vector<std::vector<double>> ns;
    const auto& spatial = H.nullspace_basis();
    if (spatial.empty()) return ns;
    const int per_slice = shape.mx * shape.my * shape.mz;
    // temporal nodes of the pressure system are uncoupled: replicate the
    // spatial basis per slice (disjoint supports keep the set orthonormal)
    for (int it = 0; it < shape.mt; ++it)
        for (const auto& s : spatial) {
            std::vector<double> v(shape.a.size(), 0.0);
            for (int k = 0; k < shape.nz; ++k)
                for (int j = 0; j < shape.ny; ++j)
                    for (int i = 0; i < shape.nx; ++i) {
                        const size_t dst = shape.elem(i, j, k) + size_t(it) * per_slice;
                        const size_t src = (size_t((size_t(k) * shape.ny + j) * shape.nx + i)) *
                                           size_t(per_slice);
                        for (int l = 0; l < per_slice; ++l) v[dst + l] = s[src + l];
                    }
            ns.push_back(std::move(v));
        }
    return ns;
}

SolveStats solve_pressure(const HOperator& H, double dt, const Field& rhs,
                          Field& p, SolverOptions opt) {
    if (opt.name == "krylov") opt.name = "pressure";
    Field xf = rhs, yf = rhs;
    const LinearOp A = [&](const std::vector<double>& v, std::vector<double>& out) {
        xf.a = v;
        H.apply(xf, yf);
        out.resize(yf.a.size());
        for (size_t l = 0; l < out.size(); ++l) out[l] = dt * yf.a[l];
    };
    std::vector<std::vector<double>> ns;
    if (H.has_nullspace()) {
        ns = pressure_nullspace_vectors(H, rhs);
        opt.nullspace = &ns;
    }
    p = rhs;
    return cg_solve(A, rhs.a, p.a, opt);
}

SolveStats solve_viscous(const HOperator& H, double nu, double dt,
                         const Field& rhs, Field& q, SolverOptions opt) {
    if (opt.name == "krylov") opt.name = "viscous";
    q = rhs;
    if (nu == 0.0) {
        apply_inverse_mass_weights(H.grid(), H.ops(), q);
        // solid cells keep the (zero) right-hand side
        report(opt, 0, 0.0);
        return {};
    }
    const double scale = nu * dt;
    Field xf = rhs, yf = rhs;
    const StaggeredGrid& g = H.grid();
    const LinearOp A = [&](const std::vector<double>& v, std::vector<double>& out) {
        xf.a = v;
        H.apply(xf, yf);
        Field mf = xf;
        apply_mass_weights(g, H.ops(), mf);
        // identity rows on solid cells are provided by H itself; the mass
        // term must not double-count them
        if (g.any_solid()) {
            const int npe = mf.npe();
            for (int k = 0; k < mf.nz; ++k)
                for (int j = 0; j < mf.ny; ++j)
                    for (int i = 0; i < mf.nx; ++i)
                        if (g.is_solid(i, j, k)) {
                            double* e = mf.at(i, j, k);
                            std::fill(e, e + npe, 0.0);
                        }
        }
        out.resize(v.size());
        for (size_t l = 0; l < out.size(); ++l) out[l] = mf.a[l] + scale * yf.a[l];
    };
    return gmres_solve(A, rhs.a, q.a, opt);
}

}  // namespace stagdg
