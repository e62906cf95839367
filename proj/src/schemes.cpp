/// @file schemes.cpp
/// @brief Semi-implicit and space-time pressure-correction time steppers.

#include "stagdg/schemes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "stagdg/tensor.hpp"
#include "stagdg/util.hpp"

namespace stagdg {

namespace {

// ============================================================================
// Temporal-slice helpers. A space-time field stores, per element, mt
// contiguous spatial blocks of size mx*my*mz (temporal index slowest).
// ============================================================================

int spatial_block(const Field& f) { return f.mx * f.my * f.mz; }

/// Temporal slice `it` of a space-time field as a spatial field.
Field extract_slice(const StaggeredGrid& g, const Field& f, int it) {
    Field out = make_field(g, f.binding, f.N);
    const int spb = spatial_block(f);
    const int npe = f.npe();
    const size_t ne = f.a.size() / size_t(npe);
    for (size_t e = 0; e < ne; ++e)
        std::copy_n(f.a.data() + e * npe + size_t(it) * spb, spb, out.a.data() + e * spb);
    return out;
}

/// f[slice it] = a * s  (s spatial, same binding).
void set_scaled_slice(Field& f, int it, double a, const Field& s) {
    const int spb = spatial_block(f);
    const int npe = f.npe();
    const size_t ne = f.a.size() / size_t(npe);
    for (size_t e = 0; e < ne; ++e) {
        const double* src = s.a.data() + e * spb;
        double* dst = f.a.data() + e * npe + size_t(it) * spb;
        for (int l = 0; l < spb; ++l) dst[l] = a * src[l];
    }
}

/// f[slice it] += a * s  (s spatial, same binding).
void add_scaled_slice(Field& f, int it, double a, const Field& s) {
    const int spb = spatial_block(f);
    const int npe = f.npe();
    const size_t ne = f.a.size() / size_t(npe);
    for (size_t e = 0; e < ne; ++e) {
        const double* src = s.a.data() + e * spb;
        double* dst = f.a.data() + e * npe + size_t(it) * spb;
        for (int l = 0; l < spb; ++l) dst[l] += a * src[l];
    }
}

/// Slice p of f scaled by w[p].
void scale_slices(Field& f, const std::vector<double>& w) {
    const int spb = spatial_block(f);
    const int npe = f.npe();
    const size_t ne = f.a.size() / size_t(npe);
    for (size_t e = 0; e < ne; ++e)
        for (int p = 0; p < f.mt; ++p) {
            double* dst = f.a.data() + e * npe + size_t(p) * spb;
            for (int l = 0; l < spb; ++l) dst[l] *= w[p];
        }
}

/// dst = scale * (A (x) I) src over the temporal index (A is mt x mt).
void temporal_mix(const Mat& A, const Field& src, Field& dst, double scale) {
    const int mt = src.mt;
    const int spb = spatial_block(src);
    const int npe = src.npe();
    const size_t ne = src.a.size() / size_t(npe);
    pool().parallel_for(ne, [&](size_t b, size_t e, int) {
        for (size_t el = b; el < e; ++el) {
            const double* in = src.a.data() + el * npe;
            double* out = dst.a.data() + el * npe;
            for (int p = 0; p < mt; ++p)
                for (int l = 0; l < spb; ++l) {
                    double acc = 0.0;
                    for (int q = 0; q < mt; ++q) acc += A(p, q) * in[q * spb + l];
                    out[p * spb + l] = scale * acc;
                }
        }
    });
}

/// Evaluate the time polynomial: out = sum_p phi[p] * slice_p(f).
Field temporal_eval(const StaggeredGrid& g, const Field& f, const std::vector<double>& phi) {
    Field out = make_field(g, f.binding, f.N);
    const int spb = spatial_block(f);
    const int npe = f.npe();
    const size_t ne = f.a.size() / size_t(npe);
    for (size_t e = 0; e < ne; ++e) {
        double* dst = out.a.data() + e * spb;
        for (int p = 0; p < f.mt; ++p) {
            const double* src = f.a.data() + e * npe + size_t(p) * spb;
            for (int l = 0; l < spb; ++l) dst[l] += phi[p] * src[l];
        }
    }
    return out;
}

// ============================================================================
// Small field algebra
// ============================================================================

void axpy(double a, const Field& x, Field& y) {
    STAGDG_REQUIRE(x.a.size() == y.a.size(), "axpy: field size mismatch");
    for (size_t i = 0; i < y.a.size(); ++i) y.a[i] += a * x.a[i];
}

void zero_solid_cells(const StaggeredGrid& g, Field& f) {
    if (!g.any_solid()) return;
    STAGDG_REQUIRE(f.binding == Binding::main, "zero_solid_cells expects a main-grid field");
    const int npe = f.npe();
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                if (g.is_solid(i, j, k)) std::fill_n(f.at(i, j, k), npe, 0.0);
}

/// f += scale * force_c collocated at the main-grid nodes at `time`.
void add_body_force(const StaggeredGrid& g, const OperatorSet1D& ops, Field& f, int c,
                    double scale, double time, const VelocityFn& force) {
    const std::vector<double>& nodes = ops.basis.nodes;
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                if (g.any_solid() && g.is_solid(i, j, k)) continue;
                double* a = f.at(i, j, k);
                for (int kz = 0; kz < f.mz; ++kz)
                    for (int jy = 0; jy < f.my; ++jy)
                        for (int ix = 0; ix < f.mx; ++ix) {
                            const double x = g.coord(Binding::main, 0, i, nodes[ix]);
                            const double y =
                                g.coord(Binding::main, 1, j, f.my > 1 ? nodes[jy] : 0.5);
                            const double z =
                                g.coord(Binding::main, 2, k, f.mz > 1 ? nodes[kz] : 0.5);
                            a[f.local(ix, jy, kz)] += scale * force(x, y, z, time)[c];
                        }
            }
}

// ============================================================================
// Prescribed normal traces. Projection onto the dual grid reproduces a
// prescribed boundary trace only up to the projection error; shifting each
// boundary pencil by a constant restores the trace exactly (the shift is of
// the size of that error) and makes the singular pressure systems compatible
// to machine precision.
// ============================================================================

bool pins_normal(BCKind k) {
    return k == BCKind::wall || k == BCKind::moving_wall || k == BCKind::inflow ||
           k == BCKind::symmetry;
}

/// Pin the normal trace of dual component `c` at both axis-c faces; for a
/// space-time field `times` holds the evaluation time of each temporal slice.
void pin_normal_traces(const StaggeredGrid& g, const OperatorSet1D& ops, Field& q, int c,
                       const std::vector<double>& times) {
    if (g.periodic[c]) return;
    STAGDG_REQUIRE(int(times.size()) == q.mt, "pin_normal_traces: one time per slice");
    const std::vector<double>& nodes = ops.basis.nodes;
    const int m = ops.basis.npts();
    const int a1 = (c + 1) % 3;
    const int a2 = (c + 2) % 3;
    const int e1n = g.binding_count(q.binding, a1);
    const int e2n = g.binding_count(q.binding, a2);
    const int nn[3] = {q.mx, q.my, q.mz};
    const int spb = spatial_block(q);

    for (int side = 0; side < 2; ++side) {
        const FaceSpec& fs = g.faces[2 * c + side];
        bool any = false;
        for (int kind = 0; kind < 6 && !any; ++kind)
            any = pins_normal(BCKind(kind)) && fs.has_kind(BCKind(kind));
        if (!any) continue;

        const double blo[3] = {g.x0, g.y0, g.z0};
        const double bhi[3] = {g.x1, g.y1, g.z1};
        const double bcoord = side == 0 ? blo[c] : bhi[c];
        const int ic = side == 0 ? 0 : g.binding_count(q.binding, c) - 1;
        const int imain = side == 0 ? 0 : g.count(c) - 1;
        const std::vector<double>& tr = side == 0 ? ops.phi0 : ops.phi1;

        for (int e2 = 0; e2 < e2n; ++e2)
            for (int e1 = 0; e1 < e1n; ++e1) {
                int eidx[3];
                eidx[c] = ic;
                eidx[a1] = e1;
                eidx[a2] = e2;
                int midx[3];
                midx[c] = imain;
                midx[a1] = e1;
                midx[a2] = e2;
                if (g.any_solid() && g.is_solid(midx[0], midx[1], midx[2])) continue;
                double* a = q.at(eidx[0], eidx[1], eidx[2]);

                for (int n2 = 0; n2 < nn[a2]; ++n2)
                    for (int n1 = 0; n1 < nn[a1]; ++n1) {
                        double pos[3];
                        pos[c] = bcoord;
                        pos[a1] = g.coord(q.binding, a1, e1, nn[a1] > 1 ? nodes[n1] : 0.5);
                        pos[a2] = g.coord(q.binding, a2, e2, nn[a2] > 1 ? nodes[n2] : 0.5);
                        const BoundaryCondition& bc = fs.resolve(pos[0], pos[1], pos[2]);
                        if (!pins_normal(bc.kind)) continue;

                        int li[3];
                        li[a1] = n1;
                        li[a2] = n2;
                        for (int it = 0; it < q.mt; ++it) {
                            double target = 0.0;
                            if (bc.kind == BCKind::moving_wall || bc.kind == BCKind::inflow)
                                target = bc.velocity_at(pos[0], pos[1], pos[2], times[it])[c];
                            double trace = 0.0;
                            for (int p = 0; p < m; ++p) {
                                li[c] = p;
                                trace += tr[p] * a[q.local(li[0], li[1], li[2]) + it * spb];
                            }
                            const double shift = target - trace;
                            for (int p = 0; p < m; ++p) {
                                li[c] = p;
                                a[q.local(li[0], li[1], li[2]) + it * spb] += shift;
                            }
                        }
                    }
            }
    }
}

// ============================================================================
// Space-time Krylov wrappers. With nodal bases the temporal mass is the
// diagonal of quadrature weights, so the pressure system decouples into one
// H block per temporal node and a single batched CG handles all slices.
// ============================================================================

/// Solve [ (Mt1 - MtV) (x) Mw + nu dt diag(w^t) (x) H ] u = rhs (GMRES).
SolveStats spacetime_viscous_solve(const StaggeredGrid& g, const OperatorSet1D& ops,
                                   const TimeOperatorSet& tops, const HOperator& H, double nu,
                                   double dt, const Field& rhs, Field& u, SolverOptions opt) {
    const std::vector<double>& tw = tops.basis.weights;
    if (nu <= 0.0) {
        // (T (x) Mw) u = rhs: slice-wise inverse mass, then Tinv across slices.
        Field tmp = rhs;
        apply_inverse_mass_weights(g, ops, tmp);
        zero_solid_cells(g, tmp);
        temporal_mix(tops.Tinv, tmp, u, 1.0);
        SolveStats stats;
        stats.rhs_norm = pool().norm2(rhs.a);
        if (opt.diag) *opt.diag << "solver," << opt.name << ",0,0\n";
        return stats;
    }

    Field xf = rhs, yf = rhs, mf = rhs;
    const int spb = spatial_block(rhs);
    const int npe = rhs.npe();
    const LinearOp A = [&](const std::vector<double>& x, std::vector<double>& y) {
        xf.a = x;
        H.apply(xf, yf);  // batched over temporal slices
        mf.a = x;
        apply_mass_weights(g, ops, mf);
        zero_solid_cells(g, mf);  // solid rows reduce to the (scaled) identity from H
        const size_t ne = xf.a.size() / size_t(npe);
        y.resize(x.size());
        pool().parallel_for(ne, [&](size_t b, size_t e, int) {
            for (size_t el = b; el < e; ++el) {
                const double* mm = mf.a.data() + el * npe;
                const double* hh = yf.a.data() + el * npe;
                double* out = y.data() + el * npe;
                for (int p = 0; p < rhs.mt; ++p)
                    for (int l = 0; l < spb; ++l) {
                        double acc = 0.0;
                        for (int q = 0; q < rhs.mt; ++q) acc += tops.T(p, q) * mm[q * spb + l];
                        out[p * spb + l] = acc + nu * dt * tw[p] * hh[p * spb + l];
                    }
            }
        });
    };
    return gmres_solve(A, rhs.a, u.a, opt);
}

/// Solve dt (diag(w^t) (x) H) dp = rhs (CG, per-slice constant nullspace).
SolveStats spacetime_pressure_solve(const StaggeredGrid& g, const TimeOperatorSet& tops,
                                    const HOperator& H, double dt, const Field& rhs, Field& dp,
                                    SolverOptions opt) {
    const std::vector<double>& tw = tops.basis.weights;
    Field xf = rhs, yf = rhs;
    const int spb = spatial_block(rhs);
    const int npe = rhs.npe();
    const LinearOp A = [&](const std::vector<double>& x, std::vector<double>& y) {
        xf.a = x;
        H.apply(xf, yf);
        const size_t ne = xf.a.size() / size_t(npe);
        y.resize(x.size());
        for (size_t e = 0; e < ne; ++e)
            for (int p = 0; p < rhs.mt; ++p) {
                const double* src = yf.a.data() + e * npe + size_t(p) * spb;
                double* dst = y.data() + e * npe + size_t(p) * spb;
                for (int l = 0; l < spb; ++l) dst[l] = dt * tw[p] * src[l];
            }
    };
    std::vector<std::vector<double>> ns;
    if (H.has_nullspace()) {
        ns = pressure_nullspace_vectors(H, rhs);
        opt.nullspace = &ns;
    }
    return cg_solve(A, rhs.a, dp.a, opt);
}

// ============================================================================
// Construction helpers
// ============================================================================

SchemeConfig checked(SchemeConfig cfg) {
    validate(cfg);
    return cfg;
}

std::vector<HOperator> velocity_operators(const StaggeredGrid& g, const OperatorSet1D& ops) {
    std::vector<HOperator> hv;
    hv.reserve(g.dim);
    for (int c = 0; c < g.dim; ++c) hv.emplace_back(g, ops, c);
    return hv;
}

Binding dual_binding(int c) {
    return c == 0 ? Binding::dual_x : c == 1 ? Binding::dual_y : Binding::dual_z;
}

bool has_pressure_faces(const StaggeredGrid& g) {
    for (int f = 0; f < 6; ++f)
        if (g.faces[f].has_kind(BCKind::pressure)) return true;
    return false;
}

}  // namespace

// ============================================================================
// Configuration validation
// ============================================================================

void validate(const SchemeConfig& cfg) {
    if (cfg.N < 0 || cfg.N > 16) throw config_error("N must lie in [0, 16]");
    if (cfg.M < 0 || cfg.M > 16) throw config_error("M must lie in [0, 16]");
    if (!(cfg.theta >= 0.5 && cfg.theta <= 1.0)) throw config_error("theta must lie in [1/2, 1]");
    if (!(cfg.cfl > 0.0 && cfg.cfl < 1.0)) throw config_error("cfl must lie in (0, 1)");
    if (cfg.nu < 0.0) throw config_error("nu must be non-negative");
    if (!(cfg.dt_max > 0.0)) throw config_error("dt_max must be positive");
    if (cfg.dt_fixed < 0.0) throw config_error("dt_fixed must be non-negative");
    if (cfg.end_time < 0.0) throw config_error("end_time must be non-negative");
    if (cfg.scheme == SchemeKind::space_time && cfg.explicit_viscosity)
        throw config_error("explicit viscosity requires the semi-implicit scheme");
    if (cfg.picard == 0 || cfg.picard < -1)
        throw config_error("picard must be -1 (automatic) or a positive sweep count");
    if (!(cfg.tol_pressure > 0.0)) throw config_error("tol_pressure must be positive");
    if (!(cfg.tol_viscous > 0.0)) throw config_error("tol_viscous must be positive");
    if (cfg.max_iterations < 1) throw config_error("max_iterations must be at least 1");
    if (cfg.gmres_restart < 1) throw config_error("gmres_restart must be at least 1");
}

// ============================================================================
// Scheme
// ============================================================================

Scheme::Scheme(const StaggeredGrid& g, SchemeConfig cfg)
    : g_(&g),
      cfg_(checked(std::move(cfg))),
      ops_(build_operators(gauss_legendre(cfg_.N))),
      tops_(build_time_operators(cfg_.scheme == SchemeKind::space_time ? cfg_.M : 0)),
      hv_(velocity_operators(g, ops_)),
      hp_(g, ops_, -1) {}

SolverOptions Scheme::solver_options(const char* name, double tol) const {
    SolverOptions opt;
    opt.tol = tol;
    opt.max_iterations = cfg_.max_iterations;
    opt.restart = cfg_.gmres_restart;
    opt.name = name;
    opt.diag = cfg_.diag;
    return opt;
}

double Scheme::suggest_dt(const FlowState& s) const {
    if (cfg_.dt_fixed > 0.0) return std::min(cfg_.dt_fixed, cfg_.dt_max);
    TimeStepConfig tc;
    tc.cfl = cfg_.cfl;
    tc.nu = cfg_.nu;
    tc.viscous_restriction = cfg_.explicit_viscosity;
    tc.dt_max = cfg_.dt_max;
    return compute_dt(*g_, cfg_.N, s, tc);
}

StepStats Scheme::step(FlowState& s, double dt) const {
    STAGDG_REQUIRE(dt > 0.0, "step size must be positive");
    return cfg_.scheme == SchemeKind::space_time ? spacetime_step(s, dt)
                                                 : semi_implicit_step(s, dt);
}

// ----------------------------------------------------------------------------
// Semi-implicit fractional step
// ----------------------------------------------------------------------------

StepStats Scheme::semi_implicit_step(FlowState& s, double dt) const {
    const StaggeredGrid& g = *g_;
    const double t = s.t;
    const double th = cfg_.theta;
    const bool implicit_visc = cfg_.nu > 0.0 && !cfg_.explicit_viscosity;
    const bool pfaces = has_pressure_faces(g);
    StepStats st;
    st.dt = dt;

    // ---- explicit predictor on the main grid -------------------------------
    std::array<Field, 3> um;
    const Field* dual[3] = {&s.u, &s.v, &s.w};
    for (int c = 0; c < 3; ++c)
        um[c] = c < g.dim ? project_dual_to_main(g, ops_, *dual[c])
                          : make_field(g, Binding::main, cfg_.N);
    if (cfg_.include_convection) {
        ConvectionConfig cc;
        cc.nu = cfg_.explicit_viscosity ? cfg_.nu : 0.0;
        cc.include_viscous_flux = cfg_.explicit_viscosity && cfg_.nu > 0.0;
        cc.time = t;
        cc.body_force = cfg_.body_force;
        ConvectiveTerms adv = rk3_advect_main(g, ops_, um[0], um[1], um[2], dt, cc);
        um[0] = std::move(adv.Fu);
        um[1] = std::move(adv.Fv);
        um[2] = std::move(adv.Fw);
    } else if (cfg_.body_force) {
        for (int c = 0; c < g.dim; ++c)
            add_body_force(g, ops_, um[c], c, dt, t + 0.5 * dt, cfg_.body_force);
    }

    // ---- implicit diffusion -------------------------------------------------
    for (int c = 0; c < g.dim; ++c) {
        zero_solid_cells(g, um[c]);
        if (!implicit_visc) continue;
        Field rhs = um[c];
        apply_mass_weights(g, ops_, rhs);
        axpy(cfg_.nu * dt, hv_[c].data_vector(t + dt), rhs);
        zero_solid_cells(g, rhs);
        Field q = make_field(g, Binding::main, cfg_.N);
        SolveStats vs = solve_viscous(hv_[c], cfg_.nu, dt, rhs, q,
                                      solver_options("viscous", cfg_.tol_viscous));
        st.gmres_iterations += vs.iterations;
        um[c] = std::move(q);
    }

    // ---- dual velocities with exact prescribed traces -----------------------
    std::array<Field, 3> ud;
    for (int c = 0; c < g.dim; ++c) {
        ud[c] = project_main_to_dual(g, ops_, um[c], c);
        pin_normal_traces(g, ops_, ud[c], c, {t + dt});
    }

    // ---- pressure solve -------------------------------------------------------
    Field rhs = divergence_main(g, ops_, ud[0], ud[1], g.dim == 3 ? ud[2] : ud[0]);
    for (double& v : rhs.a) v = -v;
    if (pfaces) {
        Field d1 = hp_.data_vector(t + dt);
        if (th < 1.0) {
            const Field d0 = hp_.data_vector(t);
            for (size_t i = 0; i < d1.a.size(); ++i)
                d1.a[i] = th * d1.a[i] + (1.0 - th) * d0.a[i];
        }
        axpy(dt, d1, rhs);
    }
    Field ptheta = make_field(g, Binding::main, cfg_.N);
    SolveStats ps =
        solve_pressure(hp_, dt, rhs, ptheta, solver_options("pressure", cfg_.tol_pressure));
    st.cg_iterations = ps.iterations;
    st.pressure_rhs_norm = ps.rhs_norm;

    // ---- velocity correction ---------------------------------------------------
    for (int c = 0; c < g.dim; ++c) {
        Field gp = pressure_gradient_dual(g, ops_, ptheta, c, t + dt);
        if (th < 1.0 && pfaces) {
            const Field g0 = pressure_gradient_dual(g, ops_, ptheta, c, t);
            for (size_t i = 0; i < gp.a.size(); ++i)
                gp.a[i] = th * gp.a[i] + (1.0 - th) * g0.a[i];
        }
        axpy(-dt, gp, ud[c]);
    }

    // ---- pressure update P^{n+1} = (P^{n+theta} - (1-theta) P^n) / theta -------
    Field pnew = ptheta;
    if (th < 1.0)
        for (size_t i = 0; i < pnew.a.size(); ++i)
            pnew.a[i] = (ptheta.a[i] - (1.0 - th) * s.p.a[i]) / th;

    const Field r = divergence_main(g, ops_, ud[0], ud[1], g.dim == 3 ? ud[2] : ud[0]);
    st.div_residual = pool().norm2(r.a);

    s.u = std::move(ud[0]);
    s.v = std::move(ud[1]);
    if (g.dim == 3) s.w = std::move(ud[2]);
    s.p = std::move(pnew);
    s.t = t + dt;
    s.step += 1;
    return st;
}

// ----------------------------------------------------------------------------
// Space-time pressure correction
// ----------------------------------------------------------------------------

StepStats Scheme::spacetime_step(FlowState& s, double dt) const {
    const StaggeredGrid& g = *g_;
    const double t = s.t;
    const int mt = tops_.M + 1;
    const int sweeps = cfg_.picard < 0 ? tops_.M + 1 : cfg_.picard;
    const std::vector<double>& tn = tops_.basis.nodes;
    const std::vector<double>& tw = tops_.basis.weights;
    const std::vector<double> tphi0 = eval_basis(tops_.basis, 0.0);
    const std::vector<double> tphi1 = eval_basis(tops_.basis, 1.0);
    const bool pfaces = has_pressure_faces(g);
    StepStats st;
    st.dt = dt;

    std::vector<double> times(mt);
    for (int p = 0; p < mt; ++p) times[p] = t + dt * tn[p];

    // ---- slab-start velocity on the main grid --------------------------------
    std::array<Field, 3> u0m;
    const Field* dual0[3] = {&s.u, &s.v, &s.w};
    for (int c = 0; c < 3; ++c) {
        u0m[c] = c < g.dim ? project_dual_to_main(g, ops_, *dual0[c])
                           : make_field(g, Binding::main, cfg_.N);
        zero_solid_cells(g, u0m[c]);
    }

    // ---- advective space-time source G ----------------------------------------
    // Seeded from one explicit predictor over the slab so that the first sweep
    // of the M = 0 scheme reproduces the semi-implicit step; later sweeps
    // re-collocate the convective terms at the temporal nodes of the iterate.
    std::array<Field, 3> G;
    for (int c = 0; c < g.dim; ++c) G[c] = make_field(g, Binding::main, cfg_.N, tops_.M);
    if (cfg_.include_convection) {
        ConvectionConfig cc;
        cc.time = t;
        cc.body_force = cfg_.body_force;
        ConvectiveTerms adv = rk3_advect_main(g, ops_, u0m[0], u0m[1], u0m[2], dt, cc);
        const Field* F[3] = {&adv.Fu, &adv.Fv, &adv.Fw};
        for (int c = 0; c < g.dim; ++c) {
            for (int p = 0; p < mt; ++p) {
                // G_p = phi_p(0) u0 + w_p (F - u0)
                set_scaled_slice(G[c], p, tphi0[p] - tw[p], u0m[c]);
                add_scaled_slice(G[c], p, tw[p], *F[c]);
            }
            zero_solid_cells(g, G[c]);
        }
    } else {
        for (int c = 0; c < g.dim; ++c) {
            for (int p = 0; p < mt; ++p) {
                set_scaled_slice(G[c], p, tphi0[p], u0m[c]);
                if (cfg_.body_force) {
                    Field fc = make_field(g, Binding::main, cfg_.N);
                    add_body_force(g, ops_, fc, c, dt * tw[p], times[p], cfg_.body_force);
                    add_scaled_slice(G[c], p, 1.0, fc);
                }
            }
            zero_solid_cells(g, G[c]);
        }
    }

    // ---- Picard sweeps ----------------------------------------------------------
    Field P = make_field(g, Binding::main, cfg_.N, tops_.M);
    std::array<Field, 3> Ud;
    double prev_inc = -1.0;
    bool warned = false;

    for (int k = 0; k < sweeps; ++k) {
        if (k > 0 && cfg_.include_convection) {
            for (int p = 0; p < mt; ++p) {
                std::array<Field, 3> mq;
                for (int c = 0; c < 3; ++c)
                    mq[c] = c < g.dim
                                ? project_dual_to_main(g, ops_, extract_slice(g, Ud[c], p))
                                : make_field(g, Binding::main, cfg_.N);
                ConvectionConfig cc;
                cc.time = times[p];
                cc.body_force = cfg_.body_force;
                ConvectiveTerms R = convective_rhs(g, ops_, mq[0], mq[1], mq[2], cc);
                const Field* Rc[3] = {&R.Fu, &R.Fv, &R.Fw};
                for (int c = 0; c < g.dim; ++c) {
                    set_scaled_slice(G[c], p, tphi0[p], u0m[c]);
                    add_scaled_slice(G[c], p, -dt * tw[p], *Rc[c]);
                }
            }
            for (int c = 0; c < g.dim; ++c) zero_solid_cells(g, G[c]);
        }

        // momentum with the lagged pressure
        std::array<Field, 3> Um;
        for (int c = 0; c < g.dim; ++c) {
            Field rhs = G[c];
            if (k > 0 || pfaces) {
                Field gp = pressure_gradient_dual(g, ops_, P, c, t, dt);
                Field gm = project_dual_to_main(g, ops_, gp);
                scale_slices(gm, tw);
                axpy(-dt, gm, rhs);
            }
            apply_mass_weights(g, ops_, rhs);
            if (cfg_.nu > 0.0)
                for (int p = 0; p < mt; ++p)
                    add_scaled_slice(rhs, p, cfg_.nu * dt * tw[p], hv_[c].data_vector(times[p]));
            zero_solid_cells(g, rhs);
            Um[c] = make_field(g, Binding::main, cfg_.N, tops_.M);
            SolveStats vs =
                spacetime_viscous_solve(g, ops_, tops_, hv_[c], cfg_.nu, dt, rhs, Um[c],
                                        solver_options("viscous", cfg_.tol_viscous));
            st.gmres_iterations += vs.iterations;
        }

        // dual projection with exact prescribed traces
        std::array<Field, 3> Uh;
        for (int c = 0; c < g.dim; ++c) {
            Uh[c] = project_main_to_dual(g, ops_, Um[c], c);
            pin_normal_traces(g, ops_, Uh[c], c, times);
        }

        // pressure increment: dt (diag(w^t) (x) H) dP = -(Mt1 - MtV) div
        const Field div =
            divergence_main(g, ops_, Uh[0], Uh[1], g.dim == 3 ? Uh[2] : Uh[0]);
        Field rhsP = make_field(g, Binding::main, cfg_.N, tops_.M);
        temporal_mix(tops_.T, div, rhsP, -1.0);
        Field dP = make_field(g, Binding::main, cfg_.N, tops_.M);
        SolveStats ps = spacetime_pressure_solve(g, tops_, hp_, dt, rhsP, dP,
                                                 solver_options("pressure", cfg_.tol_pressure));
        st.cg_iterations += ps.iterations;
        st.pressure_rhs_norm = ps.rhs_norm;

        // velocity correction through (Mt1 - MtV)^{-1} diag(w^t)
        for (int c = 0; c < g.dim; ++c) {
            Field gi = pressure_gradient_dual(g, ops_, dP, c, t, dt, /*with_data=*/false);
            scale_slices(gi, tw);
            Field corr = make_field(g, dual_binding(c), cfg_.N, tops_.M);
            temporal_mix(tops_.Tinv, gi, corr, 1.0);
            axpy(-dt, corr, Uh[c]);
            Ud[c] = std::move(Uh[c]);
        }
        axpy(1.0, dP, P);

        const double inc = pool().norm2(dP.a);
        if (k > 0 && inc >= prev_inc && inc > 1e-14 && !warned) {
            if (cfg_.diag)
                *cfg_.diag << "warning,picard,increment stalled at sweep " << k + 1 << "\n";
            warned = true;
        }
        prev_inc = inc;
        st.picard_sweeps = k + 1;
    }

    // ---- end-of-slab extraction ------------------------------------------------
    Field* out[3] = {&s.u, &s.v, &s.w};
    for (int c = 0; c < g.dim; ++c) *out[c] = temporal_eval(g, Ud[c], tphi1);
    s.p = temporal_eval(g, P, tphi1);

    const Field r =
        divergence_main(g, ops_, Ud[0], Ud[1], g.dim == 3 ? Ud[2] : Ud[0]);
    st.div_residual = pool().norm2(r.a);

    s.t = t + dt;
    s.step += 1;
    return st;
}

// ============================================================================
// Diagnostics and the time loop
// ============================================================================

double kinetic_energy(const StaggeredGrid& g, const OperatorSet1D& ops, const FlowState& s) {
    const Field* q[3] = {&s.u, &s.v, &s.w};
    double twice = 0.0;
    for (int c = 0; c < g.dim; ++c) {
        Field sq = *q[c];
        for (double& v : sq.a) v *= v;
        twice += integrate(g, ops, sq);
    }
    const double vol =
        (g.x1 - g.x0) * (g.y1 - g.y0) * (g.dim == 3 ? (g.z1 - g.z0) : 1.0);
    return 0.5 * twice / vol;
}

FlowState run(const Scheme& scheme, FlowState state, const RunOptions& opt) {
    const SchemeConfig& cfg = scheme.config();
    const double t_end = cfg.end_time;
    const double tol = 1e-12 * std::max(1.0, std::abs(t_end));

    const std::vector<double>& snaps = opt.snapshots;
    for (size_t i = 0; i + 1 < snaps.size(); ++i)
        if (!(snaps[i] < snaps[i + 1]))
            throw config_error("snapshot times must be strictly increasing");
    if (!snaps.empty() && snaps.front() < state.t - tol)
        throw config_error("snapshot time precedes the initial time");
    if (!snaps.empty() && snaps.back() > t_end + tol)
        throw config_error("snapshot time exceeds end_time");

    size_t isnap = 0;
    auto emit_due = [&]() {
        while (isnap < snaps.size() && snaps[isnap] <= state.t + tol) {
            if (opt.on_snapshot) opt.on_snapshot(state);
            ++isnap;
        }
    };
    emit_due();

    long steps = 0;
    while (state.t < t_end - tol) {
        double dt = scheme.suggest_dt(state);
        double target = t_end;
        if (isnap < snaps.size()) target = std::min(target, snaps[isnap]);
        dt = std::min(dt, target - state.t);
        if (!(dt > 1e-14)) throw solver_error("time step collapsed below 1e-14");
        const StepStats ss = scheme.step(state, dt);
        ++steps;
        if (opt.on_step) {
            StepRecord rec;
            rec.t = state.t;
            rec.dt = ss.dt;
            rec.kinetic_energy = kinetic_energy(scheme.grid(), scheme.ops(), state);
            rec.div_residual = ss.div_residual;
            rec.pressure_rhs_norm = ss.pressure_rhs_norm;
            rec.cg_iterations = ss.cg_iterations;
            rec.gmres_iterations = ss.gmres_iterations;
            rec.picard_sweeps = ss.picard_sweeps;
            opt.on_step(rec);
        }
        emit_due();
        if (steps >= opt.max_steps && state.t < t_end - tol)
            throw solver_error("maximum step count exceeded before reaching end_time");
    }
    return state;
}

}  // namespace stagdg
