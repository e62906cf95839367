/// @file transport.cpp
/// @brief Rusanov-flux DG convection on the main grid, TVD-RK3, CFL step
///        selection, and weak velocity gradients on the dual grids.

#include "stagdg/transport.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace stagdg {

double rusanov_speed(double qL, double qR, double nu, double delta, int N) {
    STAGDG_REQUIRE(delta > 0.0 && nu >= 0.0, "rusanov_speed: need delta>0, nu>=0");
    const double pi = std::acos(-1.0);
    return 2.0 * std::max(std::fabs(qL), std::fabs(qR)) +
           2.0 * nu * (2 * N + 1) / (delta * std::sqrt(pi / 2.0));
}

namespace {

// ============================================================================
// Per-axis assembly helpers
// ============================================================================

/// Element index triple from an along-axis index plus two tangential element
/// indices (ta, tb are the remaining axes in increasing order).
inline void unpack_elem(int axis, int along, int ea, int eb, int& i, int& j, int& k) {
    switch (axis) {
        case 0: i = along; j = ea; k = eb; break;
        case 1: i = ea; j = along; k = eb; break;
        default: i = ea; j = eb; k = along; break;
    }
}

/// Local (within-element) index of pencil entry l at tangential node (a,b).
inline int pencil_local(const Field& f, int axis, int l, int a, int b) {
    switch (axis) {
        case 0: return f.local(l, a, b);
        case 1: return f.local(a, l, b);
        default: return f.local(a, b, l);
    }
}

/// Ghost Riemann state outside a physical boundary or solid face.
/// `in` is the interior trace, `n_axis` the face normal axis.
inline std::array<double, 3> ghost_state(const BoundaryCondition& bc, int n_axis,
                                         double x, double y, double z, double t,
                                         const std::array<double, 3>& in) {
    switch (bc.kind) {
        case BCKind::wall:
            return {-in[0], -in[1], -in[2]};
        case BCKind::moving_wall: {
            const auto vb = bc.velocity_at(x, y, z, t);
            return {2 * vb[0] - in[0], 2 * vb[1] - in[1], 2 * vb[2] - in[2]};
        }
        case BCKind::inflow:
            return bc.velocity_at(x, y, z, t);
        case BCKind::pressure:
            return in;  // zero-gradient copy at an outlet
        case BCKind::symmetry: {
            std::array<double, 3> out = in;
            out[n_axis] = -in[n_axis];
            return out;
        }
        default:
            throw internal_error("ghost_state: unexpected boundary kind");
    }
}

struct AxisWork {
    int axis = 0;
    int n = 0;        ///< main elements along the axis
    int nfaces = 0;   ///< n (periodic) or n+1
    bool periodic = false;
    int ta = 0, tb = 0;       ///< tangential axes
    int nta = 0, ntb = 0;     ///< tangential element counts
    int mta = 0, mtb = 0;     ///< tangential node counts
    double ds = 0.0;
    std::vector<double> flux;  ///< face buffer, 3 components per face node

    int face_nodes() const { return mta * mtb; }
    double* at(int fi, int ea, int eb, int a, int b) {
        const size_t fe = size_t(ea) + size_t(nta) * (size_t(eb) + size_t(ntb) * fi);
        return flux.data() + 3 * (fe * face_nodes() + a + size_t(mta) * b);
    }
    const double* at(int fi, int ea, int eb, int a, int b) const {
        return const_cast<AxisWork*>(this)->at(fi, ea, eb, a, b);
    }
};

}  // namespace

// ============================================================================
// Convective residual
// ============================================================================

ConvectiveTerms convective_rhs(const StaggeredGrid& g, const OperatorSet1D& ops,
                               const Field& u, const Field& v, const Field& w,
                               const ConvectionConfig& cfg) {
    STAGDG_REQUIRE(u.binding == Binding::main && v.binding == Binding::main &&
                       w.binding == Binding::main,
                   "convective_rhs expects main-grid fields");
    const int N = u.N;
    const int m = N + 1;
    const Basis1D& basis = ops.basis;
    const Field* comp[3] = {&u, &v, &w};

    ConvectiveTerms out{make_field(g, Binding::main, N), make_field(g, Binding::main, N),
                        make_field(g, Binding::main, N)};
    Field* rcomp[3] = {&out.Fu, &out.Fv, &out.Fw};

    // trace rows and the nodal differentiation matrix D_pq = phi'_q(xi_p)
    std::vector<double> dphi0 = eval_basis_deriv(basis, 0.0);
    std::vector<double> dphi1 = eval_basis_deriv(basis, 1.0);
    const Mat D = ops.Minv * ops.K.transposed();

    // over-integration tables (2(N+1)-point rule along the pencil)
    Basis1D quad{};
    std::vector<double> Iq, DIq;  // (nq x m), row-major
    if (cfg.over_integrate) {
        quad = gauss_legendre(2 * N + 1);
        const int nq = quad.npts();
        Iq.resize(size_t(nq) * m);
        DIq.resize(size_t(nq) * m);
        for (int s = 0; s < nq; ++s) {
            const auto ph = eval_basis(basis, quad.nodes[s]);
            const auto dp = eval_basis_deriv(basis, quad.nodes[s]);
            for (int q = 0; q < m; ++q) {
                Iq[size_t(s) * m + q] = ph[q];
                DIq[size_t(s) * m + q] = dp[q];
            }
        }
    }

    std::vector<AxisWork> axes;
    for (int d = 0; d < 3; ++d) {
        if (!g.axis_active(d)) continue;
        AxisWork ax;
        ax.axis = d;
        ax.n = g.count(d);
        ax.periodic = g.periodic[d];
        ax.nfaces = ax.periodic ? ax.n : ax.n + 1;
        ax.ta = d == 0 ? 1 : 0;
        ax.tb = d == 2 ? 1 : 2;
        ax.nta = g.count(ax.ta);
        ax.ntb = g.count(ax.tb);
        ax.mta = ax.ta == 0 ? u.mx : ax.ta == 1 ? u.my : u.mz;
        ax.mtb = ax.tb == 1 ? u.my : u.mz;
        ax.ds = g.spacing(d);
        ax.flux.assign(size_t(ax.nfaces) * ax.nta * ax.ntb * ax.face_nodes() * 3, 0.0);
        axes.push_back(std::move(ax));
    }

    // ---- pass 1: Rusanov fluxes on every face, one evaluation per face ----
    for (AxisWork& ax : axes) {
        const int d = ax.axis;
        const size_t nf = size_t(ax.nfaces) * ax.nta * ax.ntb;
        pool().parallel_for(nf, [&](size_t b0, size_t e0, int) {
            for (size_t fidx = b0; fidx < e0; ++fidx) {
                const int ea = int(fidx % ax.nta);
                const int eb = int((fidx / ax.nta) % ax.ntb);
                const int fi = int(fidx / (size_t(ax.nta) * ax.ntb));

                const int ileft = ax.periodic ? (fi - 1 + ax.n) % ax.n : fi - 1;
                const int iright = ax.periodic ? fi % ax.n : fi;
                const bool has_left = ileft >= 0;
                const bool has_right = iright < ax.n;

                int li = 0, lj = 0, lk = 0, ri = 0, rj = 0, rk = 0;
                if (has_left) unpack_elem(d, ileft, ea, eb, li, lj, lk);
                if (has_right) unpack_elem(d, iright, ea, eb, ri, rj, rk);
                const bool lsolid = has_left && g.is_solid(li, lj, lk);
                const bool rsolid = has_right && g.is_solid(ri, rj, rk);

                const FaceSpec* spec = nullptr;
                if (!has_left) spec = &g.faces[2 * d];
                if (!has_right) spec = &g.faces[2 * d + 1];

                for (int b = 0; b < ax.mtb; ++b)
                    for (int a = 0; a < ax.mta; ++a) {
                        // face-node position (for boundary data)
                        double pos[3];
                        pos[d] = g.lo(d) + fi * ax.ds;
                        pos[ax.ta] = g.coord(Binding::main, ax.ta, ea,
                                             ax.mta > 1 ? basis.nodes[a] : 0.5);
                        pos[ax.tb] = g.coord(Binding::main, ax.tb, eb,
                                             ax.mtb > 1 ? basis.nodes[b] : 0.5);

                        std::array<double, 3> qL{}, qR{}, gL{}, gR{};
                        for (int c = 0; c < 3; ++c) {
                            if (has_left && !lsolid) {
                                const double* e = comp[c]->at(li, lj, lk);
                                double tv = 0.0, gv = 0.0;
                                for (int l = 0; l < m; ++l) {
                                    const double cv = e[pencil_local(*comp[c], d, l, a, b)];
                                    tv += ops.phi1[l] * cv;
                                    gv += dphi1[l] * cv;
                                }
                                qL[c] = tv;
                                gL[c] = gv / ax.ds;
                            }
                            if (has_right && !rsolid) {
                                const double* e = comp[c]->at(ri, rj, rk);
                                double tv = 0.0, gv = 0.0;
                                for (int l = 0; l < m; ++l) {
                                    const double cv = e[pencil_local(*comp[c], d, l, a, b)];
                                    tv += ops.phi0[l] * cv;
                                    gv += dphi0[l] * cv;
                                }
                                qR[c] = tv;
                                gR[c] = gv / ax.ds;
                            }
                        }
                        if (!has_left || lsolid) {
                            if (rsolid || !has_right) {  // face between solids: no flux
                                double* f = ax.at(fi, ea, eb, a, b);
                                f[0] = f[1] = f[2] = 0.0;
                                continue;
                            }
                            qL = lsolid ? std::array<double, 3>{-qR[0], -qR[1], -qR[2]}
                                        : ghost_state(spec->resolve(pos[0], pos[1], pos[2]), d,
                                                      pos[0], pos[1], pos[2], cfg.time, qR);
                            gL = gR;
                        } else if (!has_right || rsolid) {
                            qR = rsolid ? std::array<double, 3>{-qL[0], -qL[1], -qL[2]}
                                        : ghost_state(spec->resolve(pos[0], pos[1], pos[2]), d,
                                                      pos[0], pos[1], pos[2], cfg.time, qL);
                            gR = gL;
                        }

                        const double aL = qL[d], aR = qR[d];
                        double* f = ax.at(fi, ea, eb, a, b);
                        for (int c = 0; c < 3; ++c) {
                            const double s =
                                rusanov_speed(qL[c], qR[c], cfg.nu, g.spacing(c), N);
                            double fc = 0.5 * (aL * qL[c] + aR * qR[c]) -
                                        0.5 * s * (qR[c] - qL[c]);
                            if (cfg.include_viscous_flux)
                                fc -= cfg.nu * 0.5 * (gL[c] + gR[c]);
                            f[c] = fc;
                        }
                    }
            }
        });
    }

    // ---- pass 2: volume terms + face accumulation, element-parallel ----
    std::atomic<long> bad_elem{-1};
    const size_t nel = size_t(u.nx) * u.ny * u.nz;
    pool().parallel_for(nel, [&](size_t b0, size_t e0, int) {
        std::vector<double> qp(2 * m), fp(m), volp(m), uq;
        if (cfg.over_integrate) uq.resize(quad.npts());
        for (size_t el = b0; el < e0; ++el) {
            const int i = int(el % u.nx);
            const int j = int((el / u.nx) % u.ny);
            const int k = int(el / (size_t(u.nx) * u.ny));
            if (g.is_solid(i, j, k)) continue;  // residual stays zero

            for (const AxisWork& ax : axes) {
                const int d = ax.axis;
                const int along = d == 0 ? i : d == 1 ? j : k;
                const int ea = d == 0 ? j : i;
                const int eb = d == 2 ? j : k;
                const int fL = along;
                const int fR = ax.periodic ? (along + 1) % ax.n : along + 1;
                const double invds = 1.0 / ax.ds;

                for (int b = 0; b < ax.mtb; ++b)
                    for (int a = 0; a < ax.mta; ++a) {
                        const double* fluxL = ax.at(fL, ea, eb, a, b);
                        const double* fluxR = ax.at(fR, ea, eb, a, b);
                        for (int c = 0; c < 3; ++c) {
                            const double* e = comp[c]->at(i, j, k);
                            const double* adv = comp[d]->at(i, j, k);
                            for (int l = 0; l < m; ++l) {
                                const int loc = pencil_local(u, d, l, a, b);
                                qp[l] = e[loc];
                                qp[m + l] = adv[loc];
                            }
                            if (!cfg.over_integrate) {
                                // collocation: nodal flux, exact K contraction
                                for (int l = 0; l < m; ++l) {
                                    double fv = qp[m + l] * qp[l];
                                    if (cfg.include_viscous_flux) {
                                        double gv = 0.0;
                                        for (int r = 0; r < m; ++r) gv += D(l, r) * qp[r];
                                        fv -= cfg.nu * gv * invds;
                                    }
                                    fp[l] = fv;
                                }
                                for (int p = 0; p < m; ++p) {
                                    double s = 0.0;
                                    for (int l = 0; l < m; ++l) s += ops.K(p, l) * fp[l];
                                    volp[p] = s;
                                }
                            } else {
                                // oversampled quadrature of the volume integral
                                const int nq = quad.npts();
                                for (int s = 0; s < nq; ++s) {
                                    double cv = 0.0, av = 0.0, gv = 0.0;
                                    for (int l = 0; l < m; ++l) {
                                        cv += Iq[size_t(s) * m + l] * qp[l];
                                        av += Iq[size_t(s) * m + l] * qp[m + l];
                                        gv += DIq[size_t(s) * m + l] * qp[l];
                                    }
                                    uq[s] = av * cv;
                                    if (cfg.include_viscous_flux)
                                        uq[s] -= cfg.nu * gv * invds;
                                }
                                for (int p = 0; p < m; ++p) {
                                    double s2 = 0.0;
                                    for (int s = 0; s < nq; ++s)
                                        s2 += quad.weights[s] * DIq[size_t(s) * m + p] * uq[s];
                                    volp[p] = s2;
                                }
                            }
                            double* r = rcomp[c]->at(i, j, k);
                            for (int p = 0; p < m; ++p) {
                                const int loc = pencil_local(u, d, p, a, b);
                                r[loc] += invds / basis.weights[p] *
                                          (ops.phi1[p] * fluxR[c] - ops.phi0[p] * fluxL[c] -
                                           volp[p]);
                            }
                        }
                    }
            }

            if (cfg.body_force) {
                for (int kz = 0; kz < u.mz; ++kz)
                    for (int jy = 0; jy < u.my; ++jy)
                        for (int ix = 0; ix < u.mx; ++ix) {
                            const double x = g.coord(Binding::main, 0, i, basis.nodes[ix]);
                            const double y =
                                g.coord(Binding::main, 1, j, u.my > 1 ? basis.nodes[jy] : 0.5);
                            const double z =
                                g.coord(Binding::main, 2, k, u.mz > 1 ? basis.nodes[kz] : 0.5);
                            const auto fb = cfg.body_force(x, y, z, cfg.time);
                            const int loc = u.local(ix, jy, kz);
                            for (int c = 0; c < 3; ++c) rcomp[c]->at(i, j, k)[loc] -= fb[c];
                        }
            }

            for (int c = 0; c < 3; ++c) {
                const double* r = rcomp[c]->at(i, j, k);
                for (int l = 0; l < u.npe(); ++l)
                    if (!std::isfinite(r[l])) {
                        long want = -1;
                        bad_elem.compare_exchange_strong(want, long(el));
                    }
            }
        }
    });
    if (bad_elem.load() >= 0) {
        const long el = bad_elem.load();
        std::ostringstream os;
        os << "convective residual is not finite in element (" << el % u.nx << ","
           << (el / u.nx) % u.ny << "," << el / (long(u.nx) * u.ny) << ")";
        throw solver_error(os.str());
    }
    return out;
}

// ============================================================================
// TVD-RK3
// ============================================================================

namespace {

/// dst = ca*a + cb*b  (matching field shapes)
Field field_lin(double ca, const Field& a, double cb, const Field& b) {
    Field out = a;
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = ca * a.a[i] + cb * b.a[i];
    return out;
}

}  // namespace

ConvectiveTerms rk3_advect_main(const StaggeredGrid& g, const OperatorSet1D& ops,
                                const Field& u, const Field& v, const Field& w,
                                double dt, const ConvectionConfig& cfg) {
    ConvectionConfig stage = cfg;

    // stage 1 at t
    ConvectiveTerms r = convective_rhs(g, ops, u, v, w, stage);
    Field u1 = field_lin(1.0, u, -dt, r.Fu);
    Field v1 = field_lin(1.0, v, -dt, r.Fv);
    Field w1 = field_lin(1.0, w, -dt, r.Fw);

    // stage 2 at t + dt
    stage.time = cfg.time + dt;
    r = convective_rhs(g, ops, u1, v1, w1, stage);
    Field u2 = field_lin(0.75, u, 0.25, field_lin(1.0, u1, -dt, r.Fu));
    Field v2 = field_lin(0.75, v, 0.25, field_lin(1.0, v1, -dt, r.Fv));
    Field w2 = field_lin(0.75, w, 0.25, field_lin(1.0, w1, -dt, r.Fw));

    // stage 3 at t + dt/2
    stage.time = cfg.time + 0.5 * dt;
    r = convective_rhs(g, ops, u2, v2, w2, stage);
    ConvectiveTerms out{field_lin(1.0 / 3.0, u, 2.0 / 3.0, field_lin(1.0, u2, -dt, r.Fu)),
                        field_lin(1.0 / 3.0, v, 2.0 / 3.0, field_lin(1.0, v2, -dt, r.Fv)),
                        field_lin(1.0 / 3.0, w, 2.0 / 3.0, field_lin(1.0, w2, -dt, r.Fw))};
    return out;
}

ConvectiveTerms rk3_advect(const StaggeredGrid& g, const OperatorSet1D& ops,
                           const FlowState& s, double dt, const ConvectionConfig& cfg) {
    const Field um = project_dual_to_main(g, ops, s.u);
    const Field vm = project_dual_to_main(g, ops, s.v);
    Field wm = make_field(g, Binding::main, s.u.N);
    if (g.dim == 3) wm = project_dual_to_main(g, ops, s.w);

    ConvectiveTerms adv = rk3_advect_main(g, ops, um, vm, wm, dt, cfg);

    ConvectiveTerms out{project_main_to_dual(g, ops, adv.Fu, 0),
                        project_main_to_dual(g, ops, adv.Fv, 1), s.w};
    if (g.dim == 3) out.Fw = project_main_to_dual(g, ops, adv.Fw, 2);
    return out;
}

// ============================================================================
// Time-step selection
// ============================================================================

double compute_dt(const StaggeredGrid& g, int N, const FlowState& s, const TimeStepConfig& cfg) {
    STAGDG_REQUIRE(cfg.cfl > 0.0 && cfg.cfl < 1.0, "compute_dt: CFL must lie in (0,1)");
    const double eps_v = 1e-12;
    double qmax[3] = {eps_v, eps_v, eps_v};
    const Field* comp[3] = {&s.u, &s.v, &s.w};
    for (int c = 0; c < 3; ++c)
        for (double a : comp[c]->a) qmax[c] = std::max(qmax[c], std::fabs(a));

    double adv = 0.0, visc = 0.0;
    for (int d = 0; d < 3; ++d) {
        if (!g.axis_active(d)) continue;
        adv += qmax[d] / g.spacing(d);
        visc += 2.0 * cfg.nu / sqr(g.spacing(d));
    }
    double denom = (2 * N + 1) * adv;
    if (cfg.viscous_restriction) denom += sqr(double(2 * N + 1)) * visc;
    const double dt = cfg.cfl / denom;
    return std::min(dt, cfg.dt_max);
}

// ============================================================================
// Weak gradients on the dual grids
// ============================================================================

std::array<Field, 3> velocity_gradients_dual(const StaggeredGrid& g, const OperatorSet1D& ops,
                                             const Field& f) {
    STAGDG_REQUIRE(f.binding == Binding::main, "velocity_gradients_dual expects a main field");
    const Basis1D& basis = ops.basis;
    const int m = f.N + 1;
    std::array<Field, 3> out{make_field(g, Binding::dual_x, f.N, f.M),
                             make_field(g, Binding::dual_y, f.N, f.M),
                             make_field(g, Binding::dual_z, f.N, f.M)};
    for (int d = 0; d < 3; ++d) {
        if (!g.axis_active(d)) continue;  // gradient along an inert axis is zero
        const double invds = 1.0 / g.spacing(d);
        const Mat GR = invds * (ops.Minv * ops.Rt);
        const Mat GL = -invds * (ops.Minv * ops.Lt);

        // one-sided derivative restrictions for the half end slabs
        Mat DEL(m, m), DER(m, m);
        for (int p = 0; p < m; ++p) {
            const auto dlo = eval_basis_deriv(basis, 0.5 * basis.nodes[p]);
            const auto dhi = eval_basis_deriv(basis, 0.5 + 0.5 * basis.nodes[p]);
            for (int q = 0; q < m; ++q) {
                DEL(p, q) = invds * dlo[q];
                DER(p, q) = invds * dhi[q];
            }
        }

        const int n = g.count(d);
        const Binding b = d == 0 ? Binding::dual_x : d == 1 ? Binding::dual_y : Binding::dual_z;
        const int nd = g.binding_count(b, d);
        std::vector<std::vector<LineTerm>> terms(nd);
        for (int id = 0; id < nd; ++id) {
            if (g.periodic[d]) {
                terms[id] = {{id % n, &GR}, {(id - 1 + n) % n, &GL}};
            } else if (id == 0) {
                terms[id] = {{0, &DEL}};
            } else if (id == n) {
                terms[id] = {{n - 1, &DER}};
            } else {
                terms[id] = {{id, &GR}, {id - 1, &GL}};
            }
        }
        apply_line_stencil(g, d, f, out[d], terms);
    }
    return out;
}

}  // namespace stagdg
