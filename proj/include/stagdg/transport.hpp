/// @file transport.hpp
/// @brief Explicit nonlinear convection: Rusanov-flux DG residuals on the
///        main grid, TVD-RK3 stepping, CFL time-step selection, and
///        dual-grid velocity gradients for the viscous operator.

#pragma once

#include <array>
#include <limits>

#include "stagdg/grid.hpp"
#include "stagdg/tensor.hpp"

namespace stagdg {

// ============================================================================
// Types
// ============================================================================

/// Post-advection velocity predictors. The binding of the three fields
/// depends on the producer: convective_rhs and rk3_advect_main leave them on
/// the main grid, rk3_advect back-projects them onto the velocity dual grids.
struct ConvectiveTerms {
    Field Fu, Fv, Fw;
};

/// Options for the explicit convective operator.
struct ConvectionConfig {
    double nu = 0.0;                ///< viscosity entering the wave speeds (and fluxes if enabled)
    bool include_viscous_flux = false;  ///< fold -nu grad(v) into the explicit flux tensor
    bool over_integrate = false;    ///< 2(N+1)-point volume quadrature (diagnostics; off by default)
    double time = 0.0;              ///< evaluation time for boundary data and forcing
    VelocityFn body_force;          ///< optional acceleration added to dv/dt
};

/// Options for compute_dt.
struct TimeStepConfig {
    double cfl = 0.5;
    double nu = 0.0;
    bool viscous_restriction = false;  ///< true: parabolic term included (explicit diffusion)
    double dt_max = std::numeric_limits<double>::infinity();
};

// ============================================================================
// Operations
// ============================================================================

/// Maximum signal speed entering the Rusanov flux for one advected component:
///   s = 2 max(|qL|,|qR|) + 2 nu (2N+1) / (delta sqrt(pi/2)).
double rusanov_speed(double qL, double qR, double nu, double delta, int N);

/// DG residual of the advection(-diffusion) operator for the velocity triple
/// collocated on the main grid. Returns R with the convention
///   v(t+dt) = v - dt * R(v),
/// i.e. R is the (surface - volume) flux balance scaled by the inverse mass
/// matrix; any body force is already folded in. Boundary Riemann states
/// follow the face table of the grid (wall: reflected; moving wall / inflow:
/// prescribed; outlet: copy; symmetry: mirrored normal). Solid-masked
/// elements produce a zero residual and act as static walls for their fluid
/// neighbors. Throws solver_error naming the element if the residual is not
/// finite.
ConvectiveTerms convective_rhs(const StaggeredGrid& g, const OperatorSet1D& ops,
                               const Field& u, const Field& v, const Field& w,
                               const ConvectionConfig& cfg);

/// Three-stage TVD (SSP) Runge-Kutta advection of a main-grid velocity
/// triple over one step dt, using convective_rhs at the stage times.
ConvectiveTerms rk3_advect_main(const StaggeredGrid& g, const OperatorSet1D& ops,
                                const Field& u, const Field& v, const Field& w,
                                double dt, const ConvectionConfig& cfg);

/// Full explicit advection path for a dual-grid state: forward L2 projection
/// onto the main grid, TVD-RK3 there, backward projection onto the velocity
/// dual grids.
ConvectiveTerms rk3_advect(const StaggeredGrid& g, const OperatorSet1D& ops,
                           const FlowState& s, double dt, const ConvectionConfig& cfg);

/// CFL time step from the current nodal velocity extremes:
///   dt = CFL / [ (2N+1) sum |q|max/ds  (+ (2N+1)^2 sum 2 nu/ds^2) ],
/// the parabolic part only under cfg.viscous_restriction. Inactive axes drop
/// out; a 1e-12 floor on each |q|max keeps a fluid at rest well defined, and
/// the result is clipped to cfg.dt_max.
double compute_dt(const StaggeredGrid& g, int N, const FlowState& s, const TimeStepConfig& cfg);

/// Weak directional derivatives of a main-grid field on the three dual
/// grids: result[s] = (1/ds) Minv (Rt * right - Lt * left) on dual-s; the
/// half end slabs of non-periodic axes use the one-sided restriction of the
/// adjacent element's derivative. Inactive axes yield a zero field.
std::array<Field, 3> velocity_gradients_dual(const StaggeredGrid& g, const OperatorSet1D& ops,
                                             const Field& f);

}  // namespace stagdg
