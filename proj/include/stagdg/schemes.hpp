/// @file schemes.hpp
/// @brief Time steppers: the staggered semi-implicit fractional-step scheme
///        and the space-time pressure-correction (Picard) scheme, plus the
///        shared time loop.

#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <vector>

#include "stagdg/basis.hpp"
#include "stagdg/grid.hpp"
#include "stagdg/solvers.hpp"
#include "stagdg/transport.hpp"

namespace stagdg {

// ============================================================================
// Configuration
// ============================================================================

enum class SchemeKind { semi_implicit, space_time };

struct SchemeConfig {
    SchemeKind scheme = SchemeKind::semi_implicit;
    int N = 1;          ///< spatial polynomial degree
    int M = 0;          ///< temporal polynomial degree (space-time scheme)
    double theta = 1.0; ///< pressure implicitness in [1/2, 1] (semi-implicit)
    double nu = 0.0;    ///< kinematic viscosity
    double cfl = 0.5;   ///< Courant number in (0, 1)
    double dt_max = std::numeric_limits<double>::infinity();
    double dt_fixed = 0.0;  ///< > 0: bypass the CFL estimate and use this step
    double end_time = 0.0;

    /// Diffusion treatment: implicit Helmholtz solve (default) or explicit
    /// viscous fluxes inside the convective stage (then the parabolic CFL
    /// restriction applies).
    bool explicit_viscosity = false;
    /// Convective terms on/off (off gives the Stokes limit).
    bool include_convection = true;

    int picard = -1;  ///< Picard sweeps for the space-time scheme; -1 = M + 1

    double tol_pressure = 1e-10;  ///< relative CG tolerance
    double tol_viscous = 1e-10;   ///< relative GMRES tolerance
    int max_iterations = 5000;
    int gmres_restart = 30;

    VelocityFn body_force;         ///< optional acceleration field
    std::ostream* diag = nullptr;  ///< per-solve diagnostics / warnings
};

/// Throws config_error on an invalid combination (theta outside [1/2,1],
/// CFL outside (0,1), negative viscosity, explicit viscosity requested for
/// the space-time scheme, non-positive Picard count, ...).
void validate(const SchemeConfig& cfg);

// ============================================================================
// Per-step diagnostics
// ============================================================================

struct StepStats {
    double dt = 0.0;
    double div_residual = 0.0;       ///< post-step incompressibility residual
    double pressure_rhs_norm = 0.0;  ///< ||b|| of the (last) pressure system
    int cg_iterations = 0;           ///< pressure CG iterations (summed)
    int gmres_iterations = 0;        ///< viscous GMRES iterations (summed)
    int picard_sweeps = 0;           ///< space-time sweeps executed
};

// ============================================================================
// Scheme: caches the operator set, the temporal matrices and the four
// H operators for one grid + configuration.
// ============================================================================

class Scheme {
public:
    Scheme(const StaggeredGrid& g, SchemeConfig cfg);

    const SchemeConfig& config() const { return cfg_; }
    const StaggeredGrid& grid() const { return *g_; }
    const OperatorSet1D& ops() const { return ops_; }
    const TimeOperatorSet& time_ops() const { return tops_; }

    /// CFL step (parabolic restriction only under explicit viscosity),
    /// clipped to dt_max; dt_fixed > 0 short-circuits the estimate.
    double suggest_dt(const FlowState& s) const;

    /// One step of the configured scheme. The state mutates only on success.
    StepStats step(FlowState& s, double dt) const;

    /// Fractional-step update: explicit RK3 convective predictor on the main
    /// grid, implicit Helmholtz half step, dual projection, pressure solve
    /// for P^{n+theta}, weak-gradient velocity correction and the pressure
    /// extrapolation P^{n+1} = (P^{n+theta} - (1-theta) P^n) / theta.
    StepStats semi_implicit_step(FlowState& s, double dt) const;

    /// Space-time pressure-correction update: per Picard sweep the convective
    /// terms are re-collocated at the temporal nodes of the current iterate,
    /// the space-time Helmholtz systems are solved (GMRES), the pressure
    /// increment system Mt (x) H is solved (CG), and the dual velocities are
    /// corrected through (Mt1 - MtV)^{-1}. The end-of-slab state is the time
    /// polynomial evaluated at the right endpoint.
    StepStats spacetime_step(FlowState& s, double dt) const;

private:
    const StaggeredGrid* g_;
    SchemeConfig cfg_;
    OperatorSet1D ops_;
    TimeOperatorSet tops_;
    std::vector<HOperator> hv_;  ///< velocity Helmholtz operators, one per active component
    HOperator hp_;               ///< pressure operator

    SolverOptions solver_options(const char* name, double tol) const;
};

// ============================================================================
// Time loop
// ============================================================================

struct StepRecord {
    double t = 0.0;   ///< time after the step
    double dt = 0.0;
    double kinetic_energy = 0.0;
    double div_residual = 0.0;
    double pressure_rhs_norm = 0.0;
    int cg_iterations = 0;
    int gmres_iterations = 0;
    int picard_sweeps = 0;
};

struct RunOptions {
    /// Strictly increasing snapshot times within [t0, end_time]; the step
    /// size is clipped so each is landed on exactly.
    std::vector<double> snapshots;
    std::function<void(const FlowState&)> on_snapshot;
    std::function<void(const StepRecord&)> on_step;
    long max_steps = 1000000;
};

/// Volume-averaged kinetic energy (1/|Omega|) int 1/2 |v|^2 of a dual state.
double kinetic_energy(const StaggeredGrid& g, const OperatorSet1D& ops, const FlowState& s);

/// March `state` to cfg.end_time (exact landing by step clipping), invoking
/// the callbacks; returns the final state. A step below 1e-14 aborts with
/// solver_error. end_time <= t0 returns the initial state untouched.
FlowState run(const Scheme& scheme, FlowState state, const RunOptions& opt = {});

}  // namespace stagdg
