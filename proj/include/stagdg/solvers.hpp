/// @file solvers.hpp
/// @brief Staggered DG pressure/viscosity operator, its boundary closures,
///        and the unpreconditioned Krylov solvers (CG, restarted GMRES).

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "stagdg/basis.hpp"
#include "stagdg/grid.hpp"
#include "stagdg/tensor.hpp"

namespace stagdg {

// ============================================================================
// HOperator: matrix-free application of the symmetric operator
//
//   (H p)_i = - div_i( grad p )
//
// assembled dimension by dimension from the staggered 1D blocks.  Along each
// axis the interior three-block stencil is
//
//   [H p]_i = (1/ds^2) ( -Lb Minv Lt p_{i-1}
//                        +(Rb Minv Lt + Lb Minv Rt) p_i
//                        -Rb Minv Rt p_{i+1} )
//
// and every tangential direction contributes its diagonal mass weights, so
// the full operator is symmetric positive semidefinite.  Non-periodic faces
// close the stencil in one of two ways:
//
//   dirichlet  the boundary half slab carries a weak gradient driven by the
//              prescribed boundary value; the diagonal gains the PSD block
//              2 Lbh Minv Lbh^T (min side) or 2 Rbh Minv Rbh^T (max side)
//              and the data enters the right-hand side via data_vector().
//   wall       (pressure operator at velocity-type faces) the boundary half
//              slab carries the natural data-free one-sided weak gradient;
//              the diagonal gains 2 Lbw Minv Lbw^T / 2 Rbw Minv Rbw^T.
//              Constants stay in the kernel, every other polynomial mode on
//              the boundary cell is constrained, and because divergence and
//              gradient remain exact negative transposes the discrete
//              divergence right-hand side is compatible by construction.
//   neumann    the boundary half slab carries no unknown-dependent gradient;
//              the stencil simply loses its outward leg.
//
// The closure is chosen per velocity component (walls and inflows prescribe
// velocity; pressure faces prescribe pressure; symmetry prescribes only the
// normal component) and may vary along a mixed face, so it is resolved per
// boundary node.  Solid cells get identity rows; the pressure operator
// closes a fluid/solid interface with the one-sided blocks Lbs / Rbs of the
// straddling slab (the velocity operators treat it as a static wall).
// ============================================================================

/// Stencil closure at a non-periodic face.
enum class FaceClosure : std::uint8_t { neumann = 0, dirichlet = 1, wall = 2 };

class HOperator {
public:
    /// component -1: pressure Laplacian (dirichlet on pressure faces).
    /// component 0/1/2: velocity Laplacian for that component (dirichlet on
    /// wall / moving_wall / inflow faces and on the normal component of
    /// symmetry faces; neumann on pressure faces).
    HOperator(const StaggeredGrid& g, const OperatorSet1D& ops, int component);

    /// y = H x. Both fields live on the main grid with the operator's degree;
    /// space-time fields are processed one temporal node at a time.
    void apply(const Field& x, Field& y) const;
    Field apply(const Field& x) const;

    /// Boundary-data forcing d(t): the inhomogeneous system reads
    /// H x = rhs + d, with d_i = sum over dirichlet faces of
    /// (2/ds^2) Lbh Minv phi0 g_b (min side) / (2/ds^2) Rbh Minv phi1 g_b
    /// (max side), times the tangential mass weights.
    Field data_vector(double t) const;

    /// True when the operator annihilates constants (no dirichlet closure
    /// anywhere: fully periodic and/or neumann faces only).
    bool has_nullspace() const { return nullspace_; }

    /// Orthonormal basis of the nullspace for purely spatial fields (empty
    /// when has_nullspace() is false).  The operator factorises over the
    /// axes, so its kernel is the tensor product of small per-axis kernels;
    /// these are recovered by probing the assembled operator with fields
    /// that vary along one axis only.  With solid cells the unmasked basis
    /// is restricted to the fluid region and re-orthonormalised.  Every
    /// candidate is checked against the actual operator before it is kept.
    /// Built lazily and cached.
    const std::vector<std::vector<double>>& nullspace_basis() const;

    int component() const { return component_; }
    const StaggeredGrid& grid() const { return *g_; }
    const OperatorSet1D& ops() const { return *ops_; }

    /// Closure at a boundary node: face 0..5, boundary element tangential
    /// position and tangential node resolved internally; exposed for tests
    /// via the per-face uniform query (first region of the face).
    FaceClosure face_closure(int face) const;

private:
    const StaggeredGrid* g_;
    const OperatorSet1D* ops_;
    int component_;
    bool nullspace_;

    // Unscaled 1D blocks with diag(1/w) folded in (tangential weights are
    // applied once at the end of apply()).
    Mat diag_from_left_;    ///< Rt^T Minv Rt
    Mat diag_from_right_;   ///< Lt^T Minv Lt
    Mat couple_left_;       ///< -Rt^T Minv Lt
    Mat couple_right_;      ///< -Lt^T Minv Rt
    Mat diag_dirichlet_lo_; ///< 2 Lbh Minv Lbh^T
    Mat diag_dirichlet_hi_; ///< 2 Rbh Minv Rbh^T
    Mat diag_wall_lo_;      ///< 2 Lbw Minv Lbw^T
    Mat diag_wall_hi_;      ///< 2 Rbw Minv Rbw^T
    Mat solid_lo_;          ///< Lbs Minv Lbs^T
    Mat solid_hi_;          ///< Rbs Minv Rbs^T
    std::vector<double> data_lo_;  ///< 2 Lbh Minv phi0
    std::vector<double> data_hi_;  ///< 2 Rbh Minv phi1

    // closure_tab_[face]: one entry per (boundary element, tangential node),
    // resolved from the face regions at construction.
    std::array<std::vector<std::uint8_t>, 6> closure_tab_;

    mutable std::vector<std::vector<double>> kernel_;  ///< nullspace_basis cache
    mutable bool kernel_built_ = false;

    FaceClosure closure_for(BCKind kind, int axis) const;
    std::uint8_t closure_at(int face, int be1, int be2, int n1, int n2) const;
};

// ============================================================================
// The discrete div / grad pair the operator is built from.
// ============================================================================

/// Weak divergence of a staggered velocity field, one value block per main
/// cell: div_i = sum over active axes of (1/ds) Mtang (Rb q_right - Lb q_left).
/// Boundary half slabs enter through Rbh / Lbh on pressure faces and through
/// the trace-completed Rbw / Lbw on velocity-type faces; slabs straddling a
/// fluid/solid interface enter the fluid cell through Rbs / Lbs.  In 2D the
/// third argument is ignored.  Solid cells are zeroed.
Field divergence_main(const StaggeredGrid& g, const OperatorSet1D& ops,
                      const Field& ux, const Field& vy, const Field& wz);

/// Nodal pressure gradient on the dual grid normal to `axis`:
/// interior slabs (1/ds) Minv (Rt p_i - Lt p_{i-1}); boundary half slabs get
/// the weak one-sided gradient, driven by the prescribed boundary pressure on
/// pressure faces and data-free (natural) on velocity-type faces; slabs
/// straddling a fluid/solid interface get the one-sided gradient of the fluid
/// cell.  Each case is the exact negative transpose of the matching
/// divergence closure.  For space-time fields the boundary data is evaluated
/// at t + dt * tau_q per temporal node.  with_data = false drops the
/// boundary-value term (the gradient of a pressure *increment*, whose
/// boundary data cancels).
Field pressure_gradient_dual(const StaggeredGrid& g, const OperatorSet1D& ops,
                             const Field& p, int axis, double t, double dt = 0.0,
                             bool with_data = true);

/// Multiply / divide a main-grid field by the diagonal tensor mass weights
/// prod_d w_{p_d} over the active axes (reference-cell measure).
void apply_mass_weights(const StaggeredGrid& g, const OperatorSet1D& ops, Field& f);
void apply_inverse_mass_weights(const StaggeredGrid& g, const OperatorSet1D& ops, Field& f);

// ============================================================================
// Krylov solvers on flat vectors.
// ============================================================================

using LinearOp = std::function<void(const std::vector<double>&, std::vector<double>&)>;

struct SolverOptions {
    double tol = 1e-10;        ///< relative residual target ||r|| <= tol ||b||
    int max_iterations = 5000; ///< total iteration budget
    int restart = 30;          ///< GMRES cycle length
    /// Orthonormal vectors spanning the known nullspace; projected out of the
    /// right-hand side and of every iterate (consistent singular systems).
    const std::vector<std::vector<double>>* nullspace = nullptr;
    std::string name = "krylov";  ///< diagnostics label
    std::ostream* diag = nullptr; ///< when set, prints "solver,<name>,<iters>,<resid>"
};

struct SolveStats {
    int iterations = 0;
    double residual = 0.0;  ///< final absolute residual norm
    double rhs_norm = 0.0;  ///< ||b|| after nullspace projection
};

/// Unpreconditioned conjugate gradients, x0 = 0.  Throws solver_error on
/// breakdown (non-positive curvature) or when max_iterations is exhausted.
SolveStats cg_solve(const LinearOp& A, const std::vector<double>& b,
                    std::vector<double>& x, const SolverOptions& opt);

/// Restarted GMRES(restart), x0 = 0.  Throws solver_error on breakdown or
/// when max_iterations is exhausted.
SolveStats gmres_solve(const LinearOp& A, const std::vector<double>& b,
                       std::vector<double>& x, const SolverOptions& opt);

// ============================================================================
// Scheme-level wrappers.
// ============================================================================

/// Solve (dt H) p = rhs by CG.  When H has a nullspace the constant mode
/// (per temporal node, restricted to fluid cells) is projected out of the
/// right-hand side and the iterates.
SolveStats solve_pressure(const HOperator& H, double dt, const Field& rhs,
                          Field& p, SolverOptions opt = {});

/// Solve (Mw + nu dt H) q = rhs by GMRES, where Mw is the diagonal tensor
/// mass; rhs is already mass-weighted.  nu == 0 reduces to q = Mw^{-1} rhs.
SolveStats solve_viscous(const HOperator& H, double nu, double dt,
                         const Field& rhs, Field& q, SolverOptions opt = {});

/// Orthonormal basis of the pressure-system nullspace for fields shaped like
/// `shape` (zero on solid cells).  The spatial basis comes from
/// H.nullspace_basis(); for space-time fields it is replicated per temporal
/// node, since the temporal nodes of the pressure system are uncoupled.
std::vector<std::vector<double>> pressure_nullspace_vectors(const HOperator& H,
                                                            const Field& shape);

}  // namespace stagdg
