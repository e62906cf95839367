/// @file basis.hpp
/// @brief 1D nodal Gauss-Legendre basis on [0,1] and the operator matrices
///        of the staggered DG discretization.

#pragma once

#include <vector>

#include "stagdg/util.hpp"

namespace stagdg {

// ============================================================================
// Basis1D: (N+1)-point Gauss-Legendre nodes/weights on [0,1].
// The Lagrange polynomials through these nodes form the nodal basis; because
// the nodes are the quadrature points, the element mass matrix is diagonal.
// ============================================================================

struct Basis1D {
    int N = 0;                    ///< polynomial degree
    std::vector<double> nodes;    ///< xi_p in (0,1), strictly increasing
    std::vector<double> weights;  ///< quadrature weights, sum to 1

    int npts() const { return N + 1; }
};

/// (N+1)-point Gauss-Legendre rule mapped to [0,1]. 0 <= N <= 16.
Basis1D gauss_legendre(int N);

/// Lagrange basis values phi_0..phi_N at xi (any real xi permitted).
std::vector<double> eval_basis(const Basis1D& b, double xi);

/// Derivatives phi'_0..phi'_N at xi.
std::vector<double> eval_basis_deriv(const Basis1D& b, double xi);

// ============================================================================
// OperatorSet1D: all 1D matrices of the staggered scheme for one degree N.
//
// Conventions (reference coordinate xi in [0,1] on every cell, main and dual
// cells overlap by half a width):
//   M      mass matrix, diagonal with M_pp = w_p
//   Rt,Lt  gradient matrices: dual-cell weak x-derivative of a main-grid
//          scalar is (1/dx)(Rt*P_right - Lt*P_left)
//   Rb,Lb  divergence matrices, Rb = Lt^T and Lb = Rt^T exactly as stored:
//          main-cell weak x-derivative of a dual-grid field is
//          (1/dx)(Rb*U_right - Lb*U_left)
//   ML,MR  half-overlap projection matrices (dual<->main L2 transfer)
//   K      volume stiffness K_pq = int phi'_p phi_q
//   phi0/phi1/phih  basis values at xi = 0, 1, 1/2
//
// Boundary companions for the half-width end cells of non-periodic dual
// grids (the end cell covers exactly half of its unique main neighbor):
//   Rbh    divergence contribution of a max-side half cell to the last main
//          cell: Rbh_pq = phi_p(1/2) phi_q(0) + int_0^1 phi_p(1/2+s/2) phi'_q(s) ds
//   Lbh    same for a min-side half cell (enters with a minus sign):
//          Lbh_pq = phi_p(1/2) phi_q(1) - int_0^1 phi_p(s/2) phi'_q(s) ds
//   Rbw,Lbw  velocity-face variants, Rbw = Rbh - phi1 phi1^T and
//          Lbw = Lbh - phi0 phi0^T: the extra rank-1 term is the boundary
//          trace of the half-cell velocity, so that the weak divergence and
//          the natural (data-free) one-sided weak gradient on the half cell
//          are exact negative transposes of each other.  Both vanish
//          identically at N = 0.
//   Rbs,Lbs  fluid/solid interface variants of the interior blocks,
//          Rbs = Rb - phi1 phih^T and Lbs = Lb - phi0 phih^T: the rank-1
//          term evaluates the straddling full slab at its midpoint (the
//          solid face), again making divergence and one-sided gradient
//          exact negative transposes across the interface.
//   AL,AR  L2 projection of a half end cell onto its main neighbor:
//          AL_pq = 1/2 int phi_p(s/2) phi_q(s) ds (min side),
//          AR_pq = 1/2 int phi_p(1/2+s/2) phi_q(s) ds (max side)
//   EL,ER  exact restriction of a main-cell polynomial to a half end cell
//          (interpolation): EL_pq = phi_q(xi_p/2), ER_pq = phi_q(1/2+xi_p/2)
// ============================================================================

struct OperatorSet1D {
    Basis1D basis;
    Mat M, Minv;
    Mat Rt, Lt, Rb, Lb;
    Mat ML, MR;
    Mat K;
    std::vector<double> phi0, phi1, phih;
    Mat Rbh, Lbh;
    Mat Rbw, Lbw;
    Mat Rbs, Lbs;
    Mat AL, AR;
    Mat EL, ER;
};

OperatorSet1D build_operators(const Basis1D& basis);

// ============================================================================
// TimeOperatorSet: temporal matrices for the space-time scheme at degree M.
//   Mt  = diagonal temporal mass matrix (weights)
//   Mt1 = phi(1) phi(1)^T
//   Mt0 = phi(0) phi(1)^T   (couples to the previous slab's end values)
//   MtV = int phi'_p phi_q
//   T   = Mt1 - MtV, stored with its dense inverse Tinv
// ============================================================================

struct TimeOperatorSet {
    int M = 0;
    Basis1D basis;
    Mat Mt, Mt1, Mt0, MtV;
    Mat T, Tinv;
};

TimeOperatorSet build_time_operators(int M);

}  // namespace stagdg
