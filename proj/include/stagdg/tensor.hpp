/// @file tensor.hpp
/// @brief Dimension-by-dimension kernels: apply a 1D matrix along one axis
///        of a field, and the main<->dual L2 projections.

#pragma once

#include "stagdg/basis.hpp"
#include "stagdg/grid.hpp"

namespace stagdg {

/// Axis indices: 0=x, 1=y, 2=z, 3=t.
inline constexpr int axis_x = 0, axis_y = 1, axis_z = 2, axis_t = 3;

/// dst_block += scale * (Z contracted along `axis`) src_block for one element
/// block of shape mx*my*mz*mt (x fastest). Pencil gather / dense matvec /
/// scatter; no Kronecker matrix is ever formed.
void axis_accumulate(const Mat& Z, int axis, const double* src, double* dst,
                     int mx, int my, int mz, int mt, double scale = 1.0);

/// Out-of-place application over every element of a field.
Field apply_axis(const Mat& Z, int axis, const Field& f);

/// One stencil term along an axis: source slab index plus the 1D matrix to
/// apply (the matrix carries any sign / inverse-mass / spacing factors).
struct LineTerm {
    int src;
    const Mat* mat;
};

/// Apply a per-slab stencil along `axis`: for every target slab index ti,
/// dst(ti) += sum over terms[ti] of mat * src(term.src), with tangential
/// element indices kept identical. Source and target slab counts may differ
/// (main vs dual). dst is accumulated into, not cleared.
void apply_line_stencil(const StaggeredGrid& g, int axis, const Field& src, Field& dst,
                        const std::vector<std::vector<LineTerm>>& terms);

/// L2 projection of a dual-grid velocity field onto the main grid
/// (the half end cells of non-periodic duals enter through the half-overlap
/// projection matrices).
Field project_dual_to_main(const StaggeredGrid& g, const OperatorSet1D& ops, const Field& f);

/// L2 projection of a main-grid field onto the dual grid normal to
/// `direction`; boundary half cells receive the exact restriction.
Field project_main_to_dual(const StaggeredGrid& g, const OperatorSet1D& ops, const Field& f,
                           int direction);

/// Integral of a spatial field over the domain (exact Gauss quadrature of
/// the polynomial).
double integrate(const StaggeredGrid& g, const OperatorSet1D& ops, const Field& f);

}  // namespace stagdg
